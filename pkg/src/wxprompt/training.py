"""Masked-target training and prompt-driven inference.

A training sample is a canvas whose target frames are block-masked; the
model reconstructs both targets and the loss is the sum of two role
terms (prompt-target and query-target), each a per-pixel mean, so loss
magnitudes are batch-size invariant and gradient accumulation over k
micro-batches reproduces one k-times-larger batch exactly.

At inference the prompt stays fully visible, the query target is a
placeholder masked at 100%, and predictions are unpatchified from the
query-target token positions and denormalized to raw units.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .catalog import ModalityRegistry, TaskSpec
from .errors import ConfigError, NumericError, RegistryError
from .masking import MaskPlan, inference_plan, plan_for_canvas
from .metrics import denormalize
from .model import InContextViT, TokenGrid, patchify, unpatchify
from .prompts import (
    ROLE_PROMPT_TARGET,
    ROLE_QUERY_TARGET,
    Canvas,
    Frame,
    PromptQuadruple,
    build_canvas,
)

LOSS_KINDS = ("l1", "l2")
LOSS_REGIONS = ("full-target", "masked-only")


@dataclass
class TrainConfig:
    base_lr: float = 1e-3
    batch_size: int = 4
    grad_accum_steps: int = 1
    total_epochs: int = 1
    max_steps: int | None = None  # when set, wins over total_epochs
    warmup_steps: int = 100
    schedule: str = "cosine"
    loss_kind: str = "l1"
    loss_region: str = "full-target"
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.05
    mask_prompt_target: bool = True  # mask both targets during training
    resample_prompt_per_step: bool = True
    oversample_intensity: float = 0.0
    task_mixing: str = "uniform"  # "uniform" | "proportional"
    checkpoint_every: int = 0  # 0: final checkpoint only

    def validate(self) -> None:
        if self.base_lr <= 0:
            raise ConfigError(f"base_lr must be > 0, got {self.base_lr}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.grad_accum_steps < 1:
            raise ConfigError("grad_accum_steps must be >= 1")
        if self.loss_kind not in LOSS_KINDS:
            raise ConfigError(f"loss_kind must be one of {LOSS_KINDS}, got {self.loss_kind!r}")
        if self.loss_region not in LOSS_REGIONS:
            raise ConfigError(f"loss_region must be one of {LOSS_REGIONS}, got {self.loss_region!r}")
        if self.schedule != "cosine":
            raise ConfigError(f"unknown schedule {self.schedule!r}")
        if self.task_mixing not in ("uniform", "proportional"):
            raise ConfigError(f"unknown task mixing {self.task_mixing!r}")

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        return cls(**data)


@dataclass
class LossReport:
    step: int
    lr: float
    task_id: str
    total: float
    prompt_term: float
    query_term: float


def cosine_lr(step: int, total_steps: int, base_lr: float, warmup_steps: int = 0) -> float:
    """Linear warmup to base_lr, then cosine decay to zero at total_steps."""
    if total_steps <= 0:
        raise ConfigError("total_steps must be positive")
    if not 0 <= step <= total_steps:
        raise ConfigError(f"step {step} outside [0, {total_steps}]")
    if warmup_steps > 0 and step < warmup_steps:
        return base_lr * step / warmup_steps
    span = max(total_steps - warmup_steps, 1)
    progress = (step - warmup_steps) / span
    return 0.5 * base_lr * (1.0 + float(np.cos(np.pi * progress)))


class AdamW:
    """Adaptive moments with decoupled weight decay over named parameters."""

    def __init__(
        self,
        params: dict[str, ad.Tensor],
        beta1: float = 0.9,
        beta2: float = 0.999,
        weight_decay: float = 0.05,
        eps: float = 1e-8,
    ):
        self.params = params
        self.beta1 = beta1
        self.beta2 = beta2
        self.weight_decay = weight_decay
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(p.values) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.values) for k, p in params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def max_grad_magnitude(self) -> float:
        mags = [float(np.abs(p.grad).max()) for p in self.params.values() if p.grad is not None]
        return max(mags) if mags else 0.0

    def apply(self, lr: float, grad_scale: float = 1.0) -> None:
        """One update from the accumulated gradients, then clear them."""
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1**self.step_count
        bias2 = 1.0 - b2**self.step_count
        for name, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad * grad_scale
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for parameter {name!r}")
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            update = (m / bias1) / (np.sqrt(v / bias2) + self.eps)
            p.values -= (lr * (update + self.weight_decay * p.values)).astype(p.dtype)
        self.zero_grad()

    def state_tensors(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {"step_count": np.array([self.step_count], dtype=np.int64)}
        for name in self.params:
            out[f"m.{name}"] = self.m[name]
            out[f"v.{name}"] = self.v[name]
        return out

    def load_state_tensors(self, tensors: dict[str, np.ndarray]) -> None:
        self.step_count = int(tensors["step_count"][0])
        for name in self.params:
            self.m[name] = tensors[f"m.{name}"].copy()
            self.v[name] = tensors[f"v.{name}"].copy()


@dataclass
class CanvasBatch:
    """Same-task, same-layout canvases plus their mask plans."""

    task_id: str
    canvases: list[Canvas]
    plans: list[MaskPlan]

    def token_mask(self, tokens_per_frame: int) -> np.ndarray:
        frame_count = self.canvases[0].frame_count
        return np.stack(
            [plan.token_mask(frame_count, tokens_per_frame) for plan in self.plans]
        )


def _role_term(diff: ad.Tensor, selector: np.ndarray, kind: str) -> ad.Tensor:
    """Per-pixel mean of |diff| or diff^2 over selected tokens.

    ``selector`` is a (batch, tokens) 0/1 array; the mean normalizes by
    selected-token count times patch pixels, so the value is invariant to
    batch size.
    """
    weights = selector[..., None].astype(diff.dtype)
    count = float(selector.sum()) * diff.shape[-1]
    if count == 0:
        raise ConfigError("loss region selected zero tokens")
    pointwise = ad.absolute(diff) if kind == "l1" else ad.square(diff)
    return ad.mul(ad.tensor_sum(ad.mul(pointwise, weights)), 1.0 / count)


def masked_target_loss(
    preds: ad.Tensor,
    grid: TokenGrid,
    canvases: list[Canvas],
    patch_size: int,
    kind: str,
    region: str,
) -> tuple[ad.Tensor, ad.Tensor, ad.Tensor]:
    """(total, prompt_term, query_term); total is exactly their sum."""
    target_patches = patchify(
        np.stack([c.frames for c in canvases]), patch_size
    ).astype(preds.values.dtype)
    diff = ad.sub(preds, target_patches)
    prompt_sel = (grid.roles == ROLE_PROMPT_TARGET)[None, :] & np.ones(
        (preds.shape[0], 1), dtype=bool
    )
    query_sel = (grid.roles == ROLE_QUERY_TARGET)[None, :] & np.ones(
        (preds.shape[0], 1), dtype=bool
    )
    if region == "masked-only":
        prompt_sel = prompt_sel & grid.mask
        query_sel = query_sel & grid.mask
    prompt_term = _role_term(diff, prompt_sel, kind)
    query_term = _role_term(diff, query_sel, kind)
    return ad.add(prompt_term, query_term), prompt_term, query_term


def train_step(
    model: InContextViT,
    batch: CanvasBatch,
    config: TrainConfig,
    opt: AdamW,
    lr: float,
    step: int,
    micro_step: int,
) -> LossReport:
    """One micro-batch: forward, loss, gradient accumulation, maybe update.

    The optimizer applies every ``grad_accum_steps`` micro-batches with the
    accumulated gradient averaged over the contributing micro-batches.
    """
    token_mask = batch.token_mask(model.config.tokens_per_frame)
    try:
        with ad.Tape() as tape:
            preds, grid = model.forward(batch.task_id, batch.canvases, token_mask)
            total, prompt_term, query_term = masked_target_loss(
                preds,
                grid,
                batch.canvases,
                model.config.patch_size,
                config.loss_kind,
                config.loss_region,
            )
        report = LossReport(
            step=step,
            lr=lr,
            task_id=batch.task_id,
            total=total.item(),
            prompt_term=prompt_term.item(),
            query_term=query_term.item(),
        )
        ad.backward(total, tape)
    except NumericError as exc:
        raise NumericError(
            f"non-finite loss at step {step} (max |grad| so far {opt.max_grad_magnitude():.3e}): {exc}"
        ) from exc
    if (micro_step + 1) % config.grad_accum_steps == 0:
        opt.apply(lr, grad_scale=1.0 / config.grad_accum_steps)
    return report


def training_mask_plans(
    canvases: list[Canvas],
    grid_side: int,
    mask_ratio: float,
    rng: np.random.Generator,
    mask_prompt_target: bool = True,
) -> list[MaskPlan]:
    return [
        plan_for_canvas(
            canvas,
            grid_side,
            mask_ratio,
            rng,
            mask_prompt_target=mask_prompt_target,
        )
        for canvas in canvases
    ]


def _query_target_frames(
    preds: ad.Tensor,
    grid: TokenGrid,
    canvas: Canvas,
    patch_size: int,
    batch_index: int,
) -> list[np.ndarray]:
    """Unpatchify the query-target token positions back to raw-unit frames."""
    sel = np.nonzero(grid.roles == ROLE_QUERY_TARGET)[0]
    frame_ids = sorted(set(grid.frame_index[sel]))
    side = grid.grid_side
    out = []
    for frame_idx in frame_ids:
        token_idx = sel[grid.frame_index[sel] == frame_idx]
        patches = preds.values[batch_index, token_idx]  # (per_frame, p*p)
        frame = unpatchify(patches[None, ...], 1, side, side, patch_size)[0]
        out.append(denormalize(frame.astype(np.float64), canvas.norm_records[frame_idx]))
    return out


def infer(
    model: InContextViT,
    registry: ModalityRegistry,
    spec: TaskSpec,
    prompt_input: list[Frame],
    prompt_target: list[Frame],
    query_input: list[Frame],
) -> list[np.ndarray]:
    """Run one prompted query; returns predicted target frames in raw units."""
    quads = [
        PromptQuadruple(
            task_id=spec.task_id,
            prompt_input=prompt_input,
            prompt_target=prompt_target,
            query_input=query_input,
            query_target=None,
        )
    ]
    return infer_batch(model, registry, spec, quads)[0]


def infer_batch(
    model: InContextViT,
    registry: ModalityRegistry,
    spec: TaskSpec,
    quads: list[PromptQuadruple],
) -> list[list[np.ndarray]]:
    """Batched inference over same-task quadruples (query targets ignored).

    The prompt stays intact; query-target frames enter as fully masked
    placeholders, so the output cannot depend on their pixel values.
    """
    channels = model.task_channels(spec.task_id)
    if channels != 1:
        raise RegistryError(
            f"task {spec.task_id!r}: model emits {channels}-channel patches but canvases "
            "carry single-channel frames"
        )
    canvases = []
    for quad in quads:
        stripped = PromptQuadruple(
            task_id=quad.task_id,
            prompt_input=quad.prompt_input,
            prompt_target=quad.prompt_target,
            query_input=quad.query_input,
            query_target=None,
        )
        canvases.append(build_canvas(spec, stripped, model.config.canvas_frame_size, registry))
    plans = [inference_plan(c, model.config.grid_side) for c in canvases]
    token_mask = np.stack(
        [p.token_mask(canvases[0].frame_count, model.config.tokens_per_frame) for p in plans]
    )
    preds, grid = model.forward(spec.task_id, canvases, token_mask)
    return [
        _query_target_frames(preds, grid, canvases[i], model.config.patch_size, i)
        for i in range(len(canvases))
    ]
