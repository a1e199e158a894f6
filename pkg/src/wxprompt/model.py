"""Encoder-decoder vision transformer over four-role canvases.

Each canvas frame is cut into non-overlapping patches, projected by a
task-specific patch embedding, layer-normed, aligned into the shared
token space by a per-task linear layer, and tagged with learned spatial
and frame-index embeddings. Masked patches have their content embedding
replaced by a learned mask token before the encoder runs (the position
and frame embeddings stay, so masked slots keep their addresses while
carrying no pixel information). Pre-norm residual blocks, full attention
across all frames.

Two masking circuits are supported: the default replaces masked content
at the encoder input; the alternative removes masked tokens from the
encoder and re-inserts a decoder-side mask token in front of the decoder
blocks.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .errors import CapacityError, ConfigError, DataError, RegistryError, ShapeError
from .prompts import Canvas
from .tensorfile import read_tensor_file, write_tensor_file

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    patch_size: int = 4
    encoder_dim: int = 64
    decoder_dim: int = 32
    encoder_depth: int = 4
    decoder_depth: int = 2
    encoder_heads: int = 4
    decoder_heads: int = 4
    mlp_ratio: int = 4
    mask_ratio: float = 0.75
    head_hidden_dim: int = 256
    canvas_frame_size: int = 32
    max_frames: int = 12
    precision: str = "f32"
    activation: str = "gelu-tanh"  # MLP nonlinearity (tanh-approximated GELU)
    pos_embedding: str = "learned"  # "learned" | "sinusoidal"
    mask_insertion: str = "encoder-input"  # "encoder-input" | "decoder"

    def validate(self) -> None:
        if self.canvas_frame_size % self.patch_size != 0:
            raise ConfigError(
                f"frame size {self.canvas_frame_size} not divisible by patch size {self.patch_size}"
            )
        if self.encoder_dim % self.encoder_heads != 0:
            raise ConfigError(
                f"encoder dim {self.encoder_dim} not divisible by {self.encoder_heads} heads"
            )
        if self.decoder_dim % self.decoder_heads != 0:
            raise ConfigError(
                f"decoder dim {self.decoder_dim} not divisible by {self.decoder_heads} heads"
            )
        if not 0.0 < self.mask_ratio < 1.0:
            raise ConfigError(f"mask ratio must be in (0, 1), got {self.mask_ratio}")
        if self.precision not in ("f32", "f64"):
            raise ConfigError(f"precision must be f32 or f64, got {self.precision!r}")
        if self.pos_embedding not in ("learned", "sinusoidal"):
            raise ConfigError(f"unknown positional embedding kind {self.pos_embedding!r}")
        if self.mask_insertion not in ("encoder-input", "decoder"):
            raise ConfigError(f"unknown mask insertion mode {self.mask_insertion!r}")
        if self.activation != "gelu-tanh":
            raise ConfigError(f"unknown activation {self.activation!r}")

    @property
    def grid_side(self) -> int:
        return self.canvas_frame_size // self.patch_size

    @property
    def tokens_per_frame(self) -> int:
        return self.grid_side**2


PRESETS: dict[str, ModelConfig] = {
    "micro": ModelConfig(),
    "micro-2x": ModelConfig(
        encoder_dim=128,
        decoder_dim=64,
        encoder_heads=4,
        decoder_heads=4,
        head_hidden_dim=512,
    ),
    "base": ModelConfig(
        patch_size=16,
        encoder_dim=768,
        decoder_dim=512,
        encoder_depth=12,
        decoder_depth=8,
        encoder_heads=12,
        decoder_heads=16,
        head_hidden_dim=1024,
        canvas_frame_size=256,
    ),
    "large": ModelConfig(
        patch_size=16,
        encoder_dim=1024,
        decoder_dim=512,
        encoder_depth=24,
        decoder_depth=8,
        encoder_heads=16,
        decoder_heads=16,
        head_hidden_dim=1024,
        canvas_frame_size=256,
    ),
}


def resolve_preset(name_or_config) -> ModelConfig:
    if isinstance(name_or_config, ModelConfig):
        return name_or_config
    try:
        return PRESETS[name_or_config]
    except KeyError:
        raise ConfigError(f"unknown model preset {name_or_config!r}; have {sorted(PRESETS)}") from None


def patchify(frames: np.ndarray, patch_size: int) -> np.ndarray:
    """(..., N, H, W) -> (..., N * (H/p) * (W/p), p*p), pure reindexing."""
    *lead, n, h, w = frames.shape
    if h % patch_size or w % patch_size:
        raise ShapeError(f"frame size {(h, w)} not divisible by patch size {patch_size}")
    gh, gw = h // patch_size, w // patch_size
    x = frames.reshape(*lead, n, gh, patch_size, gw, patch_size)
    x = np.moveaxis(x, -3, -2)  # (..., n, gh, gw, p, p)
    return x.reshape(*lead, n * gh * gw, patch_size * patch_size)


def unpatchify(patches: np.ndarray, frame_count: int, grid_h: int, grid_w: int, patch_size: int) -> np.ndarray:
    """Exact inverse of :func:`patchify` for the same layout."""
    *lead, t, pp = patches.shape
    if t != frame_count * grid_h * grid_w or pp != patch_size * patch_size:
        raise ShapeError(
            f"patch layout mismatch: {patches.shape} vs {frame_count}x{grid_h}x{grid_w} "
            f"patches of {patch_size}x{patch_size}"
        )
    x = patches.reshape(*lead, frame_count, grid_h, grid_w, patch_size, patch_size)
    x = np.moveaxis(x, -3, -2)  # (..., n, gh, p, gw, p)
    return x.reshape(*lead, frame_count, grid_h * patch_size, grid_w * patch_size)


def sincos_position_table(rows: int, dim: int) -> np.ndarray:
    """Fixed sinusoidal table (used when pos_embedding='sinusoidal')."""
    pos = np.arange(rows, dtype=np.float64)[:, None]
    div = np.exp(np.arange(0, dim, 2, dtype=np.float64) * (-np.log(10000.0) / dim))
    table = np.zeros((rows, dim), dtype=np.float64)
    table[:, 0::2] = np.sin(pos * div)
    table[:, 1::2] = np.cos(pos * div[: table[:, 1::2].shape[1]])
    return table


@dataclass
class TokenGrid:
    """Per-frame token sequences plus per-token addresses.

    ``tokens`` is (batch, frame_count * tokens_per_frame, dim); the
    metadata arrays map token index -> (frame, row, col, role) and are a
    bijection onto (frame, patch) positions.
    """

    tokens: ad.Tensor
    frame_index: np.ndarray
    rows: np.ndarray
    cols: np.ndarray
    roles: np.ndarray
    mask: np.ndarray  # (batch, tokens) bool: content replaced by the mask token
    task_id: str
    grid_side: int

    @property
    def batch_size(self) -> int:
        return self.tokens.shape[0]

    @property
    def token_count(self) -> int:
        return self.tokens.shape[1]

    @property
    def frame_count(self) -> int:
        return int(self.frame_index.max()) + 1 if self.frame_index.size else 0


class InContextViT:
    """The model: parameters, per-task embedding registry, forward passes."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        config.validate()
        self.config = config
        self.params: dict[str, ad.Tensor] = {}
        self._rng = np.random.default_rng(seed)
        self.seed = seed
        # task_id -> (embed group, output channels); group -> created flag
        self._tasks: dict[str, tuple[str, int]] = {}
        self._registration_order: list[tuple[str, str, int]] = []
        self._head_channels: set[int] = set()
        self._build_shared()

    # -- parameter construction -------------------------------------------

    @property
    def _dtype(self):
        return np.float32 if self.config.precision == "f32" else np.float64

    def _param(self, name: str, values: np.ndarray) -> ad.Tensor:
        if name in self.params:
            raise ConfigError(f"duplicate parameter {name!r}")
        t = ad.Tensor(values.astype(self._dtype), requires_grad=True)
        self.params[name] = t
        return t

    def _normal(self, shape, std=0.02) -> np.ndarray:
        return self._rng.normal(0.0, std, size=shape)

    def _xavier(self, fan_in: int, fan_out: int) -> np.ndarray:
        limit = float(np.sqrt(6.0 / (fan_in + fan_out)))
        return self._rng.uniform(-limit, limit, size=(fan_in, fan_out))

    def _linear_params(self, prefix: str, fan_in: int, fan_out: int) -> None:
        self._param(f"{prefix}.weight", self._xavier(fan_in, fan_out))
        self._param(f"{prefix}.bias", np.zeros(fan_out))

    def _norm_params(self, prefix: str, dim: int) -> None:
        self._param(f"{prefix}.gamma", np.ones(dim))
        self._param(f"{prefix}.beta", np.zeros(dim))

    def _block_params(self, prefix: str, dim: int) -> None:
        self._norm_params(f"{prefix}.ln1", dim)
        for name in ("wq", "wk", "wv", "wo"):
            self._param(f"{prefix}.attn.{name}", self._xavier(dim, dim))
        for name in ("bq", "bk", "bv", "bo"):
            self._param(f"{prefix}.attn.{name}", np.zeros(dim))
        self._norm_params(f"{prefix}.ln2", dim)
        hidden = dim * self.config.mlp_ratio
        self._linear_params(f"{prefix}.mlp.fc1", dim, hidden)
        self._linear_params(f"{prefix}.mlp.fc2", hidden, dim)

    def _build_shared(self) -> None:
        cfg = self.config
        if cfg.pos_embedding == "learned":
            self._param("pos.spatial", self._normal((cfg.tokens_per_frame, cfg.encoder_dim)))
            self._param("pos.frame", self._normal((cfg.max_frames, cfg.encoder_dim)))
            self._fixed_pos = None
        else:
            self._fixed_pos = (
                sincos_position_table(cfg.tokens_per_frame, cfg.encoder_dim).astype(self._dtype),
                sincos_position_table(cfg.max_frames, cfg.encoder_dim).astype(self._dtype),
            )
        self._param("mask_token.encoder", self._normal((cfg.encoder_dim,)))
        for i in range(cfg.encoder_depth):
            self._block_params(f"enc.{i}", cfg.encoder_dim)
        self._linear_params("dec.embed", cfg.encoder_dim, cfg.decoder_dim)
        if cfg.mask_insertion == "decoder":
            self._param("mask_token.decoder", self._normal((1, cfg.decoder_dim)))
            self._param("pos.spatial.decoder", self._normal((cfg.tokens_per_frame, cfg.decoder_dim)))
            self._param("pos.frame.decoder", self._normal((cfg.max_frames, cfg.decoder_dim)))
        for i in range(cfg.decoder_depth):
            self._block_params(f"dec.{i}", cfg.decoder_dim)
        self._norm_params("dec.ln", cfg.decoder_dim)

    # -- task registry ------------------------------------------------------

    def register_task(self, task_id: str, out_channels: int = 1, embed_group: str | None = None) -> None:
        """Create (or share) the task's embedding path and prediction head.

        Tasks never alias parameters unless they declare the same
        ``embed_group``. Heads are shared across equal output channel
        counts, separate otherwise.
        """
        if task_id in self._tasks:
            existing_group, existing_c = self._tasks[task_id]
            wanted = embed_group or task_id
            if existing_group != wanted or existing_c != out_channels:
                raise RegistryError(f"task {task_id!r} already registered with different settings")
            return
        group = embed_group or task_id
        cfg = self.config
        if f"embed.{group}.patch.weight" not in self.params:
            p2 = cfg.patch_size**2
            self._linear_params(f"embed.{group}.patch", p2, cfg.encoder_dim)
            self._norm_params(f"embed.{group}.ln", cfg.encoder_dim)
            self._linear_params(f"embed.{group}.align", cfg.encoder_dim, cfg.encoder_dim)
        if out_channels not in self._head_channels:
            out_dim = out_channels * cfg.patch_size**2
            self._linear_params(f"head.c{out_channels}.fc1", cfg.decoder_dim, cfg.head_hidden_dim)
            self._linear_params(f"head.c{out_channels}.fc2", cfg.head_hidden_dim, out_dim)
            self._head_channels.add(out_channels)
        self._tasks[task_id] = (group, out_channels)
        self._registration_order.append((task_id, group, out_channels))

    def registered_tasks(self) -> list[str]:
        return list(self._tasks)

    def task_channels(self, task_id: str) -> int:
        self._require_task(task_id)
        return self._tasks[task_id][1]

    def _require_task(self, task_id: str) -> None:
        if task_id not in self._tasks:
            raise RegistryError(
                f"task {task_id!r} is not registered; call register_task before any forward pass"
            )

    # -- forward passes -----------------------------------------------------

    def _linear(self, x: ad.Tensor, prefix: str) -> ad.Tensor:
        return ad.add(ad.matmul(x, self.params[f"{prefix}.weight"]), self.params[f"{prefix}.bias"])

    def _layer_norm(self, x: ad.Tensor, prefix: str) -> ad.Tensor:
        return ad.layer_norm(x, self.params[f"{prefix}.gamma"], self.params[f"{prefix}.beta"])

    def _attention(self, x: ad.Tensor, prefix: str, heads: int) -> ad.Tensor:
        b, t, d = x.shape
        dh = d // heads
        parts = []
        for name in ("q", "k", "v"):
            h = ad.add(
                ad.matmul(x, self.params[f"{prefix}.w{name}"]), self.params[f"{prefix}.b{name}"]
            )
            parts.append(ad.permute(ad.reshape(h, (b, t, heads, dh)), (0, 2, 1, 3)))
        q, k, v = parts
        scores = ad.mul(ad.matmul(q, ad.permute(k, (0, 1, 3, 2))), 1.0 / np.sqrt(dh))
        ctx = ad.matmul(ad.softmax(scores, axis=-1), v)
        ctx = ad.reshape(ad.permute(ctx, (0, 2, 1, 3)), (b, t, d))
        return ad.add(ad.matmul(ctx, self.params[f"{prefix}.wo"]), self.params[f"{prefix}.bo"])

    def _block(self, x: ad.Tensor, prefix: str, heads: int) -> ad.Tensor:
        x = ad.add(x, self._attention(self._layer_norm(x, f"{prefix}.ln1"), f"{prefix}.attn", heads))
        h = self._layer_norm(x, f"{prefix}.ln2")
        h = self._linear(h, f"{prefix}.mlp.fc1")
        h = ad.gelu(h)
        h = self._linear(h, f"{prefix}.mlp.fc2")
        return ad.add(x, h)

    def _position_tables(self) -> tuple[ad.Tensor | np.ndarray, ad.Tensor | np.ndarray]:
        if self.config.pos_embedding == "learned":
            return self.params["pos.spatial"], self.params["pos.frame"]
        return self._fixed_pos

    def patch_embed(self, task_id: str, canvases: list[Canvas], mask: np.ndarray | None = None) -> TokenGrid:
        """Tokenize a batch of same-layout canvases for one task.

        ``mask`` is (batch, tokens) boolean; masked positions have their
        content embedding replaced by the encoder mask token (position and
        frame embeddings are still added afterwards, so masked tokens keep
        their addresses but none of their pixel content).
        """
        self._require_task(task_id)
        cfg = self.config
        if not canvases:
            raise ShapeError("patch_embed needs at least one canvas")
        n = canvases[0].frame_count
        if n > cfg.max_frames:
            raise CapacityError(f"canvas has {n} frames, model allows {cfg.max_frames}")
        for c in canvases:
            if c.frame_count != n or c.frame_size != cfg.canvas_frame_size:
                raise ShapeError(
                    f"all canvases must be {n} frames of {cfg.canvas_frame_size} px; "
                    f"got {c.frame_count} frames of {c.frame_size}"
                )

        group, _ = self._tasks[task_id]
        frames = np.stack([c.frames for c in canvases]).astype(self._dtype)  # (B, N, H, W)
        patches = patchify(frames, cfg.patch_size)  # (B, T, p*p)
        b, t, _ = patches.shape
        if mask is None:
            mask = np.zeros((b, t), dtype=bool)
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (b, t):
            raise ShapeError(f"mask shape {mask.shape} must be {(b, t)}")

        x = ad.Tensor(patches)
        x = self._linear(x, f"embed.{group}.patch")
        x = self._layer_norm(x, f"embed.{group}.ln")
        x = self._linear(x, f"embed.{group}.align")
        x = ad.replace_rows(x, mask, self.params["mask_token.encoder"])

        side = cfg.grid_side
        per_frame = cfg.tokens_per_frame
        frame_index = np.repeat(np.arange(n), per_frame)
        rows = np.tile(np.repeat(np.arange(side), side), n)
        cols = np.tile(np.tile(np.arange(side), side), n)
        spatial_idx = rows * side + cols
        pos_table, frame_table = self._position_tables()
        if isinstance(pos_table, ad.Tensor):
            pos = ad.gather_rows(pos_table, spatial_idx)
            fr = ad.gather_rows(frame_table, frame_index)
            x = ad.add(ad.add(x, pos), fr)
        else:
            x = ad.add(ad.add(x, pos_table[spatial_idx]), frame_table[frame_index])

        roles = np.repeat(np.asarray(canvases[0].roles, dtype=np.int8), per_frame)
        return TokenGrid(
            tokens=x,
            frame_index=frame_index,
            rows=rows,
            cols=cols,
            roles=roles,
            mask=mask,
            task_id=task_id,
            grid_side=side,
        )

    def encode(self, grid: TokenGrid) -> TokenGrid:
        """Apply the encoder blocks; all tokens attend to all tokens."""
        if grid.tokens.shape[-1] != self.config.encoder_dim:
            raise ShapeError(
                f"encode expects dim {self.config.encoder_dim}, got {grid.tokens.shape[-1]}"
            )
        x = grid.tokens
        for i in range(self.config.encoder_depth):
            x = self._block(x, f"enc.{i}", self.config.encoder_heads)
        return TokenGrid(
            tokens=x,
            frame_index=grid.frame_index,
            rows=grid.rows,
            cols=grid.cols,
            roles=grid.roles,
            mask=grid.mask,
            task_id=grid.task_id,
            grid_side=grid.grid_side,
        )

    def decode_predict(self, grid: TokenGrid, task_id: str | None = None) -> ad.Tensor:
        """Project to decoder width, run decoder blocks, emit pixel patches."""
        task_id = task_id or grid.task_id
        self._require_task(task_id)
        _, channels = self._tasks[task_id]
        x = self._linear(grid.tokens, "dec.embed")
        x = self._decoder_tail(x)
        return self._head(x, channels)

    def _decoder_tail(self, x: ad.Tensor) -> ad.Tensor:
        for i in range(self.config.decoder_depth):
            x = self._block(x, f"dec.{i}", self.config.decoder_heads)
        return self._layer_norm(x, "dec.ln")

    def _head(self, x: ad.Tensor, channels: int) -> ad.Tensor:
        h = self._linear(x, f"head.c{channels}.fc1")
        h = ad.gelu(h)
        return self._linear(h, f"head.c{channels}.fc2")

    def forward(self, task_id: str, canvases: list[Canvas], mask: np.ndarray | None = None) -> tuple[ad.Tensor, TokenGrid]:
        """Full pass: tokenize, encode, decode to per-token patch predictions."""
        if self.config.mask_insertion == "decoder":
            return self._forward_decoder_insertion(task_id, canvases, mask)
        grid = self.patch_embed(task_id, canvases, mask)
        encoded = self.encode(grid)
        return self.decode_predict(encoded, task_id), grid

    def _forward_decoder_insertion(self, task_id: str, canvases: list[Canvas], mask: np.ndarray | None):
        """Alternative circuit: encoder sees only visible tokens, the decoder
        re-inserts a decoder-width mask token at masked addresses."""
        grid = self.patch_embed(task_id, canvases, None)
        b, t, _ = grid.tokens.shape
        mask = np.zeros((b, t), dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
        if mask.shape != (b, t):
            raise ShapeError(f"mask shape {mask.shape} must be {(b, t)}")
        _, channels = self._tasks[task_id]
        cfg = self.config
        pos_dec = self.params["pos.spatial.decoder"]
        frame_dec = self.params["pos.frame.decoder"]
        spatial_idx = grid.rows * grid.grid_side + grid.cols

        outputs = []
        for i in range(b):
            visible = np.nonzero(~mask[i])[0]
            hidden = np.nonzero(mask[i])[0]
            enc_in = ad.take(ad.take(grid.tokens, np.array([i]), axis=0), visible, axis=1)
            x = enc_in
            for layer in range(cfg.encoder_depth):
                x = self._block(x, f"enc.{layer}", cfg.encoder_heads)
            x = self._linear(x, "dec.embed")
            if hidden.size:
                fills = ad.reshape(
                    ad.gather_rows(self.params["mask_token.decoder"], np.zeros(hidden.size, dtype=np.int64)),
                    (1, hidden.size, cfg.decoder_dim),
                )
                stacked_order = np.concatenate([visible, hidden])
                restore = np.argsort(stacked_order)
                full = ad.take(_concat_tokens(x, fills), restore, axis=1)
            else:
                full = x
            full = ad.add(full, ad.gather_rows(pos_dec, spatial_idx))
            full = ad.add(full, ad.gather_rows(frame_dec, grid.frame_index))
            full = self._decoder_tail(full)
            outputs.append(self._head(full, channels))

        preds = outputs[0] if b == 1 else _concat_batch(outputs)
        grid.mask = mask
        return preds, grid

    # -- parameter accounting ------------------------------------------------

    def count_parameters(self) -> tuple[int, dict[str, int]]:
        """Exact learnable scalar count, decomposed per component."""
        breakdown: dict[str, int] = {}
        for name, tensor in self.params.items():
            component = _component_of(name)
            breakdown[component] = breakdown.get(component, 0) + tensor.size
        return sum(breakdown.values()), breakdown


def _component_of(name: str) -> str:
    if name.startswith("embed."):
        return "task-embeddings"
    if name.startswith("pos.") or name.startswith("mask_token."):
        return "position-and-mask-embeddings"
    if name.startswith("enc."):
        return "encoder"
    if name.startswith("dec."):
        return "decoder"
    if name.startswith("head."):
        return "heads"
    return "other"


def _concat_tokens(a: ad.Tensor, b: ad.Tensor) -> ad.Tensor:
    """Concatenate along the token axis via take on a block layout."""
    ta, tb = a.shape[1], b.shape[1]
    joined = ad.primitive(
        np.concatenate([a.values, b.values], axis=1),
        [a, b],
        lambda g: [g[:, :ta], g[:, ta : ta + tb]],
    )
    return joined


def _concat_batch(parts: list[ad.Tensor]) -> ad.Tensor:
    sizes = [p.shape[0] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        return [g[offsets[i] : offsets[i + 1]] for i in range(len(parts))]

    return ad.primitive(np.concatenate([p.values for p in parts], axis=0), parts, vjp)


def count_parameters(model: InContextViT) -> tuple[int, dict[str, int]]:
    return model.count_parameters()


# -- checkpoints -------------------------------------------------------------


def save_checkpoint(model: InContextViT, path, extra: dict | None = None, opt_tensors: dict[str, np.ndarray] | None = None) -> None:
    """Write parameters plus a manifest of config and registry keys."""
    manifest = {
        "version": CHECKPOINT_VERSION,
        "config": asdict(model.config),
        "seed": model.seed,
        "tasks": [
            {"task_id": t, "embed_group": g, "out_channels": c}
            for t, g, c in model._registration_order
        ],
        "extra": extra or {},
    }
    tensors: dict[str, np.ndarray] = {f"param.{k}": v.values for k, v in model.params.items()}
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    tensors["__manifest__"] = np.frombuffer(blob, dtype=np.uint8)
    if opt_tensors:
        for k, v in opt_tensors.items():
            tensors[f"opt.{k}"] = v
    write_tensor_file(path, tensors)


def load_checkpoint(path) -> tuple[InContextViT, dict, dict[str, np.ndarray]]:
    """Rebuild a model from a checkpoint; returns (model, manifest, opt tensors)."""
    tensors = read_tensor_file(path)
    if "__manifest__" not in tensors:
        raise DataError(f"{path}: checkpoint has no manifest")
    manifest = json.loads(bytes(tensors["__manifest__"].tobytes()).decode("utf-8"))
    version = manifest.get("version")
    if version != CHECKPOINT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    config = ModelConfig(**manifest["config"])
    model = InContextViT(config, seed=int(manifest.get("seed", 0)))
    for entry in manifest["tasks"]:
        model.register_task(entry["task_id"], entry["out_channels"], entry["embed_group"])
    for name, tensor in model.params.items():
        key = f"param.{name}"
        if key not in tensors:
            raise DataError(f"{path}: checkpoint is missing parameter {name!r}")
        stored = tensors[key]
        if stored.shape != tensor.shape:
            raise DataError(
                f"{path}: parameter {name!r} has shape {stored.shape}, expected {tensor.shape}"
            )
        tensor.values[...] = stored.astype(tensor.dtype)
    opt_tensors = {k[4:]: v for k, v in tensors.items() if k.startswith("opt.")}
    return model, manifest, opt_tensors
