"""Prompt construction: task samples -> four-role canvases.

A canvas stacks the prompt pair and the query pair into one ordered frame
sequence (prompt input, prompt target, query input, query target), each
frame resized to the model's working resolution and mean-variance
normalized with an invertible per-frame record. At inference the missing
query target is replaced by zero placeholder frames flagged fully-masked.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .catalog import ModalityRegistry, TaskSpec
from .errors import RegistryError, SamplingError, ValidationError
from .imageops import resize
from .metrics import denormalize, mean_variance_normalize

ROLE_PROMPT_INPUT = 0
ROLE_PROMPT_TARGET = 1
ROLE_QUERY_INPUT = 2
ROLE_QUERY_TARGET = 3
ROLE_NAMES = ("prompt_input", "prompt_target", "query_input", "query_target")


@dataclass
class Frame:
    """A single 2-D observation in raw physical units.

    Construction performs no validation so that malformed frames can still
    be passed through :func:`validate_quadruple`, which reports rather
    than raises.
    """

    values: np.ndarray
    modality_id: str
    timestamp_minutes: int | None = None

    @property
    def size(self) -> tuple[int, int]:
        return tuple(np.asarray(self.values).shape)


@dataclass
class PromptQuadruple:
    """The four-role sample: one demonstration pair plus one query pair."""

    task_id: str
    prompt_input: list[Frame]
    prompt_target: list[Frame]
    query_input: list[Frame]
    query_target: list[Frame] | None = None  # absent at inference


@dataclass(frozen=True)
class Violation:
    role: str
    code: str
    message: str


@dataclass
class Canvas:
    """Tokenization-ready stack of N normalized frames with role metadata."""

    task_id: str
    frames: np.ndarray  # (N, H, W) float64, normalized
    roles: np.ndarray  # (N,) int8 role codes
    modality_ids: tuple[str, ...]
    timestamps: tuple[int | None, ...]
    norm_records: tuple[tuple[float, float], ...]  # per-frame (mean, std)
    placeholder: np.ndarray  # (N,) bool, True for synthetic fully-masked frames

    @property
    def frame_count(self) -> int:
        return self.frames.shape[0]

    @property
    def frame_size(self) -> int:
        return self.frames.shape[1]

    def role_indices(self, role: int) -> np.ndarray:
        return np.nonzero(self.roles == role)[0]

    def denormalized_frame(self, index: int) -> np.ndarray:
        return denormalize(self.frames[index], self.norm_records[index])


def _check_role(
    violations: list[Violation],
    role: str,
    frames,
    expected_modalities: Sequence[str],
) -> None:
    if frames is None:
        violations.append(Violation(role, "missing", f"{role} frames are missing"))
        return
    try:
        frame_list = list(frames)
    except TypeError:
        violations.append(Violation(role, "type", f"{role} is not a frame sequence"))
        return
    if len(frame_list) != len(expected_modalities):
        violations.append(
            Violation(
                role,
                "count",
                f"{role} has {len(frame_list)} frames, task declares {len(expected_modalities)}",
            )
        )
        return
    for i, (frame, modality) in enumerate(zip(frame_list, expected_modalities)):
        if not isinstance(frame, Frame):
            violations.append(Violation(role, "type", f"{role}[{i}] is not a Frame"))
            continue
        if frame.modality_id != modality:
            violations.append(
                Violation(
                    role,
                    "modality",
                    f"{role}[{i}] has modality {frame.modality_id!r}, task declares {modality!r}",
                )
            )
        values = np.asarray(frame.values)
        if values.ndim != 2 or values.size == 0:
            violations.append(
                Violation(role, "shape", f"{role}[{i}] is not a non-empty 2-D field")
            )
            continue
        if not np.all(np.isfinite(values.astype(np.float64, copy=False))):
            violations.append(Violation(role, "finite", f"{role}[{i}] contains non-finite values"))


def _check_offsets(
    violations: list[Violation],
    side: str,
    input_frames: list[Frame],
    target_frames: list[Frame] | None,
    spec: TaskSpec,
) -> None:
    if not spec.is_temporal:
        return
    stamps_in = [f.timestamp_minutes for f in input_frames if isinstance(f, Frame)]
    if any(s is None for s in stamps_in) or len(stamps_in) != len(spec.input_offsets_minutes):
        violations.append(
            Violation(f"{side}_input", "timestamps", f"{side} inputs need timestamps for this task")
        )
        return
    base = stamps_in[0] - spec.input_offsets_minutes[0]
    for s, off in zip(stamps_in, spec.input_offsets_minutes):
        if s - base != off:
            violations.append(
                Violation(
                    f"{side}_input",
                    "timestamps",
                    f"{side} input offsets {tuple(s - base for s in stamps_in)} != declared {spec.input_offsets_minutes}",
                )
            )
            return
    if target_frames is None or spec.target_offsets_minutes is None:
        return
    stamps_out = [f.timestamp_minutes for f in target_frames if isinstance(f, Frame)]
    if any(s is None for s in stamps_out) or len(stamps_out) != len(spec.target_offsets_minutes):
        violations.append(
            Violation(f"{side}_target", "timestamps", f"{side} targets need timestamps for this task")
        )
        return
    for s, off in zip(stamps_out, spec.target_offsets_minutes):
        if s - base != off:
            violations.append(
                Violation(
                    f"{side}_target",
                    "timestamps",
                    f"{side} target offsets do not follow the declared lead structure",
                )
            )
            return


def validate_quadruple(spec: TaskSpec, quad: PromptQuadruple) -> list[Violation]:
    """Check a quadruple against its task contract. Pure; never raises."""
    violations: list[Violation] = []
    try:
        if quad.task_id != spec.task_id:
            violations.append(
                Violation(
                    "quadruple",
                    "task",
                    f"quadruple is for task {quad.task_id!r}, spec is {spec.task_id!r}",
                )
            )
        _check_role(violations, "prompt_input", quad.prompt_input, spec.input_modalities)
        _check_role(violations, "prompt_target", quad.prompt_target, spec.target_modalities)
        _check_role(violations, "query_input", quad.query_input, spec.input_modalities)
        if quad.query_target is not None:
            _check_role(violations, "query_target", quad.query_target, spec.target_modalities)
        if not any(v.code in ("count", "type", "missing") for v in violations):
            _check_offsets(violations, "prompt", quad.prompt_input, quad.prompt_target, spec)
            _check_offsets(violations, "query", quad.query_input, quad.query_target, spec)
    except Exception as exc:  # totality guard: report, never crash
        violations.append(Violation("quadruple", "internal", f"unvalidatable input: {exc}"))
    return violations


def build_canvas(
    spec: TaskSpec,
    quad: PromptQuadruple,
    frame_size: int,
    registry: ModalityRegistry,
) -> Canvas:
    """Resize, normalize and stack a quadruple in role order.

    A missing query target is replaced by all-zero placeholder frames
    (flagged), so the canvas frame count never depends on whether the
    ground truth is known.
    """
    violations = validate_quadruple(spec, quad)
    if violations:
        listing = "; ".join(f"[{v.role}] {v.message}" for v in violations)
        raise ValidationError(f"quadruple violates task {spec.task_id!r}: {listing}")
    for modality_id in set(spec.input_modalities) | set(spec.target_modalities):
        if not registry.has(modality_id):
            raise RegistryError(f"modality {modality_id!r} is not registered")

    frames: list[np.ndarray] = []
    roles: list[int] = []
    modality_ids: list[str] = []
    timestamps: list[int | None] = []
    records: list[tuple[float, float]] = []
    placeholder: list[bool] = []

    def push(frame: Frame, role: int) -> None:
        stats = registry.stats(frame.modality_id)
        resized = resize(np.asarray(frame.values, dtype=np.float64), frame_size, "bicubic")
        frames.append(mean_variance_normalize(resized, stats))
        roles.append(role)
        modality_ids.append(frame.modality_id)
        timestamps.append(frame.timestamp_minutes)
        records.append(stats)
        placeholder.append(False)

    for frame in quad.prompt_input:
        push(frame, ROLE_PROMPT_INPUT)
    for frame in quad.prompt_target:
        push(frame, ROLE_PROMPT_TARGET)
    for frame in quad.query_input:
        push(frame, ROLE_QUERY_INPUT)
    if quad.query_target is not None:
        for frame in quad.query_target:
            push(frame, ROLE_QUERY_TARGET)
    else:
        for modality_id in spec.target_modalities:
            stats = registry.stats(modality_id)
            frames.append(np.zeros((frame_size, frame_size), dtype=np.float64))
            roles.append(ROLE_QUERY_TARGET)
            modality_ids.append(modality_id)
            timestamps.append(None)
            records.append(stats)
            placeholder.append(True)

    return Canvas(
        task_id=spec.task_id,
        frames=np.stack(frames),
        roles=np.asarray(roles, dtype=np.int8),
        modality_ids=tuple(modality_ids),
        timestamps=tuple(timestamps),
        norm_records=tuple(records),
        placeholder=np.asarray(placeholder, dtype=bool),
    )


@dataclass(frozen=True)
class SampleRef:
    """Pool entry: where a sample lives plus its precomputed target peak."""

    event_id: str
    anchor_minutes: int
    target_peak: float = 0.0


@dataclass
class PromptPolicy:
    """How to pick the demonstration pair for a query.

    kind "random" draws uniformly from the pool; "high" restricts to
    samples whose target intensity clears the modality's bar; "searched"
    picks the candidate whose input is closest (RMSE) to the query input.
    The query's own event is excluded unless ``allow_self`` is set.
    """

    kind: str = "random"
    exclude_event: str | None = None
    allow_self: bool = False
    query_input: list[Frame] | None = None
    intensity_threshold: float | None = None


def sample_prompt_pair(dataset, task_id: str, rng: np.random.Generator, policy: PromptPolicy):
    """Pick one (prompt_input, prompt_target) pair from a dataset pool.

    ``dataset`` must offer ``prompt_candidates(task_id) -> list[SampleRef]``
    and ``load_pair(task_id, ref) -> (input frames, target frames)``.
    """
    refs = list(dataset.prompt_candidates(task_id))
    if policy.exclude_event is not None and not policy.allow_self:
        refs = [r for r in refs if r.event_id != policy.exclude_event]
    if not refs:
        raise SamplingError(f"no prompt candidates for task {task_id!r} after exclusions")

    if policy.kind == "random":
        ref = refs[int(rng.integers(len(refs)))]
    elif policy.kind == "high":
        spec_threshold = policy.intensity_threshold
        comparison = dataset.target_comparison(task_id)
        if spec_threshold is None:
            spec_threshold = dataset.target_intensity_threshold(task_id)
        if comparison == "le":
            eligible = [r for r in refs if r.target_peak <= spec_threshold]
        else:
            eligible = [r for r in refs if r.target_peak >= spec_threshold]
        if not eligible:
            raise SamplingError(
                f"high-quality prompt pool for task {task_id!r} is empty "
                f"({len(refs)} candidates, none past {spec_threshold})"
            )
        ref = eligible[int(rng.integers(len(eligible)))]
    elif policy.kind == "searched":
        if not policy.query_input:
            raise SamplingError("searched prompt policy needs the query input frames")
        query = [np.asarray(f.values, dtype=np.float64) for f in policy.query_input]
        best_ref = None
        best_score = None
        for ref in refs:
            inputs, _ = dataset.load_pair(task_id, ref)
            score = 0.0
            for cand, q in zip(inputs, query):
                cv = np.asarray(cand.values, dtype=np.float64)
                if cv.shape != q.shape:
                    cv = resize(cv, q.shape)
                score += float(np.sqrt(((cv - q) ** 2).mean()))
            if best_score is None or score < best_score:
                best_score = score
                best_ref = ref
        ref = best_ref
    else:
        raise SamplingError(f"unknown prompt policy kind {policy.kind!r}")

    return dataset.load_pair(task_id, ref)
