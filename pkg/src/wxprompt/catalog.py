"""Modality registry and the task catalogue.

A modality declares how a raw observation relates to the synthetic latent
field (its observation map, and the inverse when one exists), the
comparison direction for "event" pixels (warm radar echoes are high
values, cold IR tops are low values), and an intensity threshold used by
the high-quality prompt policy. Normalization statistics are data-derived
and get attached to a registry after a training split is frozen.

The task catalogue is the startup file listing every task the harness
knows how to derive, prompt, and evaluate. Schema (JSON):

    {"version": 1,
     "tasks": [
       {"task_id": str,
        "task_format": "single-modal" | "cross-modal" | "time-series",
        "input_modalities": [str, ...],      # one per input frame
        "target_modalities": [str, ...],     # one per target frame
        "input_offsets_minutes": [int, ...] | null,
        "target_offsets_minutes": [int, ...] | null,
        "threshold_set_id": str,             # key into the threshold table
        "embed_group": str,                  # tasks sharing patch embeddings
        "derivation": str,                   # how samples are derived
        "params": {...}}]}                   # derivation parameters
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .errors import ConfigError, DataError, RegistryError

FORMATS = ("single-modal", "cross-modal", "time-series")
DERIVATIONS = ("identity", "spatial-sr", "temporal-sr", "extrapolation", "translation", "deblur")


@dataclass(frozen=True)
class Modality:
    """One observation channel, possibly synthetic."""

    modality_id: str
    units: str
    observe: Callable[[np.ndarray], np.ndarray] | None = None  # g(latent) -> raw
    inverse: Callable[[np.ndarray], np.ndarray] | None = None  # declared inverse, if any
    event_comparison: str = "ge"  # "ge": high values are events, "le": low values
    event_threshold: float = 50.0  # raw-unit intensity bar for high-quality prompts

    @property
    def invertible(self) -> bool:
        return self.inverse is not None


# Observation maps for the synthetic world. The latent field is
# non-negative and typically below ~2.5.

def _observe_a(latent: np.ndarray) -> np.ndarray:
    # Radar analogue: affine, strictly monotone, roughly 0..400.
    return 170.0 * latent


def _inverse_a(raw: np.ndarray) -> np.ndarray:
    return np.asarray(raw, dtype=np.float64) / 170.0


def _observe_b(latent: np.ndarray) -> np.ndarray:
    # Saturating channel, strictly monotone, 0..255.
    return 255.0 * np.tanh(latent / 0.8)


def _inverse_b(raw: np.ndarray) -> np.ndarray:
    scaled = np.clip(np.asarray(raw, dtype=np.float64) / 255.0, -0.999999999, 0.999999999)
    return 0.8 * np.arctanh(scaled)


def _observe_c(latent: np.ndarray) -> np.ndarray:
    # Infrared analogue: strong latent means cold (very negative) tops.
    return 2000.0 - 9600.0 * np.tanh(latent / 1.1)


def _inverse_c(raw: np.ndarray) -> np.ndarray:
    scaled = np.clip((2000.0 - np.asarray(raw, dtype=np.float64)) / 9600.0, -0.999999999, 0.999999999)
    return 1.1 * np.arctanh(scaled)


def _observe_d(latent: np.ndarray) -> np.ndarray:
    # Visible-band analogue; non-monotone on purpose, hence no inverse.
    return 6800.0 * np.sin(np.pi * latent / 2.4) ** 2


def default_modalities() -> list[Modality]:
    return [
        Modality("synthetic-a", "vil-analogue", _observe_a, _inverse_a, "ge", 50.0),
        Modality("synthetic-b", "sat-analogue", _observe_b, _inverse_b, "ge", 100.0),
        Modality("synthetic-c", "ir-analogue", _observe_c, _inverse_c, "le", -4000.0),
        Modality("synthetic-d", "vis-analogue", _observe_d, None, "ge", 2000.0),
        # Real sensor channels: no synthetic observation map, registry entries
        # exist so externally loaded frames can be normalized and scored.
        Modality("vil", "vil", None, None, "ge", 50.0),
        Modality("ir069", "brightness", None, None, "le", -4000.0),
        Modality("ir107", "brightness", None, None, "ge", -4000.0),
        Modality("vis", "reflectance", None, None, "ge", 2000.0),
    ]


class ModalityRegistry:
    """Modality declarations plus per-modality normalization statistics."""

    def __init__(self, modalities: list[Modality] | None = None):
        self._modalities: dict[str, Modality] = {}
        self._stats: dict[str, tuple[float, float]] = {}
        for m in modalities if modalities is not None else default_modalities():
            self.add(m)

    def add(self, modality: Modality) -> None:
        self._modalities[modality.modality_id] = modality

    def get(self, modality_id: str) -> Modality:
        try:
            return self._modalities[modality_id]
        except KeyError:
            raise RegistryError(f"unknown modality {modality_id!r}") from None

    def has(self, modality_id: str) -> bool:
        return modality_id in self._modalities

    def ids(self) -> list[str]:
        return list(self._modalities)

    def set_stats(self, modality_id: str, mean_value: float, std_value: float) -> None:
        self.get(modality_id)
        if not np.isfinite(mean_value) or not np.isfinite(std_value):
            raise DataError(f"non-finite stats for {modality_id!r}")
        if std_value <= 0:
            raise DataError(
                f"stats for {modality_id!r} have std {std_value}; a constant training field "
                "cannot define a normalization"
            )
        self._stats[modality_id] = (float(mean_value), float(std_value))

    def stats(self, modality_id: str) -> tuple[float, float]:
        self.get(modality_id)
        try:
            return self._stats[modality_id]
        except KeyError:
            raise RegistryError(f"no normalization stats registered for {modality_id!r}") from None

    def has_stats(self, modality_id: str) -> bool:
        return modality_id in self._stats

    def all_stats(self) -> dict[str, tuple[float, float]]:
        return dict(self._stats)

    def observe(self, modality_id: str, latent: np.ndarray) -> np.ndarray:
        m = self.get(modality_id)
        if m.observe is None:
            raise RegistryError(f"modality {modality_id!r} has no synthetic observation map")
        return m.observe(latent)


@dataclass(frozen=True)
class TaskSpec:
    """One weather task: frame layout, modalities, and derivation recipe."""

    task_id: str
    task_format: str
    input_modalities: tuple[str, ...]
    target_modalities: tuple[str, ...]
    input_offsets_minutes: tuple[int, ...] | None = None
    target_offsets_minutes: tuple[int, ...] | None = None
    threshold_set_id: str = ""
    embed_group: str = ""
    derivation: str = "identity"
    params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.task_format not in FORMATS:
            raise ConfigError(f"task {self.task_id}: unknown format {self.task_format!r}")
        if self.derivation not in DERIVATIONS:
            raise ConfigError(f"task {self.task_id}: unknown derivation {self.derivation!r}")
        if not self.input_modalities or not self.target_modalities:
            raise ConfigError(f"task {self.task_id}: needs input and target modalities")
        if self.input_offsets_minutes is not None and len(self.input_offsets_minutes) != len(
            self.input_modalities
        ):
            raise ConfigError(f"task {self.task_id}: offsets must match input frame count")
        if self.target_offsets_minutes is not None and len(self.target_offsets_minutes) != len(
            self.target_modalities
        ):
            raise ConfigError(f"task {self.task_id}: offsets must match target frame count")
        if not self.threshold_set_id:
            object.__setattr__(self, "threshold_set_id", self.target_modalities[0])
        if not self.embed_group:
            object.__setattr__(self, "embed_group", self.task_id)

    @property
    def input_count(self) -> int:
        return len(self.input_modalities)

    @property
    def target_count(self) -> int:
        return len(self.target_modalities)

    @property
    def frames_per_canvas(self) -> int:
        # Prompt pair plus query pair.
        return 2 * (self.input_count + self.target_count)

    @property
    def is_temporal(self) -> bool:
        return self.input_offsets_minutes is not None

    def span_minutes(self) -> tuple[int, int]:
        """(earliest, latest) frame offset the task touches, in minutes."""
        if not self.is_temporal:
            return (0, 0)
        offsets = list(self.input_offsets_minutes) + list(self.target_offsets_minutes or [])
        return (min(offsets), max(offsets))

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "task_format": self.task_format,
            "input_modalities": list(self.input_modalities),
            "target_modalities": list(self.target_modalities),
            "input_offsets_minutes": list(self.input_offsets_minutes)
            if self.input_offsets_minutes is not None
            else None,
            "target_offsets_minutes": list(self.target_offsets_minutes)
            if self.target_offsets_minutes is not None
            else None,
            "threshold_set_id": self.threshold_set_id,
            "embed_group": self.embed_group,
            "derivation": self.derivation,
            "params": dict(self.params),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TaskSpec":
        return cls(
            task_id=data["task_id"],
            task_format=data["task_format"],
            input_modalities=tuple(data["input_modalities"]),
            target_modalities=tuple(data["target_modalities"]),
            input_offsets_minutes=tuple(data["input_offsets_minutes"])
            if data.get("input_offsets_minutes") is not None
            else None,
            target_offsets_minutes=tuple(data["target_offsets_minutes"])
            if data.get("target_offsets_minutes") is not None
            else None,
            threshold_set_id=data.get("threshold_set_id", ""),
            embed_group=data.get("embed_group", ""),
            derivation=data.get("derivation", "identity"),
            params=dict(data.get("params", {})),
        )


# The ten core tasks (synthetic analogues of radar/satellite work), the
# out-of-distribution probes, and the prompt-disambiguation families that
# share one query-input modality and one patch-embedding group.

CORE_TASK_IDS = (
    "spatial-sr-a4",
    "spatial-sr-c4",
    "temporal-sr-a30",
    "deblur-a",
    "translate-bc2a",
    "translate-c2b",
    "translate-c2d",
    "translate-db2c",
    "extrap-c",
    "extrap-a",
)

OOD_TASK_IDS = ("ood-extrap-b", "ood-translate-b2c", "ood-temporal-sr-a15")

DISAMBIGUATION_TASK_IDS = (
    "identity-a",
    "deblur-a",
    "translate-a2b",
    "translate-a2c",
    "spatial-sr-a2",
)


def default_tasks() -> list[TaskSpec]:
    a, b, c, d = "synthetic-a", "synthetic-b", "synthetic-c", "synthetic-d"
    extrap_in = (0, 30, 60, 90)
    extrap_out = (120, 180)
    shared = "shared-a"
    return [
        TaskSpec("spatial-sr-a4", "single-modal", (a,), (a,), derivation="spatial-sr", params={"factor": 4}),
        TaskSpec("spatial-sr-c4", "single-modal", (c,), (c,), derivation="spatial-sr", params={"factor": 4}),
        TaskSpec(
            "temporal-sr-a30",
            "single-modal",
            (a, a),
            (a,),
            input_offsets_minutes=(0, 60),
            target_offsets_minutes=(30,),
            derivation="temporal-sr",
        ),
        TaskSpec("deblur-a", "single-modal", (a,), (a,), embed_group=shared, derivation="deblur", params={"sigma": 1.5}),
        TaskSpec("translate-bc2a", "cross-modal", (b, c), (a,), derivation="translation"),
        TaskSpec("translate-c2b", "cross-modal", (c,), (b,), derivation="translation"),
        TaskSpec("translate-c2d", "cross-modal", (c,), (d,), derivation="translation"),
        TaskSpec("translate-db2c", "cross-modal", (d, b), (c,), derivation="translation"),
        TaskSpec(
            "extrap-c",
            "time-series",
            (c,) * 4,
            (c,) * 2,
            input_offsets_minutes=extrap_in,
            target_offsets_minutes=extrap_out,
            derivation="extrapolation",
        ),
        TaskSpec(
            "extrap-a",
            "time-series",
            (a,) * 4,
            (a,) * 2,
            input_offsets_minutes=extrap_in,
            target_offsets_minutes=extrap_out,
            derivation="extrapolation",
        ),
        # Out-of-distribution probes: a modality never used for
        # extrapolation in the core set, a reversed translation direction,
        # and temporal interpolation at half the trained gap.
        TaskSpec(
            "ood-extrap-b",
            "time-series",
            (b,) * 4,
            (b,) * 2,
            input_offsets_minutes=extrap_in,
            target_offsets_minutes=extrap_out,
            derivation="extrapolation",
        ),
        TaskSpec("ood-translate-b2c", "cross-modal", (b,), (c,), derivation="translation"),
        TaskSpec(
            "ood-temporal-sr-a15",
            "single-modal",
            (a, a),
            (a,),
            input_offsets_minutes=(0, 30),
            target_offsets_minutes=(15,),
            derivation="temporal-sr",
        ),
        # Prompt-disambiguation families: same query-input modality, shared
        # patch-embedding group, so only the prompt pair identifies the task.
        TaskSpec("identity-a", "single-modal", (a,), (a,), embed_group=shared, derivation="identity"),
        TaskSpec("translate-a2b", "cross-modal", (a,), (b,), embed_group=shared, derivation="translation"),
        TaskSpec("translate-a2c", "cross-modal", (a,), (c,), embed_group=shared, derivation="translation"),
        TaskSpec("spatial-sr-a2", "single-modal", (a,), (a,), embed_group=shared, derivation="spatial-sr", params={"factor": 2}),
    ]


class TaskCatalog:
    """All known tasks, loaded at startup from the catalogue file."""

    def __init__(self, tasks: list[TaskSpec] | None = None):
        tasks = tasks if tasks is not None else default_tasks()
        self._tasks: dict[str, TaskSpec] = {}
        for t in tasks:
            if t.task_id in self._tasks:
                raise ConfigError(f"duplicate task id {t.task_id!r} in catalogue")
            self._tasks[t.task_id] = t

    def get(self, task_id: str) -> TaskSpec:
        try:
            return self._tasks[task_id]
        except KeyError:
            raise RegistryError(f"task {task_id!r} is not in the catalogue") from None

    def has(self, task_id: str) -> bool:
        return task_id in self._tasks

    def ids(self) -> list[str]:
        return list(self._tasks)

    def __iter__(self):
        return iter(self._tasks.values())

    def save(self, path) -> None:
        payload = {"version": 1, "tasks": [t.to_dict() for t in self._tasks.values()]}
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=False)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "TaskCatalog":
        try:
            with open(path) as fh:
                payload = json.load(fh)
        except FileNotFoundError:
            raise DataError(f"task catalogue not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise DataError(f"task catalogue {path} is not valid JSON: {exc}") from None
        if payload.get("version") != 1:
            raise DataError(f"task catalogue {path} has unsupported version {payload.get('version')}")
        return cls([TaskSpec.from_dict(t) for t in payload["tasks"]])
