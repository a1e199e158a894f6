"""Event storage, dataset splitting, and task-sample derivation.

Events persist as one tensor container each (the latent history plus a
small JSON meta blob); observation modalities are recomputed from the
latent on access, which keeps every modality pixel-aligned by
construction. A dataset directory looks like:

    <root>/manifest.json      split membership, stats, per-task sample index
    <root>/catalog.json       task catalogue (shared with the prompt builder)
    <root>/events/<id>.wxt    one container per event

Splits partition by event, never by frame, and normalization statistics
are computed on the training split only.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .catalog import ModalityRegistry, TaskCatalog, TaskSpec
from .errors import ConfigError, DataError
from .imageops import gaussian_blur, resize
from .prompts import Frame, PromptPolicy, PromptQuadruple, SampleRef, sample_prompt_pair
from .synthetic import Event, SyntheticWorldConfig, generate_event
from .tensorfile import read_tensor_file, write_tensor_file

SPLITS = ("train", "val", "test")


class EventStore:
    """Directory of per-event tensor containers."""

    def __init__(self, directory, cache_size: int = 64):
        self.directory = Path(directory)
        self._cache: dict[str, Event] = {}
        self._cache_size = cache_size

    def path_for(self, event_id: str) -> Path:
        return self.directory / f"{event_id}.wxt"

    def write_event(self, event: Event) -> None:
        self.directory.mkdir(parents=True, exist_ok=True)
        meta = json.dumps(
            {
                "event_id": event.event_id,
                "seed": event.seed,
                "cadence_minutes": event.cadence_minutes,
            }
        ).encode("utf-8")
        write_tensor_file(
            self.path_for(event.event_id),
            {
                "latent": event.latent,
                "__meta__": np.frombuffer(meta, dtype=np.uint8),
            },
        )

    def load_event(self, event_id: str) -> Event:
        cached = self._cache.get(event_id)
        if cached is not None:
            return cached
        path = self.path_for(event_id)
        if not path.exists():
            raise DataError(f"event {event_id!r} not found under {self.directory}")
        tensors = read_tensor_file(path)
        meta = json.loads(bytes(tensors["__meta__"].tobytes()).decode("utf-8"))
        event = Event(
            event_id=meta["event_id"],
            seed=int(meta["seed"]),
            cadence_minutes=int(meta["cadence_minutes"]),
            latent=tensors["latent"],
        )
        if len(self._cache) >= self._cache_size:
            self._cache.pop(next(iter(self._cache)))
        self._cache[event_id] = event
        return event

    def event_ids(self) -> list[str]:
        if not self.directory.exists():
            return []
        return sorted(p.stem for p in self.directory.glob("*.wxt"))


def generate_events(store: EventStore, world: SyntheticWorldConfig, count: int, seed: int) -> list[str]:
    """Generate and persist ``count`` events; deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    event_seeds = rng.integers(0, 2**62, size=count)
    ids = []
    for i in range(count):
        event = generate_event(world, int(event_seeds[i]), event_id=f"ev{i:06d}")
        store.write_event(event)
        ids.append(event.event_id)
    return ids


@dataclass
class DatasetManifest:
    """One split's view of the dataset."""

    split: str
    event_ids: list[str]
    stats: dict[str, tuple[float, float]]  # modality -> (mean, std), train-derived
    sample_index: dict[str, list[SampleRef]]  # task -> refs within this split
    version: int = 1
    world: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "split": self.split,
            "event_ids": list(self.event_ids),
            "stats": {k: [float(m), float(s)] for k, (m, s) in self.stats.items()},
            "sample_index": {
                task: [[r.event_id, r.anchor_minutes, r.target_peak] for r in refs]
                for task, refs in self.sample_index.items()
            },
            "world": self.world,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DatasetManifest":
        return cls(
            split=data["split"],
            event_ids=list(data["event_ids"]),
            stats={k: (float(v[0]), float(v[1])) for k, v in data["stats"].items()},
            sample_index={
                task: [SampleRef(r[0], int(r[1]), float(r[2])) for r in refs]
                for task, refs in data["sample_index"].items()
            },
            version=int(data.get("version", 1)),
            world=dict(data.get("world", {})),
        )


def partition_event_ids(event_ids: list[str], counts, seed: int) -> tuple[list[str], list[str], list[str]]:
    """Seeded shuffle, then cut into train/val/test by event id."""
    ids = list(event_ids)
    if isinstance(counts, (tuple, list)) and len(counts) == 3 and all(
        isinstance(c, float) and c <= 1.0 for c in counts
    ):
        counts = tuple(int(round(c * len(ids))) for c in counts)
    n_train, n_val, n_test = (int(c) for c in counts)
    if n_train + n_val + n_test > len(ids):
        raise ConfigError(
            f"split counts {counts} over-allocate the {len(ids)} available events"
        )
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(ids))
    shuffled = [ids[i] for i in order]
    train = sorted(shuffled[:n_train])
    val = sorted(shuffled[n_train : n_train + n_val])
    test = sorted(shuffled[n_train + n_val : n_train + n_val + n_test])
    return train, val, test


def _valid_anchors(spec: TaskSpec, event: Event, anchors_per_event: int) -> list[int]:
    lo, hi = spec.span_minutes()
    first = max(0, -lo)
    last = event.duration_minutes - max(0, hi)
    if last < first:
        return []
    cadence = event.cadence_minutes
    first_idx = (first + cadence - 1) // cadence
    last_idx = last // cadence
    if last_idx < first_idx:
        return []
    picks = np.unique(
        np.linspace(first_idx, last_idx, num=min(anchors_per_event, last_idx - first_idx + 1))
        .round()
        .astype(int)
    )
    return [int(i) * cadence for i in picks]


def _target_peak(spec: TaskSpec, targets: list[Frame], registry: ModalityRegistry) -> float:
    modality = registry.get(spec.target_modalities[0])
    values = np.concatenate([np.asarray(f.values, dtype=np.float64).ravel() for f in targets])
    return float(values.min() if modality.event_comparison == "le" else values.max())


def derive_task_sample(
    spec: TaskSpec,
    event: Event,
    timestamp_minutes: int,
    registry: ModalityRegistry,
    ops_config: dict | None = None,
) -> tuple[list[Frame], list[Frame]]:
    """Produce one (inputs, targets) pair for a task anchored at a timestamp.

    Timestamps outside the event raise :class:`DataError`.
    """
    params = dict(spec.params)
    if ops_config:
        params.update(ops_config)
    anchor = int(timestamp_minutes)

    def observed(modality_id: str, offset: int) -> tuple[np.ndarray, int]:
        t = anchor + offset
        return registry.observe(modality_id, event.latent_at(t)), t

    if spec.derivation == "identity":
        raw, t = observed(spec.input_modalities[0], 0)
        return (
            [Frame(raw.copy(), spec.input_modalities[0], t)],
            [Frame(raw.copy(), spec.target_modalities[0], t)],
        )

    if spec.derivation == "spatial-sr":
        factor = int(params.get("factor", 4))
        raw, t = observed(spec.target_modalities[0], 0)
        _, degraded = spatial_sr_degrade(raw, factor)
        return (
            [Frame(degraded, spec.input_modalities[0], t)],
            [Frame(raw, spec.target_modalities[0], t)],
        )

    if spec.derivation == "deblur":
        sigma = float(params.get("sigma", 1.5))
        raw, t = observed(spec.target_modalities[0], 0)
        return (
            [Frame(gaussian_blur(raw, sigma), spec.input_modalities[0], t)],
            [Frame(raw, spec.target_modalities[0], t)],
        )

    if spec.derivation == "translation":
        inputs = []
        for modality_id in spec.input_modalities:
            raw, t = observed(modality_id, 0)
            inputs.append(Frame(raw, modality_id, t))
        targets = []
        for modality_id in spec.target_modalities:
            raw, t = observed(modality_id, 0)
            targets.append(Frame(raw, modality_id, t))
        return inputs, targets

    if spec.derivation in ("temporal-sr", "extrapolation"):
        inputs = []
        for modality_id, offset in zip(spec.input_modalities, spec.input_offsets_minutes):
            raw, t = observed(modality_id, offset)
            inputs.append(Frame(raw, modality_id, t))
        targets = []
        for modality_id, offset in zip(spec.target_modalities, spec.target_offsets_minutes):
            raw, t = observed(modality_id, offset)
            targets.append(Frame(raw, modality_id, t))
        return inputs, targets

    raise ConfigError(f"task {spec.task_id}: unknown derivation {spec.derivation!r}")


def spatial_sr_degrade(hr: np.ndarray, factor: int) -> tuple[np.ndarray, np.ndarray]:
    """Downsample by ``factor`` then upsample back; returns (LR, degraded input)."""
    if factor < 2 or hr.shape[0] % factor or hr.shape[1] % factor:
        raise ConfigError(f"SR factor {factor} does not divide frame size {hr.shape}")
    lr = resize(hr, (hr.shape[0] // factor, hr.shape[1] // factor), "bicubic")
    return lr, resize(lr, hr.shape, "bicubic")


def compute_split_stats(
    store: EventStore,
    event_ids: list[str],
    modalities: list[str],
    registry: ModalityRegistry,
) -> dict[str, tuple[float, float]]:
    """Population mean/std per modality over all frames of the given events."""
    sums = {m: 0.0 for m in modalities}
    sumsq = {m: 0.0 for m in modalities}
    count = {m: 0 for m in modalities}
    for event_id in event_ids:
        event = store.load_event(event_id)
        for m in modalities:
            raw = registry.observe(m, event.latent)
            sums[m] += float(raw.sum())
            sumsq[m] += float((raw * raw).sum())
            count[m] += raw.size
    stats = {}
    for m in modalities:
        if count[m] == 0:
            raise DataError(f"no frames available to compute stats for {m!r}")
        mean_value = sums[m] / count[m]
        var = max(sumsq[m] / count[m] - mean_value * mean_value, 0.0)
        stats[m] = (mean_value, float(np.sqrt(var)))
    return stats


def split_manifest(
    store: EventStore,
    catalog: TaskCatalog,
    registry: ModalityRegistry,
    world: SyntheticWorldConfig,
    counts,
    seed: int,
    anchors_per_event: int = 3,
) -> tuple[DatasetManifest, DatasetManifest, DatasetManifest]:
    """Partition events, freeze train-split stats, and index task samples."""
    train_ids, val_ids, test_ids = partition_event_ids(store.event_ids(), counts, seed)
    stats = compute_split_stats(store, train_ids, list(world.modalities), registry)
    for modality_id, (mean_value, std_value) in stats.items():
        registry.set_stats(modality_id, mean_value, std_value)

    manifests = []
    for split, ids in zip(SPLITS, (train_ids, val_ids, test_ids)):
        index: dict[str, list[SampleRef]] = {}
        for spec in catalog:
            refs: list[SampleRef] = []
            for event_id in ids:
                event = store.load_event(event_id)
                for anchor in _valid_anchors(spec, event, anchors_per_event):
                    _, targets = derive_task_sample(spec, event, anchor, registry)
                    refs.append(SampleRef(event_id, anchor, _target_peak(spec, targets, registry)))
            index[spec.task_id] = refs
        manifests.append(
            DatasetManifest(
                split=split,
                event_ids=list(ids),
                stats=dict(stats),
                sample_index=index,
                world=world.to_dict(),
            )
        )
    return tuple(manifests)


def save_manifests(path, manifests: tuple[DatasetManifest, ...]) -> None:
    payload = {
        "version": 1,
        "splits": {m.split: m.to_dict() for m in manifests},
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)
        fh.write("\n")


def load_manifests(path) -> dict[str, DatasetManifest]:
    try:
        with open(path) as fh:
            payload = json.load(fh)
    except FileNotFoundError:
        raise DataError(f"manifest not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"manifest {path} is not valid JSON: {exc}") from None
    if payload.get("version") != 1:
        raise DataError(f"manifest {path} has unsupported version {payload.get('version')}")
    return {name: DatasetManifest.from_dict(d) for name, d in payload["splits"].items()}


class TaskSampleDataset:
    """One split's sample pool, servicing prompt sampling and evaluation."""

    def __init__(
        self,
        store: EventStore,
        manifest: DatasetManifest,
        catalog: TaskCatalog,
        registry: ModalityRegistry,
    ):
        self.store = store
        self.manifest = manifest
        self.catalog = catalog
        self.registry = registry
        for modality_id, (mean_value, std_value) in manifest.stats.items():
            if not registry.has_stats(modality_id):
                registry.set_stats(modality_id, mean_value, std_value)

    def sample_refs(self, task_id: str) -> list[SampleRef]:
        try:
            return list(self.manifest.sample_index[task_id])
        except KeyError:
            raise DataError(
                f"task {task_id!r} is not indexed in split {self.manifest.split!r}"
            ) from None

    # Prompt-pool protocol used by sample_prompt_pair.
    def prompt_candidates(self, task_id: str) -> list[SampleRef]:
        return self.sample_refs(task_id)

    def load_pair(self, task_id: str, ref: SampleRef) -> tuple[list[Frame], list[Frame]]:
        spec = self.catalog.get(task_id)
        event = self.store.load_event(ref.event_id)
        return derive_task_sample(spec, event, ref.anchor_minutes, self.registry)

    def target_comparison(self, task_id: str) -> str:
        spec = self.catalog.get(task_id)
        return self.registry.get(spec.target_modalities[0]).event_comparison

    def target_intensity_threshold(self, task_id: str) -> float:
        spec = self.catalog.get(task_id)
        return self.registry.get(spec.target_modalities[0]).event_threshold

    def sample_weights(self, task_id: str, oversample_intensity: float = 0.0) -> np.ndarray:
        """Uniform by default; >0 tilts sampling toward intense-target events."""
        refs = self.sample_refs(task_id)
        n = len(refs)
        if n == 0:
            return np.zeros(0)
        if oversample_intensity <= 0:
            return np.full(n, 1.0 / n)
        comparison = self.target_comparison(task_id)
        peaks = np.asarray([r.target_peak for r in refs], dtype=np.float64)
        order = np.argsort(peaks if comparison == "ge" else -peaks)
        ranks = np.empty(n, dtype=np.float64)
        ranks[order] = np.linspace(0.0, 1.0, n) if n > 1 else 0.5
        weights = 1.0 + oversample_intensity * ranks
        return weights / weights.sum()

    def quadruple(
        self,
        task_id: str,
        query_ref: SampleRef,
        rng: np.random.Generator,
        policy: PromptPolicy | None = None,
        with_target: bool = True,
        prompt_pool: "TaskSampleDataset | None" = None,
    ) -> PromptQuadruple:
        """Assemble a full four-role sample around one query reference.

        Prompt pairs come from ``prompt_pool`` (default: this split); the
        query's own event is excluded unless the policy allows it.
        """
        pool = prompt_pool if prompt_pool is not None else self
        policy = policy or PromptPolicy()
        query_inputs, query_targets = self.load_pair(task_id, query_ref)
        if policy.kind == "searched" and policy.query_input is None:
            policy.query_input = query_inputs
        if policy.exclude_event is None:
            policy.exclude_event = query_ref.event_id
        prompt_inputs, prompt_targets = sample_prompt_pair(pool, task_id, rng, policy)
        return PromptQuadruple(
            task_id=task_id,
            prompt_input=prompt_inputs,
            prompt_target=prompt_targets,
            query_input=query_inputs,
            query_target=query_targets if with_target else None,
        )
