"""Shared fixtures: a small on-disk dataset reused across test modules."""

from dataclasses import dataclass

import pytest

from wxprompt.catalog import ModalityRegistry, TaskCatalog
from wxprompt.datasets import (
    DatasetManifest,
    EventStore,
    TaskSampleDataset,
    generate_events,
    save_manifests,
    split_manifest,
)
from wxprompt.synthetic import SyntheticWorldConfig

TINY_WORLD = SyntheticWorldConfig(grid_size=32, frames_per_event=48)


@dataclass
class DatasetBundle:
    root: object
    world: SyntheticWorldConfig
    store: EventStore
    catalog: TaskCatalog
    registry: ModalityRegistry
    manifests: dict[str, DatasetManifest]

    def view(self, split: str) -> TaskSampleDataset:
        return TaskSampleDataset(self.store, self.manifests[split], self.catalog, self.registry)


def build_dataset(root, world=TINY_WORLD, counts=(8, 2, 2), seed=7, anchors_per_event=3) -> DatasetBundle:
    store = EventStore(root / "events")
    generate_events(store, world, sum(counts), seed)
    catalog = TaskCatalog()
    registry = ModalityRegistry()
    manifests = split_manifest(store, catalog, registry, world, counts, seed, anchors_per_event)
    save_manifests(root / "manifest.json", manifests)
    catalog.save(root / "catalog.json")
    return DatasetBundle(
        root=root,
        world=world,
        store=store,
        catalog=catalog,
        registry=registry,
        manifests={m.split: m for m in manifests},
    )


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory) -> DatasetBundle:
    root = tmp_path_factory.mktemp("tiny_dataset")
    return build_dataset(root)
