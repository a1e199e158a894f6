import numpy as np
import pytest

from wxprompt.catalog import (
    CORE_TASK_IDS,
    DISAMBIGUATION_TASK_IDS,
    OOD_TASK_IDS,
    ModalityRegistry,
    TaskCatalog,
    TaskSpec,
    default_modalities,
)
from wxprompt.errors import ConfigError, DataError, RegistryError


def test_registry_lookup_and_unknown():
    registry = ModalityRegistry()
    assert registry.get("synthetic-a").modality_id == "synthetic-a"
    with pytest.raises(RegistryError):
        registry.get("radar-x")


def test_stats_validation():
    registry = ModalityRegistry()
    registry.set_stats("synthetic-a", 100.0, 55.0)
    assert registry.stats("synthetic-a") == (100.0, 55.0)
    with pytest.raises(DataError):
        registry.set_stats("synthetic-a", 1.0, 0.0)  # constant training field
    with pytest.raises(RegistryError):
        registry.stats("synthetic-b")  # declared but no stats yet


def test_observation_maps_cover_expected_ranges():
    registry = ModalityRegistry()
    latent = np.linspace(0.0, 2.5, 64).reshape(8, 8)
    a = registry.observe("synthetic-a", latent)
    assert a.min() >= 0 and a.max() > 219  # radar thresholds reachable
    c = registry.observe("synthetic-c", latent)
    assert c.max() <= 2000 and c.min() < -6800  # cold IR extremes reachable
    d = registry.observe("synthetic-d", latent)
    assert d.min() >= 0 and d.max() <= 6800


def test_declared_inverses_round_trip():
    registry = ModalityRegistry()
    latent = np.random.default_rng(0).uniform(0.05, 2.0, (8, 8))
    for mid in ("synthetic-a", "synthetic-b", "synthetic-c"):
        modality = registry.get(mid)
        assert modality.invertible
        raw = modality.observe(latent)
        np.testing.assert_allclose(modality.inverse(raw), latent, rtol=1e-9, atol=1e-12)
    assert not registry.get("synthetic-d").invertible


def test_real_sensor_modalities_present_without_maps():
    registry = ModalityRegistry()
    for mid in ("vil", "ir069", "ir107", "vis"):
        assert registry.has(mid)
        with pytest.raises(RegistryError):
            registry.observe(mid, np.zeros((2, 2)))


def test_taskspec_validation():
    with pytest.raises(ConfigError):
        TaskSpec("bad", "mystery-modal", ("synthetic-a",), ("synthetic-a",))
    with pytest.raises(ConfigError):
        TaskSpec(
            "bad",
            "single-modal",
            ("synthetic-a", "synthetic-a"),
            ("synthetic-a",),
            input_offsets_minutes=(0,),  # wrong arity
        )


def test_taskspec_defaults():
    spec = TaskSpec("demo", "single-modal", ("synthetic-a",), ("synthetic-b",))
    assert spec.threshold_set_id == "synthetic-b"
    assert spec.embed_group == "demo"
    assert spec.frames_per_canvas == 4


def test_default_catalog_contents():
    catalog = TaskCatalog()
    for task_id in CORE_TASK_IDS + OOD_TASK_IDS + DISAMBIGUATION_TASK_IDS:
        assert catalog.has(task_id), task_id
    assert len(CORE_TASK_IDS) == 10


def test_catalog_expected_canvas_sizes():
    catalog = TaskCatalog()
    expected = {
        "spatial-sr-a4": 4,
        "temporal-sr-a30": 6,
        "translate-bc2a": 6,
        "extrap-a": 12,
        "identity-a": 4,
    }
    for task_id, frames in expected.items():
        assert catalog.get(task_id).frames_per_canvas == frames


def test_disambiguation_families_share_embed_group():
    catalog = TaskCatalog()
    groups = {catalog.get(t).embed_group for t in DISAMBIGUATION_TASK_IDS}
    assert groups == {"shared-a"}
    # and they share the same query-input modality
    inputs = {catalog.get(t).input_modalities[0] for t in DISAMBIGUATION_TASK_IDS}
    assert inputs == {"synthetic-a"}


def test_catalog_save_load_round_trip(tmp_path):
    catalog = TaskCatalog()
    path = tmp_path / "catalog.json"
    catalog.save(path)
    loaded = TaskCatalog.load(path)
    assert sorted(loaded.ids()) == sorted(catalog.ids())
    for task_id in catalog.ids():
        assert loaded.get(task_id) == catalog.get(task_id)


def test_catalog_load_errors(tmp_path):
    with pytest.raises(DataError):
        TaskCatalog.load(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(DataError):
        TaskCatalog.load(bad)
    wrong_version = tmp_path / "v9.json"
    wrong_version.write_text('{"version": 9, "tasks": []}')
    with pytest.raises(DataError):
        TaskCatalog.load(wrong_version)


def test_duplicate_task_ids_rejected():
    spec = TaskSpec("dup", "single-modal", ("synthetic-a",), ("synthetic-a",))
    with pytest.raises(ConfigError):
        TaskCatalog([spec, spec])


def test_event_comparison_directions():
    # Cold-top IR analogue flags low values as events; radar flags high.
    mods = {m.modality_id: m for m in default_modalities()}
    assert mods["synthetic-a"].event_comparison == "ge"
    assert mods["synthetic-c"].event_comparison == "le"
    assert mods["ir069"].event_comparison == "le"
