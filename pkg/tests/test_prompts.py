import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wxprompt.catalog import ModalityRegistry, TaskSpec
from wxprompt.errors import RegistryError, SamplingError, ValidationError
from wxprompt.prompts import (
    ROLE_PROMPT_INPUT,
    ROLE_QUERY_TARGET,
    Frame,
    PromptPolicy,
    PromptQuadruple,
    SampleRef,
    build_canvas,
    sample_prompt_pair,
    validate_quadruple,
)


@pytest.fixture()
def registry():
    reg = ModalityRegistry()
    for mid in ("synthetic-a", "synthetic-b", "synthetic-c", "synthetic-d"):
        reg.set_stats(mid, 100.0, 55.0)
    return reg


def frame(mid="synthetic-a", value=120.0, size=32, t=None):
    rng = np.random.default_rng(0)
    return Frame(rng.uniform(0, value, (size, size)), mid, t)


def sr_spec():
    return TaskSpec("sr", "single-modal", ("synthetic-a",), ("synthetic-a",), derivation="spatial-sr")


def extrap_spec():
    return TaskSpec(
        "extrap",
        "time-series",
        ("synthetic-a",) * 4,
        ("synthetic-a",) * 2,
        input_offsets_minutes=(0, 30, 60, 90),
        target_offsets_minutes=(120, 180),
        derivation="extrapolation",
    )


def quad_for(spec, t0=0, with_target=True):
    def frames_for(modalities, offsets, base):
        if offsets is None:
            return [frame(m, t=base) for m in modalities]
        return [frame(m, t=base + off) for m, off in zip(modalities, offsets)]

    return PromptQuadruple(
        task_id=spec.task_id,
        prompt_input=frames_for(spec.input_modalities, spec.input_offsets_minutes, t0),
        prompt_target=frames_for(spec.target_modalities, spec.target_offsets_minutes, t0),
        query_input=frames_for(spec.input_modalities, spec.input_offsets_minutes, t0 + 300),
        query_target=frames_for(spec.target_modalities, spec.target_offsets_minutes, t0 + 300)
        if with_target
        else None,
    )


# ---------------------------------------------------------------------------
# build_canvas


def test_sr_quad_builds_n4_canvas(registry):
    canvas = build_canvas(sr_spec(), quad_for(sr_spec()), 32, registry)
    assert canvas.frame_count == 4
    assert list(canvas.roles) == [0, 1, 2, 3]
    assert not canvas.placeholder.any()


def test_extrapolation_quad_builds_n12_canvas(registry):
    canvas = build_canvas(extrap_spec(), quad_for(extrap_spec()), 32, registry)
    assert canvas.frame_count == 12
    assert (canvas.roles == ROLE_PROMPT_INPUT).sum() == 4
    assert (canvas.roles == ROLE_QUERY_TARGET).sum() == 2


def test_inference_quad_gets_placeholders(registry):
    spec = extrap_spec()
    canvas = build_canvas(spec, quad_for(spec, with_target=False), 32, registry)
    assert canvas.frame_count == 12  # N unchanged
    placeholders = canvas.placeholder.nonzero()[0]
    assert list(canvas.roles[placeholders]) == [ROLE_QUERY_TARGET] * 2
    np.testing.assert_array_equal(canvas.frames[placeholders], 0.0)


def test_canvas_denormalization_recovers_resized_frames(registry):
    spec = sr_spec()
    quad = quad_for(spec)
    canvas = build_canvas(spec, quad, 32, registry)
    for idx, original in enumerate(
        quad.prompt_input + quad.prompt_target + quad.query_input + quad.query_target
    ):
        recovered = canvas.denormalized_frame(idx)
        np.testing.assert_allclose(recovered, original.values, atol=1e-9)


def test_canvas_resizes_to_model_frame_size(registry):
    spec = sr_spec()
    quad = PromptQuadruple(
        task_id="sr",
        prompt_input=[frame(size=64)],
        prompt_target=[frame(size=64)],
        query_input=[frame(size=64)],
        query_target=[frame(size=64)],
    )
    canvas = build_canvas(spec, quad, 32, registry)
    assert canvas.frames.shape == (4, 32, 32)


def test_role_mismatch_names_offending_role(registry):
    spec = sr_spec()
    quad = quad_for(spec)
    quad.prompt_target = []
    with pytest.raises(ValidationError, match="prompt_target"):
        build_canvas(spec, quad, 32, registry)


def test_unknown_modality_is_registry_error():
    spec = TaskSpec("odd", "single-modal", ("mystery",), ("mystery",))
    quad = PromptQuadruple(
        task_id="odd",
        prompt_input=[frame("mystery")],
        prompt_target=[frame("mystery")],
        query_input=[frame("mystery")],
        query_target=[frame("mystery")],
    )
    with pytest.raises(RegistryError):
        build_canvas(spec, quad, 32, ModalityRegistry())


# ---------------------------------------------------------------------------
# validate_quadruple


def test_validate_accepts_well_formed_cross_modal():
    spec = TaskSpec("xmodal", "cross-modal", ("synthetic-b", "synthetic-c"), ("synthetic-a",))
    quad = PromptQuadruple(
        task_id="xmodal",
        prompt_input=[frame("synthetic-b"), frame("synthetic-c")],
        prompt_target=[frame("synthetic-a")],
        query_input=[frame("synthetic-b"), frame("synthetic-c")],
        query_target=[frame("synthetic-a")],
    )
    assert validate_quadruple(spec, quad) == []


def test_validate_flags_modality_mismatch():
    spec = sr_spec()
    quad = quad_for(spec)
    quad.query_input = [frame("synthetic-b")]
    violations = validate_quadruple(spec, quad)
    assert any(v.code == "modality" and v.role == "query_input" for v in violations)


def test_validate_flags_nan_with_role_name():
    spec = sr_spec()
    quad = quad_for(spec)
    bad = quad.prompt_target[0].values.copy()
    bad[3, 3] = np.nan
    quad.prompt_target[0] = Frame(bad, "synthetic-a")
    violations = validate_quadruple(spec, quad)
    assert any(v.code == "finite" and v.role == "prompt_target" for v in violations)


def test_validate_flags_timestamp_structure():
    spec = extrap_spec()
    quad = quad_for(spec)
    frames = quad.query_input
    frames[2] = Frame(frames[2].values, frames[2].modality_id, frames[2].timestamp_minutes + 5)
    violations = validate_quadruple(spec, quad)
    assert any(v.code == "timestamps" for v in violations)


@settings(max_examples=50, deadline=None)
@given(
    n_pi=st.integers(0, 3),
    n_pt=st.integers(0, 3),
    n_qi=st.integers(0, 3),
    with_qt=st.booleans(),
    junk=st.sampled_from([None, 3, "x", [1, 2]]),
)
def test_validate_is_total(n_pi, n_pt, n_qi, with_qt, junk):
    spec = sr_spec()
    quad = PromptQuadruple(
        task_id="sr",
        prompt_input=[frame() for _ in range(n_pi)],
        prompt_target=[frame() for _ in range(n_pt)] + ([junk] if junk is not None else []),
        query_input=[frame() for _ in range(n_qi)],
        query_target=[frame()] if with_qt else None,
    )
    violations = validate_quadruple(spec, quad)  # must never raise
    assert isinstance(violations, list)


# ---------------------------------------------------------------------------
# sample_prompt_pair


class StubDataset:
    """Ten samples; targets peak at 10*i; inputs are constant fields i."""

    def __init__(self):
        self.refs = [SampleRef(f"ev{i}", 0, float(10 * i)) for i in range(10)]

    def prompt_candidates(self, task_id):
        return self.refs

    def load_pair(self, task_id, ref):
        i = float(ref.target_peak) / 10.0
        inputs = [Frame(np.full((8, 8), i), "synthetic-a", 0)]
        targets = [Frame(np.full((8, 8), ref.target_peak), "synthetic-a", 0)]
        return inputs, targets

    def target_comparison(self, task_id):
        return "ge"

    def target_intensity_threshold(self, task_id):
        return 65.0


def test_random_policy_is_seed_reproducible():
    ds = StubDataset()
    pick1 = sample_prompt_pair(ds, "t", np.random.default_rng(3), PromptPolicy("random"))
    pick2 = sample_prompt_pair(ds, "t", np.random.default_rng(3), PromptPolicy("random"))
    assert pick1[1][0].values[0, 0] == pick2[1][0].values[0, 0]


def test_high_policy_support_is_exactly_the_eligible_set():
    # Oracle: brute-force the eligible set (target peak >= 65 -> ev7, ev8, ev9).
    ds = StubDataset()
    eligible = {r.event_id for r in ds.refs if r.target_peak >= 65.0}
    assert eligible == {"ev7", "ev8", "ev9"}
    seen = set()
    for seed in range(200):
        _, targets = sample_prompt_pair(ds, "t", np.random.default_rng(seed), PromptPolicy("high"))
        seen.add(f"ev{int(targets[0].values[0, 0] // 10)}")
    assert seen == eligible


def test_high_policy_empty_pool_errors():
    ds = StubDataset()
    policy = PromptPolicy("high", intensity_threshold=1e9)
    with pytest.raises(SamplingError):
        sample_prompt_pair(ds, "t", np.random.default_rng(0), policy)


def test_searched_policy_self_match():
    ds = StubDataset()
    query_input = [Frame(np.full((8, 8), 4.0), "synthetic-a", 0)]  # equals ev4's input
    policy = PromptPolicy("searched", exclude_event=None, allow_self=True, query_input=query_input)
    inputs, _ = sample_prompt_pair(ds, "t", np.random.default_rng(0), policy)
    np.testing.assert_array_equal(inputs[0].values, query_input[0].values)  # RMSE 0 match


def test_leakage_guard_excludes_query_event():
    ds = StubDataset()
    ds.refs = ds.refs[:2]
    policy = PromptPolicy("random", exclude_event="ev0")
    for seed in range(20):
        _, targets = sample_prompt_pair(ds, "t", np.random.default_rng(seed), policy)
        assert targets[0].values[0, 0] == 10.0  # only ev1 remains
    with pytest.raises(SamplingError):
        ds.refs = ds.refs[:1]
        sample_prompt_pair(ds, "t", np.random.default_rng(0), policy)
