import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sstlab.strategies import (
    MissingLabel,
    StrategyConfig,
    StrategyKind,
    TemporalState,
    advance_temporal,
    delta_vector,
    desired_output,
)


def closed_form_accumulator(outputs):
    """Independent expansion: weight 2^-(t-k) on output k for k >= 2
    and 2^-(t-2) on output 1, at t = len(outputs) + 1."""
    t = len(outputs) + 1
    f = (2.0 ** -(t - 2)) * np.asarray(outputs[0], dtype=float)
    for k in range(2, t):
        f = f + (2.0 ** -(t - k)) * np.asarray(outputs[k - 1], dtype=float)
    return f


def run_flow(outputs):
    state = TemporalState()
    for out in outputs:
        state = advance_temporal(state, out)
    return state


def test_delta_vector_examples():
    assert delta_vector(2, 5).tolist() == [0, 0, 1, 0, 0]
    assert delta_vector(0, 1).tolist() == [1]
    with pytest.raises(IndexError):
        delta_vector(5, 5)


def test_accumulator_base_case():
    state = advance_temporal(TemporalState(), np.array([0.7, 0.3]))
    assert state.t == 2
    assert np.allclose(state.f, [0.7, 0.3])


def test_accumulator_pairwise_average():
    state = run_flow([np.array([0.7, 0.3]), np.array([0.1, 0.9])])
    assert state.t == 3
    assert np.allclose(state.f, [0.4, 0.6])


@given(st.lists(st.lists(st.floats(0, 1), min_size=3, max_size=3),
                min_size=1, max_size=19))
@settings(max_examples=60, deadline=None)
def test_accumulator_matches_closed_form(outputs):
    outputs = [np.array(o) for o in outputs]
    state = run_flow(outputs)
    assert np.allclose(state.f, closed_form_accumulator(outputs), atol=1e-12)


@given(st.lists(st.lists(st.floats(0.0, 1.0), min_size=4, max_size=4),
                min_size=2, max_size=20))
@settings(max_examples=50, deadline=None)
def test_accumulator_stays_probability_vector(raw):
    # convexity: probability-vector inputs keep f a probability vector
    outputs = []
    for v in raw:
        arr = np.array(v) + 1e-9
        outputs.append(arr / arr.sum())
    state = run_flow(outputs)
    assert np.all(state.f >= 0) and np.all(state.f <= 1)
    assert np.isclose(state.f.sum(), 1.0)


def _cfg(n_w=3, sc=0.65, lam=2 / 3):
    return StrategyConfig(lam=lam, sc=sc, n_w=n_w)


def test_supt_always_delta():
    d = desired_output(StrategyKind.SUPT, _cfg(), TemporalState(),
                       np.array([0.2, 0.3, 0.5]), label=1)
    assert d.tolist() == [0, 1, 0]


def test_supervised_kinds_require_label():
    with pytest.raises(MissingLabel):
        desired_output(StrategyKind.SUPT, _cfg(), TemporalState(),
                       np.zeros(3))
    with pytest.raises(MissingLabel):
        desired_output(StrategyKind.SUPTR, _cfg(), TemporalState(),
                       np.zeros(3))


def test_suptr_blends_with_previous_output():
    state = advance_temporal(TemporalState(), np.array([0.3, 0.6, 0.1]))
    d = desired_output(StrategyKind.SUPTR, _cfg(), state,
                       np.zeros(3), label=1)
    assert np.allclose(d, [0.1, 0.8667, 0.0333], atol=1e-4)


def test_suptr_falls_back_to_delta_at_flow_start():
    d = desired_output(StrategyKind.SUPTR, _cfg(), TemporalState(),
                       np.zeros(3), label=2)
    assert d.tolist() == [0, 0, 1]


@given(st.lists(st.floats(0, 1), min_size=3, max_size=3))
def test_suptr_lambda_one_equals_supt(prev):
    state = advance_temporal(TemporalState(), np.array(prev))
    a = desired_output(StrategyKind.SUPTR, _cfg(lam=1.0), state,
                       np.zeros(3), label=1)
    b = desired_output(StrategyKind.SUPT, _cfg(), state,
                       np.zeros(3), label=1)
    assert np.array_equal(a, b)


def test_sst_b_returns_stored_previous_output():
    prev = np.array([0.25, 0.5, 0.25])
    state = advance_temporal(TemporalState(), prev)
    d = desired_output(StrategyKind.SST_B, _cfg(), state, np.zeros(3))
    assert np.array_equal(d, prev)
    # stored value, not a reference that later mutation can corrupt
    state.prev_output[0] = 99.0
    assert d[0] == 0.25


def test_sst_b_skips_at_flow_start():
    assert desired_output(StrategyKind.SST_B, _cfg(), TemporalState(),
                          np.zeros(3)) is None


def test_sst_a_threshold_behaviour():
    confident = advance_temporal(TemporalState(), np.array([0.7, 0.2, 0.1]))
    d = desired_output(StrategyKind.SST_A, _cfg(), confident, np.zeros(3))
    assert np.allclose(d, [0.7, 0.2, 0.1])
    unsure = advance_temporal(TemporalState(), np.array([0.5, 0.3, 0.2]))
    assert desired_output(StrategyKind.SST_A, _cfg(), unsure,
                          np.zeros(3)) is None
    assert desired_output(StrategyKind.SST_A, _cfg(), TemporalState(),
                          np.zeros(3)) is None


def test_sst_a_delta_emits_one_hot_at_argmax():
    state = advance_temporal(TemporalState(), np.array([0.7, 0.2, 0.1]))
    d = desired_output(StrategyKind.SST_A_DELTA, _cfg(), state, np.zeros(3))
    assert d.tolist() == [1, 0, 0]


def test_sst_a_delta_notc_uses_current_output():
    d = desired_output(StrategyKind.SST_A_DELTA_NOTC, _cfg(),
                       TemporalState(), np.array([0.2, 0.7, 0.1]))
    assert d.tolist() == [0, 1, 0]
    assert desired_output(StrategyKind.SST_A_DELTA_NOTC, _cfg(),
                          TemporalState(), np.array([0.2, 0.5, 0.3])) is None


@given(st.lists(st.floats(0.01, 1.0), min_size=4, max_size=4),
       st.floats(1.01, 5.0))
def test_sst_a_delta_argmax_invariant_under_scaling(vec, scale):
    cfg = _cfg(n_w=4, sc=0.0)
    base = advance_temporal(TemporalState(), np.array(vec))
    scaled = advance_temporal(TemporalState(), np.array(vec) * scale)
    a = desired_output(StrategyKind.SST_A_DELTA, cfg, base, np.zeros(4))
    b = desired_output(StrategyKind.SST_A_DELTA, cfg, scaled, np.zeros(4))
    assert np.array_equal(a, b)


@pytest.mark.parametrize("kind", [StrategyKind.SST_A,
                                  StrategyKind.SST_A_DELTA,
                                  StrategyKind.SST_A_DELTA_NOTC])
def test_unreachable_threshold_always_skips(kind):
    cfg = _cfg(sc=1.01)
    state = TemporalState()
    for out in (np.array([0.9, 0.05, 0.05]), np.array([1.0, 0.0, 0.0])):
        assert desired_output(kind, cfg, state, out) is None
        state = advance_temporal(state, out)
    assert desired_output(kind, cfg, state, np.array([1.0, 0, 0])) is None
