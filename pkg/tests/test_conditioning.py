import math

import numpy as np
import pytest

from twinbeam import conditioning as C
from twinbeam.conditioning import ConditioningSpec
from twinbeam.errors import EmptySelectionError, ParameterError
from twinbeam.model import Dataset, DetectorParams, Kind, SourceParams, simulate_run

DETS = (DetectorParams(1.0), DetectorParams(1.0))


def _ds(s1, s2, kind=Kind.TWIN_BEAM):
    return Dataset(kind, DETS, 0, np.asarray(s1, float), np.asarray(s2, float))


@pytest.mark.parametrize("kwargs, field", [
    (dict(q=0), "q"), (dict(q=-2.0), "q"), (dict(q=math.inf), "q"),
    (dict(q=2.0, center="median"), "center"),
])
def test_spec_validation(kwargs, field):
    with pytest.raises(ParameterError) as exc:
        ConditioningSpec(**kwargs)
    assert exc.value.field == field


def test_window_boundaries_are_inclusive():
    ds = _ds([10, 20, 30, 40, 50], [1.0, 2.0, 3.0, 4.0, 5.0])
    sel = C.apply_window(ds, (2.0, 4.0))
    assert sel.subset.s1.tolist() == [20, 30, 40]
    assert sel.mask.tolist() == [False, True, True, True, False]


def test_window_width_is_two_sd_over_q():
    rng = np.random.default_rng(0)
    s2 = rng.normal(100.0, 10.0, 50_000)
    ds = _ds(s2, s2)
    lo, hi = C.select(ds, ConditioningSpec(4)).window
    sd = np.std(s2, ddof=1)
    assert hi - lo == pytest.approx(2 * sd / 4)
    assert (lo + hi) / 2 == pytest.approx(s2.mean())
    lo, hi = C.select(ds, ConditioningSpec.offset(4, 0.5)).window
    assert (lo + hi) / 2 == pytest.approx(s2.mean() + 0.5 * sd)
    lo, hi = C.select(ds, ConditioningSpec.absolute(4, 95.0)).window
    assert (lo + hi) / 2 == pytest.approx(95.0)


def test_empty_selection_is_an_error():
    ds = _ds(np.arange(1000.0), np.arange(1000.0))
    with pytest.raises(EmptySelectionError):
        C.select(ds, ConditioningSpec.absolute(1000, 5000.0))
    with pytest.raises(EmptySelectionError):
        C.select(_ds([1.0, 2.0], [3.0, 3.0]), ConditioningSpec(2))


def test_too_few_selected_is_an_error():
    ds = _ds(np.arange(1000.0), np.arange(1000.0))
    with pytest.raises(EmptySelectionError, match="at least 100"):
        C.conditional_fano(ds, ConditioningSpec(20), B=100)


def test_uncorrelated_channels_give_unconditional_fano():
    rng = np.random.default_rng(5)
    s1 = rng.geometric(1 / 5.0, 200_000) - 1.0
    s2 = rng.poisson(100.0, 200_000).astype(float)
    ds = _ds(s1, s2)
    r = C.conditional_fano(ds, ConditioningSpec(4), B=100)
    assert r.fano_target.value == pytest.approx(5.0, abs=4 * r.fano_target.std_error)


def test_perfect_correlation_removes_noise():
    rng = np.random.default_rng(6)
    s = rng.poisson(1000.0, 200_000).astype(float)
    r = C.conditional_fano(_ds(s, s), ConditioningSpec(50), B=100)
    assert r.fano_target.value < 0.05


def test_success_rate_for_gaussian_control():
    rng = np.random.default_rng(7)
    s2 = rng.normal(0, 1, 200_000) + 1e4
    s1 = rng.poisson(100, 200_000).astype(float)
    r = C.conditional_fano(_ds(s1, s2), ConditioningSpec(2), B=100)
    # P(|z| <= 1/2) for a standard normal
    assert r.success_rate == pytest.approx(0.3829, abs=0.005)
    assert r.n_selected == round(r.success_rate * 200_000)


def test_control_channel_choice():
    rng = np.random.default_rng(8)
    a = rng.poisson(100, 50_000).astype(float)
    b = rng.poisson(300, 50_000).astype(float)
    r = C.conditional_fano(_ds(a, b), ConditioningSpec(2), control=1, B=100)
    assert r.mean_target.value == pytest.approx(300, rel=0.01)
    with pytest.raises(ParameterError):
        C.conditional_fano(_ds(a, b), ConditioningSpec(2), control=0, B=100)


def test_theory_formula():
    assert C.theoretical_conditional_fano(4.53, 4.33, 0.314) == pytest.approx(0.6174, abs=1e-4)
    # uncorrelated Poissonian channels: heralding changes nothing
    assert C.theoretical_conditional_fano(1.0, 1.0, 1.0) == pytest.approx(1.0)
    # perfectly correlated: NRF = 0, equal Fano factors -> noise fully removed
    assert C.theoretical_conditional_fano(3.0, 3.0, 0.0) == pytest.approx(0.0)
    with pytest.raises(ParameterError):
        C.theoretical_conditional_fano(1.0, 0.0, 0.5)


@pytest.fixture(scope="module")
def twin():
    src = SourceParams(1.0, 20_000, 1_000, 1_000, 0.01)
    return simulate_run(Kind.TWIN_BEAM, (DetectorParams(0.9), DetectorParams(0.9)), 60_000, 3,
                        source=src)


def test_sweep_q_flags_bad_points(twin):
    pts = C.sweep_q(twin, [2, 8, 1e6], B=100)
    assert [p.ok for p in pts] == [True, True, False]
    assert "pulses" in pts[2].error or "window" in pts[2].error
    assert pts[0].result.fano_target.value > pts[1].result.fano_target.value
    with pytest.raises(ParameterError):
        C.sweep_q(twin, [], B=100)


def test_sweep_center_zero_offset_matches_plain_conditioning(twin):
    pts = C.sweep_center(twin, [-0.5, 0.0, 0.5], 8, B=100, seed=3)
    plain = C.conditional_fano(twin, ConditioningSpec(8), B=100, seed=3)
    assert pts[1].result == plain
    means = [p.result.mean_target.value for p in pts]
    assert means[0] < means[1] < means[2]


def test_sweep_workers_do_not_change_results(twin):
    a = C.sweep_q(twin, [2, 4, 8], B=100, seed=1)
    b = C.sweep_q(twin, [2, 4, 8], B=100, seed=1, workers=3)
    assert a == b


def test_result_serialises(twin):
    r = C.conditional_fano(twin, ConditioningSpec(4), B=100)
    d = r.to_dict()
    assert set(d) == {"fano_target", "mean_target", "success_rate", "n_selected", "window"}
    assert d["fano_target"]["n_samples"] == r.n_selected
