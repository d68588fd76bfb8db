import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from loopqm import analysis, oracle, polcore
from loopqm.analysis import BellResult, DegenerateFitError, VisibilityResult
from loopqm.components import SourceParams
from loopqm.engine import CoincidenceCurve, CurvePoint, RunConfig

GRID = np.arange(0, 180, 10.0)


def fringe(theta, A, B, t0):
    return A + B * np.sin(np.deg2rad(theta - t0)) ** 2


def V(v, s=0.0):
    return VisibilityResult(v, s)


# -- fringe fit --------------------------------------------------------------

def test_fit_recovers_exact_fringe():
    fit = analysis.fit_fringe(GRID, fringe(GRID, 20.0, 900.0, 37.0))
    assert fit.offset == pytest.approx(20.0)
    assert fit.amplitude == pytest.approx(900.0)
    assert fit.phase == pytest.approx(37.0)
    assert fit.rss == pytest.approx(0.0, abs=1e-12)
    assert fit.dof == len(GRID) - 3


@settings(max_examples=100)
@given(st.floats(0, 1e4), st.floats(1, 1e5), st.floats(0, 179.9))
def test_fit_exact_recovery_property(A, B, t0):
    fit = analysis.fit_fringe(GRID, fringe(GRID, A, B, t0))
    assert fit.offset == pytest.approx(A, abs=1e-6 * (A + B))
    assert fit.amplitude == pytest.approx(B, rel=1e-8)
    d = (fit.phase - t0 + 90) % 180 - 90
    assert abs(d) < 1e-6


def test_fit_accepts_curve():
    pts = tuple(CurvePoint(t, int(c), 1000) for t, c in zip(GRID, fringe(GRID, 5, 100, 0)))
    fit = analysis.fit_fringe(CoincidenceCurve(0.0, pts, "after_storage"))
    assert fit.amplitude == pytest.approx(100, rel=0.05)


def test_fit_input_errors():
    with pytest.raises(ValueError):
        analysis.fit_fringe([0, 45, 90], [1, 2, 3])
    with pytest.raises(ValueError):
        analysis.fit_fringe([0, 180, 360, 90], [1, 2, 3, 4])   # only 2 distinct
    with pytest.raises(ValueError):
        analysis.fit_fringe(GRID, np.zeros_like(GRID))
    with pytest.raises(ValueError):
        analysis.fit_fringe(GRID, [1, 2])


def test_constant_counts_are_degenerate():
    fit = analysis.fit_fringe(GRID, np.full(GRID.shape, 50.0))
    assert fit.degenerate
    with pytest.raises(DegenerateFitError):
        analysis.visibility(fit)
    with pytest.raises(DegenerateFitError):
        analysis.fringe_shift(fit, fit)


def test_poisson_round_trip_visibility():
    # V = 0.92 fringe, ~2000 counts at the maximum
    rng = np.random.default_rng(10)
    B = 2000 * 0.92
    A = (B / 0.92 - B) / 2
    vs = []
    for _ in range(50):
        fit = analysis.fit_fringe(GRID, rng.poisson(fringe(GRID, A, B, 30.0)))
        vs.append(analysis.visibility(fit))
    mean = np.mean([v.V for v in vs])
    assert mean == pytest.approx(0.92, abs=0.01)
    # reported errors describe the actual scatter
    assert np.std([v.V for v in vs]) == pytest.approx(np.mean([v.sigma_V for v in vs]), rel=0.35)


@pytest.mark.parametrize("A, B, expected", [(0.0, 100.0, 1.0), (50.0, 100.0, 0.5),
                                            (4.0, 92.0, 0.92)])
def test_visibility_examples(A, B, expected):
    fit = analysis.fit_fringe(GRID, fringe(GRID, A, B, 0.0))
    assert analysis.visibility(fit).V == pytest.approx(expected, abs=1e-9)


@given(st.floats(0.1, 1e3), st.floats(0, 50), st.floats(1, 100))
def test_visibility_scale_invariant(scale, A, B):
    v1 = analysis.visibility(analysis.fit_fringe(GRID, fringe(GRID, A, B, 10.0))).V
    v2 = analysis.visibility(analysis.fit_fringe(GRID, scale * fringe(GRID, A, B, 10.0))).V
    assert v2 == pytest.approx(v1, rel=1e-7, abs=1e-9)


@pytest.mark.slow
def test_fringe_error_coverage():
    # fraction of repetitions where |V - V_true| <= sigma_V should be ~68%
    rng = np.random.default_rng(11)
    A, B = 40.0, 920.0
    v_true = B / (B + 2 * A)
    hits = 0
    for _ in range(200):
        v = analysis.visibility(analysis.fit_fringe(GRID, rng.poisson(fringe(GRID, A, B, 75.0))))
        hits += abs(v.V - v_true) <= v.sigma_V
    assert 0.60 <= hits / 200 <= 0.76


def test_fringe_shift():
    b = analysis.fit_fringe(GRID, fringe(GRID, 1, 100, 0.0))
    a = analysis.fit_fringe(GRID, fringe(GRID, 1, 100, 90.0))
    shift, err = analysis.fringe_shift(b, a)
    assert shift == pytest.approx(90.0)
    assert err >= 0
    b = analysis.fit_fringe(GRID, fringe(GRID, 1, 100, 170.0))
    a = analysis.fit_fringe(GRID, fringe(GRID, 1, 100, 80.0))
    assert analysis.fringe_shift(b, a)[0] == pytest.approx(90.0)


# -- loss fit ----------------------------------------------------------------

NS = np.array([2, 4, 6, 8, 10])


def test_fit_loss_exact():
    res = analysis.fit_loss(np.column_stack([NS, 3.0 * 0.78 ** NS]))
    assert res.loss == pytest.approx(0.22, abs=1e-12)
    assert res.sigma_loss == pytest.approx(0.0, abs=1e-12)
    assert res.slope == pytest.approx(math.log(0.78))


def test_fit_loss_constant_rates():
    assert analysis.fit_loss([[n, 5.0] for n in NS]).loss == pytest.approx(0.0, abs=1e-12)


def test_fit_loss_poisson_within_3_sigma():
    rng = np.random.default_rng(12)
    mu = 1e5 * 0.78 ** NS
    k = rng.poisson(mu)
    res = analysis.fit_loss(np.column_stack([NS, k, np.sqrt(k)]))
    assert abs(res.loss - 0.22) <= 3 * res.sigma_loss
    assert res.sigma_loss < 0.01


@given(st.floats(0.01, 100))
def test_fit_loss_overall_scale_invariant(scale):
    rates = np.column_stack([NS, 0.78 ** NS * (1 + 0.01 * np.sin(NS))])
    a = analysis.fit_loss(rates)
    rates[:, 1] *= scale
    assert analysis.fit_loss(rates).loss == pytest.approx(a.loss, abs=1e-12)


def test_fit_loss_errors():
    with pytest.raises(ValueError):
        analysis.fit_loss([[1, 1.0], [2, 0.5]])
    with pytest.raises(ValueError):
        analysis.fit_loss([[1, 1.0], [2, 0.0], [3, 0.1]])
    with pytest.raises(ValueError):
        analysis.fit_loss([1.0, 2.0, 3.0])


# -- CHSH --------------------------------------------------------------------

@pytest.mark.parametrize("v_hv, v_diag, S, tol", [
    (0.95, 0.92, 2.64, 0.005), (0.97, 0.91, 2.66, 0.005), (0.98, 0.93, 2.69, 0.015),
    (0.93, 0.85, 2.52, 0.005), (1.0, 1.0, 2 * math.sqrt(2), 1e-12),
])
def test_chsh_from_visibilities(v_hv, v_diag, S, tol):
    assert analysis.chsh_from_visibilities(V(v_hv), V(v_diag)).S == pytest.approx(S, abs=tol)


def test_chsh_threshold_and_errors():
    r = math.sqrt(0.5)
    assert analysis.chsh_from_visibilities(V(r), V(r)).S == pytest.approx(2.0)
    res = analysis.chsh_from_visibilities(V(0.95, 0.03), V(0.92, 0.04))
    assert res.sigma_S == pytest.approx(math.sqrt(2) * 0.05)
    assert res.violated and res.significance == pytest.approx((res.S - 2) / res.sigma_S)
    assert not BellResult(1.9, 0.1).violated


@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 0.1))
def test_chsh_monotone(v1, v2, dv):
    lo = analysis.chsh_from_visibilities(V(v1), V(v2)).S
    hi = analysis.chsh_from_visibilities(V(min(v1 + dv, 1)), V(v2)).S
    assert hi >= lo


def test_chsh_from_counts_ideal_singlet():
    s = polcore.psi_minus(0)
    counts = {k: 1e6 * polcore.coincidence_probability(s, *k) for k in analysis.chsh_settings()}
    assert len(counts) == 16
    assert analysis.chsh_from_counts(counts).S == pytest.approx(2 * math.sqrt(2), abs=1e-9)


def test_chsh_from_counts_agrees_with_visibility_form():
    cfg = RunConfig(n_cycles=4, source=SourceParams(white_noise=0.1))
    counts = {k: oracle.expected_coincidence(cfg, *k) for k in analysis.chsh_settings()}
    direct = analysis.chsh_from_counts(counts).S
    v_hv, v_diag = oracle.expected_visibility(cfg)
    assert direct == pytest.approx(
        analysis.chsh_from_visibilities(V(v_hv), V(v_diag)).S, abs=1e-9)


def test_mean_rate():
    pts = (CurvePoint(0.0, 10, 100), CurvePoint(90.0, 30, 100))
    rate, err = analysis.mean_rate(CoincidenceCurve(0.0, pts, "after_storage"))
    assert rate == pytest.approx(0.2)
    assert err == pytest.approx(math.sqrt(40) / 200)
