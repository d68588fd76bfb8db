import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from loopqm import components as comp
from loopqm import engine, oracle
from loopqm.components import CqmParams, DetectorParams, SourceParams
from loopqm.engine import RunConfig

IDEAL = RunConfig(cqm=CqmParams(eta_cycle=1.0))


def brute_after_probability(config, t1, t2):
    """Ket-level computation: compensated singlet, photon 2 through n loop passes."""
    c = config.cqm
    x = np.array([[0, 1], [1, 0]], dtype=complex)
    p = np.diag([np.exp(1j * c.delta_per_cycle), 1])
    j = x.copy()
    for _ in range(config.n_cycles):
        j = x @ p @ j
    comp1 = np.diag([np.exp(1j * config.phase_comp_1), 1])
    ket = (np.kron([1, 0], [0, 1]) - np.kron([0, 1], [1, 0])) / np.sqrt(2)
    ket = np.kron(comp1, j) @ ket
    a = [math.cos(math.radians(t1)), math.sin(math.radians(t1))]
    b = [math.cos(math.radians(t2)), math.sin(math.radians(t2))]
    amp = np.kron(a, b) @ ket
    throughput = (config.source.sa_success_prob * c.tap_transmissivity
                  * c.pass_survival ** config.n_cycles * c.tap_reflectivity)
    return throughput * abs(amp) ** 2


@pytest.mark.parametrize("n", [2, 4, 6])
@pytest.mark.parametrize("t2", [0.0, 45.0, 30.0])
def test_after_storage_even_n_fringe(n, t2):
    cfg = IDEAL.with_(n_cycles=n)
    # zero at theta1 = theta2 + 90, maximum at theta1 = theta2
    assert oracle.expected_coincidence(cfg, t2 + 90, t2) == pytest.approx(0.0, abs=1e-15)
    peak = oracle.expected_coincidence(cfg, t2, t2)
    assert peak == pytest.approx(0.25 * 0.5 * 0.5, abs=1e-14)
    curve = oracle.expected_curve(cfg, t2)
    assert curve.phase == pytest.approx((t2 + 90) % 180, abs=1e-9)


@pytest.mark.parametrize("t1", np.arange(0, 180, 20.0))
def test_before_storage_formula(t1):
    cfg = RunConfig(source=SourceParams(sa_success_prob=0.7), cqm=CqmParams(tap_reflectivity=0.3))
    got = oracle.expected_coincidence(cfg, t1, 0.0, "before_storage")
    assert got == pytest.approx(0.5 * math.sin(math.radians(t1)) ** 2 * 0.7 * 0.3, abs=1e-15)
    assert oracle.expected_curve(cfg, 25.0, "before_storage").phase == pytest.approx(25.0)


@pytest.mark.parametrize("n", [1, 2, 3, 5, 8])
@pytest.mark.parametrize("delta", [0.0, 0.5, 2.0])
def test_matches_ket_level_computation(n, delta):
    cfg = RunConfig(n_cycles=n, cqm=CqmParams(delta_per_cycle=delta, eta_cycle=0.8))
    for t1 in (0, 30, 45, 100):
        for t2 in (0, 45, 60):
            assert oracle.expected_coincidence(cfg, t1, t2) == pytest.approx(
                brute_after_probability(cfg, t1, t2), abs=1e-14)


def test_detector_efficiency_enters_once_per_detector():
    cfg = IDEAL.with_(d1=DetectorParams(0.5), d2=DetectorParams(0.4))
    assert oracle.expected_coincidence(cfg, 0, 0) == pytest.approx(
        0.2 * oracle.expected_coincidence(IDEAL, 0, 0))


@pytest.mark.parametrize("n", [1, 2, 7])
def test_zero_loop_transmission(n):
    cfg = RunConfig(n_cycles=n, cqm=CqmParams(eta_cycle=0.0))
    assert all(oracle.expected_coincidence(cfg, t, 0) == 0.0 for t in range(0, 180, 15))


def test_visibility_examples():
    assert oracle.expected_visibility(IDEAL) == pytest.approx((1.0, 1.0))
    for n in (2, 4, 6):
        cfg = IDEAL.with_(n_cycles=n, cqm=CqmParams(delta_per_cycle=1.234))
        assert oracle.expected_visibility(cfg)[1] == pytest.approx(1.0, abs=1e-12)
    for n in (1, 3, 5):
        cfg = IDEAL.with_(n_cycles=n, cqm=CqmParams(delta_per_cycle=0.5))
        v_hv, v_diag = oracle.expected_visibility(cfg)
        assert v_hv == pytest.approx(1.0)
        assert v_diag == pytest.approx(math.cos(0.5), abs=1e-12)
        quarter = cfg.with_(cqm=CqmParams(delta_per_cycle=math.pi / 2))
        assert oracle.expected_visibility(quarter) == pytest.approx((1.0, 0.0), abs=1e-12)
        # a phase of pi only swaps which diagonal outcome is favoured
        half = cfg.with_(cqm=CqmParams(delta_per_cycle=math.pi))
        assert oracle.expected_visibility(half) == pytest.approx((1.0, 1.0), abs=1e-12)


def test_visibility_with_noise():
    cfg = IDEAL.with_(cqm=CqmParams(depolarization=0.06))
    assert oracle.expected_visibility(cfg) == pytest.approx((0.94, 0.94), abs=1e-12)
    noisy = IDEAL.with_(source=SourceParams(white_noise=0.1, dephasing=0.2))
    v_hv, v_diag = oracle.expected_visibility(noisy, "before_storage")
    assert v_hv == pytest.approx(0.9)
    assert v_diag == pytest.approx(0.9 * 0.8)


def test_rate_ratio_examples():
    p = CqmParams(eta_cycle=0.78)
    assert oracle.expected_rate_ratio(5, 4, p) == pytest.approx(0.78)
    assert oracle.expected_rate_ratio(3, 3, p) == 1.0
    assert oracle.expected_rate_ratio(20, 0, p) == pytest.approx(6.9e-3, rel=0.02)
    assert oracle.expected_rate_ratio(2, 1, CqmParams(eta_cycle=0.8, flip_fidelity=0.5)) == \
        pytest.approx(0.4)
    with pytest.raises(ValueError):
        oracle.expected_rate_ratio(-1, 2, p)


def test_rate_ratio_consistent_with_coincidences():
    a = oracle.expected_coincidence(RunConfig(n_cycles=6), 0, 0)
    b = oracle.expected_coincidence(RunConfig(n_cycles=4), 0, 0)
    assert a / b == pytest.approx(oracle.expected_rate_ratio(6, 4, CqmParams()))


@settings(max_examples=40)
@given(st.integers(1, 12), st.floats(0, 2 * np.pi), st.floats(0, 180), st.floats(0, 0.3),
       st.sampled_from(oracle.CHANNELS))
def test_sweep_mean_is_offset_plus_half_amplitude(n, delta, t2, noise, channel):
    cfg = RunConfig(n_cycles=n, cqm=CqmParams(delta_per_cycle=delta, depolarization=noise))
    curve = oracle.expected_curve(cfg, t2, channel)
    grid = np.arange(0, 180, 1.0)
    values = [oracle.expected_coincidence(cfg, t, t2, channel) for t in grid]
    assert np.mean(values) == pytest.approx(curve.offset + curve.amplitude / 2, abs=1e-10)
    np.testing.assert_allclose(curve(grid), values, atol=1e-12)
    assert curve.amplitude >= 0 and curve.offset >= 0 and curve.amplitude + curve.offset <= 1


@settings(max_examples=60)
@given(st.integers(1, 30), st.floats(-10, 10), st.sampled_from(["injection", "cycle"]))
def test_net_jones_matches_cycle_by_cycle_product(n, delta, parity):
    p = CqmParams(delta_per_cycle=delta, flip_parity=parity)
    net, _ = comp.cqm_net_transform(n, p)
    np.testing.assert_allclose(oracle.net_jones(n, p).m, net.m, atol=1e-10)


def test_expected_curve_points():
    grid = np.arange(0, 180, 10.0)
    curve = oracle.expected_curve(IDEAL, 0.0, theta1_grid=grid)
    assert [t for t, _ in curve.points] == list(grid)
    # after storage at theta2 = 0 goes as cos^2(theta1)
    vals = np.array([v for _, v in curve.points])
    np.testing.assert_allclose(vals, 0.0625 * np.cos(np.deg2rad(grid)) ** 2, atol=1e-15)


def test_rejects_unknown_channel():
    with pytest.raises(ValueError):
        oracle.expected_coincidence(IDEAL, 0, 0, "sideways")


def test_monte_carlo_converges_at_root_n():
    # spread of the relative error over seeds shrinks like 1/sqrt(N)
    base = RunConfig(theta1=20, theta2=0, source=SourceParams(p_pair_per_pulse=0.01),
                     block_pulses=1_000_000)
    rms = []
    for pulses in (10_000, 100_000, 1_000_000):
        rel = []
        for seed in range(16):
            cfg = base.with_(num_pulses=pulses, seed=seed)
            mu = oracle.expected_counts(cfg, 20, 0)
            got = engine.run(cfg).totals.coincidences_12
            assert abs(got - mu) <= 4 * math.sqrt(mu) + 1
            rel.append((got - mu) / mu)
        rms.append(math.sqrt(np.mean(np.square(rel))))
        # matches the Poisson expectation within the scatter of a 16-seed rms
        assert 0.5 < rms[-1] * math.sqrt(mu) < 1.6
    assert rms[0] > rms[1] > rms[2]
