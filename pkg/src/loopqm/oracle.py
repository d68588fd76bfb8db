"""Closed-form expectations for the quantities the engine samples.

Nothing here draws random numbers or calls into the engine; the polarization
transforms are built directly from their closed forms so that agreement with
the Monte Carlo is an independent check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from loopqm import polcore
from loopqm.components import CqmParams
from loopqm.engine import RunConfig
from loopqm.polcore import JonesOp, TwoQubitState

CHANNELS = ("before_storage", "after_storage")


@dataclass(frozen=True)
class ExpectedCurve:
    """Expected coincidence probability A + B sin^2(theta1 - theta0) vs theta1."""

    theta2: float
    amplitude: float
    offset: float
    phase: float                        # deg, zero of the fringe
    points: tuple[tuple[float, float], ...] = ()

    @property
    def visibility(self) -> float:
        denom = self.amplitude + 2 * self.offset
        return self.amplitude / denom if denom > 0 else 0.0

    def __call__(self, theta1) -> np.ndarray:
        t = np.deg2rad(np.asarray(theta1, dtype=float) - self.phase)
        return self.offset + self.amplitude * np.sin(t) ** 2


def net_jones(n: int, cqm: CqmParams) -> JonesOp:
    """Closed form of the stored photon's Jones matrix.

    Two passes give (X P)^2 = e^{i delta} I, so (X P)^n is e^{i m delta} for
    n = 2m and e^{i m delta} X P for n = 2m + 1.
    """
    m, odd = divmod(n, 2)
    p = np.diag([np.exp(1j * cqm.delta_per_cycle), 1.0])
    x = np.array([[0, 1], [1, 0]], dtype=complex)
    core = np.exp(1j * m * cqm.delta_per_cycle) * (x @ p if odd else np.eye(2))
    if cqm.flip_parity == "injection":
        core = x @ core
    return JonesOp(core, "unitary")


def _source(config: RunConfig) -> TwoQubitState:
    s = config.source
    rho = np.array(polcore.psi_minus(s.psi_phase).rho)
    rho[1, 2] *= 1 - s.dephasing
    rho[2, 1] *= 1 - s.dephasing
    rho = (1 - s.white_noise) * rho + s.white_noise * np.eye(4) / 4
    return TwoQubitState(rho)


def channel_state(config: RunConfig, channel: str = "after_storage") -> TwoQubitState:
    """Normalized two-photon polarization state seen by the detector pair."""
    if channel not in CHANNELS:
        raise ValueError(f"channel must be one of {CHANNELS}")
    phi1 = config.phase_comp_1
    phi2 = 0.0
    if config.mode == "periodic":
        phi1 += config.passive_delay.birefringent_phase
    else:
        phi2 += config.herald_delay.birefringent_phase
    op1 = polcore.phase_op(phi1).m
    if channel == "before_storage":
        op2 = polcore.phase_op(phi2 + config.phase_comp_aux).m
    else:
        op2 = net_jones(config.n_cycles, config.cqm).m @ polcore.phase_op(phi2).m
    full = np.kron(op1, op2)
    state = TwoQubitState(full @ _source(config).rho @ full.conj().T)
    if channel == "after_storage":
        state = polcore.depolarize(state, 2, config.cqm.depolarization)
    return state


def channel_throughput(config: RunConfig, channel: str = "after_storage") -> float:
    """Probability, per emitted pair (aligned with a window for after_storage),
    that both photons reach their detectors and register, polarizers aside."""
    s, c = config.source, config.cqm
    t = s.sa_success_prob * config.d1.efficiency
    if config.mode == "periodic":
        t *= config.passive_delay.transmission
    else:
        t *= config.herald_delay.transmission
    if channel == "before_storage":
        return t * c.tap_reflectivity * config.daux.efficiency
    return (t * c.tap_transmissivity * c.pass_survival ** config.n_cycles
            * c.tap_reflectivity * config.d2.efficiency)


def expected_coincidence(config: RunConfig, theta1: float, theta2: float,
                         channel: str = "after_storage") -> float:
    """Coincidence probability per attempted storage (per emitted pair for
    the before-storage channel).  PC dead time in heralded mode is ignored."""
    state = channel_state(config, channel)
    return channel_throughput(config, channel) * polcore.coincidence_probability(state, theta1, theta2)


def opportunities(config: RunConfig, channel: str = "after_storage") -> float:
    """Expected number of emitted pairs eligible for the channel in one run."""
    p = config.source.p_pair_per_pulse
    if channel == "after_storage" and config.mode == "periodic":
        return math.ceil(config.num_pulses / config.divider_k) * p
    return config.num_pulses * p


def expected_counts(config: RunConfig, theta1: float, theta2: float,
                    channel: str = "after_storage") -> float:
    return opportunities(config, channel) * expected_coincidence(config, theta1, theta2, channel)


def expected_curve(config: RunConfig, theta2: float, channel: str = "after_storage",
                   theta1_grid=None) -> ExpectedCurve:
    f = [expected_coincidence(config, t, theta2, channel) for t in (0.0, 45.0, 90.0)]
    a0 = (f[0] + f[2]) / 2
    a1 = (f[0] - f[2]) / 2
    a2 = f[1] - a0
    half_b = math.hypot(a1, a2)
    phase = (math.degrees(math.atan2(-a2, -a1)) / 2) % 180.0 if half_b > 1e-15 else 0.0
    points = ()
    if theta1_grid is not None:
        points = tuple((float(t), expected_coincidence(config, t, theta2, channel))
                       for t in theta1_grid)
    return ExpectedCurve(polcore.PolarizerSetting(theta2).angle, 2 * half_b,
                         max(a0 - half_b, 0.0), phase, points)


def expected_visibility(config: RunConfig, channel: str = "after_storage") -> tuple[float, float]:
    """(V at theta2 = 0, V at theta2 = 45) from the closed-form fringes."""
    return (expected_curve(config, 0.0, channel).visibility,
            expected_curve(config, 45.0, channel).visibility)


def expected_rate_ratio(n1: int, n2: int, params: CqmParams) -> float:
    if n1 < 0 or n2 < 0:
        raise ValueError("cycle counts must be >= 0")
    return params.pass_survival ** (n1 - n2)
