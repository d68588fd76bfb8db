"""Device models: pulsed SPDC source, Shih-Alley combiner, fiber delays, the
cyclical loop memory with its 50/50 tap, and detectors.

Each model is a stateless transformer of photon events.  The engine's fast
path works on whole arrays of pairs at once; the scalar functions here are the
per-event reference versions and are also used directly by the slow engine.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from loopqm import polcore
from loopqm.polcore import JonesOp, TwoQubitState


class Channel(str, enum.Enum):
    SOURCE = "source"
    SA_OUT_1 = "sa-out-1"
    SA_OUT_2 = "sa-out-2"
    DELAY = "delay"
    CQM_INPUT = "cqm-input"
    CQM_LOOP = "cqm-loop"
    CQM_OUTPUT = "cqm-output"
    AUX = "aux"
    DETECTOR_1 = "detector-1"
    DETECTOR_2 = "detector-2"


def _check_prob(name: str, value: float) -> None:
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"{name} = {value} must lie in [0, 1]")


@dataclass(frozen=True)
class SourceParams:
    pulse_period: float = 10.0          # ns, 100 MHz pump
    p_pair_per_pulse: float = 1e-4      # ~10 kHz pairs at 100 MHz
    sa_success_prob: float = 0.5
    psi_phase: float = 0.0              # rad, residual phase of the singlet
    white_noise: float = 0.0            # fraction of I/4 mixed into the pair state
    dephasing: float = 0.0              # fractional loss of HV/VH coherence

    def __post_init__(self):
        if not self.pulse_period > 0:
            raise ValueError(f"pulse_period = {self.pulse_period} must be > 0")
        for name in ("p_pair_per_pulse", "sa_success_prob", "white_noise", "dephasing"):
            _check_prob(name, getattr(self, name))


FLIP_CONVENTIONS = ("injection", "cycle")


@dataclass(frozen=True)
class CqmParams:
    cycle_time: float = 27.0            # ns per round trip
    eta_cycle: float = 0.78             # transmission per round trip
    flip_fidelity: float = 1.0          # per-pass probability of a correct H<->V flip
    delta_per_cycle: float = 0.0        # rad of birefringent phase per round trip
    pc_rise: float = 15.0               # ns
    pc_fall: float = 15.0               # ns
    tap_reflectivity: float = 0.5
    depolarization: float = 0.0         # per stored photon, n-independent
    flip_parity: str = "injection"

    def __post_init__(self):
        if not self.cycle_time > 0:
            raise ValueError(f"cycle_time = {self.cycle_time} must be > 0")
        for name in ("eta_cycle", "flip_fidelity", "tap_reflectivity", "depolarization"):
            _check_prob(name, getattr(self, name))
        if self.pc_rise < 0 or self.pc_fall < 0:
            raise ValueError("pc_rise and pc_fall must be >= 0")
        if not self.pc_rise + self.pc_fall < 2 * self.cycle_time:
            raise ValueError(
                f"pc_rise + pc_fall = {self.pc_rise + self.pc_fall} must be < "
                f"2 * cycle_time = {2 * self.cycle_time}")
        if self.flip_parity not in FLIP_CONVENTIONS:
            raise ValueError(f"flip_parity must be one of {FLIP_CONVENTIONS}")

    @property
    def tap_transmissivity(self) -> float:
        return 1.0 - self.tap_reflectivity

    @property
    def pass_survival(self) -> float:
        return self.eta_cycle * self.flip_fidelity


@dataclass(frozen=True)
class DelayParams:
    delay: float = 0.0                  # ns
    transmission: float = 1.0
    birefringent_phase: float = 0.0     # rad

    def __post_init__(self):
        if self.delay < 0:
            raise ValueError(f"delay = {self.delay} must be >= 0")
        _check_prob("transmission", self.transmission)


@dataclass(frozen=True)
class DetectorParams:
    efficiency: float = 1.0
    dark_count_prob_per_window: float = 0.0

    def __post_init__(self):
        _check_prob("efficiency", self.efficiency)
        _check_prob("dark_count_prob_per_window", self.dark_count_prob_per_window)


@dataclass(frozen=True)
class PhotonEvent:
    pair_id: int
    photon_index: int
    time: float
    channel: Channel
    alive: bool = True

    def moved(self, channel: Channel, dt: float = 0.0) -> "PhotonEvent":
        if dt < 0:
            raise ValueError("photon time cannot decrease")
        return replace(self, channel=channel, time=self.time + dt)

    def killed(self) -> "PhotonEvent":
        return replace(self, alive=False)


@dataclass(frozen=True)
class DetectionRecord:
    detector: str                       # "D1" | "D2" | "Daux"
    time: float
    pair_id: Optional[int] = None


# -- source ------------------------------------------------------------------

def source_state(params: SourceParams) -> TwoQubitState:
    """Polarization state attached to a post-selected Shih-Alley pair."""
    state = polcore.psi_minus(params.psi_phase)
    if params.dephasing:
        state = polcore.dephase(state, params.dephasing)
    if params.white_noise:
        state = polcore.white_noise(state, params.white_noise)
    return state


def spdc_emit(pulse_index: int, params: SourceParams,
              rng: np.random.Generator) -> Optional[tuple[PhotonEvent, PhotonEvent]]:
    """Maybe emit a pair on this pump pulse.  The pulse index is the pair id."""
    if pulse_index < 0:
        raise ValueError("pulse_index must be >= 0")
    if rng.random() >= params.p_pair_per_pulse:
        return None
    t = pulse_index * params.pulse_period
    return (PhotonEvent(pulse_index, 1, t, Channel.SOURCE),
            PhotonEvent(pulse_index, 2, t, Channel.SOURCE))


def emit_pulse_indices(start: int, stop: int, p: float,
                       rng: np.random.Generator) -> np.ndarray:
    """Indices in [start, stop) of pulses that emit a pair.

    Same Bernoulli process as calling spdc_emit on every pulse, sampled through
    geometric gaps so the cost scales with the number of pairs.
    """
    if p <= 0.0 or stop <= start:
        return np.empty(0, dtype=np.int64)
    if p >= 1.0:
        return np.arange(start, stop, dtype=np.int64)
    chunks = []
    pos = start - 1
    while True:
        need = int(1.2 * (stop - pos) * p) + 16
        idx = pos + np.cumsum(rng.geometric(p, size=need), dtype=np.int64)
        inside = idx[idx < stop]
        chunks.append(inside)
        if inside.size < idx.size:
            return np.concatenate(chunks)
        pos = int(idx[-1])


def shih_alley_combine(pair: tuple[PhotonEvent, PhotonEvent], params: SourceParams,
                       rng: np.random.Generator) -> Optional[tuple[tuple[PhotonEvent, PhotonEvent], TwoQubitState]]:
    """Post-select the pair on exiting different ports of the 50/50 combiner.

    Returns None when both photons leave the same port.
    """
    a, b = pair
    if a.pair_id != b.pair_id:
        raise ValueError(f"photons from different pairs: {a.pair_id} != {b.pair_id}")
    if not (a.alive and b.alive):
        raise ValueError("both photons must be alive at the combiner")
    if rng.random() >= params.sa_success_prob:
        return None
    p1, p2 = (a, b) if a.photon_index == 1 else (b, a)
    return ((p1.moved(Channel.SA_OUT_1), p2.moved(Channel.SA_OUT_2)),
            source_state(params))


# -- fiber delays ------------------------------------------------------------

def delay_line(event: PhotonEvent, state: TwoQubitState, params: DelayParams,
               rng: np.random.Generator) -> tuple[PhotonEvent, TwoQubitState]:
    out = event.moved(Channel.DELAY, params.delay)
    if rng.random() >= params.transmission:
        out = out.killed()
    if params.birefringent_phase:
        state = polcore.apply_one_photon(state, event.photon_index,
                                         polcore.phase_op(params.birefringent_phase))
    return out, state


# -- loop memory -------------------------------------------------------------

def flip_parity(n: int, convention: str = "injection") -> int:
    """Number of H<->V flips a photon stored for n cycles experiences.

    "injection": one flip on switching in plus one per cycle (n + 1), which
    gives the net bit flip observed after even n.  "cycle": one flip per
    cycle only (n).
    """
    if convention == "injection":
        return n + 1
    if convention == "cycle":
        return n
    raise ValueError(f"unknown flip convention {convention!r}")


def cqm_net_transform(n: int, params: CqmParams) -> tuple[JonesOp, float]:
    """Net Jones matrix and survival probability for n round trips."""
    if n < 1:
        raise ValueError(f"storage requires n >= 1 cycles, got {n}")
    x = polcore.flip_op()
    one_pass = x @ polcore.phase_op(params.delta_per_cycle)
    net = polcore.identity_op()
    for _ in range(n):
        net = one_pass @ net
    for _ in range(flip_parity(n, params.flip_parity) - n):
        net = x @ net
    return net, params.pass_survival ** n


def tap_split(event: PhotonEvent, params: CqmParams,
              rng: np.random.Generator) -> PhotonEvent:
    """Input pass of the tap: reflection to the auxiliary detector, else into the loop."""
    if rng.random() < params.tap_reflectivity:
        return event.moved(Channel.AUX)
    return event.moved(Channel.CQM_LOOP)


def stored_state(state: TwoQubitState, photon: int, n: int,
                 params: CqmParams) -> TwoQubitState:
    net, _ = cqm_net_transform(n, params)
    out = polcore.apply_one_photon(state, photon, net)
    if params.depolarization:
        out = polcore.depolarize(out, photon, params.depolarization)
    return out


def cqm_store(event: PhotonEvent, state: TwoQubitState, n: int, params: CqmParams,
              rng: np.random.Generator) -> Optional[tuple[PhotonEvent, TwoQubitState]]:
    """Store a photon for n cycles and release it toward D2.

    Accepts an event on the memory input (the tap is traversed here) or one
    already transmitted into the loop.  Returns None if the photon is
    reflected at the input tap, lost in the loop, ejected by a bad flip, or
    transmitted back toward the source at the output tap.
    """
    if not event.alive:
        raise ValueError("cannot store a dead photon")
    if event.channel == Channel.CQM_INPUT:
        if rng.random() >= params.tap_transmissivity:
            return None
    elif event.channel != Channel.CQM_LOOP:
        raise ValueError(f"photon on channel {event.channel.value} is not at the memory")
    _, survival = cqm_net_transform(n, params)
    if rng.random() >= survival:
        return None
    if rng.random() >= params.tap_reflectivity:
        return None
    out = event.moved(Channel.CQM_OUTPUT, n * params.cycle_time)
    return out, stored_state(state, event.photon_index, n, params)


def validate_pc_schedule(n: int, params: CqmParams, trigger_period: float) -> Optional[str]:
    """Check Pockels-cell timing; returns None if ok, else a description."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if not trigger_period > 0:
        raise ValueError("trigger_period must be > 0")
    problems = []
    if not params.pc_rise < params.cycle_time:
        problems.append(f"PC rise time {params.pc_rise:g} ns is not shorter than "
                        f"the {params.cycle_time:g} ns cycle time")
    if not params.pc_fall < params.cycle_time:
        problems.append(f"PC fall time {params.pc_fall:g} ns is not shorter than "
                        f"the {params.cycle_time:g} ns cycle time")
    busy = n * params.cycle_time + params.pc_rise + params.pc_fall
    if not trigger_period > busy:
        problems.append(
            f"trigger period {trigger_period:g} ns <= storage {n}x{params.cycle_time:g} ns"
            f" + rise {params.pc_rise:g} ns + fall {params.pc_fall:g} ns = {busy:g} ns:"
            f" next turn-on overlaps the current release")
    return "; ".join(problems) if problems else None


# -- detection ---------------------------------------------------------------

def detect(event: PhotonEvent, params: DetectorParams, rng: np.random.Generator,
           detector: str) -> Optional[DetectionRecord]:
    if not event.alive:
        return None
    if rng.random() >= params.efficiency:
        return None
    return DetectionRecord(detector, event.time, event.pair_id)


def dark_counts(num_windows: int, window: float, params: DetectorParams,
                rng: np.random.Generator, first_window: int = 0) -> np.ndarray:
    """Times of dark clicks, at most one per window, uniform within the window."""
    p = params.dark_count_prob_per_window
    if p <= 0.0 or num_windows <= 0:
        return np.empty(0)
    idx = emit_pulse_indices(first_window, first_window + num_windows, p, rng)
    return (idx + rng.random(idx.size)) * window
