"""Event-driven simulation of the two operating modes.

Heralded mode: a D1 click opens a storage window ``herald_latency`` later,
photon 2 having been held back by the herald-compensation fiber.  Periodic
mode: windows open on every ``divider_k``-th pump pulse and photon 1 waits in
the passive delay line.  Every photon path is a fixed chain, so the engine
walks pairs rather than maintaining a global event queue.

Random streams
--------------
A run is split into trial blocks of ``block_pulses`` pump pulses.  Block ``b``
of sweep point ``p`` in stream ``s`` draws from
``numpy.random.Generator(PCG64(SeedSequence(seed, spawn_key=(s, p, b))))``.
Blocks are independent and their counts are merged by addition, so results do
not depend on how blocks are scheduled across workers.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from loopqm import components as comp
from loopqm import polcore
from loopqm.components import (CqmParams, DelayParams, DetectionRecord, DetectorParams,
                               SourceParams)
from loopqm.polcore import TwoQubitState

MODES = ("heralded", "periodic")
DETECTORS = ("D1", "D2", "Daux")


class ScheduleError(ValueError):
    """Pockels-cell trigger schedule would overlap storage windows."""


@dataclass(frozen=True)
class RunConfig:
    mode: str = "heralded"
    n_cycles: int = 4
    num_pulses: int = 1_000_000
    seed: int = 1
    theta1: float = 0.0                 # deg
    theta2: float = 0.0                 # deg
    herald_latency: float = 320.0       # ns, D1 click to PC fully on
    divider_k: int = 64
    acceptance_window: Optional[float] = None  # ns; None -> half a pulse period
    coincidence_window: float = 1.0     # ns
    block_pulses: int = 1_000_000
    source: SourceParams = field(default_factory=SourceParams)
    cqm: CqmParams = field(default_factory=CqmParams)
    herald_delay: DelayParams = field(default_factory=lambda: DelayParams(320.0))
    passive_delay: DelayParams = field(default_factory=lambda: DelayParams(165.0))
    phase_comp_1: float = math.pi       # rad, compensator on photon 1's path
    phase_comp_aux: float = math.pi     # rad, compensator before D_aux
    d1: DetectorParams = field(default_factory=DetectorParams)
    d2: DetectorParams = field(default_factory=DetectorParams)
    daux: DetectorParams = field(default_factory=DetectorParams)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.n_cycles < 1:
            raise ValueError(f"n_cycles = {self.n_cycles} must be >= 1")
        if self.num_pulses < 1:
            raise ValueError(f"num_pulses = {self.num_pulses} must be >= 1")
        if self.divider_k < 1:
            raise ValueError(f"divider_k = {self.divider_k} must be >= 1")
        if self.block_pulses < 1:
            raise ValueError(f"block_pulses = {self.block_pulses} must be >= 1")
        if self.acceptance_window is None:
            object.__setattr__(self, "acceptance_window", self.source.pulse_period / 2)
        if not self.acceptance_window > 0:
            raise ValueError(f"acceptance_window = {self.acceptance_window} must be > 0")
        if not self.coincidence_window > 0:
            raise ValueError(f"coincidence_window = {self.coincidence_window} must be > 0")
        if self.herald_latency < 0:
            raise ValueError("herald_latency must be >= 0")
        object.__setattr__(self, "theta1", polcore.PolarizerSetting(self.theta1).angle)
        object.__setattr__(self, "theta2", polcore.PolarizerSetting(self.theta2).angle)

    def with_(self, **changes) -> "RunConfig":
        return replace(self, **changes)

    @property
    def trigger_period(self) -> float:
        """Spacing of storage attempts; infinite for heralded triggering."""
        if self.mode == "periodic":
            return self.divider_k * self.source.pulse_period
        return math.inf

    @property
    def path_offsets(self) -> dict[str, float]:
        """Emission-to-detector delay of a true pair on each channel."""
        if self.mode == "heralded":
            t1, t2 = 0.0, self.herald_delay.delay
        else:
            t1, t2 = self.passive_delay.delay, 0.0
        return {"D1": t1, "Daux": t2, "D2": t2 + self.n_cycles * self.cqm.cycle_time}

    def check_schedule(self) -> None:
        msg = comp.validate_pc_schedule(self.n_cycles, self.cqm, self.trigger_period)
        if msg:
            raise ScheduleError(msg)


@dataclass
class Counts:
    coincidences_12: int = 0
    coincidences_1aux: int = 0
    singles_1: int = 0
    singles_2: int = 0
    singles_aux: int = 0

    def __add__(self, other: "Counts") -> "Counts":
        return Counts(*(getattr(self, f.name) + getattr(other, f.name) for f in fields(self)))


@dataclass
class RunRecord:
    config: RunConfig
    counts: dict[tuple[float, float], Counts]
    attempted_storages: int = 0
    pairs_emitted: int = 0
    elapsed_ns: float = 0.0

    @property
    def totals(self) -> Counts:
        out = Counts()
        for c in self.counts.values():
            out = out + c
        return out

    def merge(self, other: "RunRecord") -> "RunRecord":
        counts = dict(self.counts)
        for key, c in other.counts.items():
            counts[key] = counts[key] + c if key in counts else c
        return RunRecord(self.config, counts,
                         self.attempted_storages + other.attempted_storages,
                         self.pairs_emitted + other.pairs_emitted,
                         self.elapsed_ns + other.elapsed_ns)


@dataclass(frozen=True)
class CurvePoint:
    theta1: float
    coincidences: int
    exposure: int                       # pump pulses


@dataclass(frozen=True)
class CoincidenceCurve:
    theta2: float
    points: tuple[CurvePoint, ...]
    channel: str                        # "before_storage" | "after_storage"

    @property
    def theta1(self) -> np.ndarray:
        return np.array([p.theta1 for p in self.points])

    @property
    def counts(self) -> np.ndarray:
        return np.array([p.coincidences for p in self.points], dtype=float)

    @property
    def exposure(self) -> np.ndarray:
        return np.array([p.exposure for p in self.points], dtype=float)


def block_rng(seed: int, stream: int, point: int, block: int) -> np.random.Generator:
    ss = np.random.SeedSequence(seed, spawn_key=(stream, point, block))
    return np.random.Generator(np.random.PCG64(ss))


# -- coincidence counting ----------------------------------------------------

def greedy_pairs(a: np.ndarray, b: np.ndarray, window: float) -> tuple[np.ndarray, np.ndarray]:
    """Greedy earliest-first matching of two sorted time arrays.

    Returns index arrays (ia, ib) of matched records with |a - b| <= window.
    Unambiguous cases (every record has at most one candidate) are resolved
    with array operations; anything else falls back to the two-pointer scan.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size == 0 or b.size == 0:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    lo = np.searchsorted(b, a - window, side="left")
    hi = np.searchsorted(b, a + window, side="right")
    lo_a = np.searchsorted(a, b - window, side="left")
    hi_a = np.searchsorted(a, b + window, side="right")
    if (hi - lo).max() <= 1 and (hi_a - lo_a).max() <= 1:
        ia = np.nonzero(hi - lo == 1)[0]
        return ia, lo[ia]
    ia, ib = [], []
    i = j = 0
    al, bl = a.tolist(), b.tolist()
    while i < len(al) and j < len(bl):
        d = al[i] - bl[j]
        if abs(d) <= window:
            ia.append(i)
            ib.append(j)
            i += 1
            j += 1
        elif d < 0:
            i += 1
        else:
            j += 1
    return np.array(ia, dtype=np.int64), np.array(ib, dtype=np.int64)


def coincidence_count(records: Iterable[DetectionRecord], window: float,
                      offsets: Optional[Mapping[str, float]] = None) -> dict[tuple[str, str], int]:
    """Count two-fold coincidences between D1 and each of D2, D_aux.

    Times are corrected by subtracting each detector's fixed path offset before
    comparison; every record is used at most once.
    """
    if not window > 0:
        raise ValueError("coincidence window must be > 0")
    offsets = offsets or {}
    times: dict[str, list[float]] = {d: [] for d in DETECTORS}
    for r in records:
        times[r.detector].append(r.time - offsets.get(r.detector, 0.0))
    sorted_times = {d: np.sort(np.array(t)) for d, t in times.items()}
    out = {}
    for other in ("D2", "Daux"):
        ia, _ = greedy_pairs(sorted_times["D1"], sorted_times[other], window)
        out[("D1", other)] = int(ia.size)
    return out


# -- per-run state preparation -----------------------------------------------

def branch_states(config: RunConfig) -> tuple[TwoQubitState, TwoQubitState]:
    """Polarization state of a pair reaching (D1, D_aux) and (D1, D2)."""
    src = comp.source_state(config.source)
    op1 = polcore.phase_op(config.phase_comp_1)
    op2 = polcore.identity_op()
    if config.mode == "periodic":
        op1 = op1 @ polcore.phase_op(config.passive_delay.birefringent_phase)
    else:
        op2 = polcore.phase_op(config.herald_delay.birefringent_phase)
    at_tap = polcore.apply_local(src, op1, op2)
    before = polcore.apply_one_photon(at_tap, 2, polcore.phase_op(config.phase_comp_aux))
    after = comp.stored_state(at_tap, 2, config.n_cycles, config.cqm)
    return before, after


def _accept_triggers(starts: np.ndarray, busy: float) -> np.ndarray:
    """Drop window starts that fall while the PC is still cycling."""
    if starts.size <= 1 or np.diff(starts).min() > busy:
        return starts
    kept = []
    last = -math.inf
    for s in starts.tolist():
        if s - last > busy:
            kept.append(s)
            last = s
    return np.array(kept)


def _aligned(arrival: np.ndarray, starts: np.ndarray, tol: float) -> np.ndarray:
    if starts.size == 0 or arrival.size == 0:
        return np.zeros(arrival.shape, dtype=bool)
    k = np.searchsorted(starts, arrival)
    right = starts[np.minimum(k, starts.size - 1)]
    left = starts[np.maximum(k - 1, 0)]
    return np.minimum(np.abs(arrival - right), np.abs(arrival - left)) < tol


def _simulate_block(config: RunConfig, start: int, stop: int,
                    rng: np.random.Generator) -> RunRecord:
    src, cqm = config.source, config.cqm
    T = src.pulse_period
    off = config.path_offsets
    before, after = branch_states(config)
    cum_before = np.cumsum(polcore.outcome_probabilities(before, config.theta1, config.theta2).ravel())
    cum_after = np.cumsum(polcore.outcome_probabilities(after, config.theta1, config.theta2).ravel())

    idx = comp.emit_pulse_indices(start, stop, src.p_pair_per_pulse, rng)
    n_pairs = idx.size
    idx = idx[rng.random(n_pairs) < src.sa_success_prob]
    te = idx * T
    m = idx.size

    alive1 = np.ones(m, dtype=bool)
    alive2 = np.ones(m, dtype=bool)
    if config.mode == "periodic":
        alive1 = rng.random(m) < config.passive_delay.transmission
    else:
        alive2 = rng.random(m) < config.herald_delay.transmission
    reflected = rng.random(m) < cqm.tap_reflectivity
    aux = alive2 & reflected
    loop = alive2 & ~reflected

    # joint polarizer outcome, categorical over (block,block),(block,pass),(pass,block),(pass,pass)
    u = rng.random(m)
    outcome = np.where(aux, np.searchsorted(cum_before, u, side="right"),
                       np.searchsorted(cum_after, u, side="right"))
    outcome = np.minimum(outcome, 3)
    pass1 = outcome >= 2
    pass2 = (outcome % 2) == 1

    click1 = alive1 & pass1 & (rng.random(m) < config.d1.efficiency)
    click_aux = aux & pass2 & (rng.random(m) < config.daux.efficiency)

    t_lo, t_hi = start * T, stop * T
    # dark clicks land uniformly in absolute time; shift them into the
    # offset-corrected frame shared by true pairs (emission time)
    dark = {name: comp.dark_counts(stop - start, T, det, rng, first_window=start) - off[name]
            for name, det in (("D1", config.d1), ("D2", config.d2), ("Daux", config.daux))}
    c1 = np.sort(np.concatenate([te[click1], dark["D1"]]))
    caux = np.sort(np.concatenate([te[click_aux], dark["Daux"]]))

    arrival = te + off["Daux"]
    if config.mode == "heralded":
        busy = config.n_cycles * cqm.cycle_time + cqm.pc_rise + cqm.pc_fall
        starts = _accept_triggers(c1 + off["D1"] + config.herald_latency, busy)
    else:
        k = config.divider_k
        starts = np.arange(-(-start // k), -(-stop // k)) * (k * T) + off["Daux"]
    stored = loop & _aligned(arrival, starts, config.acceptance_window)
    survive = rng.random(m) < cqm.pass_survival ** config.n_cycles
    out = stored & survive & (rng.random(m) < cqm.tap_reflectivity)
    click2 = out & pass2 & (rng.random(m) < config.d2.efficiency)
    c2 = np.sort(np.concatenate([te[click2], dark["D2"]]))

    w = config.coincidence_window
    counts = Counts(
        coincidences_12=int(greedy_pairs(c1, c2, w)[0].size),
        coincidences_1aux=int(greedy_pairs(c1, caux, w)[0].size),
        singles_1=int(c1.size), singles_2=int(c2.size), singles_aux=int(caux.size))
    return RunRecord(config, {(config.theta1, config.theta2): counts},
                     attempted_storages=int(starts.size), pairs_emitted=int(n_pairs),
                     elapsed_ns=t_hi - t_lo)


def _block_task(args):
    config, stream, point, block, start, stop = args
    return _simulate_block(config, start, stop, block_rng(config.seed, stream, point, block))


def _blocks(config: RunConfig) -> list[tuple[int, int, int]]:
    B = config.block_pulses
    return [(b, s, min(s + B, config.num_pulses))
            for b, s in enumerate(range(0, config.num_pulses, B))]


def merge_records(records: Sequence[RunRecord]) -> RunRecord:
    if not records:
        raise ValueError("nothing to merge")
    out = records[0]
    for r in records[1:]:
        out = out.merge(r)
    return out


def run(config: RunConfig, *, stream: int = 0, point: int = 0,
        threads: int = 1) -> RunRecord:
    """Simulate one polarizer setting in the configured mode."""
    config.check_schedule()
    tasks = [(config, stream, point, b, s, e) for b, s, e in _blocks(config)]
    if threads > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(_block_task, tasks))
    else:
        parts = [_block_task(t) for t in tasks]
    return merge_records(parts)


def run_heralded(config: RunConfig, **kw) -> RunRecord:
    if config.mode != "heralded":
        raise ValueError("run_heralded needs mode='heralded'")
    return run(config, **kw)


def run_periodic(config: RunConfig, **kw) -> RunRecord:
    if config.mode != "periodic":
        raise ValueError("run_periodic needs mode='periodic'")
    return run(config, **kw)


def sweep_theta1(config: RunConfig, theta1_list: Sequence[float], *, stream: int = 0,
                 threads: int = 1) -> tuple[CoincidenceCurve, CoincidenceCurve]:
    """Run once per analyzer angle; returns (before_storage, after_storage)."""
    if len(theta1_list) == 0:
        raise ValueError("theta1_list is empty")
    config.check_schedule()
    tasks = []
    for point, th in enumerate(theta1_list):
        cfg = config.with_(theta1=float(th))
        tasks += [(cfg, stream, point, b, s, e) for b, s, e in _blocks(cfg)]
    if threads > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(_block_task, tasks))
    else:
        parts = [_block_task(t) for t in tasks]
    merged = merge_records(parts)
    before, after = [], []
    for (t1, _), c in sorted(merged.counts.items()):
        before.append(CurvePoint(t1, c.coincidences_1aux, config.num_pulses))
        after.append(CurvePoint(t1, c.coincidences_12, config.num_pulses))
    return (CoincidenceCurve(config.theta2, tuple(before), "before_storage"),
            CoincidenceCurve(config.theta2, tuple(after), "after_storage"))


# -- per-event reference path ------------------------------------------------

def _measure(state: TwoQubitState, photon: int, theta: float,
             rng: np.random.Generator) -> tuple[bool, TwoQubitState]:
    """Projective polarizer measurement with collapse; returns (transmitted, state)."""
    proj = polcore.polarizer_projector(theta)
    passed = polcore.apply_one_photon(state, photon, proj)
    p = passed.trace / state.trace
    if rng.random() < p:
        return True, passed.normalized()
    blocked = polcore.apply_one_photon(state, photon, polcore.JonesOp(np.eye(2) - proj.m))
    return False, blocked.normalized()


def run_reference(config: RunConfig, *, stream: int = 0, point: int = 0) -> tuple[RunRecord, list[DetectionRecord]]:
    """Pulse-by-pulse simulation built from the scalar component models.

    Slow; exists to cross-check the array engine.  Photon 1 is measured first
    and photon 2's state collapses accordingly before it is routed onward.
    Dark counts are not simulated on this path.
    """
    config.check_schedule()
    rng = block_rng(config.seed, stream, point, 0)
    src, cqm = config.source, config.cqm
    T = src.pulse_period
    n = config.n_cycles
    off = config.path_offsets
    busy = n * cqm.cycle_time + cqm.pc_rise + cqm.pc_fall
    last_start = -math.inf
    records: list[DetectionRecord] = []
    attempted = 0
    pairs = 0
    if config.mode == "periodic":
        attempted = len(range(0, config.num_pulses, config.divider_k))

    for k in range(config.num_pulses):
        pair = comp.spdc_emit(k, src, rng)
        if pair is None:
            continue
        pairs += 1
        combined = comp.shih_alley_combine(pair, src, rng)
        if combined is None:
            continue
        (p1, p2), state = combined
        state = polcore.apply_one_photon(state, 1, polcore.phase_op(config.phase_comp_1))
        if config.mode == "periodic":
            p1, state = comp.delay_line(p1, state, config.passive_delay, rng)
        else:
            p2, state = comp.delay_line(p2, state, config.herald_delay, rng)

        clicked1 = False
        if p1.alive:
            passed, state = _measure(state, 1, config.theta1, rng)
            if passed:
                rec = comp.detect(p1, config.d1, rng, "D1")
                if rec is not None:
                    records.append(rec)
                    clicked1 = True
        if not p2.alive:
            continue

        p2 = p2.moved(comp.Channel.CQM_INPUT)
        p2 = comp.tap_split(p2, cqm, rng)
        if p2.channel == comp.Channel.AUX:
            state = polcore.apply_one_photon(state, 2, polcore.phase_op(config.phase_comp_aux))
            passed, state = _measure(state, 2, config.theta2, rng)
            if passed:
                rec = comp.detect(p2, config.daux, rng, "Daux")
                if rec is not None:
                    records.append(rec)
            continue

        if config.mode == "heralded":
            if not clicked1:
                continue
            start = records[-1].time + config.herald_latency
            if start - last_start <= busy:
                continue
            last_start = start
            attempted += 1
        else:
            kT = config.divider_k * T
            start = round((p2.time - off["Daux"]) / kT) * kT + off["Daux"]
        if not abs(p2.time - start) < config.acceptance_window:
            continue
        result = comp.cqm_store(p2, state, n, cqm, rng)
        if result is None:
            continue
        p2, state = result
        passed, state = _measure(state, 2, config.theta2, rng)
        if passed:
            rec = comp.detect(p2, config.d2, rng, "D2")
            if rec is not None:
                records.append(rec)

    cc = coincidence_count(records, config.coincidence_window, off)
    counts = Counts(coincidences_12=cc[("D1", "D2")], coincidences_1aux=cc[("D1", "Daux")],
                    singles_1=sum(r.detector == "D1" for r in records),
                    singles_2=sum(r.detector == "D2" for r in records),
                    singles_aux=sum(r.detector == "Daux" for r in records))
    record = RunRecord(config, {(config.theta1, config.theta2): counts}, attempted, pairs,
                       config.num_pulses * T)
    return record, records
