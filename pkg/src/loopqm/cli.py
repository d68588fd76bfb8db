"""Command-line front end: experiment presets, CSV/JSON output, oracle tables.

Usage::

    loopqm --preset calibrate-sweep --out-dir out/
    loopqm --preset store-entanglement --config my.toml --seed 7 --trials-scale 0.1
    loopqm --config my.toml --oracle-table out/oracle.csv

Exit status is 1 when any acceptance check of the preset fails, 2 on
configuration or schedule errors, 0 otherwise.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np

from loopqm import __version__, analysis, oracle
from loopqm.components import SourceParams, validate_pc_schedule
from loopqm.config import ConfigError, config_to_dict, load_config
from loopqm.engine import CoincidenceCurve, RunConfig, ScheduleError, sweep_theta1

log = logging.getLogger("loopqm")

CURVE_HEADER = ("theta1_deg", "coincidences", "exposure_pulses", "channel")
LONG_HEADER = ("n_cycles", "theta2_deg", "channel", "theta1_deg", "coincidences",
               "exposure_pulses")
THETA1_GRID = tuple(float(t) for t in range(0, 180, 10))


@dataclass(frozen=True)
class Check:
    name: str
    lo: float = -math.inf
    hi: float = math.inf

    def evaluate(self, value: float) -> dict[str, Any]:
        ok = bool(np.isfinite(value) and self.lo <= value <= self.hi)
        return {"name": self.name, "value_dimless": float(value),
                "lo_dimless": self.lo, "hi_dimless": self.hi, "passed": ok}


@dataclass(frozen=True)
class ExperimentPreset:
    name: str
    template: RunConfig
    theta1_grid: tuple[float, ...] = THETA1_GRID
    theta2_set: tuple[float, ...] = (0.0, 45.0)
    n_list: tuple[int, ...] = (4, 6)
    dividers: dict[int, int] = field(default_factory=dict)
    checks: tuple[Check, ...] = ()


# Noise that brings both fringe visibilities of the source to
# V_hv = 0.955, V_diag = 0.919, i.e. S = sqrt(2) (V_hv + V_diag) = 2.65.
_STORE_WHITE = 0.045
_STORE_DEPHASE = 1 - 0.919 / 0.955

PRESETS: dict[str, ExperimentPreset] = {
    "calibrate-sweep": ExperimentPreset(
        "calibrate-sweep",
        RunConfig(mode="heralded", num_pulses=40_000_000,
                  source=SourceParams(p_pair_per_pulse=2e-3)),
        n_list=(4, 6),
        checks=(Check("fringe_shift_n4_theta2_0", 87.0, 93.0),
                Check("fringe_shift_n4_theta2_45", 87.0, 93.0),
                Check("fringe_shift_n6_theta2_0", 87.0, 93.0),
                Check("fringe_shift_n6_theta2_45", 87.0, 93.0),
                Check("V_diag_after_n4", 0.98), Check("V_diag_after_n6", 0.98),
                Check("V_hv_after_n4", 0.98), Check("V_hv_after_n6", 0.98)),
    ),
    "store-entanglement": ExperimentPreset(
        "store-entanglement",
        RunConfig(mode="periodic", num_pulses=8_000_000,
                  source=SourceParams(p_pair_per_pulse=0.1, white_noise=_STORE_WHITE,
                                      dephasing=_STORE_DEPHASE)),
        n_list=(4, 6),
        dividers={4: 16, 6: 32},
        checks=(Check("S_before_n4", 2.60, 2.68), Check("S_after_n4", 2.60, 2.72),
                Check("S_before_n6", 2.0), Check("S_after_n6", 2.0)),
    ),
    "loss-vs-n": ExperimentPreset(
        "loss-vs-n",
        RunConfig(mode="heralded", num_pulses=250_000_000, block_pulses=50_000_000,
                  source=SourceParams(p_pair_per_pulse=2e-3)),
        theta1_grid=tuple(float(t) for t in range(0, 180, 20)),
        theta2_set=(0.0,),
        n_list=(2, 4, 6, 8, 10),
        checks=(Check("loss_per_cycle", 0.20, 0.24),
                Check("min_coincidences_per_n", 1e4)),
    ),
    "schedule-check": ExperimentPreset(
        "schedule-check",
        RunConfig(mode="periodic"),
        theta1_grid=(), theta2_set=(),
        n_list=(6, 20),
        dividers={6: 64, 20: 32},
    ),
}


# -- output ------------------------------------------------------------------

def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def curve_rows(curve: CoincidenceCurve) -> list[tuple]:
    return [(p.theta1, p.coincidences, p.exposure, curve.channel) for p in curve.points]


def write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    path.write_text(buf.getvalue())


def read_csv(path: Path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def curve_filename(n: int, theta2: float, channel: str) -> str:
    return f"curve_n{n}_theta2_{theta2:g}deg_{channel}.csv"


def _fit_entry(curve: CoincidenceCurve, n: int) -> dict[str, Any]:
    entry: dict[str, Any] = {"n_cycles": n, "theta2_deg": curve.theta2, "channel": curve.channel,
                             "total_coincidences_counts": int(curve.counts.sum())}
    try:
        fit = analysis.fit_fringe(curve)
    except ValueError as exc:
        entry["fit_error"] = str(exc)
        return entry
    s = fit.sigma
    entry.update({"offset_counts": fit.offset, "amplitude_counts": fit.amplitude,
                  "phase_deg": fit.phase, "sigma_offset_counts": float(s[0]),
                  "sigma_amplitude_counts": float(s[1]), "sigma_phase_deg": float(s[2]),
                  "rss_dimless": fit.rss, "degenerate": fit.degenerate})
    if not fit.degenerate:
        v = analysis.visibility(fit)
        entry.update({"visibility_frac": v.V, "sigma_visibility_frac": v.sigma_V})
    entry["_fit"] = fit
    return entry


# -- presets -----------------------------------------------------------------

def resolve_config(preset: ExperimentPreset, config_path: Optional[Path] = None,
                   seed: Optional[int] = None, trials_scale: float = 1.0) -> RunConfig:
    cfg = preset.template
    if config_path is not None:
        cfg = load_config(config_path, base=cfg)
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    if trials_scale != 1.0:
        if not trials_scale > 0:
            raise ConfigError("--trials-scale must be > 0")
        cfg = replace(cfg, num_pulses=max(1, int(round(cfg.num_pulses * trials_scale))))
    return cfg


def _configs_for(preset: ExperimentPreset, cfg: RunConfig) -> dict[int, RunConfig]:
    return {n: replace(cfg, n_cycles=n, divider_k=preset.dividers.get(n, cfg.divider_k))
            for n in preset.n_list}


def run_preset(preset: ExperimentPreset, out_dir: Path, config: Optional[RunConfig] = None,
               threads: int = 1) -> dict[str, Any]:
    """Execute a preset, write CSVs and report.json, and return the report."""
    cfg = config or preset.template
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    per_n = _configs_for(preset, cfg)
    report: dict[str, Any] = {
        "artifact_version": __version__, "preset": preset.name, "seed": cfg.seed,
        "config": config_to_dict(cfg), "curves": [], "checks": [],
    }
    values: dict[str, float] = {}

    if preset.name == "schedule-check":
        entries = []
        for n, c in per_n.items():
            msg = validate_pc_schedule(n, c.cqm, c.trigger_period)
            entries.append({"n_cycles": n, "divider_k": c.divider_k,
                            "trigger_period_ns": c.trigger_period,
                            "storage_time_ns": n * c.cqm.cycle_time,
                            "ok": msg is None, "violation": msg})
            report["checks"].append({"name": f"schedule_n{n}_k{c.divider_k}",
                                     "value_dimless": float(msg is None), "lo_dimless": 1.0,
                                     "hi_dimless": 1.0, "passed": msg is None,
                                     "violation": msg})
        report["schedules"] = entries
        return _finish(report, out_dir)

    for c in per_n.values():
        c.check_schedule()

    long_rows = []
    fits: dict[tuple[int, float, str], Any] = {}
    stream = 0
    for n, c in per_n.items():
        for theta2 in preset.theta2_set:
            log.info("n=%d theta2=%g: %d pulses x %d angles", n, theta2, c.num_pulses,
                     len(preset.theta1_grid))
            curves = sweep_theta1(replace(c, theta2=theta2), preset.theta1_grid,
                                  stream=stream, threads=threads)
            stream += 1
            for curve in curves:
                write_csv(out_dir / curve_filename(n, theta2, curve.channel), CURVE_HEADER,
                          curve_rows(curve))
                long_rows += [(n, theta2, curve.channel, p.theta1, p.coincidences, p.exposure)
                              for p in curve.points]
                entry = _fit_entry(curve, n)
                fits[(n, theta2, curve.channel)] = (entry.pop("_fit", None), curve)
                report["curves"].append(entry)
    write_csv(out_dir / "curves_long.csv", LONG_HEADER, long_rows)

    if preset.name == "loss-vs-n":
        rates = []
        table = []
        for n in preset.n_list:
            _, curve = fits[(n, 0.0, "after_storage")]
            r, sr = analysis.mean_rate(curve)
            rates.append((n, r, sr))
            table.append({"n_cycles": n, "mean_rate_counts_per_pulse": r,
                          "sigma_rate_counts_per_pulse": sr,
                          "coincidences_counts": int(curve.counts.sum())})
        lf = analysis.fit_loss(rates)
        report["loss_fit"] = {"loss_per_cycle_frac": lf.loss, "sigma_loss_frac": lf.sigma_loss,
                              "rates": table}
        values["loss_per_cycle"] = lf.loss
        values["min_coincidences_per_n"] = min(t["coincidences_counts"] for t in table)
    else:
        vis, bell = {}, {}
        for n in preset.n_list:
            for channel, tag in (("before_storage", "before"), ("after_storage", "after")):
                f0, _ = fits[(n, 0.0, channel)]
                f45, _ = fits[(n, 45.0, channel)]
                if f0 is None or f45 is None or f0.degenerate or f45.degenerate:
                    continue
                vh, vd = analysis.visibility(f0), analysis.visibility(f45)
                b = analysis.chsh_from_visibilities(vh, vd)
                vis[f"n{n}_{tag}"] = {"V_hv_frac": vh.V, "sigma_V_hv_frac": vh.sigma_V,
                                      "V_diag_frac": vd.V, "sigma_V_diag_frac": vd.sigma_V}
                bell[f"n{n}_{tag}"] = {"S_dimless": b.S, "sigma_S_dimless": b.sigma_S,
                                       "violated": b.violated}
                values[f"V_hv_{tag}_n{n}"] = vh.V
                values[f"V_diag_{tag}_n{n}"] = vd.V
                values[f"S_{tag}_n{n}"] = b.S
            for theta2 in preset.theta2_set:
                fb, _ = fits[(n, theta2, "before_storage")]
                fa, _ = fits[(n, theta2, "after_storage")]
                if fb is not None and fa is not None and not (fb.degenerate or fa.degenerate):
                    shift, err = analysis.fringe_shift(fb, fa)
                    values[f"fringe_shift_n{n}_theta2_{theta2:g}"] = shift
                    report.setdefault("fringe_shifts", []).append(
                        {"n_cycles": n, "theta2_deg": theta2, "shift_deg": shift,
                         "sigma_shift_deg": err})
        report["visibilities"] = vis
        report["chsh"] = bell

    for check in preset.checks:
        report["checks"].append(check.evaluate(values.get(check.name, math.nan)))
    return _finish(report, out_dir)


def _finish(report: dict[str, Any], out_dir: Path) -> dict[str, Any]:
    report["passed"] = all(c["passed"] for c in report["checks"])
    (out_dir / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return report


def emit_oracle_table(config: RunConfig, out_path: Path,
                      theta1_grid: Sequence[float] = THETA1_GRID) -> None:
    """Expected coincidences over the theta1 grid for both channels."""
    rows = []
    for channel in oracle.CHANNELS:
        for t in theta1_grid:
            expected = oracle.expected_counts(config, t, config.theta2, channel)
            rows.append((float(t), expected, config.num_pulses, f"{channel}_oracle"))
    write_csv(Path(out_path), CURVE_HEADER, rows)


# -- entry point -------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="loopqm", description=__doc__.split("\n\n")[0])
    p.add_argument("--config", type=Path, help="TOML run configuration")
    p.add_argument("--preset", choices=sorted(PRESETS), help="experiment preset to run")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--out-dir", type=Path, default=Path("out"))
    p.add_argument("--trials-scale", type=float, default=1.0,
                   help="multiply num_pulses (e.g. 0.05 for a quick look)")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    p.add_argument("--oracle-table", type=Path,
                   help="write the closed-form expectation table for --config and exit")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.oracle_table is not None:
            cfg = load_config(args.config) if args.config else RunConfig()
            if args.seed is not None:
                cfg = replace(cfg, seed=args.seed)
            emit_oracle_table(cfg, args.oracle_table)
            return 0
        if args.preset is None:
            print("loopqm: one of --preset or --oracle-table is required", file=sys.stderr)
            return 2
        preset = PRESETS[args.preset]
        cfg = resolve_config(preset, args.config, args.seed, args.trials_scale)
        for c in _configs_for(preset, cfg).values():
            if preset.name != "schedule-check":
                c.check_schedule()
        report = run_preset(preset, args.out_dir, cfg, threads=max(1, args.threads))
    except (ConfigError, ScheduleError) as exc:
        print(f"loopqm: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"loopqm: {exc}", file=sys.stderr)
        return 2
    for c in report["checks"]:
        status = "PASS" if c["passed"] else "FAIL"
        extra = f"  ({c['violation']})" if c.get("violation") else ""
        print(f"{status} {c['name']} = {c['value_dimless']:.6g}"
              f"  [{c['lo_dimless']:g}, {c['hi_dimless']:g}]{extra}")
    return 0 if report["passed"] else 1


if __name__ == "__main__":
    sys.exit(main())
