"""TOML run configuration.

Five flat sections (``run``, ``source``, ``cqm``, ``delays``, ``detectors``).
Every key is optional and falls back to the base configuration, which by
default carries the apparatus values: 10 ns pump period, 27 ns loop cycle,
0.78 transmission per cycle, 15 ns Pockels-cell rise/fall, 320 ns herald
compensation and 165 ns passive delay.  Unknown sections or keys are errors.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import replace
from pathlib import Path
from typing import Any, Optional, Union

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from loopqm.components import CqmParams, DelayParams, DetectorParams, SourceParams
from loopqm.engine import RunConfig


class ConfigError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


# (section, key) -> (attribute path on RunConfig, type)
SCHEMA: dict[str, dict[str, tuple[tuple[str, ...], type]]] = {
    "run": {
        "mode": (("mode",), str),
        "n_cycles": (("n_cycles",), int),
        "num_pulses": (("num_pulses",), int),
        "seed": (("seed",), int),
        "theta1_deg": (("theta1",), float),
        "theta2_deg": (("theta2",), float),
        "herald_latency_ns": (("herald_latency",), float),
        "divider_k": (("divider_k",), int),
        "acceptance_window_ns": (("acceptance_window",), float),
        "coincidence_window_ns": (("coincidence_window",), float),
        "block_pulses": (("block_pulses",), int),
    },
    "source": {
        "pulse_period_ns": (("source", "pulse_period"), float),
        "p_pair_per_pulse": (("source", "p_pair_per_pulse"), float),
        "sa_success_prob": (("source", "sa_success_prob"), float),
        "psi_phase_rad": (("source", "psi_phase"), float),
        "white_noise_frac": (("source", "white_noise"), float),
        "dephasing_frac": (("source", "dephasing"), float),
    },
    "cqm": {
        "cycle_time_ns": (("cqm", "cycle_time"), float),
        "eta_cycle": (("cqm", "eta_cycle"), float),
        "flip_fidelity": (("cqm", "flip_fidelity"), float),
        "delta_per_cycle_rad": (("cqm", "delta_per_cycle"), float),
        "pc_rise_ns": (("cqm", "pc_rise"), float),
        "pc_fall_ns": (("cqm", "pc_fall"), float),
        "tap_reflectivity": (("cqm", "tap_reflectivity"), float),
        "depolarization_prob": (("cqm", "depolarization"), float),
        "flip_parity": (("cqm", "flip_parity"), str),
    },
    "delays": {
        "herald_delay_ns": (("herald_delay", "delay"), float),
        "herald_transmission": (("herald_delay", "transmission"), float),
        "herald_phase_rad": (("herald_delay", "birefringent_phase"), float),
        "passive_delay_ns": (("passive_delay", "delay"), float),
        "passive_transmission": (("passive_delay", "transmission"), float),
        "passive_phase_rad": (("passive_delay", "birefringent_phase"), float),
        "phase_comp_1_rad": (("phase_comp_1",), float),
        "phase_comp_aux_rad": (("phase_comp_aux",), float),
    },
    "detectors": {
        f"{d}_{k}": ((d, attr), float)
        for d in ("d1", "d2", "daux")
        for k, attr in (("efficiency", "efficiency"),
                        ("dark_prob", "dark_count_prob_per_window"))
    },
}

_NESTED = {"source": SourceParams, "cqm": CqmParams, "herald_delay": DelayParams,
           "passive_delay": DelayParams, "d1": DetectorParams, "d2": DetectorParams,
           "daux": DetectorParams}


def _key_line(text: str, section: str, key: str) -> Optional[int]:
    current = None
    for i, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        m = re.match(r"^\[\s*([A-Za-z0-9_\-]+)\s*\]", line)
        if m:
            current = m.group(1)
            continue
        if current == section and re.match(rf"^{re.escape(key)}\s*=", line):
            return i
    return None


def _section_line(text: str, section: str) -> Optional[int]:
    for i, raw in enumerate(text.splitlines(), 1):
        if re.match(rf"^\s*\[\s*{re.escape(section)}\s*\]", raw):
            return i
    return None


def _coerce(value: Any, typ: type, where: str, line: Optional[int]):
    if isinstance(value, bool):
        raise ConfigError(f"{where}: expected {typ.__name__}, got boolean", line)
    if typ is float and isinstance(value, (int, float)):
        return float(value)
    if typ is int and isinstance(value, int):
        return value
    if typ is str and isinstance(value, str):
        return value
    raise ConfigError(f"{where}: expected {typ.__name__}, got {type(value).__name__}", line)


def parse_config(text: str, base: Optional[RunConfig] = None) -> RunConfig:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ConfigError(f"parse error: {exc}", int(m.group(1)) if m else None) from exc

    flat: dict[tuple[str, ...], tuple[Any, str, Optional[int]]] = {}
    for section, body in doc.items():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]", _section_line(text, section))
        if not isinstance(body, dict):
            raise ConfigError(f"[{section}] must be a table", _section_line(text, section))
        for key, value in body.items():
            line = _key_line(text, section, key)
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key '{key}' in [{section}]", line)
            path, typ = SCHEMA[section][key]
            flat[path] = (_coerce(value, typ, f"{section}.{key}", line), f"{section}.{key}", line)

    cfg = base or RunConfig()
    nested_changes: dict[str, dict[str, Any]] = {}
    top_changes: dict[str, Any] = {}
    for path, (value, _, _) in flat.items():
        if len(path) == 2:
            nested_changes.setdefault(path[0], {})[path[1]] = value
        else:
            top_changes[path[0]] = value
    try:
        for name, changes in nested_changes.items():
            top_changes[name] = replace(getattr(cfg, name), **changes)
        if "source" in top_changes and "acceptance_window" not in top_changes \
                and cfg.acceptance_window == cfg.source.pulse_period / 2:
            # keep the resolved default tied to the new pulse period
            top_changes["acceptance_window"] = None
        return replace(cfg, **top_changes)
    except ValueError as exc:
        raise ConfigError(f"out of range: {exc}", _offending_line(text, flat, str(exc))) from exc


def _offending_line(text, flat, message) -> Optional[int]:
    for path, (_, where, line) in flat.items():
        if path[-1] in message:
            return line
    return None


def load_config(path: Union[str, Path], base: Optional[RunConfig] = None) -> RunConfig:
    return parse_config(Path(path).read_text(), base)


def config_to_dict(config: RunConfig) -> dict[str, dict[str, Any]]:
    out: dict[str, dict[str, Any]] = {}
    for section, keys in SCHEMA.items():
        out[section] = {}
        for key, (path, _) in keys.items():
            obj = config
            for attr in path:
                obj = getattr(obj, attr)
            out[section][key] = obj
    return out


def _toml_value(v: Any) -> str:
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, float):
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    return str(v)


def dump_config(config: RunConfig) -> str:
    """Serialize every resolved setting; parse_config(dump_config(c)) == c."""
    lines = []
    for section, body in config_to_dict(config).items():
        lines.append(f"[{section}]")
        lines += [f"{k} = {_toml_value(v)}" for k, v in body.items()]
        lines.append("")
    return "\n".join(lines)
