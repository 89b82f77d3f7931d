"""Experiment configuration: JSON documents with unit-annotated values.

A config has four sections, ``scenario``, ``optimizer``, ``sweep`` (optional)
and ``output`` (optional). Quantities may be raw numbers or strings such as
``"28 GHz"``, ``"30 dBm"`` or ``"100 Mbps"``. Raw numbers are SI (Hz, W, s,
m) except rate fields (``r_min``, ``rate_unit``), which are in Mbps.
"""

from __future__ import annotations

import copy
import json
import math
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Optional

import numpy as np

from .metrics import SensingMode
from .optimizer import ArmijoParams, InitStrategy, OptimizerConfig
from .scenario import ScenarioConfig, ScenarioError, SystemParams

PRESETS = ("desk", "full")
SWEEP_PARAMETERS = ("alpha", "r_min", "n_users")

_PREFIX = {"": 1.0, "k": 1e3, "M": 1e6, "G": 1e9, "T": 1e12,
           "m": 1e-3, "u": 1e-6, "µ": 1e-6, "n": 1e-9}
_UNIT_RE = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*([A-Za-zµ/]*)\s*$")


class ConfigError(ValueError):
    """Config validation failure; ``errors`` lists every offending field."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("invalid configuration:\n" + "\n".join(f"  - {e}" for e in self.errors))


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def watts_to_dbm(watts: float) -> float:
    return 10.0 * math.log10(watts) + 30.0


def parse_quantity(value: Any, kind: str) -> float:
    """Convert ``value`` to SI (rates: bit/s).

    ``kind`` is one of ``frequency``, ``power``, ``time``, ``rate``,
    ``length``, ``speed`` or ``plain``.
    """
    if isinstance(value, bool):
        raise ValueError(f"expected a number, got {value!r}")
    if isinstance(value, (int, float)):
        x = float(value)
        return x * 1e6 if kind == "rate" else x
    if not isinstance(value, str):
        raise ValueError(f"expected a number or unit string, got {value!r}")
    m = _UNIT_RE.match(value)
    if not m:
        raise ValueError(f"cannot parse quantity {value!r}")
    x, unit = float(m.group(1)), m.group(2)
    if unit == "":
        return x * 1e6 if kind == "rate" else x
    if kind == "power" and unit in ("dBm", "dBW"):
        return dbm_to_watts(x) if unit == "dBm" else 10.0 ** (x / 10.0)
    base = {"frequency": "Hz", "power": "W", "time": "s", "rate": "bps",
            "length": "m", "speed": "m/s"}.get(kind)
    if base and unit.endswith(base) and unit[: -len(base)] in _PREFIX:
        return x * _PREFIX[unit[: -len(base)]]
    raise ValueError(f"unit {unit!r} not valid for a {kind} quantity")


@dataclass
class SweepSpec:
    parameter: str
    values: list
    modes: list = field(default_factory=lambda: [SensingMode.MULTISTATIC])


@dataclass
class ExperimentConfig:
    scenario: ScenarioConfig
    optimizer: OptimizerConfig
    sweep: Optional[SweepSpec]
    output_dir: Optional[str]
    formats: list
    raw: dict
    user_radius: float = 30.0

    def with_seed(self, seed: int) -> "ExperimentConfig":
        raw = copy.deepcopy(self.raw)
        raw.setdefault("scenario", {})["seed"] = int(seed)
        return parse_config(raw)


class _Collector:
    def __init__(self):
        self.errors = []

    def get(self, section: dict, key: str, prefix: str, kind: str = "plain",
            default=None, required=False, positive=False, integer=False):
        if key not in section:
            if required:
                self.errors.append(f"{prefix}.{key}: missing required field")
            return default
        try:
            val = parse_quantity(section[key], kind)
        except ValueError as exc:
            self.errors.append(f"{prefix}.{key}: {exc}")
            return default
        if integer:
            if val != int(val):
                self.errors.append(f"{prefix}.{key}: must be an integer, got {section[key]!r}")
                return default
            val = int(val)
        if positive and not val > 0:
            self.errors.append(f"{prefix}.{key}: must be > 0, got {section[key]!r}")
            return default
        return val

    def points(self, section, key, prefix, required=True):
        if key not in section:
            if required:
                self.errors.append(f"{prefix}.{key}: missing required field")
            return None
        try:
            arr = np.asarray(section[key], dtype=float)
        except (TypeError, ValueError):
            self.errors.append(f"{prefix}.{key}: expected a list of [x, y] pairs")
            return None
        if arr.ndim != 2 or arr.shape[1] != 2 or len(arr) < 1:
            self.errors.append(f"{prefix}.{key}: expected a non-empty list of [x, y] pairs")
            return None
        return arr.tolist()


def place_users(targets, n_users: int, seed: int, radius: float = 30.0) -> list:
    """Users uniformly in disks of ``radius`` around targets, paired round-robin.

    Positions depend only on ``(seed, n_users)``.
    """
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), int(n_users), 0x75736572]))
    targets = np.asarray(targets, dtype=float)
    out = []
    for k in range(n_users):
        r = radius * np.sqrt(rng.uniform(0.05, 1.0))
        t = rng.uniform(0.0, 2 * np.pi)
        out.append((targets[k % len(targets)] + r * np.array([np.cos(t), np.sin(t)])).tolist())
    return out


def parse_config(doc: dict) -> ExperimentConfig:
    """Validate a config document; raises :class:`ConfigError` listing every problem."""
    col = _Collector()
    if not isinstance(doc, dict):
        raise ConfigError(["config root must be a JSON object"])
    unknown = set(doc) - {"scenario", "optimizer", "sweep", "output", "description"}
    col.errors.extend(f"{k}: unknown section" for k in sorted(unknown))

    sc = doc.get("scenario")
    if not isinstance(sc, dict):
        col.errors.append("scenario: missing section")
        sc = {}
    opt = doc.get("optimizer", {})
    if not isinstance(opt, dict):
        col.errors.append("optimizer: must be an object")
        opt = {}

    g = col.get
    n_tx = g(sc, "n_tx", "scenario", required=True, positive=True, integer=True)
    n_sc = g(sc, "n_sc", "scenario", required=True, positive=True, integer=True)
    n_sym = g(sc, "n_sym", "scenario", required=True, positive=True, integer=True)
    f_c = g(sc, "f_c", "scenario", "frequency", required=True, positive=True)
    delta_f = g(sc, "delta_f", "scenario", "frequency", positive=True)
    bandwidth = g(sc, "bandwidth", "scenario", "frequency", positive=True)
    if delta_f is None and bandwidth is not None and n_sc:
        delta_f = bandwidth / n_sc
    if delta_f is None and "delta_f" not in sc and "bandwidth" not in sc:
        col.errors.append("scenario: one of delta_f / bandwidth is required")
    t_sym = g(sc, "t_sym", "scenario", "time", positive=True)
    if t_sym is None and delta_f:
        t_sym = 1.0 / delta_f
    p_total = g(sc, "p_total", "scenario", "power", required=True, positive=True)
    noise = sc.get("noise_power")
    noise_w = None
    if noise is None:
        col.errors.append("scenario.noise_power: missing required field")
    else:
        try:
            items = noise if isinstance(noise, list) else [noise]
            noise_w = tuple(parse_quantity(x, "power") for x in items)
            if any(not x > 0 for x in noise_w):
                raise ValueError("noise powers must be > 0")
        except ValueError as exc:
            col.errors.append(f"scenario.noise_power: {exc}")
            noise_w = None

    bs_pos = sc.get("bs_pos", [0.0, 0.0])
    targets = col.points(sc, "targets", "scenario")
    target_vel = sc.get("target_vel")
    seed = g(sc, "seed", "scenario", default=0, integer=True)
    radius = g(sc, "user_radius", "scenario", "length", default=30.0, positive=True)
    users = None
    if "users" in sc:
        users = col.points(sc, "users", "scenario")
    elif "n_users" in sc:
        k = g(sc, "n_users", "scenario", positive=True, integer=True)
        if k and targets and seed is not None:
            users = place_users(targets, k, seed, radius)
    else:
        col.errors.append("scenario: one of users / n_users is required")
    if users is not None and noise_w is not None and len(noise_w) not in (1, len(users) + 1):
        col.errors.append(
            f"scenario.noise_power: need 1 or K+1={len(users) + 1} values, got {len(noise_w)}")

    gain = g(sc, "gain", "scenario", default=1.0, positive=True)
    rcs = sc.get("rcs", 1.0)
    kappa = g(sc, "kappa", "scenario", default=10.0, positive=True)
    c0 = g(sc, "c0", "scenario", "speed", default=299_792_458.0, positive=True)
    channel_file = sc.get("channel_file")
    known_sc = {"n_tx", "n_sc", "n_sym", "f_c", "delta_f", "bandwidth", "t_sym", "p_total",
                "noise_power", "bs_pos", "users", "n_users", "user_radius", "targets",
                "target_vel", "seed", "gain", "rcs", "kappa", "c0", "channel_file"}
    col.errors.extend(f"scenario.{k}: unknown field" for k in sorted(set(sc) - known_sc))

    # optimizer
    arm_doc = opt.get("armijo", {})
    arm_kwargs = {}
    for key, integer in (("c1", False), ("shrink", False), ("init_step", False),
                         ("max_backtracks", True)):
        if key in arm_doc:
            arm_kwargs[key] = g(arm_doc, key, "optimizer.armijo", integer=integer)
    if "warm_start" in arm_doc:
        arm_kwargs["warm_start"] = arm_doc["warm_start"]
    opt_kwargs = {}
    for key, kind, integer in (("alpha", "plain", False), ("rho", "plain", False),
                               ("r_min", "rate", False), ("rate_unit", "rate", False),
                               ("max_iter", "plain", True), ("grad_tol", "plain", False),
                               ("restart_period", "plain", True)):
        if key in opt:
            opt_kwargs[key] = g(opt, key, "optimizer", kind, integer=integer)
    for key in ("grad_tol_relative",):
        if key in opt:
            opt_kwargs[key] = bool(opt[key])
    for key, enum_cls in (("mode", SensingMode), ("init", InitStrategy)):
        if key in opt:
            try:
                opt_kwargs[key] = enum_cls(str(opt[key]).lower())
            except ValueError:
                choices = ", ".join(e.value for e in enum_cls)
                col.errors.append(f"optimizer.{key}: {opt[key]!r} not one of {choices}")
    known_opt = {"alpha", "rho", "r_min", "rate_unit", "max_iter", "grad_tol",
                 "grad_tol_relative", "armijo", "restart_period", "mode", "init"}
    col.errors.extend(f"optimizer.{k}: unknown field" for k in sorted(set(opt) - known_opt))

    sweep = None
    sw = doc.get("sweep")
    if sw is not None:
        if not isinstance(sw, dict):
            col.errors.append("sweep: must be an object")
        else:
            param = sw.get("parameter")
            if param not in SWEEP_PARAMETERS:
                col.errors.append(
                    f"sweep.parameter: {param!r} is not one of {', '.join(SWEEP_PARAMETERS)}")
            vals = sw.get("values")
            parsed = []
            if not isinstance(vals, list) or not vals:
                col.errors.append("sweep.values: expected a non-empty list")
            elif param in SWEEP_PARAMETERS:
                kind = "rate" if param == "r_min" else "plain"
                for j, v in enumerate(vals):
                    try:
                        x = parse_quantity(v, kind)
                        if param == "n_users":
                            if x != int(x) or x < 1:
                                raise ValueError("user counts must be integers >= 1")
                            x = int(x)
                        parsed.append(x)
                    except ValueError as exc:
                        col.errors.append(f"sweep.values[{j}]: {exc}")
            modes = []
            for mname in sw.get("modes", ["multistatic"]):
                try:
                    modes.append(SensingMode(str(mname).lower()))
                except ValueError:
                    col.errors.append(f"sweep.modes: unknown mode {mname!r}")
            sweep = SweepSpec(param, parsed, modes)

    out = doc.get("output", {}) or {}
    output_dir = out.get("directory")
    formats = out.get("formats", ["csv", "json"])

    if col.errors:
        raise ConfigError(col.errors)

    try:
        params = SystemParams(n_tx, n_sc, n_sym, f_c, delta_f, t_sym, p_total, noise_w,
                              bandwidth=bandwidth)
        scenario = ScenarioConfig(
            params=params, bs_pos=bs_pos, user_pos=users, target_pos=targets,
            target_vel=target_vel, c0=c0, gain=gain, rcs=rcs, kappa=kappa, seed=seed,
            channel_file=channel_file)
        optimizer = OptimizerConfig(armijo=ArmijoParams(**arm_kwargs), seed=seed, **opt_kwargs)
    except (ScenarioError, ValueError, TypeError) as exc:
        raise ConfigError([str(exc)]) from None
    return ExperimentConfig(scenario, optimizer, sweep, output_dir, formats, doc, radius)


def load_preset(name: str) -> dict:
    text = resources.files("fairisac.presets").joinpath(f"{name}.json").read_text()
    return json.loads(text)


def load_config_document(path) -> dict:
    """Read a config file; bare preset names (``desk``, ``full``) load the packaged presets."""
    p = Path(path)
    if not p.exists() and str(path) in PRESETS:
        return load_preset(str(path))
    if not p.is_file():
        raise FileNotFoundError(f"config file not found: {p}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError([f"{p}: invalid JSON ({exc})"]) from None


def load_config(path) -> ExperimentConfig:
    return parse_config(load_config_document(path))
