"""JSON scenario configuration and its validation."""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

from .functionals import Gains, compute_R
from .model import Grid, PhysicalParams
from .solver import SolverConfig

MODES = ("closed_loop", "open_loop", "transfer_demo")
IC_KINDS = ("level_mode", "velocity_mode", "combined")


class ConfigError(ValueError):
    """Invalid scenario file; the message carries the offending line when known."""


@dataclass(frozen=True)
class ICConfig:
    kind: str = "level_mode"
    amplitude: float = 0.0
    mode_number: int = 1
    xi0: float = 0.0
    w0: float = 0.0
    velocity_amplitude: float | None = None


@dataclass(frozen=True)
class TransferConfig:
    xi0: float
    epsilon: float
    a_star: float = 0.0


@dataclass(frozen=True)
class OutputConfig:
    csv_path: str | None = None
    summary_path: str | None = None
    snapshot_times: tuple = ()


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    physical: PhysicalParams
    N: int
    solver: SolverConfig
    mode: str
    ic: ICConfig
    outputs: OutputConfig
    gains: Gains | None = None
    transfer: TransferConfig | None = None
    seed: int = 0
    static_samples: int = 0
    sweep: dict = field(default_factory=dict)
    base_dir: str = "."

    @property
    def grid(self) -> Grid:
        return Grid(self.physical.L, self.N)

    def resolve(self, path: str | None) -> Path | None:
        if path is None:
            return None
        p = Path(path)
        return p if p.is_absolute() else Path(self.base_dir) / p


def _line_of(text: str, key: str) -> int | None:
    pat = re.compile(r'"%s"\s*:' % re.escape(key))
    for i, line in enumerate(text.splitlines(), 1):
        if pat.search(line):
            return i
    return None


class _Reader:
    def __init__(self, text: str, source: str):
        self.text, self.source = text, source

    def fail(self, key: str, msg: str):
        line = _line_of(self.text, key) if key else None
        where = f"{self.source}:{line}" if line else self.source
        raise ConfigError(f"{where}: {msg}")

    def section(self, data, key, required=True):
        if key not in data:
            if required:
                self.fail("", f"missing section {key!r}")
            return None
        if not isinstance(data[key], dict):
            self.fail(key, f"{key!r} must be an object")
        return data[key]

    def num(self, sec, key, default=None, kind=float, positive=False):
        if key not in sec:
            if default is None:
                self.fail("", f"missing field {key!r}")
            return default
        val = sec[key]
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            self.fail(key, f"{key!r} must be a number, got {val!r}")
        if kind is int and int(val) != val:
            self.fail(key, f"{key!r} must be an integer, got {val!r}")
        if positive and not val > 0:
            self.fail(key, f"{key!r} must be positive, got {val!r}")
        return kind(val)


def parse_scenario(data: dict, text: str = "", source: str = "<config>", base_dir=".") -> ScenarioConfig:
    rd = _Reader(text, source)
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be an object")

    ph = rd.section(data, "physical")
    vals = {k: rd.num(ph, k, positive=True) for k in ("g", "mu", "L", "m", "H_max")}
    if vals["m"] / vals["L"] >= vals["H_max"]:
        rd.fail("H_max", f"equilibrium level h* = m/L = {vals['m'] / vals['L']:g} is not below "
                         f"H_max = {vals['H_max']:g}; the standing assumption h* < H_max fails")
    physical = PhysicalParams(**vals)

    N = rd.num(rd.section(data, "grid"), "N", kind=int)
    if N < 4:
        rd.fail("N", f"grid needs N >= 4 cells, got {N}")

    mode = data.get("mode")
    if mode not in MODES:
        rd.fail("mode", f"mode must be one of {MODES}, got {mode!r}")

    so = rd.section(data, "solver")
    t_end = rd.num(so, "t_end", default=-1.0)
    if mode != "transfer_demo" and not t_end > 0:
        rd.fail("t_end", "solver.t_end must be positive")
    cfl = rd.num(so, "cfl", default=0.4)
    if not 0 < cfl <= 1:
        rd.fail("cfl", f"cfl must lie in (0, 1], got {cfl}")
    record_every = rd.num(so, "record_every", default=1, kind=int)
    if record_every < 1:
        rd.fail("record_every", "record_every must be >= 1")
    dt_max = so.get("dt_max")
    if dt_max is not None:
        dt_max = rd.num(so, "dt_max", positive=True)

    out = data.get("outputs") or {}
    snaps = out.get("snapshot_times", [])
    if not isinstance(snaps, list) or not all(isinstance(s, (int, float)) for s in snaps):
        rd.fail("snapshot_times", "snapshot_times must be a list of numbers")
    outputs = OutputConfig(out.get("csv_path"), out.get("summary_path"), tuple(float(s) for s in snaps))

    solver = SolverConfig(t_end=t_end if t_end > 0 else 1.0, cfl=cfl, record_every=record_every,
                          dt_max=dt_max, snapshot_times=outputs.snapshot_times)

    ic_sec = rd.section(data, "ic", required=False) or {}
    kind = ic_sec.get("kind", "level_mode")
    if kind not in IC_KINDS:
        rd.fail("kind", f"ic.kind must be one of {IC_KINDS}, got {kind!r}")
    ic = ICConfig(
        kind=kind,
        amplitude=rd.num(ic_sec, "amplitude", default=0.0),
        mode_number=rd.num(ic_sec, "mode_number", default=1, kind=int),
        xi0=rd.num(ic_sec, "xi0", default=0.0),
        w0=rd.num(ic_sec, "w0", default=0.0),
        velocity_amplitude=(rd.num(ic_sec, "velocity_amplitude")
                            if "velocity_amplitude" in ic_sec else None),
    )
    if ic.mode_number < 1:
        rd.fail("mode_number", "mode_number must be >= 1")
    if kind != "velocity_mode" and abs(ic.amplitude) >= physical.h_star:
        rd.fail("amplitude", f"level amplitude {ic.amplitude} must be below h* = {physical.h_star}")

    gains = None
    if mode == "closed_loop":
        gs = rd.section(data, "gains")
        R = compute_R(physical)
        if "r_frac" in gs:
            r = rd.num(gs, "r_frac") * R
        else:
            r = rd.num(gs, "r", default=0.0)
        if not 0 <= r < R:
            rd.fail("r" if "r" in gs else "r_frac", f"r = {r} must lie in [0, R) with R = {R}")
        gains = Gains(sigma=rd.num(gs, "sigma", positive=True), q=rd.num(gs, "q", positive=True),
                      k=rd.num(gs, "k", positive=True), r=r)
        from .controller import check_gain_condition

        chk = check_gain_condition(physical, gains)
        if not chk.ok:
            rd.fail("k", f"gain condition fails: k = {gains.k} must be < {chk.bound:.6g}")

    transfer = None
    if mode == "transfer_demo":
        tr = rd.section(data, "transfer")
        transfer = TransferConfig(
            xi0=rd.num(tr, "xi0"), epsilon=rd.num(tr, "epsilon", positive=True),
            a_star=rd.num(tr, "a_star", default=0.0),
        )

    checks = data.get("checks") or {}
    return ScenarioConfig(
        name=str(data.get("name", Path(source).stem)),
        physical=physical, N=N, solver=solver, mode=mode, ic=ic, outputs=outputs,
        gains=gains, transfer=transfer,
        seed=rd.num(data, "seed", default=0, kind=int),
        static_samples=rd.num(checks, "static_samples", default=0, kind=int),
        sweep=data.get("sweep") or {},
        base_dir=str(base_dir),
    )


def load_scenario(path) -> tuple[ScenarioConfig, dict]:
    """Parse and validate a scenario file; returns the config and the raw JSON."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read ({exc.strerror})") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None
    return parse_scenario(data, text, str(path), base_dir=path.parent), data


def with_overrides(raw: dict, overrides: dict) -> dict:
    """Copy of a raw scenario with sweep-axis values substituted."""
    out = json.loads(json.dumps(raw))
    where = {
        "sigma": ("gains", "sigma"), "q": ("gains", "q"), "k": ("gains", "k"),
        "r": ("gains", "r"), "r_frac": ("gains", "r_frac"), "N": ("grid", "N"),
        "amplitude": ("ic", "amplitude"),
    }
    for key, val in overrides.items():
        if key not in where:
            raise ConfigError(f"unsupported sweep axis {key!r}")
        sec, name = where[key]
        out.setdefault(sec, {})[name] = val
        if key == "r":
            out["gains"].pop("r_frac", None)
        if key == "r_frac":
            out["gains"].pop("r", None)
    return out
