"""Command line entry point: run, sweep, design and verify."""
from __future__ import annotations

import argparse
import csv
import dataclasses
import itertools
import json
import logging
import math
import os
import sys
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import discrete
from .controller import (
    HypothesisViolated,
    NoFeasibleGain,
    ToleranceTooLarge,
    TransferPlan,
    plan_transfer,
    prop1_upper_bound,
    transfer_time,
)
from .functionals import (
    DerivedConstants,
    DesignInfeasible,
    Gains,
    compute_R,
    derived_constants,
    k_bound,
)
from .model import PhysicalParams, PositivityViolation, make_initial_condition, to_lab_frame
from .scenario import ConfigError, ScenarioConfig, load_scenario, parse_scenario, with_overrides
from .solver import COLUMNS, TrajectoryRecord, simulate
from .verify import (
    CheckReport,
    check_energy_identities,
    check_envelope,
    check_lyapunov,
    check_mass,
    check_spill_free,
    check_static_inequalities,
    convergence_orders,
    fitted_decay_rate,
)

log = logging.getLogger("spillfree")

SCHEMA_VERSION = 1
EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3
SNAPSHOT_HEADER = ("x", "h", "v")
# centred differences need a handful of dense records
MIN_DENSE_RECORDS = 5


# --- serialization --------------------------------------------------------------


def _fmt(x: float) -> str:
    return repr(float(x))


def write_csv_atomic(path: Path, header, rows) -> None:
    """Write to a temporary file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(header)
            for row in rows:
                wr.writerow([_fmt(x) for x in row])
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_text_atomic(path: Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_trajectory_csv(traj: TrajectoryRecord, path: Path) -> None:
    cols = [traj.columns[c] for c in COLUMNS]
    write_csv_atomic(path, COLUMNS, zip(*cols))


def snapshot_name(t: float) -> str:
    return f"snapshot_{t:g}.csv"


def write_snapshots(traj: TrajectoryRecord, directory: Path) -> list[str]:
    """Profiles at the face positions: face levels (walls extrapolated) and velocities."""
    x = traj.grid.faces
    names = []
    for t, h, v in traj.snapshots:
        name = snapshot_name(t)
        write_csv_atomic(Path(directory) / name, SNAPSHOT_HEADER,
                         zip(x, discrete.face_levels(h), v))
        names.append(name)
    return names


def read_trajectory_csv(path) -> dict:
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != COLUMNS:
        raise ConfigError(f"{path}:1: header must be {','.join(COLUMNS)}")
    try:
        data = np.array([[float(x) for x in r] for r in rows[1:]], dtype=float)
    except ValueError as exc:
        raise ConfigError(f"{path}: non-numeric entry ({exc})") from None
    if data.ndim != 2 or data.shape[0] == 0 or data.shape[1] != len(COLUMNS):
        raise ConfigError(f"{path}: expected {len(COLUMNS)} columns and at least one row")
    return {c: data[:, i] for i, c in enumerate(COLUMNS)}


def _clean(obj):
    """JSON-safe copy: non-finite floats become None, numpy scalars become floats."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    return obj


def dump_json(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def _report_dict(rep: CheckReport, hard: bool) -> dict:
    d = dataclasses.asdict(rep)
    d["hard"] = hard
    return d


# --- single scenario ------------------------------------------------------------


@dataclasses.dataclass
class RunResult:
    exit_code: int
    summary: dict
    trajectory: TrajectoryRecord | None = None


def _initial_state(cfg: ScenarioConfig, xi0: float | None = None):
    ic = cfg.ic
    try:
        return make_initial_condition(
            cfg.physical, cfg.grid, ic.kind, ic.amplitude, ic.mode_number,
            ic.xi0 if xi0 is None else xi0, ic.w0, velocity_amplitude=ic.velocity_amplitude,
        )
    except PositivityViolation as exc:
        raise ConfigError(f"{cfg.name}: initial condition is not admissible ({exc})") from None


def _collect_checks(traj, cfg, gains, constants, extra=()):
    """Run the battery; returns a list of (report, hard)."""
    p = cfg.physical
    out = [(check_mass(traj), True)]
    certified = gains is not None and traj["V"][0] <= gains.r
    out.append((check_spill_free(traj, p), certified))
    out.append((check_lyapunov(traj, p, gains), certified))
    if gains is not None and constants is not None:
        for rep in check_envelope(traj, p, gains, constants):
            out.append((rep, certified))
    if cfg.solver.record_every == 1 and len(traj) >= MIN_DENSE_RECORDS:
        for rep in check_energy_identities(traj, p):
            out.append((rep, True))
    if cfg.static_samples > 0 and gains is not None:
        for rep in check_static_inequalities(cfg.static_samples, p, gains, cfg.grid, cfg.seed):
            out.append((rep, True))
    out.extend(extra)
    return out


def run_scenario(cfg: ScenarioConfig, write: bool = True, csv_path=None,
                 with_snapshots: bool = True) -> RunResult:
    """Execute one scenario; config problems raise ConfigError."""
    p, grid = cfg.physical, cfg.grid
    summary = {
        "schema_version": SCHEMA_VERSION,
        "scenario": cfg.name,
        "mode": cfg.mode,
        "physical": dataclasses.asdict(p),
        "grid": {"N": cfg.N, "dx": grid.dx},
        "solver": {"cfl": cfg.solver.cfl, "record_every": cfg.solver.record_every,
                   "dt_max": cfg.solver.dt_max},
        "R": compute_R(p),
    }
    gains: Gains | None = cfg.gains
    plan: TransferPlan | None = None
    solver_cfg = cfg.solver
    xi0 = None
    if cfg.mode == "transfer_demo":
        tr = cfg.transfer
        try:
            plan = plan_transfer(tr.xi0, tr.epsilon, p)
        except (ToleranceTooLarge, NoFeasibleGain) as exc:
            raise ConfigError(f"{cfg.name}: {exc}") from None
        gains, xi0 = plan.gains, tr.xi0
        solver_cfg = dataclasses.replace(solver_cfg, t_end=plan.T)
        summary["transfer_plan"] = plan.as_dict()
    constants: DerivedConstants | None = None
    if gains is not None:
        try:
            constants = derived_constants(p, gains)
        except DesignInfeasible as exc:
            log.warning("%s: %s", cfg.name, exc)
        summary["gains"] = dataclasses.asdict(gains)
        summary["derived_constants"] = constants.as_dict() if constants else None

    init = _initial_state(cfg, xi0)
    extra = []
    if plan is not None:
        try:
            bound = prop1_upper_bound(init, p, gains, grid, plan.epsilon)
        except HypothesisViolated as exc:
            raise ConfigError(f"{cfg.name}: transfer start is not near rest ({exc})") from None
        summary["V0_upper_bound"] = bound

    t0 = time.perf_counter()
    try:
        traj = simulate(init, p, gains, grid, solver_cfg)
    except ValueError as exc:
        raise ConfigError(f"{cfg.name}: {exc}") from None
    elapsed = time.perf_counter() - t0
    log.info("%s: %d steps, %d records in %.2f s", cfg.name, traj.steps, len(traj), elapsed)

    if plan is not None:
        V0 = traj["V"][0]
        extra.append((CheckReport.from_margin("certified_start", gains.r - V0, 0.0, 0.0,
                                              V0=V0, r=gains.r), True))
        nT = traj["norm_X"][-1]
        extra.append((CheckReport.from_margin("settled", plan.epsilon - nT, traj["t"][-1], 0.0,
                                              norm_X_T=nT, epsilon=plan.epsilon), True))
        view = to_lab_frame(traj.final, grid, cfg.transfer.a_star)
        summary["lab_frame"] = {"a_star": view.a_star, "a_T": view.a,
                                "position_error": view.a - view.a_star}

    checks = _collect_checks(traj, cfg, gains, constants, extra)
    hard_ok = all(rep.passed for rep, hard in checks if hard)
    summary["checks"] = [_report_dict(rep, hard) for rep, hard in checks]
    summary["flags"] = {
        "first_V_above_R": traj.first_V_above_R,
        "first_spill": traj.first_spill,
        "first_V_increase": traj.first_V_increase,
    }
    summary["steps"] = traj.steps
    summary["records"] = len(traj)
    summary["t_final"] = traj["t"][-1]
    summary["empirical_decay_rate_V"] = fitted_decay_rate(traj["t"], traj["V"])
    summary["failure"] = traj.failure
    if traj.failure:
        code = EXIT_SOLVER
    else:
        code = EXIT_OK if hard_ok else EXIT_CHECK
    summary["exit_code"] = code

    if write:
        out_csv = csv_path or cfg.resolve(cfg.outputs.csv_path)
        if out_csv is not None:
            write_trajectory_csv(traj, out_csv)
        if with_snapshots and traj.snapshots:
            target = out_csv or cfg.resolve(cfg.outputs.summary_path)
            directory = Path(target).parent if target is not None else Path(cfg.base_dir)
            summary["snapshots"] = write_snapshots(traj, directory)
        if csv_path is None and cfg.outputs.summary_path:
            write_text_atomic(cfg.resolve(cfg.outputs.summary_path), dump_json(summary))
    return RunResult(code, summary, traj)


# --- sweep ----------------------------------------------------------------------

AXES = ("r", "r_frac", "sigma", "q", "k", "N", "amplitude")


def thread_cap() -> int:
    raw = os.environ.get("SPILLFREE_THREADS")
    if raw:
        try:
            n = int(raw)
        except ValueError:
            raise ConfigError(f"SPILLFREE_THREADS must be a positive integer, got {raw!r}") from None
        if n < 1:
            raise ConfigError(f"SPILLFREE_THREADS must be a positive integer, got {raw!r}")
        return n
    return os.cpu_count() or 1


def sweep_cells(axes: dict) -> list[dict]:
    """Cartesian product in the order the axes are listed; the last axis varies fastest."""
    names = list(axes)
    for n in names:
        if n not in AXES:
            raise ConfigError(f"unsupported sweep axis {n!r}; choose from {AXES}")
        if not isinstance(axes[n], list) or not axes[n]:
            raise ConfigError(f"sweep axis {n!r} must be a non-empty list")
    return [dict(zip(names, combo)) for combo in itertools.product(*(axes[n] for n in names))]


def _cell_row(idx, overrides, raw, source, base_dir, csv_dir, transfer_T):
    row = {"cell": idx, **overrides}
    try:
        cfg = parse_scenario(with_overrides(raw, overrides), "", f"{source}[cell {idx}]", base_dir)
        csv_path = csv_dir / f"cell_{idx:03d}.csv" if csv_dir is not None else None
        res = run_scenario(cfg, write=csv_path is not None, csv_path=csv_path,
                           with_snapshots=False)
    except (ConfigError, ValueError) as exc:
        row.update(error=str(exc), passed=False, exit_code=EXIT_CONFIG)
        return row, None
    s = res.summary
    dc = s.get("derived_constants") or {}
    row.update(
        N=cfg.N,
        omega=dc.get("omega"), Gamma_r=dc.get("Gamma_r"), lam=dc.get("lam"), M=dc.get("M"),
        T=None, exit_code=res.exit_code, passed=res.exit_code == EXIT_OK,
        spill=s["flags"]["first_spill"] is not None,
        V_increase=s["flags"]["first_V_increase"] is not None,
        empirical_decay_rate=s["empirical_decay_rate_V"],
        failed_checks=[c["name"] for c in s["checks"] if c["hard"] and not c["passed"]],
    )
    if transfer_T is not None and dc:
        row["T"] = transfer_time(dc["M"], dc["lam"], *transfer_T)
    return row, res.trajectory


def r_ladder(params: PhysicalParams, fracs, sigma: float, q: float, safety: float = 0.95):
    """Constants along a ladder of r values with sigma and q fixed and k at ``safety`` of its bound."""
    R = compute_R(params)
    rows = []
    for frac in fracs:
        r = frac * R
        kb = k_bound(params, sigma, q, r)
        row = {"r_frac": frac, "r": r, "k_bound": kb, "k": safety * kb}
        try:
            dc = derived_constants(params, Gains(sigma=sigma, q=q, k=safety * kb, r=r))
            row.update(omega=dc.omega, Gamma_r=dc.Gamma_r, lam=dc.lam, M=dc.M, feasible=True)
        except DesignInfeasible as exc:
            row.update(omega=None, Gamma_r=None, lam=None, M=None, feasible=False, error=str(exc))
        rows.append(row)
    return rows


def ladder_trends(rows) -> dict:
    """Strict monotonicity along the ladder: k-bound and lambda fall, M rises."""
    ok = all(r["feasible"] for r in rows)
    kb = [r["k_bound"] for r in rows]
    lam = [r["lam"] for r in rows]
    M = [r["M"] for r in rows]
    dec = lambda a: all(x > y for x, y in zip(a, a[1:]))  # noqa: E731
    inc = lambda a: all(x < y for x, y in zip(a, a[1:]))  # noqa: E731
    return {
        "all_feasible": ok,
        "k_bound_decreasing": dec(kb),
        "lam_decreasing": ok and dec(lam),
        "M_increasing": ok and inc(M),
    }


def run_sweep(path) -> tuple[int, dict]:
    cfg, raw = load_scenario(path)
    spec = cfg.sweep
    if not spec:
        raise ConfigError(f"{path}: missing 'sweep' section")
    summary = {"schema_version": SCHEMA_VERSION, "scenario": cfg.name, "mode": "sweep"}
    code = EXIT_OK

    if "r_ladder" in spec:
        lad = spec["r_ladder"]
        fracs = lad.get("r_fracs", [round(0.1 * i, 1) for i in range(1, 10)])
        sigma = lad.get("sigma", cfg.gains.sigma if cfg.gains else 1.0)
        q = lad.get("q", cfg.gains.q if cfg.gains else 1.0)
        rows = r_ladder(cfg.physical, fracs, float(sigma), float(q))
        trends = ladder_trends(rows)
        summary["r_ladder"] = {"sigma": sigma, "q": q, "rows": rows, "trends": trends}
        if not all(trends.values()):
            code = EXIT_CHECK

    axes = spec.get("axes") or {}
    if axes:
        cells = sweep_cells(axes)
        csv_dir = cfg.resolve(spec.get("cell_dir")) if spec.get("cell_dir") else None
        tr = spec.get("transfer")
        transfer_T = (float(tr["xi0"]), float(tr["epsilon"])) if tr else None
        workers = min(thread_cap(), len(cells))
        log.info("%s: %d cells on %d threads", cfg.name, len(cells), workers)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(
                lambda ic: _cell_row(ic[0], ic[1], raw, str(path), cfg.base_dir, csv_dir, transfer_T),
                enumerate(cells),
            ))
        rows = [r for r, _ in results]
        summary["cells"] = rows
        if any(not r["passed"] for r in rows):
            code = EXIT_CHECK
        if spec.get("refinement"):
            finals = [t.final for _, t in results]
            Ns = [r.get("N") for r in rows]
            if any(f is None for f in finals) or any(b != 2 * a for a, b in zip(Ns, Ns[1:])):
                raise ConfigError(f"{path}: refinement needs successful runs on N, 2N, 4N, ...")
            errs, orders = convergence_orders(finals, cfg.physical.L)
            min_order = float(spec.get("min_order", 1.8))
            summary["refinement"] = {"N": Ns, "errors": errs, "orders": orders,
                                     "min_order": min_order,
                                     "passed": all(o >= min_order for o in orders)}
            if not summary["refinement"]["passed"]:
                code = EXIT_CHECK

        table = cfg.resolve(cfg.outputs.csv_path)
        if table is not None:
            keys = ["cell", *axes, "omega", "Gamma_r", "lam", "M", "T", "empirical_decay_rate",
                    "passed", "spill", "V_increase", "exit_code"]
            _write_table(table, keys, rows)
    summary["exit_code"] = code
    if cfg.outputs.summary_path:
        write_text_atomic(cfg.resolve(cfg.outputs.summary_path), dump_json(summary))
    return code, summary


def _write_table(path: Path, keys, rows) -> None:
    def cell(v):
        if v is None:
            return ""
        if isinstance(v, bool):
            return str(int(v))
        if isinstance(v, float):
            return repr(v)
        return str(v)

    path.parent.mkdir(parents=True, exist_ok=True)
    text = ",".join(keys) + "\n" + "".join(",".join(cell(r.get(k)) for k in keys) + "\n" for r in rows)
    write_text_atomic(path, text)


# --- design and verify ----------------------------------------------------------


def design(g, mu, L, m, hmax, epsilon, xi0) -> dict:
    p = PhysicalParams(g=g, mu=mu, L=L, m=m, H_max=hmax)
    plan = plan_transfer(xi0, epsilon, p)
    return {"schema_version": SCHEMA_VERSION, "physical": dataclasses.asdict(p),
            "R": compute_R(p), "transfer_plan": plan.as_dict()}


def verify_files(csv_file, config_file) -> tuple[int, list]:
    cfg, _ = load_scenario(config_file)
    cols = read_trajectory_csv(csv_file)
    gains, constants, plan = cfg.gains, None, None
    if cfg.mode == "transfer_demo":
        try:
            plan = plan_transfer(cfg.transfer.xi0, cfg.transfer.epsilon, cfg.physical)
        except (ToleranceTooLarge, NoFeasibleGain) as exc:
            raise ConfigError(f"{config_file}: {exc}") from None
        gains = plan.gains
    if gains is not None:
        try:
            constants = derived_constants(cfg.physical, gains)
        except DesignInfeasible:
            constants = None
    traj = TrajectoryRecord(params=cfg.physical, grid=cfg.grid, gains=gains)
    for c in COLUMNS:
        traj.columns[c] = list(cols[c])
    p = cfg.physical
    certified = gains is not None and traj["V"][0] <= gains.r
    checks = [(check_mass(traj), True), (check_spill_free(traj, p), certified),
              (check_lyapunov(traj, p, gains), certified)]
    if constants is not None:
        checks += [(rep, certified) for rep in check_envelope(traj, p, gains, constants)]
    if plan is not None:
        nT = traj["norm_X"][-1]
        checks.append((CheckReport.from_margin("settled", plan.epsilon - nT, traj["t"][-1], 0.0),
                       True))
    ok = all(rep.passed for rep, hard in checks if hard)
    return (EXIT_OK if ok else EXIT_CHECK), checks


# --- argument parsing -----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="spillfree",
                                 description="Sloshing tank feedback: simulate, sweep, design, verify.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one scenario")
    p.add_argument("config", help="scenario JSON")

    p = sub.add_parser("sweep", help="run a parameter sweep")
    p.add_argument("config", help="scenario JSON with a 'sweep' section")

    p = sub.add_parser("design", help="plan a transfer without simulating")
    for name in ("g", "mu", "L", "m", "hmax", "epsilon", "xi0"):
        p.add_argument(f"--{name}", type=float, required=True)

    p = sub.add_parser("verify", help="re-check a written trajectory")
    p.add_argument("trajectory", help="time-series CSV")
    p.add_argument("config", help="scenario JSON it was produced from")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            cfg, _ = load_scenario(args.config)
            res = run_scenario(cfg)
            for c in res.summary["checks"]:
                tag = "" if c["hard"] else " (descriptive)"
                print(f"{c['name']}: {c['status']}{tag}  margin={c['worst_violation']:.3e}")
            if res.summary["failure"]:
                print(f"solver failure: {res.summary['failure']}", file=sys.stderr)
            return res.exit_code
        if args.command == "sweep":
            code, summary = run_sweep(args.config)
            for row in summary.get("cells", []):
                print(json.dumps(_clean(row), sort_keys=True))
            if "r_ladder" in summary:
                print(json.dumps(summary["r_ladder"]["trends"], sort_keys=True))
            if "refinement" in summary:
                print(json.dumps(_clean(summary["refinement"]), sort_keys=True))
            return code
        if args.command == "design":
            try:
                out = design(args.g, args.mu, args.L, args.m, args.hmax, args.epsilon, args.xi0)
            except ValueError as exc:
                # covers invalid parameters, too-large epsilon and an empty search grid
                print(f"error: {exc}", file=sys.stderr)
                return EXIT_CONFIG
            sys.stdout.write(dump_json(out))
            return EXIT_OK
        if args.command == "verify":
            code, checks = verify_files(args.trajectory, args.config)
            for rep, hard in checks:
                print(rep.line() + ("" if hard else " (descriptive)"))
            return code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PositivityViolation as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
