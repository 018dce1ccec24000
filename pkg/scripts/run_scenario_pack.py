"""Run every scenario under scenarios/ and print one line per run.

Usage: python3 scripts/run_scenario_pack.py [--dir scenarios]
"""
import argparse
import sys
import time
from pathlib import Path

from spillfree.cli import load_scenario, run_scenario, run_sweep


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--dir", default=Path(__file__).resolve().parents[1] / "scenarios", type=Path)
    args = ap.parse_args()

    worst = 0
    for path in sorted(args.dir.glob("*.json")):
        t0 = time.perf_counter()
        cfg, _ = load_scenario(path)
        if cfg.sweep:
            code, summary = run_sweep(path)
            extra = ""
            if "refinement" in summary:
                extra = f"orders={summary['refinement']['orders']}"
            elif "r_ladder" in summary:
                extra = str(summary["r_ladder"]["trends"])
        else:
            res = run_scenario(cfg)
            code = res.exit_code
            failed = [c["name"] for c in res.summary["checks"] if c["hard"] and not c["passed"]]
            extra = f"steps={res.summary['steps']} failed={failed}"
        worst = max(worst, code)
        print(f"{path.stem:24s} exit={code} {time.perf_counter() - t0:7.2f}s  {extra}")
    return worst


if __name__ == "__main__":
    sys.exit(main())
