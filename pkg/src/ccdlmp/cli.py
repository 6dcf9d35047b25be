"""Command-line interface: ``run``, ``diff`` and ``check-fixtures``.

Exit codes: 0 when every enabled check passes, 1 when a check fails, 2 on
usage or stage errors. The conic backend is chosen by the environment
variable read in :mod:`ccdlmp.conic.backends`.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .grid import NetworkError, load_network
from .opf import ScenarioKind
from .reports import StageError, diff_runs, run_scenario, write_csv, write_reports


def _validate_spec(text: str) -> int:
    kind, _, count = text.partition(":")
    if kind != "mc" or not count:
        raise argparse.ArgumentTypeError(f"expected mc:<N>, got {text!r}")
    try:
        n = int(count)
    except ValueError:
        raise argparse.ArgumentTypeError(f"sample count must be an integer, got {count!r}") from None
    if n <= 0:
        raise argparse.ArgumentTypeError("sample count must be positive")
    return n


def _seed(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ccdlmp", description="Chance-constrained distribution prices")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="solve one scenario and write reports")
    r.add_argument("--network", required=True, help="network JSON path or bundled fixture name")
    r.add_argument("--scenario", required=True, choices=[k.value for k in ScenarioKind])
    r.add_argument("--flow-cc", choices=("on", "off"), default="off")
    r.add_argument("--loss-mode", choices=("paper", "corrected"), default="paper")
    r.add_argument("--validate", type=_validate_spec, default=0, metavar="mc:N")
    r.add_argument("--seed", type=_seed, default=0)
    r.add_argument("--out", type=Path, default=None, help="run directory (default: runs/<network>-<scenario>)")

    d = sub.add_parser("diff", help="per-node price differences between two runs")
    d.add_argument("--a", required=True, type=Path)
    d.add_argument("--b", required=True, type=Path)
    d.add_argument("--out", type=Path, default=None, help="write the table to this CSV file")

    sub.add_parser("check-fixtures", help="run the acceptance suite")
    return p


def cmd_run(args) -> int:
    try:
        network, unc = load_network(args.network)
    except (OSError, ValueError, NetworkError) as exc:
        print(f"error: [load] {exc}", file=sys.stderr)
        return 2
    try:
        run = run_scenario(network, unc, args.scenario, flow_cc=args.flow_cc == "on",
                           loss_mode=args.loss_mode, samples=args.validate, seed=args.seed)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out = args.out or Path("runs") / f"{network.name}-{args.scenario}"
    try:
        paths = write_reports(run, out)
    except OSError as exc:
        print(f"error: [report] {exc}", file=sys.stderr)
        return 2
    res = run.result
    print(f"{network.name} {args.scenario} flow-cc={args.flow_cc} seed={args.seed}: "
          f"objective {res.solution.objective:.6f}, gamma {res.gamma:.6f}")
    for i in network.nodes:
        print(f"  node {i:3d}  gP {res.gP[i]:9.5f}  alpha {res.alpha[i]:8.5f}  lambda_P {res.lambda_P[i]:10.4f}")
    for name, ok in run.checks().items():
        print(f"  [{'PASS' if ok else 'FAIL'}] {name}")
    moments = run.moments()
    if moments is not None:
        print(f"  [info] expected cost rel. error {moments['cost_rel_error']:.2e}, "
              f"voltage std rel. error {moments['u_std_rel_error']:.2e}")
    print("  timings: " + ", ".join(f"{k} {v:.3f}s" for k, v in run.timings.items()))
    print(f"  wrote {len(paths)} files to {out}")
    return 0 if run.passed else 1


def cmd_diff(args) -> int:
    try:
        diff = diff_runs(args.a, args.b)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"{diff.network}: lambda_P({diff.scenario_b}) - lambda_P({diff.scenario_a})")
    for row in diff.rows():
        print(f"  node {row['node']:3d}  {row['lambda_a']:10.4f}  {row['lambda_b']:10.4f}  {row['delta']:+10.4f}")
    if args.out is not None:
        write_csv(args.out, diff.rows())
    return 0


def cmd_check(args) -> int:
    from .acceptance import run_all

    results = run_all()
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} criteria passed or replaced")
    return 1 if failed else 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    handler = {"run": cmd_run, "diff": cmd_diff, "check-fixtures": cmd_check}[args.command]
    return handler(args)


if __name__ == "__main__":
    sys.exit(main())
