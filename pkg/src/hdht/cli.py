"""Command-line interface: ``hdht {test,ggm,simulate,validate}``.

Exit codes: 0 accept (or success), 10 reject, 2 usage or input error,
1 internal invariant failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from hdht import __version__
from hdht import calibrate as cal
from hdht import simulate as sim
from hdht.collection import LASSO, S1, SLEQK
from hdht.data import TwoSampleData
from hdht.engine import TestConfig, run_test
from hdht.errors import HDHTError
from hdht.ggm import GgmSamples, ggm_test
from hdht.validate import FAULTS, run_checks

EXIT_ACCEPT = 0
EXIT_INTERNAL = 1
EXIT_INPUT = 2
EXIT_REJECT = 10

_COLLECTIONS = {"lasso": LASSO, "s1": S1, "sleqk": SLEQK}
FULL_SCALE_METHODS = (
    "bonf-s1",
    "perm-s1",
    "bonf-lasso",
    "perm-lasso",
    "fisher-bonf-s1",
    "fisher-perm-s1",
    "fisher-bonf-lasso",
    "fisher-perm-lasso",
)


class InputError(Exception):
    """Bad user input; reported on stderr with exit code 2."""


# -- CSV ------------------------------------------------------------------------


def _is_number(token: str) -> bool:
    try:
        float(token)
    except ValueError:
        return False
    return True


def read_matrix(path: str | Path) -> tuple[np.ndarray, list[str] | None]:
    """Read a numeric CSV with an optional header row.

    The first row is a header when any of its cells is not a number.
    Errors name the file, the 1-based row and the 1-based column.
    """
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            rows = [row for row in csv.reader(fh)]
    except OSError as exc:
        raise InputError(f"{path}: cannot read ({exc.strerror})") from exc
    rows = [r for r in rows if any(cell.strip() for cell in r)]
    if not rows:
        raise InputError(f"{path}: file is empty")
    header = None
    start = 0
    if not all(_is_number(c.strip()) for c in rows[0]):
        header = [c.strip() for c in rows[0]]
        start = 1
    if len(rows) <= start:
        raise InputError(f"{path}: no data rows")
    width = len(rows[start])
    if header is not None and len(header) != width:
        raise InputError(f"{path}: header has {len(header)} columns but row {start + 1} has {width}")
    out = np.empty((len(rows) - start, width))
    for i, row in enumerate(rows[start:], start=start):
        if len(row) != width:
            raise InputError(f"{path}: row {i + 1} has {len(row)} columns, expected {width}")
        for j, cell in enumerate(row):
            token = cell.strip()
            if token == "":
                raise InputError(f"{path}: missing value at row {i + 1}, column {j + 1}")
            try:
                value = float(token)
            except ValueError:
                raise InputError(
                    f"{path}: non-numeric value {token!r} at row {i + 1}, column {j + 1}"
                ) from None
            if not np.isfinite(value):
                raise InputError(f"{path}: non-finite value at row {i + 1}, column {j + 1}")
            out[i - start, j] = value
    return out, header


def read_vector(path: str | Path) -> np.ndarray:
    m, _ = read_matrix(path)
    if m.shape[1] != 1:
        raise InputError(f"{path}: expected a single column, found {m.shape[1]}")
    return m[:, 0]


def write_matrix(path: str | Path, m: np.ndarray, header: Sequence[str] | None = None) -> None:
    """Write a CSV that :func:`read_matrix` reads back bit-exactly."""
    m = np.atleast_2d(np.asarray(m, dtype=float))
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if header is not None:
            w.writerow(header)
        for row in m:
            w.writerow([repr(float(v)) for v in row])


def _write_json(path: Path, tree) -> None:
    path.write_text(json.dumps(tree, indent=2, sort_keys=True, allow_nan=False) + "\n")


# -- arguments ------------------------------------------------------------------


def _alpha(text: str) -> float:
    v = float(text)
    if not 0.0 < v < 1.0:
        raise argparse.ArgumentTypeError("alpha must lie in (0, 1)")
    return v


def _nonneg_int(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError("must be nonnegative")
    return v


def _add_test_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--alpha", type=_alpha, default=0.05, help="level (default 0.05)")
    p.add_argument(
        "--calibration", choices=(cal.PERMUTATION, cal.BONFERRONI), default=cal.PERMUTATION
    )
    p.add_argument("--collection", choices=sorted(_COLLECTIONS), default="lasso")
    p.add_argument("--k", type=int, default=None, help="maximal subset size for --collection sleqk")
    p.add_argument("--b", type=int, default=100, help="permutation draws (default 100)")
    p.add_argument("--seed", type=_nonneg_int, default=0)
    p.add_argument("--d-max", type=int, default=None, help="default floor(min(n1, n2) / 2)")
    p.add_argument("--statistic", choices=(cal.CLR, cal.FISHER), default=cal.CLR)
    p.add_argument("--threads", type=int, default=None, help="worker processes (env HDHT_THREADS)")
    p.add_argument("--out", required=True, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hdht", description="Two-sample tests for high-dimensional regressions and graphical models."
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    t = sub.add_parser("test", help="test equality of two regression samples")
    for name in ("x1", "y1", "x2", "y2"):
        t.add_argument(name, help=f"{name} CSV")
    _add_test_flags(t)

    g = sub.add_parser("ggm", help="compare the graphical models of two samples")
    g.add_argument("z1", help="sample 1 CSV (rows observations, header node labels)")
    g.add_argument("z2", help="sample 2 CSV")
    _add_test_flags(g)

    s = sub.add_parser("simulate", help="Monte-Carlo level and power study")
    s.add_argument("--scenario", nargs="+", default=["H00"], choices=sorted(sim.SCENARIOS))
    s.add_argument(
        "--covariance",
        nargs="+",
        default=[sim.IDENTITY],
        choices=(sim.IDENTITY, sim.POWER_DECAY, sim.CLUSTERED_GGM),
    )
    s.add_argument("--n", type=int, nargs="+", default=None)
    s.add_argument("--p", type=int, nargs="+", default=None)
    s.add_argument("--r", type=float, nargs="+", default=[0.0])
    s.add_argument("--reps", type=int, default=None)
    s.add_argument("--method", nargs="+", default=None, help="e.g. perm-lasso bonf-s1 fisher-perm-lasso")
    s.add_argument("--alpha", type=_alpha, default=0.05)
    s.add_argument("--b", type=int, default=100)
    s.add_argument("--seed", type=_nonneg_int, default=0)
    s.add_argument("--rho", type=float, default=0.75)
    s.add_argument("--intra", type=float, default=0.05)
    s.add_argument(
        "--full-scale",
        action="store_true",
        help="p=200, 1000 reps, n in {25, 50, 100}; prints the level table",
    )
    s.add_argument("--timing", action="store_true", help="fill mean_runtime_ms (not reproducible)")
    s.add_argument(
        "--emit-data", action="store_true", help="also write the first replicate of each cell as CSV"
    )
    s.add_argument("--threads", type=int, default=None)
    s.add_argument("--out", required=True, help="output directory")

    v = sub.add_parser("validate", help="run the fast invariant checks")
    v.add_argument("--seed", type=_nonneg_int, default=0)
    v.add_argument("--inject-fault", choices=FAULTS, default=None, help=argparse.SUPPRESS)
    return parser


def _config(args) -> TestConfig:
    return TestConfig(
        collection=_COLLECTIONS[args.collection],
        calibration=args.calibration,
        alpha=args.alpha,
        b=args.b,
        seed=args.seed,
        d_max=args.d_max,
        k=args.k,
        statistic=args.statistic,
    )


def _out_dir(path: str) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise InputError(f"{out}: cannot create output directory ({exc.strerror})") from exc
    return out


# -- commands -------------------------------------------------------------------


def cmd_test(args) -> int:
    x1, h1 = read_matrix(args.x1)
    x2, h2 = read_matrix(args.x2)
    y1 = read_vector(args.y1)
    y2 = read_vector(args.y2)
    if x1.shape[1] != x2.shape[1]:
        raise InputError(f"{args.x2}: has {x2.shape[1]} columns but {args.x1} has {x1.shape[1]}")
    if y1.shape[0] != x1.shape[0]:
        raise InputError(f"{args.y1}: has {y1.shape[0]} rows but {args.x1} has {x1.shape[0]}")
    if y2.shape[0] != x2.shape[0]:
        raise InputError(f"{args.y2}: has {y2.shape[0]} rows but {args.x2} has {x2.shape[0]}")
    config = _config(args)
    data = TwoSampleData(x1, y1, x2, y2, labels=h1 or h2)
    report = run_test(data, config, threads=args.threads)
    out = _out_dir(args.out)
    _write_json(out / "report.json", report.to_dict())
    print(f"reject={str(report.reject).lower()} empirical_p={report.empirical_p}")
    return EXIT_REJECT if report.reject else EXIT_ACCEPT


def cmd_ggm(args) -> int:
    z1, h1 = read_matrix(args.z1)
    z2, h2 = read_matrix(args.z2)
    if z1.shape[1] != z2.shape[1]:
        raise InputError(f"{args.z2}: has {z2.shape[1]} columns but {args.z1} has {z1.shape[1]}")
    if z1.shape[1] < 2:
        raise InputError(f"{args.z1}: at least two nodes (columns) are needed")
    if h1 is not None and h2 is not None and h1 != h2:
        raise InputError(f"{args.z2}: header differs from {args.z1}")
    config = _config(args)
    report = ggm_test(GgmSamples(z1, z2, labels=h1 or h2), config, threads=args.threads)
    out = _out_dir(args.out)
    _write_json(out / "ggm_report.json", report.to_dict())
    flagged = ",".join(report.labels[i] for i in report.flagged_nodes)
    print(f"global_reject={str(report.global_reject).lower()} flagged_nodes={flagged}")
    return EXIT_REJECT if report.global_reject else EXIT_ACCEPT


def cmd_simulate(args) -> int:
    ns = args.n or ([25, 50, 100] if args.full_scale else [25])
    ps = args.p or ([200] if args.full_scale else [50])
    reps = args.reps or (1000 if args.full_scale else 200)
    methods = args.method or (list(FULL_SCALE_METHODS) if args.full_scale else ["perm-lasso"])
    covs = [
        sim.CovarianceSpec(kind, rho=args.rho, intra=args.intra) if kind != sim.IDENTITY else sim.CovarianceSpec()
        for kind in args.covariance
    ]
    try:
        for m in methods:
            sim.method_config(m, args.alpha, args.b)
        for sc in args.scenario:
            for n in ns:
                for p in ps:
                    sim.make_scenario(sc, n, p, 0.0)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    cells = sim.grid(args.scenario, covs, ns, ps, args.r)
    out = _out_dir(args.out)
    if args.emit_data:
        for ci, cell in enumerate(cells):
            data = sim.replicate_data(cell, args.seed, ci, 0)
            for name in ("x1", "y1", "x2", "y2"):
                a = getattr(data, name)
                write_matrix(out / f"cell{ci}_{name}.csv", a.reshape(a.shape[0], -1))
    rows = sim.run_experiment(
        cells, methods, reps, args.alpha, args.seed, args.b, args.threads, timing=args.timing
    )
    (out / "results.csv").write_text(sim.rows_to_csv(rows))
    if args.full_scale:
        table = sim.level_table([r for r in rows if r.scenario in ("H00", "H0")])
        (out / "level_table.txt").write_text(table + "\n", encoding="utf-8")
        print(table)
    print(f"wrote {len(rows)} rows to {out / 'results.csv'}")
    return EXIT_ACCEPT


def cmd_validate(args) -> int:
    results = run_checks(args.seed, args.inject_fault)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name}: {r.detail}")
    return EXIT_ACCEPT if all(r.passed for r in results) else EXIT_INTERNAL


COMMANDS = {"test": cmd_test, "ggm": cmd_ggm, "simulate": cmd_simulate, "validate": cmd_validate}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_ACCEPT
    try:
        return COMMANDS[args.command](args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (HDHTError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
