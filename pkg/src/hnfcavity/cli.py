"""Command-line interface: ``hnfcavity {run,sweep,gridstudy,tables,mms}``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import bench
from .config import CaseConfig, ConfigError, load_config, parse_config
from .mesh import MeshError
from .mms import CASES, InadmissibleParameters, run_mms_study
from .solver import NonConvergence

log = logging.getLogger("hnfcavity")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hnfcavity", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", type=Path, help="case configuration file")
        sp.add_argument("--out", type=Path, default=Path("out"), help="output directory")
        sp.add_argument("--workers", type=int, default=1, help="concurrent cases")

    common(sub.add_parser("run", help="solve a single case"))
    common(sub.add_parser("sweep", help="Cartesian sweep over the [sweep] axes"))
    gs = sub.add_parser("gridstudy", help="solve one case on several grids")
    common(gs)
    gs.add_argument("--grids", type=int, nargs="+", help="overrides [gridstudy] grids")
    tb = sub.add_parser("tables", help="reproduce the published Nusselt tables")
    common(tb, config=False)
    tb.add_argument("ids", type=int, nargs="*", default=[4], help="table ids 1-8 (default 4)")
    mm = sub.add_parser("mms", help="manufactured-solution convergence study")
    common(mm, config=False)
    mm.add_argument("--case", choices=sorted(CASES), default="trigonometric")
    mm.add_argument("--levels", type=int, default=4)
    mm.add_argument("--ra", type=float, default=100.0)
    mm.add_argument("--pr", type=float, default=1.0)
    return p


def _config(args) -> CaseConfig:
    if args.config is None:
        return parse_config("")
    return load_config(args.config)


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def main(argv: list[str] | None = None) -> int:
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and bench.EXIT_CONFIG
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _dispatch(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return bench.EXIT_CONFIG
    except (MeshError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return bench.EXIT_CONFIG
    except NonConvergence as exc:
        print(f"not converged: {exc}", file=sys.stderr)
        return bench.EXIT_NONCONVERGENCE
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return bench.EXIT_IO


def _dispatch(args) -> int:
    if args.command == "run":
        cfg = _config(args)
        status, _ = bench.run_case(cfg, args.out)
        return status
    if args.command == "sweep":
        cfg = _config(args)
        table = bench.run_sweep(cfg, workers=args.workers)
        text = table.to_csv()
        _write(args.out / f"sweep_{cfg.geometry.shape.value}.csv", text)
        for r in table.rows:
            print(r.summary_line() + ("" if r.converged else f"  [{r.status}]"))
        for v in table.violations:
            print(f"warning: {v}", file=sys.stderr)
        return bench.EXIT_OK if all(r.converged for r in table.rows) else bench.EXIT_NONCONVERGENCE
    if args.command == "gridstudy":
        cfg = _config(args)
        study = bench.run_grid_study(cfg, args.grids, workers=args.workers)
        _write(args.out / f"gridstudy_{cfg.geometry.shape.value}.csv", study.to_csv())
        for r in study.rows:
            print(r.summary_line())
        print(f"relative Nu change between the two finest grids: {study.relative_change():.6e}")
        return bench.EXIT_OK if all(r.converged for r in study.rows) else bench.EXIT_NONCONVERGENCE
    if args.command == "tables":
        rows = bench.reproduce_tables(args.ids, workers=args.workers)
        _write(args.out / "tables.csv", bench.tables_csv(rows))
        return bench.EXIT_OK if all(r.case.converged for r in rows) else bench.EXIT_NONCONVERGENCE
    if args.command == "mms":
        try:
            report = run_mms_study(CASES[args.case](), levels=args.levels, pr=args.pr, ra=args.ra)
        except InadmissibleParameters as exc:
            print(f"error: {exc}", file=sys.stderr)
            return bench.EXIT_CONFIG
        except NonConvergence as exc:
            partial = getattr(exc, "partial", None)
            if partial is not None:
                _write(args.out / f"mms_{args.case}.csv", partial.to_csv())
            raise
        _write(args.out / f"mms_{args.case}.csv", report.to_csv())
        print(report.to_csv(), end="")
        print(report.summary())
        return bench.EXIT_OK
    raise AssertionError(args.command)


if __name__ == "__main__":
    sys.exit(main())
