"""Command line interface: ``fpaccel run|spectrum|table|gmres-compare``.

Exit status: 0 success, 2 invalid config or arguments, 3 solver divergence,
4 precondition failure (``x*`` not a fixed point).
"""

import os

# cap BLAS threads before numpy loads
_threads = os.environ.get("FPACCEL_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

import argparse  # noqa: E402
import json  # noqa: E402
import sys  # noqa: E402

from . import lab  # noqa: E402
from .errors import PreconditionError  # noqa: E402


def _emit(text, out):
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _parser():
    ap = argparse.ArgumentParser(prog="fpaccel", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run the configured methods and write traces and a report")
    p.add_argument("config")

    p = sub.add_parser("spectrum", help="spectra and closed-form bounds at x*")
    p.add_argument("config")
    p.add_argument("--map", choices=("als", "sd"), default="als")
    p.add_argument("--method", choices=("saa1", "sngmresr1"), default="saa1")
    p.add_argument("--xstar", help="factor file of a refined fixed point")
    p.add_argument("--alpha", type=float, help="SD step (default: optimal 2/(L+ell))")
    p.add_argument("--out", help="write JSON here instead of stdout")

    p = sub.add_parser("table", help="CSV tables of theory and measured factors")
    p.add_argument("kind", choices=lab.TABLE_KINDS)
    p.add_argument("config", nargs="?")
    p.add_argument("--kappa", type=float, help="sd_factors: theory row for this kappa_bar only")
    p.add_argument("--out")

    p = sub.add_parser("gmres-compare", help="GMRES vs AA(inf)/NGMRES(inf) with the FOV bound")
    p.add_argument("config")
    p.add_argument("--max-iter", type=int)
    p.add_argument("--out")
    return ap


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        config = lab.load_config(args.config) if getattr(args, "config", None) else None
        if args.command == "run":
            report, status = lab.cmd_run(config)
            for row in report["methods"]:
                print(f"{row['name']}: status={row['status']} iterations={row['iterations']} "
                      f"rho_hat={row.get('rho_hat')} theory={row['theory_rho']}")
            if status == 3:
                print("error: a method diverged; partial traces were written", file=sys.stderr)
            return status
        if args.command == "spectrum":
            res = lab.cmd_spectrum(config, args.map, args.method, args.xstar, args.alpha)
            _emit(json.dumps(res, indent=1, sort_keys=True) + "\n", args.out)
            return 0
        if args.command == "table":
            if config is None and not (args.kind == "sd_factors" and args.kappa is not None):
                print("error: this table needs a config", file=sys.stderr)
                return 2
            header, rows = lab.cmd_table(args.kind, config, args.kappa)
            _emit(lab.format_csv(header, rows), args.out)
            return 0
        if args.command == "gmres-compare":
            header, rows, summary = lab.cmd_gmres_compare(config, args.max_iter)
            _emit(lab.format_csv(header, rows), args.out)
            print(json.dumps(summary, sort_keys=True), file=sys.stderr)
            return 0
    except lab.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except PreconditionError as exc:
        print(f"precondition failed: {exc}", file=sys.stderr)
        return 4
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 2


if __name__ == "__main__":
    sys.exit(main())
