"""Command line interface.

Four workflows: ``calibrate`` a threshold, ``estimate`` a density from a
sample file, ``simulate`` replicated risk studies, and ``report`` summary
tables from study output.  Every run writes its outputs atomically and drops
a manifest (resolved configuration plus input digests) next to them; reruns
of the same manifest reproduce the outputs byte for byte.

Exit codes: 1 for parse/validation problems, 2 when calibration is
infeasible, 3 when a non-finite number shows up where it must not.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
import tempfile

import numpy as np

from adahaar import __version__
from adahaar.calibrate import CalibrationConfig, calibrate, load_record, save_record
from adahaar.density import builtin_density, builtin_names, load_density
from adahaar.dyadic import build_pyramid, max_level, read_sample
from adahaar.errors import CalibrationInfeasibleError, NumericError, ValidationError
from adahaar.selector import select_and_estimate
from adahaar.studies import RiskReport, StudyConfig, run_risk_study

__all__ = ["main"]


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(message)


def _atomic_write(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-adahaar-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(out_path: str, subcommand: str, resolved: dict,
                    inputs: list[str]) -> None:
    manifest = {
        "tool": "adahaar",
        "version": __version__,
        "subcommand": subcommand,
        "resolved": resolved,
        "inputs": {p: _sha256(p) for p in inputs},
        "outputs": [os.path.basename(out_path)],
    }
    _atomic_write(out_path + ".manifest.json",
                  json.dumps(manifest, sort_keys=True, indent=2) + "\n")


def _require_finite(values, what: str) -> None:
    arr = np.asarray(values, dtype=np.float64)
    if arr.size and not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite value in {what}")


def _resolve_density(spec: str):
    if os.path.exists(spec):
        return load_density(spec), [spec]
    if spec in builtin_names():
        return builtin_density(spec), []
    raise ValidationError(
        f"density {spec!r} is neither a file nor a built-in "
        f"({', '.join(builtin_names())})"
    )


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


# ---------------------------------------------------------------------------


def cmd_calibrate(args) -> None:
    n = args.n
    j_max = args.jmax if args.jmax is not None else max_level(n, args.d)
    s = math.sqrt(math.log(n))
    zeta_min = args.zeta_min if args.zeta_min is not None else 0.1 * s
    zeta_max = args.zeta_max if args.zeta_max is not None else 10.0 * s
    if not 0 < zeta_min < zeta_max:
        raise ValidationError("need 0 < zeta-min < zeta-max")
    config = CalibrationConfig(
        n=n, j_max=j_max, alpha=args.alpha, d=args.d, delta=args.delta,
        big_m=args.M, p_points=args.p_points, reps=args.reps, seed=args.seed,
        zeta_grid=tuple(float(z) for z in np.geomspace(zeta_min, zeta_max, args.zeta_points)),
    )
    record = calibrate(config, threads=args.threads)
    _require_finite([record.zeta_n], "calibrated threshold")
    save_record(record, args.out)
    _write_manifest(args.out, "calibrate", _resolved(args), [])
    print(f"zeta_n = {record.zeta_n!r} (bound {record.bound:g}) -> {args.out}")


def _zeta_from_args(args, n: int) -> tuple[float, list[str]]:
    if (args.thresholds is None) == (args.kappa is None):
        raise ValidationError("exactly one of --thresholds or --kappa is required")
    if args.kappa is not None:
        return args.kappa * math.sqrt(math.log(n)), []
    record = load_record(args.thresholds)
    return record.zeta_n, [args.thresholds]


def cmd_estimate(args) -> None:
    sample = read_sample(args.data)
    n = sample.size
    j_max = args.jmax if args.jmax is not None else max_level(n, args.d)
    zeta, extra_inputs = _zeta_from_args(args, n)
    pyramid = build_pyramid(sample, j_max, d=args.d)
    selection, fhat = select_and_estimate(pyramid, args.start_level, zeta)
    _require_finite(fhat, "estimates")
    rows = []
    for m in range(2**j_max):
        rows.append((m, math.ldexp(m, -j_max), math.ldexp(m + 1, -j_max),
                     int(selection.jhat[m]), float(fhat[m])))
    _atomic_write(args.out, _csv_text(("bin_index", "x_left", "x_right", "jhat", "fhat"), rows))
    _write_manifest(args.out, "estimate", _resolved(args), [args.data] + extra_inputs)
    print(f"{2**j_max} bins (j_max={j_max}, zeta={zeta!r}, "
          f"{pyramid.n_dropped} points outside (0,1]) -> {args.out}")


def cmd_simulate(args) -> None:
    (density, profile), inputs = _resolve_density(args.density)
    ns = tuple(sorted(set(args.n)))
    thresholds = None
    if args.thresholds is not None:
        record = load_record(args.thresholds)
        if len(ns) != 1 or ns[0] != record.config.n:
            raise ValidationError(
                "--thresholds applies to a single --n equal to the record's n; "
                "use --kappa for sweeps"
            )
        thresholds = {ns[0]: record.zeta_n}
        inputs = inputs + [args.thresholds]
    if (thresholds is None) == (args.kappa is None):
        raise ValidationError("exactly one of --thresholds or --kappa is required")
    config = StudyConfig(
        density=density, profile=profile, n_list=ns, reps=args.reps,
        seed=args.seed, Delta=args.Delta, kappa=args.kappa,
        thresholds=thresholds, d=args.d, probes=tuple(args.probe or ()),
        start_level=args.start_level, variant=args.variant, threads=args.threads,
    )
    report = run_risk_study(config)
    _require_finite([v for *_, v in report.rows], "study metrics")
    _atomic_write(args.out, _csv_text(("n", "replicate", "metric", "value"), report.rows))
    _write_manifest(args.out, "simulate", _resolved(args), inputs)
    print(f"{len(report.rows)} rows ({len(ns)} sample sizes x {args.reps} replicates) -> {args.out}")


def cmd_report(args) -> None:
    report = RiskReport()
    for path in args.inputs:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != ["n", "replicate", "metric", "value"]:
                raise ValidationError(f"{path}: not a study CSV (bad header {header})")
            for lineno, row in enumerate(reader, start=2):
                try:
                    n, rep, metric, value = row
                    report.append(int(n), int(rep), metric, float(value))
                except (ValueError, TypeError):
                    raise ValidationError(f"{path}: line {lineno}: bad row {row!r}") from None
    if not report.rows:
        raise ValidationError("no rows in any input")
    rows = [("stats", n, metric, count, mean, p50, p95, "")
            for n, metric, count, mean, p50, p95 in report.summary()]
    if len(report.n_values()) >= 2:
        for metric in report.metrics():
            if metric.startswith("err@"):
                try:
                    slope, _ = report.slope(metric)
                except ValidationError:
                    continue  # a zero mean leaves nothing to fit
                rows.append(("slope", "", metric, "", "", "", "", slope))
    _atomic_write(args.out, _csv_text(
        ("kind", "n", "metric", "count", "mean", "p50", "p95", "slope"), rows))
    _write_manifest(args.out, "report", _resolved(args), list(args.inputs))
    print(f"{len(rows)} summary rows -> {args.out}")


# ---------------------------------------------------------------------------


def _resolved(args) -> dict:
    skip = {"func"}
    out = {}
    for key, value in sorted(vars(args).items()):
        if key in skip:
            continue
        out[key] = list(value) if isinstance(value, (list, tuple)) else value
    return out


def build_parser() -> _Parser:
    parser = _Parser(prog="adahaar", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=f"adahaar {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                        help="cap worker parallelism (results do not depend on it)")

    p = sub.add_parser("calibrate", parents=[common],
                       help="calibrate the selection threshold by simulation")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--jmax", type=int, default=None,
                   help="finest level (default: largest admissible for n and d)")
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--d", type=float, default=1.0)
    p.add_argument("--delta", type=float, default=0.1)
    p.add_argument("--M", type=float, default=10.0)
    p.add_argument("--reps", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--zeta-min", dest="zeta_min", type=float, default=None)
    p.add_argument("--zeta-max", dest="zeta_max", type=float, default=None)
    p.add_argument("--zeta-points", dest="zeta_points", type=int, default=64)
    p.add_argument("--p-points", dest="p_points", type=int, default=9)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("estimate", parents=[common],
                       help="adaptive density estimate from a sample file")
    p.add_argument("--data", required=True, help="newline-separated decimal literals")
    p.add_argument("--thresholds", default=None, help="calibrated threshold record")
    p.add_argument("--kappa", type=float, default=None,
                   help="use the rule zeta = kappa sqrt(log n) instead of a record")
    p.add_argument("--jmax", type=int, default=None)
    p.add_argument("--start-level", dest="start_level", type=int, default=0)
    p.add_argument("--d", type=float, default=1.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("simulate", parents=[common],
                       help="replicated risk study on an analytic density")
    p.add_argument("--density", required=True,
                   help=f"density file or built-in name ({', '.join(builtin_names())})")
    p.add_argument("--n", type=int, action="append", required=True,
                   help="sample size (repeat for sweeps)")
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--thresholds", default=None)
    p.add_argument("--kappa", type=float, default=None)
    p.add_argument("--Delta", type=float, default=0.4)
    p.add_argument("--variant", choices=("local-bias", "holder"), default="local-bias")
    p.add_argument("--probe", type=float, action="append",
                   help="pointwise error probe in (0, 1] (repeatable)")
    p.add_argument("--start-level", dest="start_level", type=int, default=0)
    p.add_argument("--d", type=float, default=1.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", parents=[common],
                       help="summary percentiles and rate slopes from study CSVs")
    p.add_argument("--in", dest="inputs", action="append", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except CalibrationInfeasibleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
