"""Command-line entry point.

Exit status: 0 on success, 1 on invalid input, 2 when the request is
well-formed but numerically infeasible. Failures print a JSON object with an
``error`` key on stderr. Every run that writes files also writes a manifest
of the fully resolved arguments; ``ceofl replay MANIFEST`` re-runs it.
"""

import argparse
import io
import json
import os
import pathlib
import sys
import tempfile

import numpy as np

from . import ceo_sim, errors, fl_planner, fl_sim, rate_region
from .units import RateUnit

MANIFEST_VERSION = 1


class UsageError(errors.ValidationError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _atomic_write(path, text):
    path = pathlib.Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _grid(text):
    try:
        lo, hi, n = text.split(":")
        return np.linspace(float(lo), float(hi), int(n))
    except ValueError:
        raise UsageError(f"grid must look like lo:hi:n, got {text!r}") from None


def _floats(text):
    return [float(v) for v in str(text).split(",") if v.strip()]


def _load_spec(args):
    """Spec from ``--spec`` or from the inline identical-instance flags."""
    file_unit = None
    if args.spec:
        spec, file_unit = rate_region.load_spec(args.spec)
    else:
        if args.K is None or args.sigma_x2 is None or args.sigma_n2 is None:
            raise UsageError("give --spec or all of --K, --sigma-x2, --sigma-n2")
        P = args.P or 1
        sx = _floats(args.sigma_x2)
        sn = _floats(args.sigma_n2)
        sx = sx * P if len(sx) == 1 else sx
        if len(sn) == 1:
            sn = [[sn[0]] * P for _ in range(args.K)]
        elif len(sn) == args.K:
            sn = [[v] * P for v in sn]
        else:
            raise UsageError("--sigma-n2 takes one value or one per device")
        spec = rate_region.ProblemSpec(sx, sn)
    if args.unit is None:
        args.unit = (file_unit or RateUnit.BITS).value
    return spec


def _emit(args, payload, text=None):
    """Print JSON to stdout and write it to ``--out`` when given."""
    text = text if text is not None else json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if args.out:
        _atomic_write(args.out, text)
    sys.stdout.write(text)


def cmd_sumrate(args):
    spec = _load_spec(args)
    unit = RateUnit.parse(args.unit)
    if args.method == "numeric":
        res = rate_region.sum_rate_numeric(spec, args.D, unit)
    else:
        res = rate_region.sum_rate(spec, args.D, unit)
    _emit(args, res.to_dict())


def cmd_tradeoff(args):
    spec = _load_spec(args)
    results = rate_region.sweep_sum_rate(spec, _grid(args.d_grid), args.unit,
                                         workers=args.workers)
    buf = io.StringIO()
    rate_region.write_curve_csv(results, buf)
    _emit(args, None, buf.getvalue())


def cmd_region_check(args):
    spec = _load_spec(args)
    unit = RateUnit.parse(args.unit)
    cert = rate_region.sum_rate(spec, args.D, unit)
    R_kp = json.loads(args.rkp) if args.rkp else None
    point = rate_region.RatePoint(_floats(args.rates), unit, R_kp)
    verdict = rate_region.check_membership(spec, point, cert.allocation, cert.rates,
                                           search=not args.no_search,
                                           max_devices=args.max_devices)
    v = verdict.violation
    payload = {
        "verdict": "ACCEPT" if verdict.accepted else "REJECT",
        "unit": unit.value,
        "certificate": cert.to_dict(),
        "violation": None if v is None else {
            "kind": v.kind, "dimension": v.p,
            "subset": None if v.subset is None else list(v.subset),
            "device": v.device, "lhs": v.lhs, "rhs": v.rhs},
        "R_kp": None if verdict.R_kp is None else np.asarray(verdict.R_kp).tolist(),
    }
    _emit(args, payload)


def cmd_plan(args):
    convention = fl_planner.DConvention.parse(args.d_convention)
    print(f"D convention: {convention.value}", file=sys.stderr)
    params = fl_planner.ConvexProblemParams(args.A, args.L, args.epsilon)
    if args.schedule:
        schedule = fl_planner.VarianceSchedule.from_csv(args.schedule)
    else:
        if args.sigma_x2 is None or args.sigma_n2 is None:
            raise UsageError("give --schedule or both --sigma-x2 and --sigma-n2")
        schedule = fl_planner.VarianceSchedule.constant(float(args.sigma_x2),
                                                         float(args.sigma_n2))
    unit = RateUnit.parse(args.unit or "bits")
    args.unit = unit.value
    plan, curve = fl_planner.optimize_operating_point(
        params, schedule, args.K, args.P or 1, _grid(args.d_grid), convention, unit)
    if args.curve_out:
        buf = io.StringIO()
        fl_planner.write_curve_csv(curve, buf)
        _atomic_write(args.curve_out, buf.getvalue())
    _emit(args, plan.to_dict())


def cmd_simulate_ceo(args):
    spec = _load_spec(args)
    cert = rate_region.sum_rate(spec, args.D, RateUnit.NATS)
    if args.dither:
        reports = ceo_sim.simulate_dithered_quantizer(spec, cert.rates, args.n, args.seed,
                                                      workers=args.workers)
    else:
        reports = ceo_sim.simulate_ceo(spec, cert.rates, args.n, args.seed, workers=args.workers)
    _emit(args, [r.to_dict() for r in reports])


def cmd_simulate_fl(args):
    problem = fl_sim.make_problem(args.problem, args.P or 5, args.cond, seed=args.seed)
    devices = fl_sim.make_devices(args.K or 4, args.batch, args.sigma2)
    config = fl_sim.EstimatorConfig.parse(args.estimator, devices, problem.P)
    seeds = list(range(args.seed, args.seed + args.seeds))
    traces = fl_sim.run_many(problem, devices, config, args.T, seeds, workers=args.workers)
    if args.out:
        out = pathlib.Path(args.out)
        for tr in traces:
            path = out if len(traces) == 1 else out.with_name(f"{out.stem}_seed{tr.seed}{out.suffix}")
            buf = io.StringIO()
            tr.write_csv(buf)
            _atomic_write(path, buf.getvalue())
    D = config.variance_bound(devices, problem.P)
    params = fl_planner.ConvexProblemParams(problem.A, problem.L, 1.0)
    avg = [tr.avg_subopt for tr in traces]
    summary = {
        "problem": args.problem, "estimator": args.estimator, "T": args.T,
        "seeds": seeds, "variance_bound": D, "step": traces[0].step,
        "avg_subopt": avg, "mean_avg_subopt": float(np.mean(avg)),
        "convergence_bound": fl_planner.convergence_bound(params, D, args.T),
        "total_bits": [float(np.nansum(tr.bits)) for tr in traces],
        "label": traces[0].label,
    }
    sys.stdout.write(json.dumps(summary, indent=2, sort_keys=True) + "\n")


def _add_spec_flags(p):
    p.add_argument("--spec", help="JSON or TOML problem spec")
    p.add_argument("--P", type=int, help="dimensions (inline identical instance)")
    p.add_argument("--K", type=int, help="devices (inline identical instance)")
    p.add_argument("--sigma-x2", help="source variance(s), comma separated")
    p.add_argument("--sigma-n2", help="noise variance(s), one or one per device")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--unit", choices=["bits", "nats"], default=None)
    common.add_argument("--out", help="output file (stdout is always written)")
    common.add_argument("--manifest", help="manifest path (default: OUT.manifest.json)")
    common.add_argument("--workers", type=int, default=1)

    parser = _Parser(prog="ceofl", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("sumrate", parents=[common], help="minimum sum rate at distortion D")
    _add_spec_flags(p)
    p.add_argument("--D", type=float, required=True, help="total distortion")
    p.add_argument("--method", choices=["auto", "numeric"], default="auto")
    p.set_defaults(func=cmd_sumrate)

    p = sub.add_parser("tradeoff", parents=[common], help="sum rate over a distortion grid")
    _add_spec_flags(p)
    p.add_argument("--d-grid", required=True, help="lo:hi:n total-distortion grid")
    p.set_defaults(func=cmd_tradeoff)

    p = sub.add_parser("region-check", parents=[common], help="rate-region membership")
    _add_spec_flags(p)
    p.add_argument("--D", type=float, required=True)
    p.add_argument("--rates", required=True, help="per-device rates R_k, comma separated")
    p.add_argument("--rkp", help="JSON K x P decomposition R_kp")
    p.add_argument("--no-search", action="store_true", help="require --rkp")
    p.add_argument("--max-devices", type=int, default=rate_region.MAX_DEVICES)
    p.set_defaults(func=cmd_region_check)

    p = sub.add_parser("plan", parents=[common], help="iterations/bits trade-off")
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--A", type=float, default=1.0)
    p.add_argument("--L", type=float, default=1.0)
    p.add_argument("--K", type=int, required=True)
    p.add_argument("--P", type=int, default=1)
    p.add_argument("--sigma-x2")
    p.add_argument("--sigma-n2")
    p.add_argument("--d-convention", choices=["per-dim", "total"], default="per-dim")
    p.add_argument("--d-grid", required=True, help="lo:hi:n")
    p.add_argument("--schedule", help="CSV with columns t,sigma_x2,sigma_n2")
    p.add_argument("--curve-out", help="CSV trade-off curve D,T,bits_per_iter,total_bits")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("simulate-ceo", parents=[common], help="Monte Carlo achievability check")
    _add_spec_flags(p)
    p.add_argument("--D", type=float, required=True)
    p.add_argument("--n", type=int, default=100_000)
    p.add_argument("--dither", action="store_true", help="dithered quantizer instead of "
                   "Gaussian test channels")
    p.set_defaults(func=cmd_simulate_ceo)

    p = sub.add_parser("simulate-fl", parents=[common], help="federated SGD simulation")
    p.add_argument("--problem", choices=["quadratic", "logistic"], default="quadratic")
    p.add_argument("--P", type=int, default=5)
    p.add_argument("--cond", type=float, default=1.0)
    p.add_argument("--K", type=int, default=4)
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--sigma2", type=float, default=0.1, help="per-sample gradient noise variance")
    p.add_argument("--estimator", default="noise:0.5",
                   help="exact, mean, quantized:D or noise:D")
    p.add_argument("--T", type=int, required=True)
    p.add_argument("--seeds", type=int, default=1)
    p.set_defaults(func=cmd_simulate_fl)

    p = sub.add_parser("replay", help="re-run from a manifest")
    p.add_argument("manifest_path")
    p.set_defaults(func=None)
    return parser


def _write_manifest(args):
    target = args.manifest or (f"{args.out}.manifest.json" if args.out else None)
    if not target:
        return
    resolved = {k: v for k, v in vars(args).items() if k not in ("func", "manifest")}
    doc = {"version": MANIFEST_VERSION, "args": resolved}
    _atomic_write(target, json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _replay(parser, path):
    doc = json.loads(pathlib.Path(path).read_text())
    resolved = doc["args"]
    # parse the subcommand with no flags to recover its handler, then overlay
    base = {"sumrate": ["--D", "1"], "tradeoff": ["--d-grid", "1:2:2"],
            "region-check": ["--D", "1", "--rates", "0"],
            "plan": ["--epsilon", "1", "--K", "1", "--d-grid", "1:2:2"],
            "simulate-ceo": ["--D", "1"], "simulate-fl": ["--T", "1"]}
    cmd = resolved["command"]
    args = parser.parse_args([cmd] + base[cmd])
    for k, v in resolved.items():
        setattr(args, k, v)
    args.manifest = None
    return args


def run(argv=None):
    """Parse ``argv``, dispatch, and return the exit status."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "replay":
            args = _replay(parser, args.manifest_path)
        args.func(args)
        _write_manifest(args)
        return 0
    except errors.InfeasibleError as exc:
        print(json.dumps(exc.to_dict()), file=sys.stderr)
        return 2
    except (errors.CeoflError, ValueError, OSError, KeyError) as exc:
        payload = exc.to_dict() if isinstance(exc, errors.CeoflError) else \
            {"error": type(exc).__name__, "message": str(exc)}
        print(json.dumps(payload), file=sys.stderr)
        return 1


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
