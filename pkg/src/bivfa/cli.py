"""Command-line front end: ``generate``, ``reference`` and ``solve``.

Exit codes of ``solve``: 0 converged, 2 safeguard triggered, 3 iteration
cap reached, 1 missing or invalid inputs, 4 solver failure. With
``--sweep`` the first non-zero code in sweep order is returned.
"""

from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

from . import io
from .errors import BivfaError, ConfigurationError, ReferenceUnavailableError
from .problems import InstanceSpec, build_instance, generate_data, reference_solve
from .solver import ExitKind, solve

log = logging.getLogger("bivfa")

EXIT_CODES = {ExitKind.CONVERGED: 0, ExitKind.SAFEGUARD: 2, ExitKind.ITERATION_CAP: 3}
EXIT_MISSING = 1
EXIT_FAILURE = 4

_FAMILIES = {"iep": "IEP", "lrp": "LRP", "lrpbc": "LRPBC"}


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bivfa", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a generated instance (CSV matrices + manifest)")
    g.add_argument("--family", required=True, type=str.lower, choices=sorted(_FAMILIES))
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--m", type=int, default=None)
    g.add_argument("--rank-deficiency", type=int, default=0)
    g.add_argument("--noise-sigma", type=float, default=None)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--r1", type=float, default=10.0)
    g.add_argument("--r2", type=float, default=5.0)
    g.add_argument("--eps", type=float, default=None, help="record a solver tolerance in the manifest")
    g.add_argument("--out", type=Path, default=None,
                   help="output directory (default $BIVFA_OUTPUT_DIR or ./bivfa-output)")

    r = sub.add_parser("reference", help="compute g*, f*, p* with the independent oracle")
    r.add_argument("manifest", type=Path)
    r.add_argument("--out", type=Path, default=None, help="reference file (default reference.json)")
    r.add_argument("--tol", type=float, default=1e-10)
    r.add_argument("--relaxation", type=float, default=1e-10)
    r.add_argument("--solver", default="CLARABEL")

    s = sub.add_parser("solve", help="run the bilevel solver and write a trace and a report")
    s.add_argument("manifest", type=Path)
    s.add_argument("--reference", type=Path, default=None,
                   help="reference file for gap columns (default: the manifest's 'reference')")
    s.add_argument("--eps", type=float, default=None)
    s.add_argument("--Delta1", type=float, default=None)
    s.add_argument("--D", type=float, default=None)
    s.add_argument("--B-f", dest="B_f", type=float, default=None, help="floor for B_f")
    s.add_argument("--b-init", dest="b_init", type=float, default=None)
    s.add_argument("--max-outer-iters", dest="max_outer_iters", type=int, default=None)
    s.add_argument("--granularity", choices=("outer", "inner"), default="outer")
    s.add_argument("--wall-clock", action="store_true",
                   help="second trace column is elapsed seconds instead of oracle queries")
    s.add_argument("--sweep", default=None, metavar="eps=V1,V2,...",
                   help="run one solve per value on worker threads")
    s.add_argument("--threads", type=int, default=None)
    s.add_argument("--out", type=Path, default=None,
                   help="output directory (default $BIVFA_OUTPUT_DIR or the manifest's directory)")
    return p


def _cmd_generate(args) -> int:
    spec = InstanceSpec(_FAMILIES[args.family], args.n, args.m, args.rank_deficiency,
                        args.noise_sigma, args.seed, args.r1, args.r2)
    data = generate_data(spec)
    out = args.out if args.out is not None else io.default_output_dir("bivfa-output")
    extra = {"solver": {"eps": args.eps}} if args.eps is not None else None
    path = io.save_instance(data, out, extra)
    print(path)
    return 0


def _cmd_reference(args) -> int:
    manifest = io.load_manifest(args.manifest)
    data = io.load_instance(manifest, args.manifest.parent)
    out = args.out if args.out is not None else args.manifest.parent / "reference.json"
    try:
        ref = reference_solve(data, tol=args.tol, relaxation=args.relaxation, solver=args.solver)
        io.write_reference(out, ref)
    except BaseException:
        if out.exists():
            out.unlink()
        raise
    print(out)
    return 0


def _parse_sweep(text: str) -> list[float]:
    key, _, values = text.partition("=")
    if key.strip() != "eps" or not values:
        raise ConfigurationError(f"--sweep expects 'eps=V1,V2,...', got {text!r}")
    try:
        return [float(v) for v in values.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigurationError(f"--sweep: {exc}") from None


def _run_one(instance, cfg, reference, granularity, wall_clock, trace_path, report_path) -> int:
    rows = []
    rep = solve(instance, cfg, reference=reference, on_iteration=rows.append,
                on_inner=rows.append if granularity == "inner" else None)
    io.write_trace(trace_path, rows, wall_clock)
    io.write_json(report_path, io.report_to_dict(rep))
    log.info("%s: %s after %d outer iterations, %d queries", trace_path.name,
             rep.exit_kind.value, rep.outer_iterations, rep.total_queries.total)
    return EXIT_CODES[rep.exit_kind]


def _cmd_solve(args) -> int:
    manifest = io.load_manifest(args.manifest)
    base = args.manifest.parent
    data = io.load_instance(manifest, base)
    instance = build_instance(data)
    ref_path = args.reference
    if ref_path is None and manifest.get("reference"):
        ref_path = base / manifest["reference"]
    reference = io.read_reference(ref_path) if ref_path is not None else None
    cfg = io.config_from_manifest(manifest, eps=args.eps, Delta1=args.Delta1, D=args.D,
                                  B_f=args.B_f, b_init=args.b_init,
                                  max_outer_iters=args.max_outer_iters)
    out = args.out if args.out is not None else io.default_output_dir(base)
    out.mkdir(parents=True, exist_ok=True)

    if args.sweep is None:
        code = _run_one(instance, cfg, reference, args.granularity, args.wall_clock,
                        out / "trace.csv", out / "report.json")
        print(out / "trace.csv")
        return code

    eps_values = _parse_sweep(args.sweep)
    jobs = [(replace(cfg, eps=e), out / f"trace_eps={e:g}.csv", out / f"report_eps={e:g}.json")
            for e in eps_values]
    with ThreadPoolExecutor(max_workers=args.threads) as pool:
        futures = [pool.submit(_run_one, instance, c, reference, args.granularity,
                               args.wall_clock, t, r) for c, t, r in jobs]
        codes = [f.result() for f in futures]
    for _, t, _ in jobs:
        print(t)
    return next((c for c in codes if c != 0), 0)


def main(argv: list[str] | None = None) -> int:
    """Entry point of the ``bivfa`` command; returns the process exit code."""
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handler = {"generate": _cmd_generate, "reference": _cmd_reference, "solve": _cmd_solve}
    try:
        return handler[args.command](args)
    except FileNotFoundError as exc:
        print(f"bivfa: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except ConfigurationError as exc:
        print(f"bivfa: invalid input: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except OSError as exc:
        print(f"bivfa: I/O error on {exc.filename}: {exc.strerror}", file=sys.stderr)
        return EXIT_MISSING
    except ReferenceUnavailableError as exc:
        print(f"bivfa: reference unavailable: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except BivfaError as exc:
        print(f"bivfa: solver failure: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
