"""Command line front-end: ``attnflow {simulate,census,scan,spectrum,certify}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from attnflow import __version__
from attnflow.dynamics import SYSTEMS, IntegrationOptions, integrate
from attnflow.errors import AttnflowError, ContractViolation
from attnflow.geometry import sample_uniform_sphere
from attnflow.harness.census import ExperimentSpec, run_census
from attnflow.harness.instances import random_instance
from attnflow.harness.output import (OutputError, emit_outputs, summary_counts, write_json,
                                     write_svg)
from attnflow.harness.scan import scan_bipartite, summarize_scan
from attnflow.rng import derive_seed
from attnflow.stability import (bipartite_spectrum, bipartite_stability_test, classify_equilibrium,
                                clustering_certificate, consensus_spectrum, polygonal_certificate)

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL, EXIT_IO = 0, 1, 2, 3

log = logging.getLogger("attnflow")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 by default, which is our numerical-failure code
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON document with experiment fields")
    p.add_argument("--system", choices=SYSTEMS)
    p.add_argument("--d", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--beta", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--instances", type=int)
    p.add_argument("--runs", type=int, dest="runs_per_instance")
    p.add_argument("--h", type=float, help="RK4 step")
    p.add_argument("--tmax", type=float, help="integration time limit")
    p.add_argument("--tol", type=float, help="convergence tolerance on max |f|")
    p.add_argument("--out", help="output path")
    p.add_argument("--svg", help="SVG trajectory plot path")
    p.add_argument("--workers", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="attnflow", description="Attention dynamics on spheres: simulation and stability.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="integrate one run and classify its endpoint")
    _common(p)
    p.add_argument("--instance", type=int, default=0)
    p.add_argument("--run", type=int, default=0)

    p = sub.add_parser("census", help="integrate many runs and count equilibrium classes")
    _common(p)
    p.add_argument("--csv", help="CSV summary path (default: <out>.csv)")
    p.add_argument("--no-timing", action="store_true", help="write wall_ms as 0")

    p = sub.add_parser("scan", help="stability of all consensus / bipartite points of one instance")
    _common(p)
    p.add_argument("--mode", default="exhaustive", choices=("exhaustive", "patterns", "sample"))
    p.add_argument("--samples", type=int, default=100)
    p.add_argument("--instance", type=int, default=0)

    p = sub.add_parser("spectrum", help="analytic Jacobian spectrum at a consensus or bipartite point")
    _common(p)
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--n1", type=int, help="tokens at +v_k (default: all, i.e. consensus)")
    p.add_argument("--instance", type=int, default=0)

    p = sub.add_parser("certify", help="simulate, classify and attach the matching certificate")
    _common(p)
    p.add_argument("--instance", type=int, default=0)
    p.add_argument("--run", type=int, default=0)
    return parser


def spec_from_args(args) -> ExperimentSpec:
    doc: dict = {}
    if args.config:
        try:
            doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except OSError as exc:
            raise OutputError(f"cannot read {args.config}: {exc.strerror or exc}") from exc
        except json.JSONDecodeError as exc:
            raise UsageError(f"{args.config}: invalid JSON ({exc})") from exc
        if not isinstance(doc, dict):
            raise UsageError(f"{args.config}: top level must be an object")
    for key in ("system", "d", "n", "beta", "seed", "instances", "runs_per_instance", "out", "svg", "workers"):
        val = getattr(args, key, None)
        if val is not None:
            doc[key] = val
    integ = dict(doc.get("integration") or {})
    for flag, key in (("h", "h"), ("tmax", "max_time"), ("tol", "convergence_tol")):
        val = getattr(args, flag, None)
        if val is not None:
            integ[key] = val
    doc["integration"] = integ
    return ExperimentSpec.from_dict(doc)


def _emit_doc(doc: dict, out: str | None) -> None:
    if out:
        write_json(out, doc)
    else:
        json.dump(doc, sys.stdout, indent=2, allow_nan=False)
        sys.stdout.write("\n")


def _finite(x):
    return float(x) if x is not None and np.isfinite(x) else None


def _report_doc(rep) -> dict:
    d = asdict(rep)
    d["class"] = d.pop("cls")
    d["notes"] = list(rep.notes)
    for key in ("spectral_abscissa", "tangent_abscissa", "residual"):
        d[key] = _finite(d[key])
    return d


def _simulate(spec: ExperimentSpec, instance: int, run: int):
    params = random_instance(spec.d, spec.n, spec.beta, derive_seed(spec.seed, instance))
    X0 = sample_uniform_sphere(spec.d, spec.n, derive_seed(spec.seed, instance, run))
    return params, integrate(X0, spec.system, params, spec.integration)


def cmd_simulate(args, spec: ExperimentSpec) -> int:
    params, traj = _simulate(spec, args.instance, args.run)
    doc = {"termination": traj.termination, "steps": traj.steps, "residual": traj.residual,
           "final": traj.states[-1].tolist()}
    if traj.termination == "converged":
        doc["report"] = _report_doc(classify_equilibrium(traj.states[-1], params, system=spec.system))
    if spec.svg:
        write_svg(spec.svg, traj.states, title=f"{spec.system} d={spec.d} n={spec.n}")
    _emit_doc(doc, spec.out)
    return EXIT_OK


def cmd_census(args, spec: ExperimentSpec) -> int:
    records = list(run_census(spec))
    if args.no_timing:
        records = [replace(r, wall_ms=0.0) for r in records]
    csv_path = args.csv or (spec.out + ".csv" if spec.out else None)
    meta = {"created": datetime.now(timezone.utc).isoformat(), "version": __version__,
            "spec": spec.to_dict()}
    recs = emit_outputs(records, jsonl=spec.out, csv_path=csv_path, meta=meta,
                        meta_path=spec.out + ".meta.json" if spec.out else None)
    if spec.svg:
        params, traj = _simulate(spec, 0, 0)
        write_svg(spec.svg, traj.states, title=f"{spec.system} instance 0 run 0")
    if not spec.out:
        for r in recs:
            sys.stdout.write(r.to_json() + "\n")
    for cls, k, count in summary_counts(recs):
        log.info("%s k=%s: %d", cls, k, count)
    return EXIT_OK


def cmd_scan(args, spec: ExperimentSpec) -> int:
    params = random_instance(spec.d, spec.n, spec.beta, derive_seed(spec.seed, args.instance))
    rows = scan_bipartite(params, args.mode, samples=args.samples, seed=spec.seed)
    doc = summarize_scan(rows)
    doc["eigenvalues"] = params.spectrum().eigenvalues.tolist()
    doc["rows"] = [{"k": r.k, "n1": r.n1, "n2": r.n2, "count": r.count, "verdict": r.verdict}
                   for r in rows]
    _emit_doc(doc, spec.out)
    return EXIT_OK


def cmd_spectrum(args, spec: ExperimentSpec) -> int:
    params = random_instance(spec.d, spec.n, spec.beta, derive_seed(spec.seed, args.instance))
    sp = params.spectrum()
    n1 = spec.n if args.n1 is None else args.n1
    if not 1 <= args.k <= spec.d:
        raise ContractViolation(f"k must lie in 1..{spec.d}")
    if not 0 <= n1 <= spec.n:
        raise ContractViolation(f"n1 must lie in 0..{spec.n}")
    if n1 in (0, spec.n):
        an = consensus_spectrum(sp, args.k, spec.n)
        verdict = None
    else:
        _, an = bipartite_spectrum(params, sp, args.k, n1, spec.n - n1)
        verdict = bipartite_stability_test(params, sp, args.k, n1, spec.n - n1)
    doc = {"k": args.k, "n1": n1, "n2": spec.n - n1, "source": an.source,
           "eigenvalues_V": sp.eigenvalues.tolist(),
           "entries": [{"value": e.value, "multiplicity": e.multiplicity, "kind": e.kind}
                       for e in an.entries],
           "abscissa": an.abscissa()}
    if verdict is not None:
        doc["verdict"] = verdict
    _emit_doc(doc, spec.out)
    return EXIT_OK


def cmd_certify(args, spec: ExperimentSpec) -> int:
    params, traj = _simulate(spec, args.instance, args.run)
    if traj.termination != "converged":
        _emit_doc({"termination": traj.termination, "residual": traj.residual}, spec.out)
        return EXIT_OK
    X = traj.states[-1]
    rep = classify_equilibrium(X, params, system=spec.system)
    doc = {"report": _report_doc(rep)}
    if rep.cls == "m_clustering" and spec.system == "self_attention":
        cert = clustering_certificate(X, params)
        doc["certificate"] = {"kind": "clustering", "gammas": cert.gammas.tolist(),
                              "collinearity_residual": cert.collinearity_residual,
                              "singularity_residual": cert.singularity_residual}
    elif rep.cls == "polygonal":
        cert = polygonal_certificate(X, params, spec.system)
        doc["certificate"] = {"kind": "polygonal", "max_real_part": _finite(cert.max_real_part),
                              "unstable": cert.unstable}
    elif rep.cls == "bipartite" and spec.system == "self_attention":
        doc["certificate"] = {"kind": "bipartite", "analytic_verdict": bipartite_stability_test(
            params, params.spectrum(), rep.k, rep.n1, rep.n2)}
    _emit_doc(doc, spec.out)
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "census": cmd_census, "scan": cmd_scan,
            "spectrum": cmd_spectrum, "certify": cmd_certify}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        spec = spec_from_args(args)
        return COMMANDS[args.verb](args, spec)
    except (UsageError, ContractViolation, TypeError) as exc:
        print(f"attnflow: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OutputError, OSError) as exc:
        print(f"attnflow: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except AttnflowError as exc:
        print(f"attnflow: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
