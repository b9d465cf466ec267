"""Batch front end: solve / verify / converge on JSON problem specs.

Spec files are JSON objects with keys model, n, epsilon, kappa (number or
"inf"), points, quantity, and optional noise, N, K, tolerance.  Results
are JSON with floats emitted at 17 significant digits so files round-trip
losslessly and identical runs are byte-identical apart from the wall-clock
field.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import time

import numpy as np

from . import model_type1, model_type2, oracle
from .chebyshev import DomainError, FunctionalSpec
from .model_type2 import Noise, ProblemSpec, SolverStatusError, SpecError

logger = logging.getLogger("optrec.cli")

EXIT_OK = 0
EXIT_SPEC_ERROR = 1
EXIT_INFEASIBLE = 2
EXIT_NUMERICAL = 3

DEFAULT_TOL = 1e-8
DEFAULT_K = 128
DEFAULT_SAMPLES = 1000
DEFAULT_SEED = 20240

_SPEC_KEYS = ("model", "n", "epsilon", "kappa", "points", "quantity", "noise",
              "N", "K", "tolerance")


def _format_json(obj, indent=0) -> str:
    """JSON with floats at 17 significant digits (lossless round trip)."""
    pad = "  " * indent
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [
            f'{pad}  {json.dumps(str(k))}: {_format_json(v, indent + 1)}'
            for k, v in obj.items()
        ]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        items = [f"{pad}  {_format_json(v, indent + 1)}" for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + pad + "]"
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            raise ValueError(f"non-finite float {x} in result document")
        return format(x, ".17g")
    if isinstance(obj, str):
        return json.dumps(obj)
    raise TypeError(f"cannot serialize {type(obj)}")


def write_json(obj, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(_format_json(obj) + "\n")


def read_json(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _reject_unknown(mapping: dict, allowed, where: str) -> None:
    for key in mapping:
        if key not in allowed:
            raise SpecError(f"unknown key {key!r} in {where}")


def parse_spec_dict(doc: dict):
    """(ProblemSpec, extras) from a spec document; extras holds N/K/tolerance."""
    if not isinstance(doc, dict):
        raise SpecError("spec document must be a JSON object")
    _reject_unknown(doc, _SPEC_KEYS, "spec")
    for key in ("model", "n", "epsilon", "kappa", "points", "quantity"):
        if key not in doc:
            raise SpecError(f"spec is missing required key {key!r}")

    kappa = doc["kappa"]
    if kappa == "inf":
        kappa = math.inf
    elif not isinstance(kappa, (int, float)) or isinstance(kappa, bool):
        raise SpecError('kappa must be a number or the string "inf"')

    qdoc = doc["quantity"]
    if not isinstance(qdoc, dict) or "kind" not in qdoc:
        raise SpecError('quantity must be an object with a "kind" key')
    if qdoc["kind"] == "point":
        _reject_unknown(qdoc, ("kind", "x0"), "quantity")
        if "x0" not in qdoc:
            raise SpecError('point quantity requires "x0"')
        quantity = FunctionalSpec.point(qdoc["x0"])
    elif qdoc["kind"] == "integral":
        _reject_unknown(qdoc, ("kind",), "quantity")
        quantity = FunctionalSpec.integral()
    else:
        raise SpecError(f'unknown quantity kind {qdoc["kind"]!r}')

    noise = None
    if doc.get("noise") is not None:
        ndoc = doc["noise"]
        _reject_unknown(ndoc, ("p", "eta"), "noise")
        if "p" not in ndoc or "eta" not in ndoc:
            raise SpecError('noise requires keys "p" and "eta"')
        p = math.inf if ndoc["p"] == "inf" else ndoc["p"]
        noise = Noise(p=p, eta=float(ndoc["eta"]))

    try:
        spec = ProblemSpec(
            model=doc["model"],
            n=int(doc["n"]),
            epsilon=float(doc["epsilon"]),
            kappa=float(kappa),
            points=np.asarray(doc["points"], dtype=float),
            quantity=quantity,
            noise=noise,
        )
    except (TypeError, ValueError, DomainError) as exc:
        if isinstance(exc, SpecError):
            raise
        raise SpecError(str(exc)) from exc
    extras = {
        "N": None if doc.get("N") is None else int(doc["N"]),
        "K": None if doc.get("K") is None else int(doc["K"]),
        "tolerance": None if doc.get("tolerance") is None else float(doc["tolerance"]),
    }
    return spec, extras


def load_spec(path: str):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise SpecError(f"spec parse error at line {exc.lineno} column {exc.colno}: {exc.msg}")
    except OSError as exc:
        raise SpecError(f"cannot read spec file: {exc}")
    return parse_spec_dict(doc)


def spec_echo(spec: ProblemSpec, extras: dict) -> dict:
    """Canonical, deterministic re-serialization of a parsed spec."""
    if spec.quantity.kind == FunctionalSpec.POINT:
        quantity = {"kind": "point", "x0": spec.quantity.x0}
    else:
        quantity = {"kind": "integral"}
    doc = {
        "model": spec.model,
        "n": spec.n,
        "epsilon": spec.epsilon,
        "kappa": "inf" if math.isinf(spec.kappa) else spec.kappa,
        "points": list(spec.points),
        "quantity": quantity,
    }
    if spec.noise is not None:
        doc["noise"] = {
            "p": "inf" if math.isinf(spec.noise.p) else spec.noise.p,
            "eta": spec.noise.eta,
        }
    for key in ("N", "K", "tolerance"):
        if extras.get(key) is not None:
            doc[key] = extras[key]
    return doc


def _oracle_summary_type2(spec: ProblemSpec, weights, certified: float, seed: int) -> dict:
    wc = oracle.worst_case_type2(weights.a, spec, seed=seed)
    lo = wc.lower - 1e-6
    hi = wc.upper + 1e-6
    return {
        "dual_norm": wc.dual_norm_term,
        "ball_lower": wc.ball.lower,
        "ball_upper": wc.ball.upper,
        "noise_term": wc.noise_term,
        "decomposition_lower": wc.lower,
        "decomposition_upper": math.inf if math.isinf(wc.upper) else wc.upper,
        "decomposition_ok": bool(lo <= certified <= hi),
    }


def cmd_solve(args) -> int:
    spec, extras = load_spec(args.spec)
    tol = args.tol if args.tol is not None else (extras["tolerance"] or DEFAULT_TOL)
    seed = args.seed
    t0 = time.perf_counter()

    result = {"spec": spec_echo(spec, extras), "command": "solve", "model": spec.model}
    if spec.model == model_type2.TYPE2:
        rw = model_type2.solve_type2(spec, tol)
        result["status"] = rw.diagnostics["status"]
        result["weights"] = list(rw.a)
        result["certified_value"] = rw.certified_value
        result["solver"] = rw.diagnostics
        result["oracle"] = _oracle_summary_type2(spec, rw, rw.certified_value, seed)
    else:
        N = args.N if args.N is not None else (extras["N"] or max(4 * spec.n, spec.m))
        K = args.K if args.K is not None else (extras["K"] if extras["K"] is not None else DEFAULT_K)
        res = model_type1.sandwich(spec, N, K, tol)
        result["status"] = res.diagnostics["lower"]["status"]
        result["weights"] = list(res.a_t if res.upper_bound_available else res.a_N)
        result["certified_value"] = res.beta_t
        result["sandwich"] = {
            "alpha": res.alpha_N,
            "beta": res.beta_t,
            "gap": res.gap,
            "N": res.N,
            "K": res.K,
            "upper_bound_available": res.upper_bound_available,
        }
        result["weights_lower"] = list(res.a_N)
        result["solver"] = res.diagnostics["lower"]
        ordering_ok = (
            res.alpha_N <= res.beta_t + 2 * tol if res.upper_bound_available else None
        )
        result["oracle"] = {
            "ordering_ok": ordering_ok,
            "upper_bound_unavailable": not res.upper_bound_available,
        }
    result["seed"] = seed
    result["tolerance"] = tol
    result["wall_clock_sec"] = time.perf_counter() - t0

    out = args.out or _default_out(args.spec)
    write_json(result, out)
    print(f"status={result['status']} certified_value={result['certified_value']} -> {out}")
    return EXIT_OK


def _default_out(spec_path: str) -> str:
    root, _ = os.path.splitext(spec_path)
    return root + ".result.json"


def _check(checks: list, name: str, passed: bool, **detail) -> None:
    checks.append({"name": name, "passed": bool(passed), **detail})


def cmd_verify(args) -> int:
    doc = read_json(args.result)
    spec, extras = parse_spec_dict(doc["spec"])
    samples = args.samples
    seed = args.seed
    tol = doc.get("tolerance", DEFAULT_TOL)
    checks: list[dict] = []

    weights = np.asarray(doc.get("weights", []), dtype=float)
    _check(checks, "weights_length", weights.size == spec.m, expected=spec.m,
           actual=int(weights.size))
    dn = oracle.dual_norm(weights, spec.quantity, spec.points)
    _check(checks, "dual_norm_at_least_one", dn >= 1.0, value=dn)

    if spec.model == model_type2.TYPE2:
        certified = float(doc["certified_value"])
        _check(checks, "certified_nonnegative", certified >= 0.0, value=certified)
        wc = oracle.worst_case_type2(weights, spec, seed=seed)
        ok = wc.lower - 1e-6 <= certified <= wc.upper + 1e-6
        _check(checks, "decomposition_bracket", ok, lower=wc.lower,
               upper=None if math.isinf(wc.upper) else wc.upper, certified=certified)
        bound = certified
        sampler = oracle.sample_type2
    else:
        sw = doc.get("sandwich", {})
        alpha = float(sw["alpha"])
        beta = sw.get("beta")
        if beta is not None:
            _check(checks, "sandwich_ordering", alpha <= beta + 2 * tol,
                   alpha=alpha, beta=beta)
        bound = beta
        sampler = oracle.sample_type1

    if samples > 0 and bound is not None:
        drawn = [sampler(spec, seed + i) for i in range(samples)]
        member_ok = all(oracle.check_membership(s, spec) for s in drawn)
        _check(checks, "sample_membership", member_ok, samples=samples)
        emp = oracle.empirical_error(weights, drawn, spec)
        _check(checks, "empirical_domination", emp <= bound + 1e-6,
               empirical=emp, bound=bound)

    passed = all(c["passed"] for c in checks)
    doc["verification"] = {
        "passed": passed,
        "samples": samples,
        "seed": seed,
        "checks": checks,
    }
    write_json(doc, args.result)
    for c in checks:
        print(f"[{'PASS' if c['passed'] else 'FAIL'}] {c['name']}")
    return EXIT_OK if passed else EXIT_SPEC_ERROR


def _parse_int_list(text: str) -> list[int]:
    try:
        return [int(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise SpecError(f"cannot parse integer list {text!r}")


def cmd_converge(args) -> int:
    spec, extras = load_spec(args.spec)
    tol = args.tol if args.tol is not None else (extras["tolerance"] or DEFAULT_TOL)
    if spec.model != model_type2.TYPE1:
        raise SpecError("converge requires a type1 spec")

    if args.N_list:
        N_list = _parse_int_list(args.N_list)
    else:
        base = max(spec.n, spec.m)
        N_list, N = [], base
        while N <= 256:
            N_list.append(N)
            N *= 2
    K_list = _parse_int_list(args.K_list) if args.K_list else [64, 128, 256]

    t0 = time.perf_counter()
    table = model_type1.convergence_study(spec, N_list, K_list, tol)
    rows = [
        {
            "N": r.N, "K": r.K, "alpha": r.alpha, "beta": r.beta,
            "gap": r.gap, "weight_drift": r.weight_drift,
        }
        for r in table.rows
    ]
    result = {
        "spec": spec_echo(spec, extras),
        "command": "converge",
        "rows": rows,
        "monotonicity_ok": table.ok,
        "violations": list(table.monotonicity_violations),
        "tolerance": tol,
        "wall_clock_sec": time.perf_counter() - t0,
    }
    if args.out:
        write_json(result, args.out)

    header = f"{'N':>6} {'K':>6} {'alpha':>14} {'beta':>14} {'gap':>12} {'drift':>12}"
    print(header)
    for r in table.rows:
        beta = f"{r.beta:.8f}" if r.beta is not None else "--"
        gap = f"{r.gap:.3e}" if r.gap is not None else "--"
        drift = f"{r.weight_drift:.3e}" if r.weight_drift is not None else "--"
        print(f"{r.N:>6} {r.K:>6} {r.alpha:>14.8f} {beta:>14} {gap:>12} {drift:>12}")
    if not table.ok:
        for msg in table.monotonicity_violations:
            print(f"monotonicity violation: {msg}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="optrec",
        description="Optimal recovery of linear functionals on C[-1,1]",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_solve = sub.add_parser("solve", help="solve a recovery problem spec")
    p_solve.add_argument("spec")
    p_solve.add_argument("--tol", type=float, default=None)
    p_solve.add_argument("--N", type=int, default=None)
    p_solve.add_argument("--K", type=int, default=None)
    p_solve.add_argument("--out", default=None)
    p_solve.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p_solve.set_defaults(func=cmd_solve)

    p_verify = sub.add_parser("verify", help="re-derive oracle checks on a result")
    p_verify.add_argument("result")
    p_verify.add_argument("--samples", type=int, default=DEFAULT_SAMPLES)
    p_verify.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p_verify.set_defaults(func=cmd_verify)

    p_conv = sub.add_parser("converge", help="run a truncation/grid convergence study")
    p_conv.add_argument("spec")
    p_conv.add_argument("--tol", type=float, default=None)
    p_conv.add_argument("--N-list", dest="N_list", default=None)
    p_conv.add_argument("--K-list", dest="K_list", default=None)
    p_conv.add_argument("--out", default=None)
    p_conv.set_defaults(func=cmd_converge)
    return parser


def _setup_logging() -> None:
    level = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}.get(
        os.environ.get("OPTREC_LOG", "error").lower(), logging.ERROR
    )
    logging.basicConfig(level=level, format="%(name)s %(levelname)s %(message)s")


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SpecError as exc:
        print(f"spec error: {exc}", file=sys.stderr)
        return EXIT_SPEC_ERROR
    except SolverStatusError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        if exc.status in ("infeasible", "unbounded"):
            return EXIT_INFEASIBLE
        return EXIT_NUMERICAL
    except (OSError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SPEC_ERROR


if __name__ == "__main__":
    sys.exit(main())
