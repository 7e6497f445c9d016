"""``cobitlab`` command line.

Results go to stdout (or ``--output``) as JSON with sorted keys, so the same
arguments always give the same bytes.  Diagnostics go to stderr.  Exit codes:
0 success, 1 a logical failure or not-found, 2 a usage error.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import calculus, capacity, protocols, rsp
from .core import from_pairs, haar_vector

OK, FAIL, USAGE = 0, 1, 2
STREAMS = {"protocol": 0, "cover": 1, "rsp": 2, "state": 3, "capacity": 4}
TOLERANCES = {"fidelity": 1e-9, "concavity": capacity.CONCAVITY_TOL, "witness": capacity.SLACK_TOL}


class UsageError(Exception):
    pass


def stream(seed: int, name: str) -> np.random.Generator:
    """Independent generator per module, derived from one global seed."""
    return np.random.default_rng([seed, STREAMS[name]])


def _color(text: str, code: str, out) -> str:
    if os.environ.get("NO_COLOR") or not getattr(out, "isatty", lambda: False)():
        return text
    return f"\033[{code}m{text}\033[0m"


def _mark(passed: bool, out) -> str:
    return _color("PASS", "32", out) if passed else _color("FAIL", "31", out)


# --------------------------------------------------------------------------
# subcommands


def cmd_protocol(args, tol) -> tuple[int, object, str | None]:
    try:
        t = protocols.run_protocol(args.name, args.input, args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    good = t.ok and t.final_fidelity >= 1 - tol["fidelity"]
    pretty = None
    if args.pretty:
        lines = [f"{t.protocol} (seed {t.seed})"]
        lines += [f"{i:>2}. {s.desc}" for i, s in enumerate(t.steps, 1)]
        lines += [f"consumed:  {t.consumed}", f"produced:  {t.produced}", f"catalysts: {t.catalysts}",
                  f"target:    {t.target_description}", f"fidelity:  {t.final_fidelity:.12f}"]
        pretty = "\n".join(lines)
    return (OK if good else FAIL), t.to_json(), pretty


def cmd_rsp(args, tol):
    if args.cover == "pauli":
        if args.n not in (None, args.d * args.d):
            raise UsageError(f"the Pauli cover has n = d^2 = {args.d * args.d}")
        cover = rsp.pauli_cover(args.d)
    else:
        n = args.n if args.n is not None else 128
        try:
            cover = rsp.sample_covering(args.d, n, stream(args.seed, "cover"), seed=args.seed)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
    psi = haar_vector(args.d, stream(args.seed, "state"))
    t, attempts = rsp.run_with_retries(psi, cover, stream(args.seed, "rsp"), args.retries)
    t.seed = args.seed
    out = {
        "transcript": t.to_json(),
        "attempts": attempts,
        "cover": {"kind": args.cover, "d": cover.d, "n": cover.n, "epsilon": cover.epsilon,
                  "test_states": cover.test_states},
    }
    if t.ok:
        acct = rsp.rsp_resource_account(t)
        out["net"] = {"consumed": acct.consumed.to_json(), "produced": acct.produced.to_json(),
                      "catalyst": acct.catalyst.to_json()}
    good = t.ok and t.final_fidelity >= 1 - tol["fidelity"]
    pretty = None
    if args.pretty:
        pretty = (f"coherent RSP d={cover.d} n={cover.n} eps={cover.epsilon:.6g}: {t.status} after "
                  f"{attempts} attempt(s), fidelity {t.final_fidelity:.12f}\nproduced: {t.produced}")
    return (OK if good else FAIL), out, pretty


def cmd_prove(args, tol):
    try:
        lhs, rhs = calculus.parse(args.lhs), calculus.parse(args.rhs)
        budget = calculus.parse(args.cat) if args.cat else None
        opts = dict(allow_catalysis=budget is not None, catalyst_budget=budget,
                    allow_asymptotic=args.asy, max_depth=args.depth)
        if args.relation == ">=":
            d = calculus.prove(lhs, rhs, **opts)
            found, derivations = d is not None, {"forward": d}
            kind = "found" if found else "not-found"
        else:
            r = calculus.check_equality(lhs, rhs, **opts)
            found, derivations = r.kind == "equal", {"forward": r.forward, "backward": r.backward}
            kind = r.kind
    except calculus.ParseError as exc:
        raise UsageError(str(exc)) from exc
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    out = {"lhs": str(lhs), "relation": args.relation, "rhs": str(rhs), "result": kind,
           "depth": args.depth, "catalyst_budget": budget.to_json() if budget else None,
           "asymptotic": args.asy,
           "derivations": {k: (v.to_json() if v else None) for k, v in derivations.items()}}
    pretty = None
    if args.pretty:
        parts = [f"{lhs} {args.relation} {rhs}: {kind}"]
        for name, d in derivations.items():
            if d is not None:
                parts.append(f"[{name}]\n{d.format()}")
        pretty = "\n".join(parts)
    return (OK if found else FAIL), out, pretty


def load_gate(spec: str) -> tuple[np.ndarray, tuple[int, int] | None]:
    if spec in capacity.GATES:
        return capacity.GATES[spec](), None
    path = Path(spec)
    if not path.exists():
        raise UsageError(f"unknown gate {spec!r}: use {', '.join(capacity.GATES)} or a JSON file")
    try:
        data = json.loads(path.read_text())
        u = from_pairs(data["matrix"])
        dims = tuple(data["dims"]) if "dims" in data else None
    except (KeyError, ValueError, TypeError) as exc:
        raise UsageError(f"bad gate file {spec}: {exc}") from exc
    return u, dims


def cmd_capacity(args, tol):
    u, dims = load_gate(args.gate)
    opts = dict(m=args.m, restarts=args.restarts, maxfev=args.maxfev, seed=args.seed, dims=dims,
                workers=args.workers)
    try:
        if args.grid:
            grid = [float(x) for x in args.grid.split(",")]
            report = capacity.concavity_scan(u, grid, tol=tol["concavity"], **opts)
            checks = [dict(c, e=r.e) for r in report.results
                      for c in capacity.witness_checks(u, r, dims, tol["witness"])]
            out = {"gate": args.gate, "scan": report.to_json(),
                   "results": [r.to_json() for r in report.results], "witness_checks": checks}
            good = report.ok and all(c["passed"] for c in checks)
            pretty = "\n".join(f"e={r.e:<8g} {r.value:.9f}  {r.status}" for r in report.results)
        else:
            r = capacity.delta_chi_e(u, args.e, **opts)
            checks = capacity.witness_checks(u, r, dims, tol["witness"])
            out = dict(r.to_json(), gate=args.gate, witness_checks=checks)
            good = r.status != "infeasible" and all(c["passed"] for c in checks)
            pretty = f"C_e for e={r.e:g}: {r.value:.9f} ({r.status}, lower bound)"
            if args.q:
                q = capacity.q_e(u, args.e, **opts)
                out["q_e"] = q.to_json()
                good = good and q.status != "infeasible"
                pretty += f"\nQ_e: {q.value:.6f} (residual {q.residual:.2e})"
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    return (OK if good else FAIL), out, pretty if args.pretty else None


def selftest_checks(seed: int = 0) -> list[dict]:
    """Quick end-to-end checks, one row per protocol, rule or quantity."""
    rows = []

    def row(name, passed, detail=""):
        rows.append({"name": name, "passed": bool(passed), "detail": detail})

    for name in ("cobit", "coherent-sdc", "coherent-teleport", "coherent-teleport-sdc", "coherent-cnot",
                 "coherent-distributed-cnot", "degrade-cbit", "degrade-ebit", "coherent-hsw", "concentrate"):
        t = protocols.run_protocol(name, "haar", seed)
        row(f"protocol:{name}", t.ok and t.final_fidelity >= 1 - 1e-9, f"fidelity {t.final_fidelity:.12f}")
    t = rsp.run_coherent_rsp(haar_vector(2, stream(seed, "state")), rsp.pauli_cover(2), stream(seed, "rsp"))
    row("rsp:pauli-cover", t.ok and t.final_fidelity >= 1 - 1e-9, f"fidelity {t.final_fidelity:.12f}")
    P = calculus.parse
    for a, rel, b, budget, want in [
        ("2 cobit->", "==", "1 qubit-> + 1 ebit", "1 ebit", True),
        ("1 cnot + 1 ebit", "==", "1 cobit-> + 1 cobit<-", "2 ebit", True),
        ("2 cnot", "==", "1 swap", "2 ebit", True),
        ("1 qubit->", ">=", "1 cbit->", None, True),
        ("1 cbit->", ">=", "1 cobit->", None, False),
        ("1 cbit->", ">=", "1 ebit", None, False),
    ]:
        opts = dict(allow_catalysis=budget is not None, catalyst_budget=P(budget) if budget else None)
        if rel == "==":
            got = calculus.check_equality(P(a), P(b), **opts).kind == "equal"
        else:
            got = calculus.prove(P(a), P(b), **opts) is not None
        row(f"prove:{a} {rel} {b}", got == want, "derived" if got else "refused")
    for r in calculus.rule_db():
        if r.simulable:
            try:
                c = calculus.certify_rule_by_simulation(r.id, seed)
                row(f"certify:{r.id}", True, f"fidelity {c.final_fidelity:.12f}")
            except AssertionError as exc:
                row(f"certify:{r.id}", False, str(exc))
    idle = capacity.delta_chi_e(np.eye(4), 1.0, restarts=3, maxfev=300, seed=seed)
    row("capacity:identity", abs(idle.value) <= 1e-9, f"{idle.value:.3e}")
    cn = capacity.delta_chi_e(capacity.CNOT, 0.0, restarts=3, maxfev=300, seed=seed)
    row("capacity:cnot-e0", cn.value >= 1 - 1e-6, f"{cn.value:.9f}")
    return rows


def cmd_selftest(args, tol):
    rows = selftest_checks(args.seed)
    good = all(r["passed"] for r in rows)
    pretty = None
    if args.pretty:
        out = sys.stdout
        width = max(len(r["name"]) for r in rows)
        pretty = "\n".join(f"{r['name']:<{width}}  {_mark(r['passed'], out)}  {r['detail']}" for r in rows)
    return (OK if good else FAIL), {"checks": rows, "passed": good}, pretty


# --------------------------------------------------------------------------
# parsing


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", "-o", help="write the result here instead of stdout")
    p.add_argument("--pretty", action="store_true", help="human-readable output")
    p.add_argument("--tol", action="append", default=[], metavar="NAME=VALUE",
                   help=f"override a tolerance ({', '.join(TOLERANCES)})")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="cobitlab", description="Coherent communication toolkit.")
    parser.add_argument("--config", help="key=value file whose entries act as default flags")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("protocol", parents=[common], help="run a simulated protocol")
    p.add_argument("action", choices=["run"])
    p.add_argument("name", choices=sorted(protocols.PROTOCOLS))
    p.add_argument("--input", default="basis", help="basis, haar or a bit string")
    p.set_defaults(func=cmd_protocol)

    p = sub.add_parser("rsp", parents=[common], help="coherent remote state preparation")
    p.add_argument("action", choices=["run"])
    p.add_argument("--d", type=int, default=2)
    p.add_argument("--n", type=int)
    p.add_argument("--cover", choices=["pauli", "haar"], default="pauli")
    p.add_argument("--retries", type=int, default=0)
    p.set_defaults(func=cmd_rsp)

    p = sub.add_parser("prove", parents=[common], help="derive a resource inequality")
    p.add_argument("lhs")
    p.add_argument("relation", choices=[">=", "=="])
    p.add_argument("rhs")
    p.add_argument("--cat", metavar="BUDGET", help="catalyst budget, e.g. '2 ebit'")
    p.add_argument("--asy", action="store_true", help="allow asymptotic rules")
    p.add_argument("--depth", type=int, default=12)
    p.set_defaults(func=cmd_prove)

    p = sub.add_parser("capacity", parents=[common], help="entanglement-assisted one-use capacity")
    p.add_argument("--gate", default="cnot", help="cnot, swap, identity or a JSON file")
    p.add_argument("--e", type=float, default=0.0)
    p.add_argument("--m", type=int, default=4)
    p.add_argument("--restarts", type=int, default=32)
    p.add_argument("--maxfev", type=int, default=2000)
    p.add_argument("--workers", type=int)
    p.add_argument("--grid", help="comma-separated ascending e values for a concavity scan")
    p.add_argument("--q", action="store_true", help="also solve for Q_e")
    p.set_defaults(func=cmd_capacity)

    p = sub.add_parser("selftest", parents=[common], help="run the quick invariant suite")
    p.set_defaults(func=cmd_selftest)
    return parser


def read_config(path: str) -> list[str]:
    """``key = value`` lines become ``--key value`` flags; ``true``/``false`` toggle switches."""
    tokens = []
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        flag = "--" + key.replace("_", "-")
        if value.lower() in ("true", "yes", "on"):
            tokens.append(flag)
        elif value.lower() not in ("false", "no", "off"):
            tokens += [flag, value]
    return tokens


def _with_config(argv: list[str]) -> list[str]:
    """Splice config-file flags in front of the user's own, so explicit flags win."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, rest = pre.parse_known_args(argv)
    if not known.config or not rest:
        return rest
    return [rest[0], *read_config(known.config), *rest[1:]]


def _tolerances(items: Sequence[str]) -> dict[str, float]:
    tol = dict(TOLERANCES)
    for item in items:
        name, _, value = item.partition("=")
        if name not in tol:
            raise UsageError(f"unknown tolerance {name!r}")
        try:
            tol[name] = float(value)
        except ValueError:
            raise UsageError(f"bad value for tolerance {name}: {value!r}") from None
    return tol


def _dump(data) -> str:
    def clean(x):
        if isinstance(x, float) and not math.isfinite(x):
            return None
        if isinstance(x, dict):
            return {k: clean(v) for k, v in x.items()}
        if isinstance(x, (list, tuple)):
            return [clean(v) for v in x]
        if isinstance(x, np.generic):
            return clean(x.item())
        return x

    return json.dumps(clean(data), sort_keys=True, indent=2, allow_nan=False) + "\n"


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(_with_config(argv))
        tol = _tolerances(args.tol)
        code, result, pretty = args.func(args, tol)
    except SystemExit as exc:  # argparse usage errors and --help
        return int(exc.code or 0) and USAGE
    except (UsageError, OSError) as exc:
        print(f"cobitlab: error: {exc}", file=sys.stderr)
        return USAGE
    text = pretty + "\n" if pretty is not None else _dump(result)
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    if code != OK:
        print(f"cobitlab: {args.command}: {result.get('result', 'failed') if isinstance(result, dict) else 'failed'}",
              file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
