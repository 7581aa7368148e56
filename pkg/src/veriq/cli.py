"""Command-line entry point: ``veriq <subcommand> ...``.

Exit codes: 0 success, 1 runtime failure (tampering, withheld tuples, I/O),
2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time

import numpy as np

from . import __version__
from .adversary import Honest, respond, strategy_from_json
from .authstore import (
    read_csv,
    read_signed_csv,
    read_signed_tuples,
    sign_relation,
    write_csv,
    write_signed_csv,
    draw_sketch,
    load_key,
    new_key,
    verify_tuple,
)
from .exceptions import ConfigError, SchemaError, TamperError, VeriqError
from .incentives import (
    GameConfig,
    alpha_practical_two_cloud,
    alpha_practical_two_cloud_printed,
    alpha_threshold_single_cloud,
    alpha_threshold_two_cloud,
    alpha_threshold_two_cloud_printed,
    check_rationality,
)
from .queryeng import Kind, Query
from .simlab.census import CENSUS_SCHEMA, census_queries, gen_census_like
from .simlab.games import run_single_cloud, run_two_cloud
from .simlab.roc import DEFAULT_EPSILONS, DEFAULT_K, curve_summary, default_strategies, roc_sweep, workers_from_env, write_roc_csv
from .verifier import EpsilonPolicy, audit_exact, local_verify

EXPERIMENT_KEYS = {
    "data", "key_file", "queries", "query_file", "game", "form", "policy", "strategies",
    "k", "k_grid", "epsilon_grid", "trials", "seed", "contract", "rounds", "mode",
}


class UsageError(Exception):
    pass


# ------------------------------------------------------------------ helpers


def _load_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None


def _clean(obj):
    """NaN/inf become null so --json output stays strict JSON."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    return obj


def _emit(args, payload, text):
    if args.json:
        print(json.dumps(_clean(payload), indent=2, sort_keys=True, default=_json_default, allow_nan=False))
    else:
        print(text)


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serialisable: {type(obj).__name__}")


def _require_seed(args):
    if args.seed is None:
        raise ConfigError("--seed is required (no implicit entropy)")
    return args.seed


def _key(path):
    if path is None:
        return None
    try:
        return load_key(path)
    except FileNotFoundError:
        raise ConfigError(f"key file not found: {path}") from None


def _load_relation(path, key=None):
    """Signed CSV (id ... mac columns) or plain CSV signed on the fly with ``key``."""
    if not os.path.exists(path):
        raise ConfigError(f"data file not found: {path}")
    with open(path, newline="") as fh:
        header = next(csv.reader(fh), [])
    if header[:1] == ["id"] and header[-1:] == ["mac"]:
        return read_signed_csv(path, key)
    if key is None:
        raise ConfigError(f"{path} is unsigned; a key is needed to sign it")
    schema, rows = read_csv(path)
    return sign_relation(schema, rows, key)


def _parse_query(obj) -> Query:
    try:
        return Query.from_json(obj)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad query {obj!r}: {exc}") from None


def _query_arg(args) -> Query:
    if args.query and args.query_file:
        raise UsageError("give --query or --query-file, not both")
    if args.query:
        try:
            return _parse_query(json.loads(args.query))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"--query is not JSON: {exc}") from None
    if args.query_file:
        return _parse_query(_load_json(args.query_file))
    raise UsageError("a query is required (--query or --query-file)")


def _fmt(value):
    if isinstance(value, float):
        return f"{value:.10g}"
    return str(value)


# ------------------------------------------------------------- subcommands


def cmd_gen_data(args):
    seed = _require_seed(args)
    rows = gen_census_like(args.rows, seed)
    write_csv(args.out, CENSUS_SCHEMA, rows)
    _emit(args, {"rows": len(rows), "out": args.out, "seed": seed}, f"wrote {len(rows)} rows to {args.out}")


def cmd_sign(args):
    if args.new_key:
        if os.path.exists(args.key_file):
            raise ConfigError(f"refusing to overwrite existing key file {args.key_file}")
        with open(args.key_file, "w") as fh:
            fh.write(new_key().hex() + "\n")
    key = _key(args.key_file)
    schema, rows = read_csv(args.data)
    relation = sign_relation(schema, rows, key)
    write_signed_csv(args.out, relation)
    _emit(args, {"tuples": relation.n, "out": args.out}, f"signed {relation.n} tuples -> {args.out}")


def cmd_query(args):
    key = _key(args.key_file)
    relation = _load_relation(args.data, key)
    query = _query_arg(args)
    query.validate(relation.schema)
    strategy = strategy_from_json(json.loads(args.strategy)) if args.strategy else Honest()
    if isinstance(strategy, Honest):
        rng = np.random.default_rng(0)  # unused by honest evaluation
    else:
        rng = np.random.default_rng(_require_seed(args))
    response = respond(strategy, relation, query, rng)
    claim = response.claim
    if query.kind is Kind.SELECT:
        ids = [t.id for t in claim]
        if args.out:
            with open(args.out, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["id", *relation.schema.attributes, "mac"])
                for t in claim:
                    w.writerow([t.id, *t.values, t.mac.hex()])
        _emit(args, {"kind": "select", "ids": ids, "count": len(ids)}, f"{len(ids)} tuples: {ids[:20]}{' ...' if len(ids) > 20 else ''}")
    else:
        value = None if claim is None or (isinstance(claim, float) and math.isnan(claim)) else claim
        _emit(args, {"kind": query.kind.value, "claim": value}, "undefined (no matching tuples)" if value is None else _fmt(value))


def cmd_verify(args):
    key = _key(args.key_file)
    if args.query is None and args.query_file is None:
        # integrity check of a whole signed file
        if key is None:
            raise UsageError("--key-file is required to check MACs")
        _, tuples = read_signed_tuples(args.data)
        bad = [t.id for t in tuples if not verify_tuple(t, key)]
        _emit(args, {"tuples": len(tuples), "tampered": bad}, f"{len(tuples)} tuples, {len(bad)} failed MAC check" + (f": {bad[:20]}" if bad else ""))
        return 1 if bad else 0

    relation = _load_relation(args.data, key)
    query = _query_arg(args)
    query.validate(relation.schema)
    seed = _require_seed(args)
    sketch = draw_sketch(relation, args.k, np.random.default_rng(seed))
    policy = EpsilonPolicy(args.epsilon, args.absolute_floor)
    if query.kind is Kind.SELECT:
        if not args.claim_file:
            raise UsageError("selection claims need --claim-file (signed CSV of returned tuples)")
        _, claim = read_signed_tuples(args.claim_file)
    else:
        if args.claim is None:
            raise UsageError("aggregate claims need --claim")
        claim = args.claim
    verdict = local_verify(sketch, query, claim, policy, key)
    payload = {"verdict": verdict.to_json(), "k": args.k, "epsilon": args.epsilon, "seed": seed}
    text = f"{verdict.decision.value.upper()} (estimate {_fmt(verdict.estimate)})"
    if verdict.reason:
        text += f": {verdict.reason}"
    if args.audit and not verdict.accepted:
        result = audit_exact(relation, query, claim, key)
        payload["audit"] = result.value
        text += f"\naudit: {result.value}"
    _emit(args, payload, text)
    return 0


def cmd_alpha(args):
    if args.form == "practical":
        if args.config:
            cfg = GameConfig.from_json(_load_json(args.config))
            price, fine = cfg.price, cfg.fine
        else:
            if args.price is None or args.fine is None:
                raise UsageError("practical needs --config or both --price and --fine")
            price, fine = args.price, args.fine
        value = alpha_practical_two_cloud(price, fine)
        payload = {"alpha": value, "price": price, "fine": fine, "printed_simplification": None, "printed_with_g_equal_p": alpha_threshold_two_cloud_printed(price, fine, price)}
        try:
            payload["printed_simplification"] = alpha_practical_two_cloud_printed(price, fine)
        except ConfigError:
            pass
        _emit(args, payload, _fmt(value))
        return 0

    if not args.config:
        raise UsageError(f"alpha {args.form} needs --config")
    cfg = GameConfig.from_json(_load_json(args.config))
    if args.form == "single":
        value = alpha_threshold_single_cloud(cfg)
        report = check_rationality(cfg, alpha=value if args.at is None else args.at, form="single_cloud")
    else:
        value = alpha_threshold_two_cloud(cfg, args.contract)
        report = check_rationality(cfg, alpha=value if args.at is None else args.at, form="two_cloud", contract=args.contract)
    payload = {"alpha": value, "feasible": value <= 1.0, "report": report.to_json()}
    if args.form == "two":
        payload["printed_closed_form"] = alpha_threshold_two_cloud_printed(cfg.gain, cfg.fine, cfg.price)
    text = _fmt(value)
    if args.report:
        width = max(len(c.name) for c in report.checks)
        lines = [text] + [f"  {c.name:<{width}}  {'ok  ' if c.passed else 'FAIL'}  margin {_fmt(c.margin)}" for c in report.checks]
        text = "\n".join(lines)
    _emit(args, payload, text)
    return 0


# ------------------------------------------------------------ experiments


def _experiment(args):
    if not args.config:
        raise UsageError("--config is required")
    cfg = _load_json(args.config)
    if not isinstance(cfg, dict):
        raise ConfigError("experiment config must be a JSON object")
    unknown = set(cfg) - EXPERIMENT_KEYS
    if unknown:
        raise ConfigError(f"unknown experiment config keys {sorted(unknown)}")
    seed = args.seed if args.seed is not None else cfg.get("seed")
    if seed is None:
        raise ConfigError("a seed is required (config 'seed' or --seed)")
    cfg["seed"] = int(seed)
    return cfg


def _experiment_relation(cfg, need=True):
    data = cfg.get("data")
    if data is None:
        if need:
            raise ConfigError("config needs 'data' ({'path': ...} or {'generate': {...}})")
        return None
    key = _key(cfg.get("key_file"))
    if "path" in data:
        return _load_relation(data["path"], key)
    if "generate" in data:
        gen = data["generate"]
        rows = gen_census_like(int(gen.get("rows", 100_000)), int(gen.get("seed", cfg["seed"])))
        # MACs matter only for selection audits; without a key file use a fixed experiment key
        return sign_relation(CENSUS_SCHEMA, rows, key or b"veriq-experiment-key")
    raise ConfigError("'data' needs 'path' or 'generate'")


def _experiment_queries(cfg) -> dict:
    if "query_file" in cfg:
        raw = _load_json(cfg["query_file"])
    else:
        raw = cfg.get("queries", "census")
    if raw == "census":
        return census_queries()
    if isinstance(raw, dict) and "kind" in raw:
        return {1: _parse_query(raw)}
    if isinstance(raw, dict):
        return {qid: _parse_query(q) for qid, q in raw.items()}
    if isinstance(raw, list):
        return {i + 1: _parse_query(q) for i, q in enumerate(raw)}
    raise ConfigError("queries must be 'census', a query object, a list or a mapping")


def _epsilon_grid(spec):
    if spec is None:
        return DEFAULT_EPSILONS
    if isinstance(spec, dict):
        return tuple(float(e) for e in np.linspace(float(spec.get("start", 0.0)), float(spec.get("stop", 0.5)), int(spec.get("num", 21))))
    return tuple(float(e) for e in spec)


def cmd_roc(args):
    cfg = _experiment(args)
    relation = _experiment_relation(cfg)
    queries = _experiment_queries(cfg)
    k_grid = tuple(int(k) for k in cfg.get("k_grid", DEFAULT_K))
    eps = _epsilon_grid(cfg.get("epsilon_grid"))
    if "strategies" in cfg:
        strategies = [strategy_from_json(s) for s in cfg["strategies"]]
    else:
        strategies = default_strategies(k_grid)
    trials = args.trials if args.trials is not None else int(cfg.get("trials", 100))
    workers = args.workers if args.workers is not None else workers_from_env()
    if not k_grid or not eps or not strategies:
        raise ConfigError("k, epsilon and strategy grids must be non-empty")

    t0 = time.perf_counter()
    points = roc_sweep(relation, queries, k_grid, strategies, eps, trials=trials, seed=cfg["seed"], workers=workers)
    elapsed = time.perf_counter() - t0
    write_roc_csv(args.out, points)
    summary = {
        "out": args.out,
        "points": len(points),
        "trials": trials,
        "seed": cfg["seed"],
        "seconds": round(elapsed, 3),
        "curves": curve_summary(points),
    }
    text = f"wrote {len(points)} ROC points to {args.out} in {elapsed:.1f}s"
    if args.summary:
        with open(args.summary, "w") as fh:
            json.dump(_clean(summary), fh, indent=2, sort_keys=True, default=_json_default, allow_nan=False)
    _emit(args, summary, text)
    return 0


LEDGER_FIELDS = ("round", "checked", "primary", "escalated", "audited")


def cmd_simulate(args):
    cfg = _experiment(args)
    if "game" not in cfg:
        raise ConfigError("config needs a 'game' section")
    game = GameConfig.from_json(cfg["game"])
    form = cfg.get("form", "single_cloud")
    mode = cfg.get("mode", "modeled")
    rounds = int(cfg.get("rounds", 1000))
    contract = cfg.get("contract", 3 if form == "single_cloud" else 1)
    strategies = [strategy_from_json(s) for s in cfg.get("strategies", [{"kind": "honest"}])]
    need_data = mode == "pipeline"
    relation = _experiment_relation(cfg, need=need_data) if need_data else None
    query = None
    if need_data:
        queries = _experiment_queries(cfg)
        query = next(iter(queries.values()))
    key = _key(cfg.get("key_file"))

    if form == "single_cloud":
        if contract not in (3, None, 0):
            raise ConfigError("single-cloud game uses contract 3 (or 0 for none)")
        policy = EpsilonPolicy.from_json(cfg.get("policy", {"relative": 0.05}))
        result = run_single_cloud(relation, query, game, strategies[0], policy, int(cfg.get("k", 1000)), rounds, cfg["seed"], mode, contract == 3, key)
    elif form == "two_cloud":
        if len(strategies) == 1:
            strategies = strategies * 2
        result = run_two_cloud(relation, query, game, tuple(strategies[:2]), int(contract), rounds, cfg["seed"], mode, key=key)
    else:
        raise ConfigError(f"form must be single_cloud or two_cloud, got {form!r}")

    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            servers = result.flagged.shape[1]
            cols = list(LEDGER_FIELDS) + [f"flagged_{i + 1}" for i in range(servers)]
            for part in ("payment", "fine", "reimbursement", "net"):
                cols += [f"{part}_{p}" for p in result.players]
            w.writerow(cols)
            for i in range(result.n_rounds):
                row = [i, int(result.checked[i]), int(result.primary[i]), int(result.escalated[i]), int(result.audited[i])]
                row += [int(x) for x in result.flagged[i]]
                for arr in (result.payments, result.fines, result.reimbursements, result.net):
                    row += [repr(float(x) + 0.0) for x in arr[i]]
                w.writerow(row)
    summary = result.summary().to_json()
    summary["mode"] = mode
    summary["seed"] = cfg["seed"]
    lines = [f"{form} {'-'.join(result.actions)} {rounds} rounds ({mode})"]
    for p in result.players:
        lines.append(f"  {p}: {summary['mean'][p]:.4f} +/- {summary['se'][p]:.4f}")
    _emit(args, summary, "\n".join(lines))
    return 0


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--json", action="store_true", help="machine-readable output")
    common.add_argument("--seed", type=int, help="master seed (required for stochastic commands)")

    parser = argparse.ArgumentParser(prog="veriq", description="Sketch-based verification of outsourced query results.")
    parser.add_argument("--version", action="version", version=f"veriq {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("gen-data", parents=[common], help="generate a synthetic census-like CSV")
    p.add_argument("--rows", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("sign", parents=[common], help="attach an HMAC to every tuple of a CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--key-file", required=True, help="hex-encoded 32-byte key")
    p.add_argument("--new-key", action="store_true", help="create --key-file with a fresh random key first")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sign)

    def query_args(p):
        p.add_argument("--data", required=True, help="signed CSV, or plain CSV plus --key-file")
        p.add_argument("--key-file")
        p.add_argument("--query", help="query as inline JSON")
        p.add_argument("--query-file")

    p = sub.add_parser("query", parents=[common], help="answer a query as a (possibly cheating) server")
    query_args(p)
    p.add_argument("--strategy", help='server strategy JSON, e.g. {"kind": "laplace", "divisor": 5}')
    p.add_argument("--out", help="write selection results as a signed CSV")
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("verify", parents=[common], help="check MACs, or locally verify a claimed result")
    query_args(p)
    p.add_argument("--claim", type=float)
    p.add_argument("--claim-file", help="signed CSV of tuples returned for a selection")
    p.add_argument("--k", type=int, default=1000)
    p.add_argument("--epsilon", type=float, default=0.05)
    p.add_argument("--absolute-floor", type=float, default=0.0)
    p.add_argument("--audit", action="store_true", help="run the exact audit on Escalate")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("alpha", parents=[common], help="verification probability thresholds")
    p.add_argument("form", choices=("two", "single", "practical"))
    p.add_argument("--config", help="GameConfig JSON")
    p.add_argument("--contract", type=int, choices=(1, 2), default=1)
    p.add_argument("--price", type=float)
    p.add_argument("--fine", type=float)
    p.add_argument("--at", type=float, help="evaluate the rationality report at this alpha")
    p.add_argument("--report", action="store_true", help="also print the rationality checks")
    p.set_defaults(func=cmd_alpha)

    def experiment_args(p, out_required):
        p.add_argument("--config", required=True, help="experiment config JSON")
        p.add_argument("--out", required=out_required)
        p.add_argument("--trials", type=int)
        p.add_argument("--workers", type=int, help="parallel workers (default: $VERIQ_WORKERS or 1)")

    p = sub.add_parser("simulate", parents=[common], help="Monte-Carlo game simulation")
    experiment_args(p, False)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("roc", parents=[common], help="ROC sweep over queries, k, cheaters and epsilon")
    experiment_args(p, True)
    p.add_argument("--summary", help="also write the JSON summary here")
    p.set_defaults(func=cmd_roc)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        code = args.func(args)
    except UsageError as exc:
        parser.error(str(exc))  # exits 2
    except (ConfigError, SchemaError) as exc:
        print(f"veriq: config error: {exc}", file=sys.stderr)
        return 2
    except TamperError as exc:
        print(f"veriq: integrity violation: MAC check failed for tuple ids {sorted(exc.ids)[:20]}", file=sys.stderr)
        return 1
    except (VeriqError, ValueError, OSError) as exc:
        print(f"veriq: error: {exc}", file=sys.stderr)
        return 1
    return code or 0


if __name__ == "__main__":
    sys.exit(main())
