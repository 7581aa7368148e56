"""ROC sweep harness: error rates over query x verifier k x cheater x epsilon."""

from __future__ import annotations

import csv
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from typing import Mapping, Sequence

import numpy as np

from .._validation import check_positive_int, derive_seed
from ..adversary import LaplaceCheat, SampleCheat, ServerStrategy
from ..authstore import SignedRelation
from ..queryeng import Query
from ..verifier import EpsilonPolicy, error_rate_curve

ROC_COLUMNS = ("query_id", "k", "cheat_kind", "cheat_param", "epsilon", "p_fn", "p_tn", "trials", "seed")

DEFAULT_EPSILONS = tuple(float(e) for e in np.linspace(0.0, 0.5, 21))
DEFAULT_K = (100, 500, 1000, 2000, 4000)
PAPER_K = (1000, 5000, 10000, 20000, 40000)
LAPLACE_DIVISORS = (5, 10, 20, 50)


def default_strategies(cheat_sizes: Sequence[int] = DEFAULT_K, divisors: Sequence[float] = LAPLACE_DIVISORS) -> list[ServerStrategy]:
    return [SampleCheat(int(k)) for k in cheat_sizes] + [LaplaceCheat(float(d)) for d in divisors]


@dataclass(frozen=True)
class RocPoint:
    query_id: object
    k: int
    cheat_kind: str
    cheat_param: object
    epsilon: float
    p_fn: float
    p_tn: float
    trials: int
    seed: int

    def row(self):
        return [getattr(self, c) for c in ROC_COLUMNS]


def _sweep_cell(relation, query, query_id, k, strategy, epsilons, trials, seed, cell_seed):
    policies = [EpsilonPolicy(e) for e in epsilons]
    rates = error_rate_curve(relation, query, policies, k, strategy, trials, cell_seed)
    return [
        RocPoint(query_id, k, strategy.kind, strategy.param, float(e), r.p_fn, r.p_tn, trials, seed)
        for e, r in zip(epsilons, rates)
    ]


_WORKER_RELATION = None


def _init_worker(relation):
    global _WORKER_RELATION
    _WORKER_RELATION = relation


def _run_cell(args):
    return _sweep_cell(_WORKER_RELATION, *args)


def roc_sweep(
    relation: SignedRelation,
    queries: Mapping[object, Query] | Sequence[Query],
    k_values: Sequence[int],
    strategies: Sequence[ServerStrategy],
    epsilons: Sequence[float] = DEFAULT_EPSILONS,
    trials: int = 100,
    seed: int = 0,
    workers: int = 1,
) -> list[RocPoint]:
    """Error rates for every (query, k, strategy, epsilon) cell.

    All strategies for one (query, k) pair share the cell seed, so they are
    scored against the same owner sketches and nested cheater samples
    (common random numbers). Output order and values do not depend on
    ``workers``.
    """
    if not isinstance(queries, Mapping):
        queries = {i + 1: q for i, q in enumerate(queries)}
    if not queries or not k_values or not strategies or not len(epsilons):
        raise ValueError("query, k, strategy and epsilon grids must be non-empty")
    trials = check_positive_int(trials, "trials")
    for q in queries.values():
        q.validate(relation.schema)

    tasks = []
    for qi, (qid, query) in enumerate(queries.items()):
        for ki, k in enumerate(k_values):
            cell_seed = derive_seed(seed, qi, ki)
            for strategy in strategies:
                tasks.append((query, qid, int(k), strategy, tuple(epsilons), trials, seed, cell_seed))

    workers = max(1, int(workers))
    if workers == 1:
        results = [_sweep_cell(relation, *t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker, initargs=(relation,)) as pool:
            results = list(pool.map(_run_cell, tasks, chunksize=max(1, len(tasks) // (4 * workers))))
    return [p for cell in results for p in cell]


def workers_from_env(default: int = 1) -> int:
    value = os.environ.get("VERIQ_WORKERS")
    return int(value) if value else default


def write_roc_csv(path, points: Sequence[RocPoint]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(ROC_COLUMNS)
        for p in points:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in p.row()])


def read_roc_csv(path) -> list[RocPoint]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(
                RocPoint(
                    row["query_id"],
                    int(row["k"]),
                    row["cheat_kind"],
                    row["cheat_param"],
                    float(row["epsilon"]),
                    float(row["p_fn"]),
                    float(row["p_tn"]),
                    int(row["trials"]),
                    int(row["seed"]),
                )
            )
    return out


# ------------------------------------------------------------------ curves


def group_curves(points: Sequence[RocPoint]) -> dict[tuple, list[RocPoint]]:
    """Points keyed by (query_id, k, cheat_kind, cheat_param)."""
    curves: dict[tuple, list[RocPoint]] = {}
    for p in points:
        curves.setdefault((p.query_id, p.k, p.cheat_kind, str(p.cheat_param)), []).append(p)
    return curves


def auc(points: Sequence[RocPoint]) -> float:
    """Area under the (p_fn, p_tn) curve, anchored at (0, 0) and (1, 1)."""
    xy = sorted({(p.p_fn, p.p_tn) for p in points} | {(0.0, 0.0), (1.0, 1.0)})
    x = np.array([a for a, _ in xy])
    y = np.array([b for _, b in xy])
    # several p_tn values can share one p_fn; keep the upper envelope
    y = np.maximum.accumulate(y)
    trapezoid = getattr(np, "trapezoid", None) or np.trapz
    return float(trapezoid(y, x))


def curve_summary(points: Sequence[RocPoint]) -> list[dict]:
    rows = []
    for (qid, k, kind, param), pts in group_curves(points).items():
        rows.append({"query_id": qid, "k": k, "cheat_kind": kind, "cheat_param": param, "auc": auc(pts)})
    return rows


def as_dicts(points: Sequence[RocPoint]) -> list[dict]:
    return [asdict(p) for p in points]
