"""Server behaviour models: honest, sampling cheater, Laplace-noise cheater."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from ._validation import check_positive_int, check_random_state
from .authstore import SampleSketch, SignedRelation, draw_ids
from .exceptions import ConfigError, EmptyAggregateError, UnsupportedStrategyError
from .queryeng import Kind, Query, estimate_from_sketch, eval_exact


@dataclass(frozen=True)
class Honest:
    kind = "honest"

    @property
    def param(self):
        return ""

    def to_json(self):
        return {"kind": "honest"}


@dataclass(frozen=True)
class SampleCheat:
    """Answer from a fresh uniform sample of ``k`` tuples instead of a full scan."""

    k: int
    kind = "sample"

    def __post_init__(self):
        check_positive_int(self.k, "cheater sample size")

    @property
    def param(self):
        return self.k

    def to_json(self):
        return {"kind": "sample", "k": self.k}


@dataclass(frozen=True)
class LaplaceCheat:
    """Exact result plus Laplace noise of scale ``|r| / divisor``."""

    divisor: float
    kind = "laplace"

    def __post_init__(self):
        if not self.divisor > 0:
            raise ValueError(f"divisor must be positive, got {self.divisor}")

    @property
    def param(self):
        return self.divisor

    def to_json(self):
        return {"kind": "laplace", "divisor": self.divisor}


ServerStrategy = Union[Honest, SampleCheat, LaplaceCheat]


def strategy_from_json(obj) -> ServerStrategy:
    kind = obj.get("kind")
    try:
        if kind == "honest":
            return Honest()
        if kind == "sample":
            return SampleCheat(int(obj["k"]))
        if kind == "laplace":
            return LaplaceCheat(float(obj["divisor"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad strategy {obj!r}: {exc}") from None
    raise ConfigError(f"unknown strategy kind {kind!r}")


def is_cheat(strategy: ServerStrategy) -> bool:
    return not isinstance(strategy, Honest)


# ------------------------------------------------------------------ Laplace


def laplace_inverse_cdf(u, mu: float, b: float):
    """Laplace quantile for ``u`` in the open interval (-1/2, 1/2)."""
    u = np.asarray(u, dtype=np.float64)
    out = mu - b * np.sign(u) * np.log1p(-2.0 * np.abs(u))
    return float(out) if out.ndim == 0 else out


def sample_laplace(rng, mu: float, b: float, size=None):
    if not b > 0:
        raise ValueError(f"Laplace scale must be positive, got {b}")
    rng = check_random_state(rng)
    r = rng.random(size)
    # u = -1/2 exactly would give an infinite draw
    if size is None:
        while r == 0.0:
            r = rng.random()
    else:
        zero = r == 0.0
        while zero.any():
            r[zero] = rng.random(int(zero.sum()))
            zero = r == 0.0
    return laplace_inverse_cdf(r - 0.5, mu, b)


# ---------------------------------------------------------------- responses


@dataclass(frozen=True)
class ServerResponse:
    claim: object
    compute_cost: float
    work_tuples: list | None = None


def linear_sample_cost(k: int, n: int) -> float:
    """Fraction of a full scan's cost paid by a size-``k`` sampling cheater."""
    return min(1.0, k / n) if n else 1.0


def respond(
    strategy: ServerStrategy,
    relation: SignedRelation,
    query: Query,
    rng,
    config=None,
    with_work: bool = False,
    cost_model: Callable[[int, int], float] = linear_sample_cost,
    exact=None,
    exact_work=None,
) -> ServerResponse:
    """Produce a server's answer under ``strategy``.

    ``config`` (a GameConfig) supplies C(Q) for the modelled cost; without
    it costs are reported as fractions of one full scan. With ``with_work``
    the response carries the tuples the server used, for show-work audits.
    ``exact`` may carry a precomputed aggregate result to skip the scan, and
    ``exact_work`` the matching tuples for an honest show-work response.
    """
    rng = check_random_state(rng)
    full_cost = config.cost_honest if config is not None else 1.0

    if isinstance(strategy, Honest) or isinstance(strategy, LaplaceCheat):
        if isinstance(strategy, LaplaceCheat) and query.kind is Kind.SELECT:
            raise UnsupportedStrategyError("Laplace noise cannot be applied to a selection")
        if exact is None or query.kind is Kind.SELECT:
            try:
                exact = eval_exact(relation, query)
            except EmptyAggregateError:
                exact = None
        work = None
        if query.kind is Kind.SELECT:
            work = exact
        elif with_work:
            work = exact_work if exact_work is not None else eval_exact(relation, Query(Kind.SELECT, query.predicate))
        claim = exact
        if isinstance(strategy, LaplaceCheat) and exact is not None:
            scale = abs(float(exact)) / strategy.divisor
            # zero result: the noise distribution is degenerate
            claim = float(exact) + sample_laplace(rng, 0.0, scale) if scale > 0 else float(exact)
        return ServerResponse(claim, full_cost, work)

    if isinstance(strategy, SampleCheat):
        n = relation.n
        ids = draw_ids(n, strategy.k, rng)
        cost = cost_model(strategy.k, n) * full_cost
        query.validate(relation.schema)
        values = relation.values[ids - 1]
        mask = query.predicate.mask(values, relation.schema)
        if query.kind is Kind.SELECT:
            chosen = np.unique(ids[mask])
            tuples = [relation[int(i)] for i in chosen]
            return ServerResponse(tuples, cost, tuples)
        sample = SampleSketch(relation.schema, ids, values, n)
        try:
            claim = estimate_from_sketch(sample, query)
        except EmptyAggregateError:
            # an empty sample gives the cheater nothing to extrapolate; it claims 0
            claim = 0.0
        work = None
        if with_work:
            work = [relation[int(i)] for i in np.unique(ids[mask])]
        return ServerResponse(claim, cost, work)

    raise UnsupportedStrategyError(f"unknown strategy {strategy!r}")

