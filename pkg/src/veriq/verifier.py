"""Owner-side verification.

Local verification compares a server's claim with an estimate extrapolated
from the owner's sketch and escalates to an exact audit when they disagree
by more than a relative epsilon. This module also holds the two-cloud
"show your work" audit and the McDiarmid-style tail bound and sample-size
calculators.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from ._validation import check_nonnegative, check_positive_int, derive_seed
from .authstore import SampleSketch, Schema, SignedRelation, SignedTuple, draw_sketch, verify_tuple
from .exceptions import (
    EmptyAggregateError,
    InvalidInfluenceError,
    NoMismatchError,
    TamperError,
    UnboundedSampleSizeError,
)
from .queryeng import Kind, Query, aggregate_tuples, estimate_from_sketch, eval_exact, result_equal


@dataclass(frozen=True)
class EpsilonPolicy:
    """Acceptance tolerance relative to the sketch estimate.

    ``absolute_floor`` only applies when the estimate is exactly zero.
    """

    relative: float
    absolute_floor: float = 0.0

    def __post_init__(self):
        check_nonnegative(self.relative, "relative epsilon")
        check_nonnegative(self.absolute_floor, "absolute floor")

    def to_json(self):
        return {"relative": self.relative, "absolute_floor": self.absolute_floor}

    @classmethod
    def from_json(cls, obj):
        return cls(float(obj["relative"]), float(obj.get("absolute_floor", 0.0)))


class Decision(str, Enum):
    ACCEPT = "accept"
    ESCALATE = "escalate"


@dataclass(frozen=True)
class Verdict:
    decision: Decision
    estimate: float | None
    reason: str = ""
    evidence: bool = False  # direct proof of cheating (bad MAC, non-matching tuple)

    @property
    def accepted(self) -> bool:
        return self.decision is Decision.ACCEPT

    def to_json(self):
        return {
            "decision": self.decision.value,
            "estimate": self.estimate,
            "reason": self.reason,
            "evidence": self.evidence,
        }


@dataclass(frozen=True)
class ErrorRates:
    """Local-verifier error rates.

    ``p_fn`` is the fraction of honest claims escalated and ``p_tn`` the
    fraction of cheating claims escalated; the other two are complements.
    """

    p_fn: float
    p_tn: float

    def __post_init__(self):
        for name in ("p_fn", "p_tn"):
            value = float(getattr(self, name))
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {value}")
            object.__setattr__(self, name, value)

    @property
    def p_tp(self) -> float:
        return 1.0 - self.p_fn

    @property
    def p_fp(self) -> float:
        return 1.0 - self.p_tn

    def to_json(self):
        return {"p_tp": self.p_tp, "p_tn": self.p_tn, "p_fp": self.p_fp, "p_fn": self.p_fn}

    @classmethod
    def from_json(cls, obj):
        if "p_fn" in obj:
            p_fn = float(obj["p_fn"])
        else:
            p_fn = 1.0 - float(obj["p_tp"])
        if "p_tn" in obj:
            p_tn = float(obj["p_tn"])
        else:
            p_tn = 1.0 - float(obj["p_fp"])
        rates = cls(p_fn, p_tn)
        for name in ("p_tp", "p_fp"):
            if name in obj and not math.isclose(float(obj[name]), getattr(rates, name), abs_tol=1e-12):
                raise ValueError(f"{name}={obj[name]} inconsistent with its complement")
        return rates


def within_tolerance(claimed: float, estimate: float, policy: EpsilonPolicy) -> bool:
    if estimate == 0:
        return abs(claimed) <= policy.absolute_floor
    return abs(claimed - estimate) <= policy.relative * abs(estimate)


def local_verify_aggregate(sketch: SampleSketch, query: Query, claimed, policy: EpsilonPolicy) -> Verdict:
    if not query.is_aggregate:
        raise ValueError("local_verify_aggregate needs an aggregate query")
    try:
        estimate = estimate_from_sketch(sketch, query)
    except EmptyAggregateError:
        return Verdict(Decision.ESCALATE, None, "undefined sketch estimate")
    try:
        claimed = float(claimed)
    except (TypeError, ValueError):
        return Verdict(Decision.ESCALATE, estimate, "claim is not a number")
    if math.isnan(claimed):
        return Verdict(Decision.ESCALATE, estimate, "claim is NaN")
    if within_tolerance(claimed, estimate, policy):
        return Verdict(Decision.ACCEPT, estimate)
    return Verdict(Decision.ESCALATE, estimate, f"deviation {abs(claimed - estimate):.6g} exceeds tolerance")


def _selection_evidence(tuples: Sequence[SignedTuple], query: Query, schema: Schema, key: bytes | None):
    if key is not None:
        bad = [t.id for t in tuples if not verify_tuple(t, key)]
        if bad:
            return f"MAC failure on ids {sorted(bad)}"
    if tuples:
        values = np.asarray([t.values for t in tuples], dtype=np.int64)
        mask = query.predicate.mask(values, schema)
        if not mask.all():
            ids = sorted(t.id for t, ok in zip(tuples, mask) if not ok)
            return f"tuples {ids} do not match the query"
    return None


def local_verify_selection(sketch: SampleSketch, query: Query, claimed: Sequence[SignedTuple], policy: EpsilonPolicy, key: bytes | None) -> Verdict:
    """Check a claimed selection result.

    Bad MACs and non-matching tuples are direct evidence of cheating. With
    clean tuples the result is accepted unless it holds noticeably fewer
    distinct tuples than the sketch predicts. ``key=None`` skips the MAC
    check (for simulations over tuples already known to be authentic).
    """
    if query.kind is not Kind.SELECT:
        raise ValueError("local_verify_selection needs a select query")
    query.validate(sketch.schema)
    estimate = estimate_from_sketch(sketch, query)
    problem = _selection_evidence(claimed, query, sketch.schema, key)
    if problem:
        return Verdict(Decision.ESCALATE, estimate, problem, evidence=True)
    size = len({t.id for t in claimed})
    if size >= estimate - policy.relative * estimate:
        return Verdict(Decision.ACCEPT, estimate)
    return Verdict(Decision.ESCALATE, estimate, f"{size} tuples returned, about {estimate:.1f} expected")


def local_verify(sketch: SampleSketch, query: Query, claimed, policy: EpsilonPolicy, key: bytes | None = None) -> Verdict:
    if query.kind is Kind.SELECT:
        return local_verify_selection(sketch, query, claimed, policy, key)
    return local_verify_aggregate(sketch, query, claimed, policy)


class AuditResult(str, Enum):
    HONEST = "honest"
    CHEAT = "cheat"


def audit_exact(relation: SignedRelation, query: Query, claimed, key: bytes | None = None, rel_tol: float = 1e-9) -> AuditResult:
    """Recompute the query over the full relation and compare.

    With ``key`` the retrieved relation is MAC-checked first; a failure
    raises :class:`TamperError` rather than returning CHEAT.
    """
    if key is not None:
        bad = [t.id for t in relation if not verify_tuple(t, key)]
        if bad:
            raise TamperError(bad)
    try:
        exact = eval_exact(relation, query)
    except EmptyAggregateError:
        undefined = claimed is None or (isinstance(claimed, float) and math.isnan(claimed))
        return AuditResult.HONEST if undefined else AuditResult.CHEAT
    if claimed is None:
        return AuditResult.CHEAT
    return AuditResult.HONEST if result_equal(claimed, exact, query, rel_tol) else AuditResult.CHEAT


def _work_of(response):
    work = getattr(response, "work_tuples", None)
    if work is None and isinstance(getattr(response, "claim", None), (list, tuple)):
        work = response.claim
    return list(work or ())


def _claims_agree(a, b, query: Query) -> bool:
    if query.kind is Kind.SELECT:
        return {t.id for t in a} == {t.id for t in b}
    if a is None or b is None:
        return a is None and b is None
    if query.kind in (Kind.COUNT, Kind.SUM):
        return float(a) == float(b)
    return math.isclose(float(a), float(b), rel_tol=1e-9, abs_tol=0.0)


def show_work_audit(query: Query, response_a, response_b, key: bytes, schema: Schema) -> set[str]:
    """Identify cheaters among two mismatched responses.

    Each response exposes ``claim`` and ``work_tuples`` (the tuples it used;
    for Select the claim itself). A responder is flagged when any returned
    tuple fails its MAC or the predicate, when it returns fewer authenticated
    matching tuples than the other, or when its aggregate claim differs from
    the aggregate of its own tuples. Returns a subset of ``{"A", "B"}``.
    """
    if _claims_agree(response_a.claim, response_b.claim, query):
        raise NoMismatchError("responses agree; nothing to audit")
    query.validate(schema)

    def inspect(response):
        work = _work_of(response)
        forged = any(not verify_tuple(t, key) for t in work)
        authentic = {t.id: t for t in work if verify_tuple(t, key)}
        tuples = list(authentic.values())
        if tuples:
            values = np.asarray([t.values for t in tuples], dtype=np.int64)
            mask = query.predicate.mask(values, schema)
        else:
            mask = np.zeros(0, dtype=bool)
        irrelevant = not mask.all()
        matching = [t for t, ok in zip(tuples, mask) if ok]
        inconsistent = False
        if query.is_aggregate:
            recomputed = aggregate_tuples(matching, query, schema)
            claim = response.claim
            if recomputed is None or claim is None:
                inconsistent = not (recomputed is None and claim is None)
            else:
                inconsistent = not _claims_agree(claim, recomputed, query)
        return forged or irrelevant or inconsistent, len(matching)

    bad_a, n_a = inspect(response_a)
    bad_b, n_b = inspect(response_b)
    cheaters = set()
    if bad_a or n_a < n_b:
        cheaters.add("A")
    if bad_b or n_b < n_a:
        cheaters.add("B")
    return cheaters


# ------------------------------------------------------- concentration bounds


def mcdiarmid_bound(k: int, epsilon: float, c, clamp: bool = True) -> float:
    """Two-sided bounded-differences tail bound ``2 exp(-2 eps^2 / sum c_i^2)``.

    ``c`` is either one influence bound applied to all ``k`` draws or a
    sequence of ``k`` bounds. With ``clamp`` the result is capped at 1.
    """
    k = check_positive_int(k, "k")
    epsilon = check_nonnegative(epsilon, "epsilon")
    c = np.asarray(c, dtype=np.float64)
    if c.ndim == 0:
        c = np.full(k, float(c))
    elif c.shape != (k,):
        raise InvalidInfluenceError(f"expected {k} influence bounds, got {c.shape[0]}")
    if not np.all(c > 0):
        raise InvalidInfluenceError("influence bounds must be positive")
    bound = 2.0 * math.exp(-2.0 * epsilon**2 / float(np.sum(c**2)))
    return min(bound, 1.0) if clamp else bound


def sample_size_coefficient(relative_epsilon: float, delta: float) -> float:
    """Multiplier on (max|a| / result)^2 giving the required sample size."""
    if relative_epsilon <= 0:
        raise UnboundedSampleSizeError("epsilon must be positive")
    if not 0 < delta < 1:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    return math.log(2.0 / delta) / (2.0 * relative_epsilon**2)


def _mean_bound(k: int, epsilon: float, c_tuple: float) -> float:
    return 2.0 * math.exp(-2.0 * epsilon**2 * k / c_tuple**2)


def solve_sample_size(epsilon: float, delta: float, c_tuple: float) -> int:
    """Smallest k with ``2 exp(-2 eps^2 k / c_tuple^2) <= delta``.

    ``epsilon`` is the absolute deviation for a mean-type statistic whose
    per-draw influence is ``c_tuple / k``.
    """
    if epsilon <= 0:
        raise UnboundedSampleSizeError("epsilon must be positive")
    if not 0 < delta < 1:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    if c_tuple <= 0:
        raise InvalidInfluenceError("c_tuple must be positive")
    k = max(1, math.ceil(c_tuple**2 * math.log(2.0 / delta) / (2.0 * epsilon**2)))
    # the closed form can land one off either way under rounding
    while k > 1 and _mean_bound(k - 1, epsilon, c_tuple) <= delta:
        k -= 1
    while _mean_bound(k, epsilon, c_tuple) > delta:
        k += 1
    return k


# ------------------------------------------------------------- error rates


def _exact_or_none(relation, query):
    try:
        return eval_exact(relation, query)
    except EmptyAggregateError:
        return None


def _claim_decisions(sketch, query, claim, policies, key=None):
    """Accept flags for one claim against one sketch across policies."""
    if query.kind is Kind.SELECT:
        return [local_verify_selection(sketch, query, claim, p, key).accepted for p in policies]
    if claim is None:
        return [False] * len(policies)
    try:
        estimate = estimate_from_sketch(sketch, query)
    except EmptyAggregateError:
        return [False] * len(policies)
    claim = float(claim)
    return [within_tolerance(claim, estimate, p) for p in policies]


def error_rate_curve(
    relation: SignedRelation,
    query: Query,
    policies: Sequence[EpsilonPolicy],
    k: int,
    strategy,
    trials: int,
    seed,
) -> list[ErrorRates]:
    """Error rates for every policy, reusing one fresh sketch per trial.

    Trial ``t`` draws the owner's sketch from ``derive_seed(seed, t, 0)`` and
    the cheater's randomness from ``derive_seed(seed, t, 1)``, so cells that
    share ``seed`` also share sketches.
    """
    from .adversary import respond

    trials = check_positive_int(trials, "trials")
    k = check_positive_int(k, "k")
    honest = _exact_or_none(relation, query)
    fn = np.zeros(len(policies))
    tn = np.zeros(len(policies))
    for t in range(trials):
        sketch = draw_sketch(relation, k, derive_seed(seed, t, 0))
        cheat = respond(strategy, relation, query, np.random.default_rng(derive_seed(seed, t, 1)), exact=honest).claim
        fn += np.logical_not(_claim_decisions(sketch, query, honest, policies))
        tn += np.logical_not(_claim_decisions(sketch, query, cheat, policies))
    return [ErrorRates(f / trials, c / trials) for f, c in zip(fn, tn)]


def estimate_error_rates(
    relation: SignedRelation,
    query: Query,
    policy: EpsilonPolicy,
    k: int,
    strategy,
    trials: int,
    seed,
) -> ErrorRates:
    """Monte-Carlo p_fn / p_tn for one verifier configuration."""
    return error_rate_curve(relation, query, [policy], k, strategy, trials, seed)[0]
