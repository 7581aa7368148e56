"""scikit-learn style front end to the sketch verifier."""

from __future__ import annotations

from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_nonnegative, check_positive_int, check_random_state
from .authstore import SignedRelation, draw_sketch, refresh_sketch, resample_exchange
from .exceptions import EmptyAggregateError
from .queryeng import Query, estimate_from_sketch
from .verifier import EpsilonPolicy, Verdict, local_verify


class SketchVerifier(BaseEstimator):
    """Draws a uniform sketch from a signed relation and judges server claims.

    ``fit`` takes the relation (the owner's copy before outsourcing) and
    keeps only a ``k``-tuple sketch. ``predict`` takes parallel sequences of
    queries and claims and returns True where a claim is accepted.

    >>> v = SketchVerifier(k=500, epsilon=0.05, random_state=0).fit(relation)  # doctest: +SKIP
    >>> v.predict([count_query], [claimed_count])  # doctest: +SKIP
    array([ True])
    """

    def __init__(self, k: int = 1000, epsilon: float = 0.05, absolute_floor: float = 0.0, random_state=None, key: bytes | None = None):
        self.k = k
        self.epsilon = epsilon
        self.absolute_floor = absolute_floor
        self.random_state = random_state
        self.key = key

    def _policy(self) -> EpsilonPolicy:
        return EpsilonPolicy(check_nonnegative(self.epsilon, "epsilon"), check_nonnegative(self.absolute_floor, "absolute_floor"))

    def fit(self, relation: SignedRelation, y=None):
        if not isinstance(relation, SignedRelation):
            raise TypeError("fit expects a SignedRelation")
        k = check_positive_int(self.k, "k")
        self._rng = check_random_state(self.random_state)
        self.sketch_ = draw_sketch(relation, k, self._rng)
        self.n_population_ = relation.n
        self.schema_ = relation.schema
        return self

    def estimate(self, queries: Sequence[Query]) -> np.ndarray:
        """Sketch estimates; NaN where the estimate is undefined."""
        check_is_fitted(self, "sketch_")
        out = np.empty(len(queries))
        for i, q in enumerate(queries):
            try:
                out[i] = estimate_from_sketch(self.sketch_, q)
            except EmptyAggregateError:
                out[i] = np.nan
        return out

    def verdicts(self, queries: Sequence[Query], claims: Sequence) -> list[Verdict]:
        check_is_fitted(self, "sketch_")
        if len(queries) != len(claims):
            raise ValueError(f"{len(queries)} queries but {len(claims)} claims")
        policy = self._policy()
        return [local_verify(self.sketch_, q, c, policy, self.key) for q, c in zip(queries, claims)]

    def predict(self, queries: Sequence[Query], claims: Sequence) -> np.ndarray:
        return np.array([v.accepted for v in self.verdicts(queries, claims)], dtype=bool)

    def decision_function(self, queries: Sequence[Query], claims: Sequence) -> np.ndarray:
        """Tolerance slack ``eps*|est| - |claim - est|``; non-negative means accept.

        Selections and undefined estimates give NaN.
        """
        est = self.estimate(queries)
        eps = self._policy().relative
        out = np.full(len(queries), np.nan)
        for i, (q, c) in enumerate(zip(queries, claims)):
            if q.is_aggregate and c is not None and not np.isnan(est[i]):
                out[i] = eps * abs(est[i]) - abs(float(c) - est[i])
        return out

    def refresh(self, server, dummy: Sequence[int] = (), ids: Sequence[int] | None = None):
        """Replace sketch tuples via the resample exchange.

        ``ids`` defaults to every distinct sketch id. Requires ``key``.
        """
        check_is_fitted(self, "sketch_")
        if self.key is None:
            raise ValueError("refresh needs the MAC key")
        wanted = sorted(set(int(i) for i in (self.sketch_.ids if ids is None else ids)))
        fetched = resample_exchange(server, wanted, dummy, self.key, n=self.n_population_, rng=self._rng)
        self.sketch_ = refresh_sketch(self.sketch_, fetched)
        return self
