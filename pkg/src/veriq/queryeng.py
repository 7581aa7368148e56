"""Predicates, queries, exact evaluation and sketch extrapolation.

Query JSON form::

    {"kind": "count" | "sum" | "avg" | "stddev" | "select",
     "attr": "income",                       # sum/avg/stddev only
     "predicate": <predicate>}

Predicate JSON forms::

    {"op": "true"}
    {"op": "eq", "attr": "race", "value": 2}
    {"op": "range", "attr": "age", "low": 30, "high": null,
     "low_inclusive": false, "high_inclusive": true}
    {"op": "gt" | "ge" | "lt" | "le", "attr": "income", "value": 40000}
    {"op": "and", "left": <predicate>, "right": <predicate>}
    {"op": "or",  "left": <predicate>, "right": <predicate>}

Range bounds are inclusive unless the corresponding flag says otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Sequence, Union

import numpy as np

from .authstore import SampleSketch, Schema, SignedRelation, SignedTuple
from .exceptions import EmptyAggregateError, SchemaError, UndefinedEstimateError


@dataclass(frozen=True)
class TruePredicate:
    def mask(self, values: np.ndarray, schema: Schema) -> np.ndarray:
        return np.ones(len(values), dtype=bool)

    def attributes(self):
        return set()

    def to_json(self):
        return {"op": "true"}


@dataclass(frozen=True)
class Equals:
    attr: str
    value: int

    def mask(self, values, schema):
        return values[:, schema.index(self.attr)] == self.value

    def attributes(self):
        return {self.attr}

    def to_json(self):
        return {"op": "eq", "attr": self.attr, "value": self.value}


@dataclass(frozen=True)
class Range:
    attr: str
    low: int | None = None
    high: int | None = None
    low_inclusive: bool = True
    high_inclusive: bool = True

    def __post_init__(self):
        if self.low is not None and self.high is not None and self.low > self.high:
            raise SchemaError(f"range on {self.attr!r} has low {self.low} > high {self.high}")

    def mask(self, values, schema):
        col = values[:, schema.index(self.attr)]
        out = np.ones(len(col), dtype=bool)
        if self.low is not None:
            out &= (col >= self.low) if self.low_inclusive else (col > self.low)
        if self.high is not None:
            out &= (col <= self.high) if self.high_inclusive else (col < self.high)
        return out

    def attributes(self):
        return {self.attr}

    def to_json(self):
        return {
            "op": "range",
            "attr": self.attr,
            "low": self.low,
            "high": self.high,
            "low_inclusive": self.low_inclusive,
            "high_inclusive": self.high_inclusive,
        }


@dataclass(frozen=True)
class And:
    left: "Predicate"
    right: "Predicate"

    def mask(self, values, schema):
        return self.left.mask(values, schema) & self.right.mask(values, schema)

    def attributes(self):
        return self.left.attributes() | self.right.attributes()

    def to_json(self):
        return {"op": "and", "left": self.left.to_json(), "right": self.right.to_json()}


@dataclass(frozen=True)
class Or:
    left: "Predicate"
    right: "Predicate"

    def mask(self, values, schema):
        return self.left.mask(values, schema) | self.right.mask(values, schema)

    def attributes(self):
        return self.left.attributes() | self.right.attributes()

    def to_json(self):
        return {"op": "or", "left": self.left.to_json(), "right": self.right.to_json()}


Predicate = Union[TruePredicate, Equals, Range, And, Or]

# convenience constructors for the common comparison forms


def gt(attr, value):
    return Range(attr, low=value, low_inclusive=False)


def ge(attr, value):
    return Range(attr, low=value)


def lt(attr, value):
    return Range(attr, high=value, high_inclusive=False)


def le(attr, value):
    return Range(attr, high=value)


def predicate_from_json(obj: Mapping) -> Predicate:
    try:
        op = obj["op"]
        if op == "true":
            return TruePredicate()
        if op == "eq":
            return Equals(obj["attr"], int(obj["value"]))
        if op == "range":
            low, high = obj.get("low"), obj.get("high")
            return Range(
                obj["attr"],
                None if low is None else int(low),
                None if high is None else int(high),
                bool(obj.get("low_inclusive", True)),
                bool(obj.get("high_inclusive", True)),
            )
        if op in ("gt", "ge", "lt", "le"):
            return {"gt": gt, "ge": ge, "lt": lt, "le": le}[op](obj["attr"], int(obj["value"]))
        if op in ("and", "or"):
            cls = And if op == "and" else Or
            return cls(predicate_from_json(obj["left"]), predicate_from_json(obj["right"]))
    except (KeyError, TypeError) as exc:
        raise SchemaError(f"malformed predicate {obj!r}: {exc}") from None
    raise SchemaError(f"unknown predicate op {op!r}")


def predicate_matches(values: Sequence[int] | Mapping[str, int], predicate: Predicate, schema: Schema | Sequence[str] | None = None) -> bool:
    """Evaluate ``predicate`` on one tuple.

    ``values`` is either a mapping of attribute name to value, or a
    sequence in ``schema`` order.
    """
    if isinstance(values, Mapping):
        schema = Schema(tuple(values))
        row = [values[a] for a in schema]
    else:
        if schema is None:
            raise SchemaError("a schema is required for positional values")
        if not isinstance(schema, Schema):
            schema = Schema(tuple(schema))
        row = list(values)
    check_predicate(predicate, schema)
    return bool(predicate.mask(np.asarray([row], dtype=np.int64), schema)[0])


def check_predicate(predicate: Predicate, schema: Schema) -> None:
    for attr in predicate.attributes():
        schema.index(attr)


class Kind(str, Enum):
    COUNT = "count"
    SUM = "sum"
    AVG = "avg"
    STDDEV = "stddev"
    SELECT = "select"


@dataclass(frozen=True)
class Query:
    kind: Kind
    predicate: Predicate = TruePredicate()
    attr: str | None = None

    def __post_init__(self):
        kind = Kind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind in (Kind.SUM, Kind.AVG, Kind.STDDEV) and self.attr is None:
            raise SchemaError(f"{kind.value} query needs an attribute")
        if kind in (Kind.COUNT, Kind.SELECT) and self.attr is not None:
            raise SchemaError(f"{kind.value} query takes no attribute")

    @property
    def is_aggregate(self) -> bool:
        return self.kind is not Kind.SELECT

    def validate(self, schema: Schema) -> None:
        check_predicate(self.predicate, schema)
        if self.attr is not None:
            schema.index(self.attr)

    def to_json(self) -> dict:
        out = {"kind": self.kind.value, "predicate": self.predicate.to_json()}
        if self.attr is not None:
            out["attr"] = self.attr
        return out

    @classmethod
    def from_json(cls, obj: Mapping) -> "Query":
        if "kind" not in obj:
            raise SchemaError(f"query {obj!r} has no 'kind'")
        pred = predicate_from_json(obj.get("predicate", {"op": "true"}))
        try:
            return cls(Kind(obj["kind"]), pred, obj.get("attr"))
        except ValueError as exc:
            raise SchemaError(str(exc)) from None


def count(predicate=TruePredicate()):
    return Query(Kind.COUNT, predicate)


def total(attr, predicate=TruePredicate()):
    return Query(Kind.SUM, predicate, attr)


def avg(attr, predicate=TruePredicate()):
    return Query(Kind.AVG, predicate, attr)


def stddev(attr, predicate=TruePredicate()):
    return Query(Kind.STDDEV, predicate, attr)


def select(predicate=TruePredicate()):
    return Query(Kind.SELECT, predicate)


def _aggregate(kind: Kind, column: np.ndarray):
    """Aggregate over the matching column values; None when undefined."""
    if kind is Kind.COUNT:
        return int(len(column))
    if kind is Kind.SUM:
        if len(column) and int(np.abs(column).max()) * len(column) >= 2**62:
            return sum(int(v) for v in column)
        return int(np.sum(column, dtype=np.int64))
    if len(column) == 0:
        return None
    col = column.astype(np.float64)
    if kind is Kind.AVG:
        return float(col.mean())
    return float(col.std())


def matching_mask(relation: SignedRelation, query: Query) -> np.ndarray:
    query.validate(relation.schema)
    return query.predicate.mask(relation.values, relation.schema)


def eval_exact(relation: SignedRelation, query: Query):
    """Full-scan result: an int/float for aggregates, tuples for Select."""
    mask = matching_mask(relation, query)
    if query.kind is Kind.SELECT:
        return [relation[int(i) + 1] for i in np.flatnonzero(mask)]
    column = relation.column(query.attr)[mask] if query.attr else mask[mask]
    value = _aggregate(query.kind, column)
    if value is None:
        raise EmptyAggregateError(f"{query.kind.value} over zero matching tuples")
    return value


def aggregate_tuples(tuples: Sequence[SignedTuple], query: Query, schema: Schema):
    """Aggregate recomputed from an explicit tuple list (matching ones only)."""
    if not tuples:
        values = np.empty((0, len(schema)), dtype=np.int64)
    else:
        values = np.asarray([t.values for t in tuples], dtype=np.int64)
    query.validate(schema)
    mask = query.predicate.mask(values, schema)
    column = values[mask, schema.index(query.attr)] if query.attr else mask[mask]
    return _aggregate(query.kind, column)


def estimate_from_sketch(sketch: SampleSketch, query: Query) -> float:
    """Extrapolate the query result from the sketch.

    Count and Select sizes are scaled by N/k, as is Sum; Avg and StdDev are
    the sketch statistics over matching entries.
    """
    query.validate(sketch.schema)
    mask = query.predicate.mask(sketch.values, sketch.schema)
    k, n = sketch.k, sketch.n
    if query.kind in (Kind.COUNT, Kind.SELECT):
        return float(np.count_nonzero(mask)) / k * n
    column = sketch.values[mask, sketch.schema.index(query.attr)]
    if query.kind is Kind.SUM:
        return float(np.sum(column, dtype=np.float64)) / k * n
    value = _aggregate(query.kind, column)
    if value is None:
        raise UndefinedEstimateError(f"no sketch entries match the {query.kind.value} predicate")
    return value


def result_equal(claimed, exact, query: Query, rel_tol: float = 1e-9) -> bool:
    """Audit comparison: exact for Count/Sum, relative tolerance otherwise,
    id-set equality for Select."""
    if query.kind is Kind.SELECT:
        return {t.id for t in claimed} == {t.id for t in exact}
    try:
        claimed = float(claimed) if not isinstance(claimed, (int, np.integer)) else int(claimed)
    except (TypeError, ValueError):
        return False
    if query.kind in (Kind.COUNT, Kind.SUM):
        return claimed == exact
    return math.isclose(claimed, exact, rel_tol=rel_tol, abs_tol=0.0)
