"""Signed tuple storage.

The owner assigns every row a consecutive id, appends an HMAC-SHA-256 code
over a canonical byte encoding, and keeps a uniform with-replacement sample
(the sketch) for later local verification.
"""

from __future__ import annotations

import csv
import hashlib
import hmac as _hmac
import os
import re
from dataclasses import dataclass, field
from typing import Iterable, Protocol, Sequence

import numpy as np

from ._validation import check_positive_int, check_random_state
from .exceptions import (
    EmptyPopulationError,
    InvalidKeyError,
    SchemaError,
    TamperError,
    WithheldTupleError,
)

MAC_SIZE = 32
FIELD_SEP = b"\x1f"
RECORD_END = b"\x1e"
INT64_MIN = -(2**63)
INT64_MAX = 2**63 - 1

_IDENT = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")
_RESERVED = {"id", "mac"}


def hmac(key: bytes, message: bytes) -> bytes:
    """HMAC-SHA-256 of ``message`` under ``key`` (RFC 2104)."""
    if not key:
        raise InvalidKeyError("HMAC key must be non-empty")
    return _hmac.new(bytes(key), bytes(message), hashlib.sha256).digest()


def canonical_encode(tuple_id: int, values: Iterable[int]) -> bytes:
    parts = [str(int(tuple_id)).encode("ascii")]
    parts.extend(str(int(v)).encode("ascii") for v in values)
    return FIELD_SEP.join(parts) + RECORD_END


@dataclass(frozen=True)
class Schema:
    attributes: tuple[str, ...]

    def __post_init__(self):
        attrs = tuple(self.attributes)
        object.__setattr__(self, "attributes", attrs)
        if len(set(attrs)) != len(attrs):
            raise SchemaError(f"duplicate attribute names in {attrs}")
        for name in attrs:
            if not _IDENT.match(name):
                raise SchemaError(f"attribute name {name!r} is not an identifier")
            if name in _RESERVED:
                raise SchemaError(f"attribute name {name!r} is reserved")

    def __len__(self):
        return len(self.attributes)

    def __iter__(self):
        return iter(self.attributes)

    def __contains__(self, name):
        return name in self.attributes

    def index(self, name: str) -> int:
        try:
            return self.attributes.index(name)
        except ValueError:
            raise SchemaError(f"unknown attribute {name!r}; schema has {self.attributes}") from None


@dataclass(frozen=True)
class SignedTuple:
    id: int
    values: tuple[int, ...]
    mac: bytes

    def encode(self) -> bytes:
        return canonical_encode(self.id, self.values)


def verify_tuple(tup: SignedTuple, key: bytes) -> bool:
    """True iff the tuple's MAC matches its id and values under ``key``."""
    try:
        expected = hmac(key, canonical_encode(tup.id, tup.values))
    except (TypeError, ValueError, OverflowError):
        return False
    return _hmac.compare_digest(expected, bytes(tup.mac))


def _as_int64_matrix(rows, width: int) -> np.ndarray:
    if isinstance(rows, np.ndarray) and rows.dtype.kind in "iu":
        if rows.ndim != 2 or rows.shape[1] != width:
            raise SchemaError(f"rows have shape {rows.shape}, schema expects width {width}")
        return rows.astype(np.int64)
    out = np.empty((len(rows), width), dtype=np.int64)
    for i, row in enumerate(rows):
        if len(row) != width:
            raise SchemaError(f"row {i + 1} has {len(row)} values, schema expects {width}")
        for j, v in enumerate(row):
            if isinstance(v, bool) or int(v) != v:
                raise SchemaError(f"row {i + 1}, column {j}: {v!r} is not an integer")
            if not INT64_MIN <= int(v) <= INT64_MAX:
                raise SchemaError(f"row {i + 1}, column {j}: {v} outside signed 64-bit range")
            out[i, j] = int(v)
    return out


@dataclass(frozen=True, eq=False)
class SignedRelation:
    """Immutable relation of signed tuples with ids 1..n.

    Values live in a read-only ``(n, len(schema))`` int64 array so that
    scans and sketch draws stay vectorised; ``tuples`` materialises
    :class:`SignedTuple` objects on demand.
    """

    schema: Schema
    values: np.ndarray
    macs: tuple[bytes, ...] = field(repr=False)

    def __post_init__(self):
        values = np.array(self.values, dtype=np.int64, copy=True).reshape(len(self.macs), len(self.schema))
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "macs", tuple(bytes(m) for m in self.macs))

    @property
    def n(self) -> int:
        return len(self.macs)

    def __len__(self):
        return self.n

    def __getitem__(self, tuple_id: int) -> SignedTuple:
        if not 1 <= tuple_id <= self.n:
            raise KeyError(tuple_id)
        row = self.values[tuple_id - 1]
        return SignedTuple(int(tuple_id), tuple(int(v) for v in row), self.macs[tuple_id - 1])

    def __iter__(self):
        for i in range(1, self.n + 1):
            yield self[i]

    @property
    def tuples(self) -> list[SignedTuple]:
        return list(self)

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.schema.index(name)]

    @classmethod
    def from_tuples(cls, schema: Schema, tuples: Sequence[SignedTuple]) -> "SignedRelation":
        """Rebuild from explicit tuples; ids must be exactly 1..n in order."""
        for pos, t in enumerate(tuples, start=1):
            if t.id != pos:
                raise SchemaError(f"tuple at position {pos} has id {t.id}; ids must be consecutive from 1")
        values = _as_int64_matrix([t.values for t in tuples], len(schema))
        return cls(schema, values, tuple(t.mac for t in tuples))


def sign_relation(schema: Schema | Sequence[str], rows: Sequence[Sequence[int]], key: bytes) -> SignedRelation:
    """Assign ids 1..N in input order and MAC every row."""
    if not isinstance(schema, Schema):
        schema = Schema(tuple(schema))
    if not key:
        raise InvalidKeyError("HMAC key must be non-empty")
    values = _as_int64_matrix(rows, len(schema))
    macs = tuple(hmac(key, canonical_encode(i + 1, row.tolist())) for i, row in enumerate(values))
    return SignedRelation(schema, values, macs)


def verify_relation(relation: SignedRelation, key: bytes) -> list[int]:
    """Ids whose MAC does not verify (empty when intact)."""
    return [t.id for t in relation if not verify_tuple(t, key)]


@dataclass(frozen=True, eq=False)
class SampleSketch:
    """Owner-side uniform with-replacement sample of ``k`` tuples."""

    schema: Schema
    ids: np.ndarray
    values: np.ndarray
    n: int
    seed: object = None

    def __post_init__(self):
        ids = np.array(self.ids, dtype=np.int64, copy=True)
        values = np.array(self.values, dtype=np.int64, copy=True).reshape(len(ids), len(self.schema))
        ids.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "values", values)

    @property
    def k(self) -> int:
        return len(self.ids)

    @property
    def entries(self) -> list[tuple[int, tuple[int, ...]]]:
        return [(int(i), tuple(int(v) for v in row)) for i, row in zip(self.ids, self.values)]


def draw_ids(n: int, k: int, rng) -> np.ndarray:
    """``k`` independent uniform ids in 1..n."""
    return check_random_state(rng).integers(1, n + 1, size=k, dtype=np.int64)


def draw_sketch(relation: SignedRelation, k: int, seed) -> SampleSketch:
    k = check_positive_int(k, "k")
    if relation.n == 0:
        raise EmptyPopulationError("cannot sample from an empty relation")
    ids = draw_ids(relation.n, k, seed)
    stored_seed = seed if not isinstance(seed, np.random.Generator) else None
    return SampleSketch(relation.schema, ids, relation.values[ids - 1], relation.n, stored_seed)


def refresh_sketch(sketch: SampleSketch, replacements: dict[int, SignedTuple]) -> SampleSketch:
    """Replace sketch values with freshly fetched tuples for the given ids."""
    values = np.array(sketch.values, copy=True)
    for pos, tid in enumerate(sketch.ids):
        t = replacements.get(int(tid))
        if t is not None:
            values[pos] = t.values
    return SampleSketch(sketch.schema, sketch.ids, values, sketch.n, sketch.seed)


class TupleServer(Protocol):
    def fetch(self, ids: Sequence[int]) -> list[SignedTuple]: ...


class StoredRelation:
    """Honest server holding a signed relation."""

    def __init__(self, relation: SignedRelation):
        self.relation = relation
        self.requests: list[tuple[int, ...]] = []

    def fetch(self, ids):
        self.requests.append(tuple(ids))
        return [self.relation[i] for i in ids if 1 <= i <= self.relation.n]


def resample_exchange(server: TupleServer, requested, dummy, key: bytes, n: int | None = None, rng=None) -> dict[int, SignedTuple]:
    """Fetch ``requested`` tuples hidden among ``dummy`` ids and check them.

    The server sees one request over the union in sorted order (or shuffled
    when ``rng`` is given), so it cannot tell which ids the owner wanted.
    Returns the verified requested tuples keyed by id.
    """
    requested = {int(i) for i in requested}
    union = requested | {int(i) for i in dummy}
    if n is not None:
        bad = sorted(i for i in union if not 1 <= i <= n)
        if bad:
            raise ValueError(f"ids outside [1, {n}]: {bad}")
    order = sorted(union)
    if rng is not None:
        order = [int(i) for i in check_random_state(rng).permutation(order)]
    returned = server.fetch(order)

    tampered = [t.id for t in returned if not verify_tuple(t, key)]
    if tampered:
        raise TamperError(tampered)
    by_id = {t.id: t for t in returned}
    missing = requested - by_id.keys()
    if missing:
        raise WithheldTupleError(missing)
    return {i: by_id[i] for i in sorted(requested)}


# ---------------------------------------------------------------- CSV I/O


def read_csv(path) -> tuple[Schema, list[list[int]]]:
    """Read an unsigned CSV whose header row is the schema."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: missing header row") from None
        schema = Schema(tuple(h.strip() for h in header))
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(schema):
                raise SchemaError(f"{path}:{lineno}: expected {len(schema)} fields, got {len(row)}")
            try:
                rows.append([int(v) for v in row])
            except ValueError as exc:
                raise SchemaError(f"{path}:{lineno}: {exc}") from None
    return schema, rows


def write_csv(path, schema: Schema | Sequence[str], rows) -> None:
    attrs = schema.attributes if isinstance(schema, Schema) else tuple(schema)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(attrs)
        writer.writerows([int(v) for v in row] for row in rows)


def write_signed_csv(path, relation: SignedRelation) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("id", *relation.schema.attributes, "mac"))
        for i, (row, mac) in enumerate(zip(relation.values.tolist(), relation.macs), start=1):
            writer.writerow((i, *row, mac.hex()))


def read_signed_tuples(path) -> tuple[Schema, list[SignedTuple]]:
    """Parse a signed CSV without enforcing id order or MAC validity."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "id" or header[-1] != "mac":
            raise SchemaError(f"{path}: signed CSV needs 'id' first and 'mac' last")
        schema = Schema(tuple(header[1:-1]))
        tuples = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise SchemaError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                mac = bytes.fromhex(row[-1])
                tuples.append(SignedTuple(int(row[0]), tuple(int(v) for v in row[1:-1]), mac))
            except ValueError as exc:
                raise SchemaError(f"{path}:{lineno}: {exc}") from None
    return schema, tuples


def read_signed_csv(path, key: bytes | None = None) -> SignedRelation:
    """Load a signed CSV; with ``key`` every MAC is checked."""
    schema, tuples = read_signed_tuples(path)
    if key is not None:
        bad = [t.id for t in tuples if not verify_tuple(t, key)]
        if bad:
            raise TamperError(bad)
    return SignedRelation.from_tuples(schema, tuples)


def load_key(path) -> bytes:
    """Read an owner key stored as hex text (64 hex digits for 32 bytes)."""
    with open(path) as fh:
        text = fh.read().strip()
    try:
        key = bytes.fromhex(text)
    except ValueError:
        raise InvalidKeyError(f"{path}: key file must contain hex text") from None
    if len(key) != 32:
        raise InvalidKeyError(f"{path}: expected a 32-byte key, got {len(key)} bytes")
    return key


def new_key() -> bytes:
    return os.urandom(32)
