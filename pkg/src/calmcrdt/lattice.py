"""Join semi-lattice values used as CRDT state.

Every value here is immutable. ``merge`` returns a new value and is
associative, commutative and idempotent; ``leq`` is the partial order it
induces (``a <= b`` iff ``merge(a, b) == b``).

Set elements are stored in canonical form: the compact, key-sorted JSON
text of the element. Plain strings and records (dicts) can therefore live
in the same set and hash/compare unambiguously. Use :func:`element` to
canonicalize and :func:`element_value` to get the Python value back.

Lattice types are named by short descriptors (``"gset"``, ``"2pset"``,
``"map<gcounter>"``, ``"pair<maxnat,bool>"`` ...) so that schemas, traces
and scenario files can refer to them as plain text.
"""

from __future__ import annotations

import json
from functools import lru_cache
from typing import Any, Iterable, Mapping


class LatticeTypeError(TypeError):
    """Raised when two values of different lattice types are combined."""


class UnknownLatticeType(ValueError):
    """Raised for a type descriptor that names no supported lattice."""


class UnknownOperation(ValueError):
    """Raised by :func:`op_delta` for an operation name it does not know."""


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def element(value: Any) -> str:
    """Canonical form of a set element."""
    return canonical_json(value)


@lru_cache(maxsize=65536)
def element_value(canon: str) -> Any:
    """Inverse of :func:`element`."""
    return json.loads(canon)


def _elements(values: Iterable[Any]) -> frozenset[str]:
    return frozenset(element(v) for v in values)


def _sorted_values(elems: Iterable[str]) -> list[Any]:
    return [element_value(e) for e in sorted(elems)]


def _check_same(a: LatticeValue, b: LatticeValue) -> None:
    if a.lattice_type != b.lattice_type:
        raise LatticeTypeError(f"cannot combine {a.lattice_type} with {b.lattice_type}")


class LatticeValue:
    """Base class for all lattice values.

    Subclasses implement ``_join`` (called only with a same-typed argument),
    ``lattice_type``, ``is_bottom`` and ``encode``.
    """

    __slots__ = ()

    @property
    def lattice_type(self) -> str:
        raise NotImplementedError

    def _join(self, other):
        raise NotImplementedError

    def is_bottom(self) -> bool:
        raise NotImplementedError

    def encode(self) -> dict:
        raise NotImplementedError

    def merge(self, other: LatticeValue) -> LatticeValue:
        _check_same(self, other)
        return self._join(other)

    def leq(self, other: LatticeValue) -> bool:
        return self.merge(other) == other

    def __or__(self, other: LatticeValue) -> LatticeValue:
        return self.merge(other)

    def __le__(self, other: LatticeValue) -> bool:
        return self.leq(other)

    def __repr__(self) -> str:
        return f"{type(self).__name__}({canonical_json(self.encode())})"


class GSet(LatticeValue):
    """Grow-only set; join is union."""

    __slots__ = ("elements",)

    def __init__(self, items: Iterable[Any] = (), *, canonical: Iterable[str] | None = None):
        elems = frozenset(canonical) if canonical is not None else _elements(items)
        object.__setattr__(self, "elements", elems)

    def __setattr__(self, name, value):
        raise AttributeError("lattice values are immutable")

    lattice_type = "gset"

    def _join(self, other: GSet) -> GSet:
        if other.elements <= self.elements:
            return self
        if self.elements <= other.elements:
            return other
        return GSet(canonical=self.elements | other.elements)

    def leq(self, other: LatticeValue) -> bool:
        _check_same(self, other)
        return self.elements <= other.elements

    def is_bottom(self) -> bool:
        return not self.elements

    def values(self) -> list[Any]:
        """Decoded elements in canonical order."""
        return _sorted_values(self.elements)

    def __contains__(self, item: Any) -> bool:
        return element(item) in self.elements

    def __len__(self) -> int:
        return len(self.elements)

    def __eq__(self, other):
        return isinstance(other, GSet) and self.elements == other.elements

    def __hash__(self):
        return hash(("gset", self.elements))

    def encode(self) -> dict:
        return {"type": "gset", "elements": self.values()}


class TwoPSet(LatticeValue):
    """Two-phase set: a pair of grow-only sets (adds, removes).

    Removing an element that was never added is allowed; nothing ties the
    two components together.
    """

    __slots__ = ("adds", "removes")

    def __init__(self, adds: GSet | Iterable[Any] = (), removes: GSet | Iterable[Any] = ()):
        object.__setattr__(self, "adds", adds if isinstance(adds, GSet) else GSet(adds))
        object.__setattr__(self, "removes", removes if isinstance(removes, GSet) else GSet(removes))

    def __setattr__(self, name, value):
        raise AttributeError("lattice values are immutable")

    lattice_type = "2pset"

    def _join(self, other: TwoPSet) -> TwoPSet:
        return TwoPSet(self.adds._join(other.adds), self.removes._join(other.removes))

    def leq(self, other: LatticeValue) -> bool:
        _check_same(self, other)
        return self.adds.leq(other.adds) and self.removes.leq(other.removes)

    def is_bottom(self) -> bool:
        return self.adds.is_bottom() and self.removes.is_bottom()

    def contents(self) -> GSet:
        """Live elements, adds minus removes. Not monotone."""
        return GSet(canonical=self.adds.elements - self.removes.elements)

    def __eq__(self, other):
        return isinstance(other, TwoPSet) and self.adds == other.adds and self.removes == other.removes

    def __hash__(self):
        return hash(("2pset", self.adds, self.removes))

    def encode(self) -> dict:
        return {"type": "2pset", "adds": self.adds.values(), "removes": self.removes.values()}


def _counts_tuple(counts: Mapping[int, int]) -> tuple[tuple[int, int], ...]:
    for replica, n in counts.items():
        if n < 0:
            raise ValueError(f"negative count {n} for replica {replica}")
    return tuple(sorted((int(r), int(n)) for r, n in counts.items() if n))


class GCounter(LatticeValue):
    """Grow-only counter as a per-replica map of counts; join is pointwise max."""

    __slots__ = ("_items",)

    def __init__(self, counts: Mapping[int, int] | None = None):
        object.__setattr__(self, "_items", _counts_tuple(counts or {}))

    def __setattr__(self, name, value):
        raise AttributeError("lattice values are immutable")

    lattice_type = "gcounter"

    @property
    def counts(self) -> dict[int, int]:
        return dict(self._items)

    def get(self, replica: int) -> int:
        for r, n in self._items:
            if r == replica:
                return n
        return 0

    def total(self) -> int:
        return sum(n for _, n in self._items)

    def _join(self, other: GCounter) -> GCounter:
        merged = dict(self._items)
        for r, n in other._items:
            if n > merged.get(r, 0):
                merged[r] = n
        return GCounter(merged)

    def leq(self, other: LatticeValue) -> bool:
        _check_same(self, other)
        theirs = dict(other._items)
        return all(n <= theirs.get(r, 0) for r, n in self._items)

    def is_bottom(self) -> bool:
        return not self._items

    def __eq__(self, other):
        return type(other) is type(self) and self._items == other._items

    def __hash__(self):
        return hash((self.lattice_type, self._items))

    def encode(self) -> dict:
        return {"type": self.lattice_type, "counts": {str(r): n for r, n in self._items}}


class VersionVector(GCounter):
    """Highest contiguous sequence number applied, per origin replica."""

    __slots__ = ()
    lattice_type = "vv"

    def _join(self, other: VersionVector) -> VersionVector:
        return VersionVector(GCounter._join(self, other).counts)

    def dominates(self, other: VersionVector) -> bool:
        return other.leq(self)

    def advance(self, replica: int, seq: int) -> VersionVector:
        counts = self.counts
        counts[replica] = max(seq, counts.get(replica, 0))
        return VersionVector(counts)


class PNCounter(LatticeValue):
    """Increment/decrement counter built from two G-Counters.

    ``value()`` is *not* monotone in the lattice order.
    """

    __slots__ = ("increments", "decrements")

    def __init__(self, increments: GCounter | None = None, decrements: GCounter | None = None):
        object.__setattr__(self, "increments", increments or GCounter())
        object.__setattr__(self, "decrements", decrements or GCounter())

    def __setattr__(self, name, value):
        raise AttributeError("lattice values are immutable")

    lattice_type = "pncounter"

    def value(self) -> int:
        return self.increments.total() - self.decrements.total()

    def _join(self, other: PNCounter) -> PNCounter:
        return PNCounter(self.increments._join(other.increments), self.decrements._join(other.decrements))

    def leq(self, other: LatticeValue) -> bool:
        _check_same(self, other)
        return self.increments.leq(other.increments) and self.decrements.leq(other.decrements)

    def is_bottom(self) -> bool:
        return self.increments.is_bottom() and self.decrements.is_bottom()

    def __eq__(self, other):
        return (
            isinstance(other, PNCounter)
            and self.increments == other.increments
            and self.decrements == other.decrements
        )

    def __hash__(self):
        return hash(("pncounter", self.increments, self.decrements))

    def encode(self) -> dict:
        return {
            "type": "pncounter",
            "inc": self.increments.encode()["counts"],
            "dec": self.decrements.encode()["counts"],
        }


class MaxNat(LatticeValue):
    __slots__ = ("value",)

    def __init__(self, value: int = 0):
        if value < 0:
            raise ValueError(f"MaxNat must be non-negative, got {value}")
        object.__setattr__(self, "value", int(value))

    def __setattr__(self, name, value):
        raise AttributeError("lattice values are immutable")

    lattice_type = "maxnat"

    def _join(self, other: MaxNat) -> MaxNat:
        return self if self.value >= other.value else other

    def leq(self, other: LatticeValue) -> bool:
        _check_same(self, other)
        return self.value <= other.value

    def is_bottom(self) -> bool:
        return self.value == 0

    def __eq__(self, other):
        return isinstance(other, MaxNat) and self.value == other.value

    def __hash__(self):
        return hash(("maxnat", self.value))

    def encode(self) -> dict:
        return {"type": "maxnat", "value": self.value}


class BoolLattice(LatticeValue):
    """Booleans ordered false < true; join is OR."""

    __slots__ = ("value",)

    def __init__(self, value: bool = False):
        object.__setattr__(self, "value", bool(value))

    def __setattr__(self, name, value):
        raise AttributeError("lattice values are immutable")

    lattice_type = "bool"

    def _join(self, other: BoolLattice) -> BoolLattice:
        return self if self.value else other

    def leq(self, other: LatticeValue) -> bool:
        _check_same(self, other)
        return (not self.value) or other.value

    def is_bottom(self) -> bool:
        return not self.value

    def __bool__(self) -> bool:
        return self.value

    def __eq__(self, other):
        return isinstance(other, BoolLattice) and self.value == other.value

    def __hash__(self):
        return hash(("bool", self.value))

    def encode(self) -> dict:
        return {"type": "bool", "value": self.value}


class PairLattice(LatticeValue):
    """Product of two lattices, joined componentwise."""

    __slots__ = ("first", "second")

    def __init__(self, first: LatticeValue, second: LatticeValue):
        object.__setattr__(self, "first", first)
        object.__setattr__(self, "second", second)

    def __setattr__(self, name, value):
        raise AttributeError("lattice values are immutable")

    @property
    def lattice_type(self) -> str:
        return f"pair<{self.first.lattice_type},{self.second.lattice_type}>"

    def _join(self, other: PairLattice) -> PairLattice:
        return PairLattice(self.first._join(other.first), self.second._join(other.second))

    def leq(self, other: LatticeValue) -> bool:
        _check_same(self, other)
        return self.first.leq(other.first) and self.second.leq(other.second)

    def is_bottom(self) -> bool:
        return self.first.is_bottom() and self.second.is_bottom()

    def __eq__(self, other):
        return isinstance(other, PairLattice) and self.first == other.first and self.second == other.second

    def __hash__(self):
        return hash(("pair", self.first, self.second))

    def encode(self) -> dict:
        return {"type": self.lattice_type, "first": self.first.encode(), "second": self.second.encode()}


class MapLattice(LatticeValue):
    """Keywise join of lattice values; absent keys read as bottom.

    With ``value_type`` set every entry must have that type. Without it the
    map is a heterogeneous namespace (the replica store), where each key
    keeps whatever type it was first written with and joining two different
    types under one key is an error. Bottom entries are dropped so that
    equal states have one representation.
    """

    __slots__ = ("value_type", "_items")

    def __init__(self, entries: Mapping[str, LatticeValue] | None = None, value_type: str | None = None):
        items = []
        for key, val in (entries or {}).items():
            if value_type is not None and val.lattice_type != value_type:
                raise LatticeTypeError(f"entry {key!r} is {val.lattice_type}, map holds {value_type}")
            if not val.is_bottom():
                items.append((str(key), val))
        items.sort(key=lambda kv: kv[0])
        object.__setattr__(self, "value_type", value_type)
        object.__setattr__(self, "_items", tuple(items))

    def __setattr__(self, name, value):
        raise AttributeError("lattice values are immutable")

    @property
    def lattice_type(self) -> str:
        return "map" if self.value_type is None else f"map<{self.value_type}>"

    @property
    def entries(self) -> dict[str, LatticeValue]:
        return dict(self._items)

    def keys(self) -> list[str]:
        return [k for k, _ in self._items]

    def get(self, key: str, default: LatticeValue | None = None) -> LatticeValue | None:
        for k, v in self._items:
            if k == key:
                return v
        if default is None and self.value_type is not None:
            return bottom(self.value_type)
        return default

    def _join(self, other: MapLattice) -> MapLattice:
        merged = dict(self._items)
        for key, val in other._items:
            mine = merged.get(key)
            merged[key] = val if mine is None else mine.merge(val)
        return MapLattice(merged, self.value_type)

    def leq(self, other: LatticeValue) -> bool:
        _check_same(self, other)
        theirs = dict(other._items)
        for key, val in self._items:
            t = theirs.get(key)
            if t is None or not val.leq(t):
                return False
        return True

    def is_bottom(self) -> bool:
        return not self._items

    def __eq__(self, other):
        return isinstance(other, MapLattice) and self.value_type == other.value_type and self._items == other._items

    def __hash__(self):
        return hash(("map", self.value_type, self._items))

    def encode(self) -> dict:
        return {"type": self.lattice_type, "entries": {k: v.encode() for k, v in self._items}}


# --- type descriptors -------------------------------------------------------

_SIMPLE = {
    "gset": GSet,
    "2pset": TwoPSet,
    "gcounter": GCounter,
    "pncounter": PNCounter,
    "maxnat": MaxNat,
    "bool": BoolLattice,
    "vv": VersionVector,
}


def _split_args(inner: str) -> list[str]:
    parts, depth, start = [], 0, 0
    for i, ch in enumerate(inner):
        if ch == "<":
            depth += 1
        elif ch == ">":
            depth -= 1
        elif ch == "," and depth == 0:
            parts.append(inner[start:i].strip())
            start = i + 1
    parts.append(inner[start:].strip())
    return parts


@lru_cache(maxsize=256)
def _parse_type(descriptor: str) -> tuple[str, tuple[str, ...]]:
    d = descriptor.strip()
    if d in _SIMPLE or d in ("map", "polog"):
        return d, ()
    if d.endswith(">") and "<" in d:
        head, inner = d[: d.index("<")], d[d.index("<") + 1 : -1]
        args = tuple(_split_args(inner))
        if head == "map" and len(args) == 1:
            _parse_type(args[0])
            return "map", args
        if head == "pair" and len(args) == 2:
            _parse_type(args[0])
            _parse_type(args[1])
            return "pair", args
    raise UnknownLatticeType(f"unknown lattice type {descriptor!r}")


def validate_type(descriptor: str) -> str:
    """Return the descriptor unchanged if it names a supported lattice."""
    _parse_type(descriptor)
    return descriptor


def bottom(lattice_type: str) -> LatticeValue:
    """Least element of ``lattice_type``."""
    head, args = _parse_type(lattice_type)
    if head in _SIMPLE:
        return _SIMPLE[head]()
    if head == "map":
        return MapLattice({}, args[0] if args else None)
    if head == "pair":
        return PairLattice(bottom(args[0]), bottom(args[1]))
    from calmcrdt.polog import PoLog

    return PoLog()


def merge(a: LatticeValue, b: LatticeValue) -> LatticeValue:
    return a.merge(b)


def leq(a: LatticeValue, b: LatticeValue) -> bool:
    return a.leq(b)


def merge_all(values: Iterable[LatticeValue], lattice_type: str | None = None) -> LatticeValue:
    """Fold ``merge`` over ``values``, starting from bottom if a type is given."""
    acc = bottom(lattice_type) if lattice_type is not None else None
    for v in values:
        acc = v if acc is None else acc.merge(v)
    if acc is None:
        raise ValueError("merge_all of an empty sequence needs a lattice_type")
    return acc


# --- operations as deltas ---------------------------------------------------

OPERATIONS = (
    "gset_add",
    "twopset_add",
    "twopset_remove",
    "counter_inc",
    "pn_inc",
    "pn_dec",
    "max_raise",
    "bool_set",
    "map_put",
)

# which lattice type each operation's delta belongs to (map_put depends on args)
OP_TYPES = {
    "gset_add": "gset",
    "twopset_add": "2pset",
    "twopset_remove": "2pset",
    "counter_inc": "gcounter",
    "pn_inc": "pncounter",
    "pn_dec": "pncounter",
    "max_raise": "maxnat",
    "bool_set": "bool",
}


def _amount(n: Any) -> int:
    n = int(n)
    if n < 0:
        raise ValueError(f"increment must be non-negative, got {n}")
    return n


def op_delta(op_name: str, *args: Any, state: LatticeValue | None = None) -> LatticeValue:
    """Smallest lattice value whose merge applies operation ``op_name``.

    Counter increments are per-replica maxima, so the delta for
    ``counter_inc(replica, n)`` is that replica's *new* count and depends on
    the current ``state`` (taken as bottom when omitted). All other deltas
    are state independent.
    """
    if op_name == "gset_add":
        (x,) = args
        return GSet([x])
    if op_name == "twopset_add":
        (x,) = args
        return TwoPSet(adds=[x])
    if op_name == "twopset_remove":
        (x,) = args
        return TwoPSet(removes=[x])
    if op_name == "counter_inc":
        replica, n = args
        base = state.get(int(replica)) if isinstance(state, GCounter) else 0
        return GCounter({int(replica): base + _amount(n)})
    if op_name in ("pn_inc", "pn_dec"):
        replica, n = args
        current = state if isinstance(state, PNCounter) else PNCounter()
        if op_name == "pn_inc":
            inc = GCounter({int(replica): current.increments.get(int(replica)) + _amount(n)})
            return PNCounter(increments=inc)
        dec = GCounter({int(replica): current.decrements.get(int(replica)) + _amount(n)})
        return PNCounter(decrements=dec)
    if op_name == "max_raise":
        (n,) = args
        return MaxNat(_amount(n))
    if op_name == "bool_set":
        return BoolLattice(True)
    if op_name == "map_put":
        key, delta = args
        inner_state = state.get(key) if isinstance(state, MapLattice) else None
        if isinstance(delta, LatticeValue):
            value = delta
        elif isinstance(delta, dict):
            value = decode(delta)
        elif isinstance(delta, (list, tuple)) and delta:
            value = op_delta(delta[0], *delta[1:], state=inner_state)
        else:
            raise ValueError(f"map_put needs a lattice value or [op, *args], got {delta!r}")
        value_type = state.value_type if isinstance(state, MapLattice) else None
        return MapLattice({key: value}, value_type)
    raise UnknownOperation(f"unknown operation {op_name!r}")


def apply_op(state: LatticeValue, op_name: str, *args: Any) -> LatticeValue:
    return state.merge(op_delta(op_name, *args, state=state))


# --- canonical text form ----------------------------------------------------


def encode(value: LatticeValue) -> dict:
    return value.encode()


def _counts(obj: Mapping[str, int]) -> dict[int, int]:
    return {int(k): int(v) for k, v in obj.items()}


def decode(obj: Mapping[str, Any]) -> LatticeValue:
    """Rebuild a lattice value from its :func:`encode` form."""
    try:
        t = obj["type"]
        head, args = _parse_type(t)
        if head == "gset":
            return GSet(obj["elements"])
        if head == "2pset":
            return TwoPSet(obj["adds"], obj["removes"])
        if head == "gcounter":
            return GCounter(_counts(obj["counts"]))
        if head == "vv":
            return VersionVector(_counts(obj["counts"]))
        if head == "pncounter":
            return PNCounter(GCounter(_counts(obj["inc"])), GCounter(_counts(obj["dec"])))
        if head == "maxnat":
            return MaxNat(obj["value"])
        if head == "bool":
            return BoolLattice(obj["value"])
        if head == "pair":
            return PairLattice(decode(obj["first"]), decode(obj["second"]))
        if head == "map":
            return MapLattice({k: decode(v) for k, v in obj["entries"].items()}, args[0] if args else None)
        from calmcrdt.polog import PoLog

        return PoLog.from_encoded(obj)
    except (KeyError, TypeError, AttributeError) as exc:
        raise ValueError(f"malformed lattice encoding: {exc}") from exc


def to_text(value: LatticeValue) -> str:
    """Canonical text; equal values give identical text."""
    return canonical_json(value.encode())


def from_text(text: str) -> LatticeValue:
    return decode(json.loads(text))


def canonical_bytes(value: LatticeValue) -> bytes:
    return to_text(value).encode("utf-8")
