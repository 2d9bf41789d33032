"""A small relational query language over CRDT-typed sources.

Queries use functional notation::

    COUNT(FILTER(txns, type == "GIFTCARD" AND amount > 100)) > 50
    PLUS(COUNT(cart.adds), COUNT(cart.removes)) > 100
    EXCEPT(cart.adds, cart.removes)

Sources name store keys: a G-Set key directly, a 2P-Set key through its
``.adds`` or ``.removes`` component. Set operators are FILTER, PROJECT,
UNION, INTERSECT and EXCEPT; COUNT turns a set into a count and PLUS adds
counts; a top-level comparison against a numeric literal yields a boolean.

Monotonicity is read off the syntax. Every operator is monotone except
EXCEPT and comparisons with ``<``, ``<=`` or ``==``; one non-monotone node
makes the whole query non-monotone. The plan follows from the class:
monotone ``>``/``>=`` thresholds run locally with definitive answers,
non-monotone queries are coordinated, and other monotone queries are
coordinated unless the caller accepts stale lower-bound reads.
"""

from __future__ import annotations

import json
import random
import re
from dataclasses import dataclass
from typing import Any, Callable, Iterator, Mapping, Sequence, Union

from calmcrdt.lattice import GSet, LatticeValue, MapLattice, TwoPSet, bottom, element, element_value
from calmcrdt.query import (
    UNKNOWN,
    LowerBound,
    QueryFn,
    Ready,
    StoreQuery,
    Unavailable,
    check_monotone_sampled,
    result_leq,
)


class DslError(ValueError):
    pass


class DslSyntaxError(DslError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{message} at line {line}, column {column}")
        self.line = line
        self.column = column


class DslTypeError(DslError):
    pass


class UnknownSource(DslError):
    pass


class UnboundSource(DslError):
    pass


# --- AST --------------------------------------------------------------------

Literal = Union[int, float, str]


@dataclass(frozen=True)
class Source:
    name: str
    path: str = ""  # "", "adds" or "removes"


@dataclass(frozen=True)
class Cond:
    field: str
    op: str
    value: Literal


@dataclass(frozen=True)
class Filter:
    child: "Node"
    predicate: tuple[Cond, ...]


@dataclass(frozen=True)
class Project:
    child: "Node"
    fields: tuple[str, ...]


@dataclass(frozen=True)
class Union_:
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Intersect:
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Except:
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Count:
    child: "Node"


@dataclass(frozen=True)
class Plus:
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Compare:
    expr: "Node"
    op: str
    value: Literal


Node = Union[Source, Filter, Project, Union_, Intersect, Except, Count, Plus, Compare]

_BINARY_SETS = {"UNION": Union_, "INTERSECT": Intersect, "EXCEPT": Except}
COMPARE_OPS = (">=", "<=", "==", "!=", ">", "<")
THRESHOLD_OPS = (">", ">=")


def children(node: Node) -> tuple[Node, ...]:
    if isinstance(node, Source):
        return ()
    if isinstance(node, (Filter, Project, Count)):
        return (node.child,)
    if isinstance(node, Compare):
        return (node.expr,)
    return (node.left, node.right)


def walk(node: Node, path: str = "root") -> Iterator[tuple[str, Node]]:
    """Breadth-first (path, node) pairs; paths look like ``root.0.1``."""
    queue = [(path, node)]
    while queue:
        p, n = queue.pop(0)
        yield p, n
        queue.extend((f"{p}.{i}", c) for i, c in enumerate(children(n)))


def sources(node: Node) -> list[Source]:
    seen: list[Source] = []
    for _, n in walk(node):
        if isinstance(n, Source) and n not in seen:
            seen.append(n)
    return seen


# --- lexer / parser ---------------------------------------------------------

_TOKEN = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<number>-?\d+(?:\.\d+)?)
  | (?P<string>"(?:[^"\\]|\\.)*")
  | (?P<op>>=|<=|==|!=|>|<)
  | (?P<punct>[(),.])
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Tok:
    kind: str
    text: str
    line: int
    col: int


def _tokenize(text: str) -> list[_Tok]:
    toks, pos, line, line_start = [], 0, 1, 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            raise DslSyntaxError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        if kind != "ws":
            toks.append(_Tok(kind, m.group(), line, pos - line_start + 1))
        else:
            for i, ch in enumerate(m.group()):
                if ch == "\n":
                    line += 1
                    line_start = pos + i + 1
        pos = m.end()
    toks.append(_Tok("eof", "", line, pos - line_start + 1))
    return toks


class _Parser:
    def __init__(self, text: str):
        self.toks = _tokenize(text)
        self.i = 0

    def peek(self) -> _Tok:
        return self.toks[self.i]

    def take(self, kind: str | None = None, text: str | None = None) -> _Tok:
        tok = self.peek()
        if (kind and tok.kind != kind) or (text and tok.text != text):
            want = text or kind
            got = tok.text or "end of input"
            raise DslSyntaxError(f"expected {want}, got {got!r}", tok.line, tok.col)
        self.i += 1
        return tok

    def query(self) -> Node:
        expr = self.expr()
        if self.peek().kind == "op":
            op = self.take("op").text
            expr = Compare(expr, op, self.number())
        self.take("eof")
        return expr

    def number(self) -> int | float:
        tok = self.take("number")
        return json.loads(tok.text)

    def literal(self) -> Literal:
        tok = self.peek()
        if tok.kind == "number":
            return self.number()
        if tok.kind == "string":
            self.i += 1
            return json.loads(tok.text)
        raise DslSyntaxError(f"expected a literal, got {tok.text!r}", tok.line, tok.col)

    def expr(self) -> Node:
        tok = self.take("name")
        upper = tok.text.upper()
        if self.peek().text == "(" and upper in ("FILTER", "PROJECT", "COUNT", "PLUS", *_BINARY_SETS):
            self.take("punct", "(")
            if upper == "COUNT":
                node: Node = Count(self.expr())
            elif upper == "FILTER":
                child = self.expr()
                self.take("punct", ",")
                node = Filter(child, self.predicate())
            elif upper == "PROJECT":
                child = self.expr()
                fields = []
                while self.peek().text == ",":
                    self.take("punct", ",")
                    fields.append(self.take("name").text)
                if not fields:
                    raise DslSyntaxError("PROJECT needs at least one field", tok.line, tok.col)
                node = Project(child, tuple(fields))
            else:
                left = self.expr()
                self.take("punct", ",")
                right = self.expr()
                node = Plus(left, right) if upper == "PLUS" else _BINARY_SETS[upper](left, right)
            self.take("punct", ")")
            return node
        path = ""
        if self.peek().text == ".":
            self.take("punct", ".")
            path = self.take("name").text
        return Source(tok.text, path)

    def predicate(self) -> tuple[Cond, ...]:
        conds = [self.cond()]
        while self.peek().kind == "name" and self.peek().text.upper() == "AND":
            self.take("name")
            conds.append(self.cond())
        return tuple(conds)

    def cond(self) -> Cond:
        name = self.take("name").text
        op = self.take("op").text
        return Cond(name, op, self.literal())


def parse(text: str, schema: Mapping[str, str] | None = None) -> Node:
    """Parse and type-check a query. With ``schema``, sources must be declared keys."""
    if not text or not text.strip():
        raise DslSyntaxError("empty query", 1, 1)
    ast = _Parser(text).query()
    typecheck(ast, schema)
    return ast


# --- typing -----------------------------------------------------------------


def _source_type(src: Source, schema: Mapping[str, str] | None) -> str:
    if schema is None:
        if src.path not in ("", "adds", "removes"):
            raise DslTypeError(f"unknown component .{src.path}")
        return "set"
    if src.name not in schema:
        raise UnknownSource(f"unknown source {src.name!r}")
    t = schema[src.name]
    if t == "gset" and src.path == "":
        return "set"
    if t == "2pset" and src.path in ("adds", "removes"):
        return "set"
    if t == "2pset":
        raise DslTypeError(f"2P-Set source {src.name!r} needs .adds or .removes")
    raise DslTypeError(f"source {src.name}{'.' + src.path if src.path else ''} of type {t} is not a set")


def typecheck(node: Node, schema: Mapping[str, str] | None = None) -> str:
    """Return ``"set"``, ``"count"`` or ``"bool"``; raise :class:`DslTypeError` if ill-typed."""
    if isinstance(node, Source):
        return _source_type(node, schema)
    if isinstance(node, (Filter, Project)):
        if typecheck(node.child, schema) != "set":
            raise DslTypeError(f"{type(node).__name__.upper()} needs a set")
        return "set"
    if isinstance(node, (Union_, Intersect, Except)):
        if typecheck(node.left, schema) != "set" or typecheck(node.right, schema) != "set":
            raise DslTypeError(f"{_name(node)} needs two sets")
        return "set"
    if isinstance(node, Count):
        if typecheck(node.child, schema) != "set":
            raise DslTypeError("COUNT needs a set")
        return "count"
    if isinstance(node, Plus):
        if typecheck(node.left, schema) != "count" or typecheck(node.right, schema) != "count":
            raise DslTypeError("PLUS needs two counts")
        return "count"
    if isinstance(node, Compare):
        if typecheck(node.expr, schema) != "count":
            raise DslTypeError("comparisons need a count on the left")
        if node.op not in COMPARE_OPS or node.op == "!=":
            raise DslTypeError(f"unsupported comparison {node.op}")
        if isinstance(node.value, str) or isinstance(node.value, bool):
            raise DslTypeError("counts compare against numbers only")
        return "bool"
    raise DslTypeError(f"not a query node: {node!r}")


def _name(node: Node) -> str:
    return {Union_: "UNION", Intersect: "INTERSECT", Except: "EXCEPT"}.get(type(node), type(node).__name__.upper())


# --- printing ---------------------------------------------------------------


def _lit(v: Literal) -> str:
    return json.dumps(v) if isinstance(v, str) else repr(v)


def to_text(node: Node) -> str:
    """Canonical text; ``parse(to_text(ast)) == ast``."""
    if isinstance(node, Source):
        return f"{node.name}.{node.path}" if node.path else node.name
    if isinstance(node, Filter):
        pred = " AND ".join(f"{c.field} {c.op} {_lit(c.value)}" for c in node.predicate)
        return f"FILTER({to_text(node.child)}, {pred})"
    if isinstance(node, Project):
        return f"PROJECT({to_text(node.child)}, {', '.join(node.fields)})"
    if isinstance(node, Count):
        return f"COUNT({to_text(node.child)})"
    if isinstance(node, Compare):
        return f"{to_text(node.expr)} {node.op} {_lit(node.value)}"
    return f"{_name(node)}({to_text(node.left)}, {to_text(node.right)})"


# --- classification and planning --------------------------------------------


@dataclass(frozen=True)
class MonotonicityClass:
    monotone: bool
    witness: str | None = None  # path of the shallowest non-monotone node

    @property
    def label(self) -> str:
        return "Monotone" if self.monotone else "NonMonotone"


MONOTONE = MonotonicityClass(True)


def node_monotone(node: Node) -> bool:
    if isinstance(node, Except):
        return False
    if isinstance(node, Compare):
        return node.op in THRESHOLD_OPS
    return True


def classify(node: Node) -> MonotonicityClass:
    for path, n in walk(node):
        if not node_monotone(n):
            return MonotonicityClass(False, path)
    return MONOTONE


LOCAL_THRESHOLD = "LocalThreshold"
LOCAL_LOWER_BOUND = "LocalLowerBound"
COORDINATED = "Coordinated"
PLAN_MODES = (LOCAL_THRESHOLD, LOCAL_LOWER_BOUND, COORDINATED)


@dataclass(frozen=True)
class QueryPlan:
    ast: Node
    mode: str
    stale_tolerant: bool = False


def plan(ast: Node, cls: MonotonicityClass | None = None, stale_tolerant: bool = False) -> QueryPlan:
    cls = cls or classify(ast)
    if not cls.monotone:
        return QueryPlan(ast, COORDINATED)
    if isinstance(ast, Compare):
        return QueryPlan(ast, LOCAL_THRESHOLD)
    if stale_tolerant:
        return QueryPlan(ast, LOCAL_LOWER_BOUND, True)
    return QueryPlan(ast, COORDINATED)


# --- evaluation -------------------------------------------------------------

_CMP: dict[str, Callable[[Any, Any], bool]] = {
    ">": lambda a, b: a > b,
    ">=": lambda a, b: a >= b,
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
    "==": lambda a, b: a == b,
    "!=": lambda a, b: a != b,
}


def _holds(cond: Cond, record: Any) -> bool:
    if not isinstance(record, dict) or cond.field not in record:
        return False
    value = record[cond.field]
    if isinstance(value, bool) or isinstance(value, (list, dict)):
        return False
    numeric = isinstance(value, (int, float)) and isinstance(cond.value, (int, float))
    textual = isinstance(value, str) and isinstance(cond.value, str)
    if not (numeric or textual):
        return cond.op == "!="
    return _CMP[cond.op](value, cond.value)


def _project(record: Any, fields: Sequence[str]) -> dict:
    if not isinstance(record, dict):
        return {}
    return {f: record[f] for f in fields if f in record}


def evaluate(node: Node, inputs: Mapping[str, LatticeValue]) -> Any:
    """Evaluate over source values: G-Set for sets, int for counts, bool for comparisons."""
    if isinstance(node, Source):
        if node.name not in inputs:
            raise UnboundSource(f"source {node.name!r} is not bound")
        value = inputs[node.name]
        if node.path:
            if not isinstance(value, TwoPSet):
                raise DslTypeError(f"{node.name} has no component {node.path}")
            return getattr(value, node.path)
        if not isinstance(value, GSet):
            raise DslTypeError(f"{node.name} is {value.lattice_type}, not a set")
        return value
    if isinstance(node, Filter):
        child = evaluate(node.child, inputs)
        keep = [e for e in child.elements if all(_holds(c, element_value(e)) for c in node.predicate)]
        return GSet(canonical=keep)
    if isinstance(node, Project):
        child = evaluate(node.child, inputs)
        return GSet(canonical=[element(_project(element_value(e), node.fields)) for e in child.elements])
    if isinstance(node, Union_):
        return GSet(canonical=evaluate(node.left, inputs).elements | evaluate(node.right, inputs).elements)
    if isinstance(node, Intersect):
        return GSet(canonical=evaluate(node.left, inputs).elements & evaluate(node.right, inputs).elements)
    if isinstance(node, Except):
        return GSet(canonical=evaluate(node.left, inputs).elements - evaluate(node.right, inputs).elements)
    if isinstance(node, Count):
        return len(evaluate(node.child, inputs))
    if isinstance(node, Plus):
        return evaluate(node.left, inputs) + evaluate(node.right, inputs)
    if isinstance(node, Compare):
        return _CMP[node.op](evaluate(node.expr, inputs), node.value)
    raise DslTypeError(f"not a query node: {node!r}")


def infer_schema(ast: Node) -> dict[str, str]:
    """Source types implied by the query alone: components mean 2P-Set, else G-Set."""
    out: dict[str, str] = {}
    for src in sources(ast):
        if src.path:
            out[src.name] = "2pset"
        else:
            out.setdefault(src.name, "gset")
    return out


def compile_store_query(text: str, schema: Mapping[str, str]) -> StoreQuery:
    ast = parse(text, schema)
    cls = classify(ast)
    keys = tuple((s.name, schema[s.name]) for s in _unique_names(ast))
    return StoreQuery(
        name=to_text(ast),
        key_types=keys,
        monotone=cls.monotone,
        threshold=cls.monotone and isinstance(ast, Compare),
        run=lambda inputs: evaluate(ast, inputs),
        spec={"dsl": to_text(ast)},
    )


def _unique_names(ast: Node) -> list[Source]:
    seen, out = set(), []
    for s in sources(ast):
        if s.name not in seen:
            seen.add(s.name)
            out.append(s)
    return out


def as_query_fn(ast: Node, schema: Mapping[str, str] | None = None) -> QueryFn:
    """The compiled evaluator as a function on a store map, for sampled checking."""
    schema = dict(schema or infer_schema(ast))
    result_type = {"set": "gset", "count": "int", "bool": "int"}[typecheck(ast, schema)]

    def run(store: MapLattice) -> Any:
        inputs = {}
        for s in _unique_names(ast):
            v = store.get(s.name)
            inputs[s.name] = bottom(schema[s.name]) if v is None else v
        return evaluate(ast, inputs)

    return QueryFn(to_text(ast), run, "map", result_type)


def execute(plan_: QueryPlan, replicas: Sequence, replica_id: int, strategy=None, schema=None):
    """Run a plan against in-memory replicas.

    ``LocalThreshold`` answers ``Ready(True)``/``UNKNOWN`` from the local
    store, ``LocalLowerBound`` wraps the local value in :class:`LowerBound`,
    and ``Coordinated`` reads through :func:`coordination.coordinated_read`
    (``strategy`` defaults to read-all). Stores are never modified.
    """
    from calmcrdt.coordination import READ_ALL, CoordinationUnavailable, coordinated_read

    local = replicas[replica_id]
    schema = schema or getattr(local, "schema", None) or infer_schema(plan_.ast)
    for s in sources(plan_.ast):
        if s.name not in schema:
            raise UnboundSource(f"source {s.name!r} is not a key of the store")
    q = compile_store_query(to_text(plan_.ast), schema)
    if plan_.mode == LOCAL_THRESHOLD:
        return Ready(True) if q.value(local.store) else UNKNOWN
    if plan_.mode == LOCAL_LOWER_BOUND:
        return LowerBound(q.value(local.store))
    try:
        return coordinated_read(q, strategy or READ_ALL, replicas, replica_id)
    except CoordinationUnavailable as exc:
        return Unavailable(str(exc))


# --- random stores and counterexample search --------------------------------


def _satisfying(cond: Cond) -> Literal:
    v = cond.value
    if isinstance(v, str):
        return {"==": v, "!=": v + "_", ">": v + "z", ">=": v, "<": "", "<=": v}[cond.op]
    return {"==": v, "!=": v + 1, ">": v + 1, ">=": v, "<": v - 1, "<=": v}[cond.op]


def element_pool(ast: Node) -> list[Any]:
    """Elements that pass (and fail) the query's filters, plus plain strings."""
    preds = [n.predicate for _, n in walk(ast) if isinstance(n, Filter)]
    pool: list[Any] = ["x", "y", "z"]
    combined: dict[str, Any] = {}
    for pred in preds:
        rec = {c.field: _satisfying(c) for c in pred}
        combined.update(rec)
        pool.append(dict(rec, id=len(pool)))
    if combined:
        pool.append(dict(combined, id=len(pool)))
    return pool


def _components(schema: Mapping[str, str]) -> list[tuple[str, str]]:
    out = []
    for name, t in sorted(schema.items()):
        out.extend([(name, "adds"), (name, "removes")] if t == "2pset" else [(name, "")])
    return out


def _add(store: MapLattice, name: str, path: str, items: Sequence[Any]) -> MapLattice:
    if not items:
        return store
    if path:
        value = TwoPSet(adds=items) if path == "adds" else TwoPSet(removes=items)
    else:
        value = GSet(items)
    return store.merge(MapLattice({name: value}))


def store_generators(ast: Node, schema: Mapping[str, str] | None = None, max_size: int = 4):
    """Random-store and random-delta generators over the query's sources."""
    schema = dict(schema or infer_schema(ast))
    comps = _components({s.name: schema[s.name] for s in _unique_names(ast)})
    pool = element_pool(ast)

    def delta(rng: random.Random, _state=None) -> MapLattice:
        name, path = comps[rng.randrange(len(comps))]
        return _add(MapLattice(), name, path, [pool[rng.randrange(len(pool))]])

    def value(rng: random.Random) -> MapLattice:
        store = MapLattice()
        for _ in range(rng.randint(0, max_size)):
            store = store.merge(delta(rng))
        return store

    return value, delta


def check_sampled(ast: Node, n_pairs: int = 500, seed: int = 0, schema=None):
    """Sampled monotonicity check of the compiled evaluator."""
    gen_value, gen_delta = store_generators(ast, schema)
    return check_monotone_sampled(as_query_fn(ast, schema), n_pairs, seed, gen_value, gen_delta)


@dataclass(frozen=True)
class Counterexample:
    smaller: MapLattice
    larger: MapLattice
    before: Any
    after: Any


def _literals(ast: Node) -> list[int]:
    return [int(n.value) for _, n in walk(ast) if isinstance(n, Compare)]


def find_counterexample(ast: Node, schema=None, seed: int = 0, tries: int = 4000) -> Counterexample | None:
    """Search small stores for ``i <= j`` where the query result goes backwards.

    Besides random pairs, the search grows a source by enough fresh
    filter-satisfying elements to cross any comparison literal, and copies
    one component's elements into another (which is what breaks EXCEPT).
    """
    schema = dict(schema or infer_schema(ast))
    fn = as_query_fn(ast, schema)
    comps = _components({s.name: schema[s.name] for s in _unique_names(ast)})
    pool = element_pool(ast)
    template = pool[-1] if isinstance(pool[-1], dict) else {}
    big = max([abs(v) for v in _literals(ast)] + [2]) + 2
    gen_value, gen_delta = store_generators(ast, schema)
    rng = random.Random(seed)
    fresh = iter(range(10**9))

    def grow(store: MapLattice) -> MapLattice:
        name, path = comps[rng.randrange(len(comps))]
        m = rng.choice((1, 2, big))
        items = [dict(template, fresh=next(fresh)) for _ in range(m)]
        return _add(store, name, path, items)

    def copy_across(store: MapLattice) -> MapLattice:
        (n1, p1), (n2, p2) = rng.choice(comps), rng.choice(comps)
        current = store.get(n1)
        if current is None:
            return store
        src = getattr(current, p1) if p1 else current
        return _add(store, n2, p2, src.values())

    for _ in range(tries):
        r = rng.random()
        i = MapLattice() if r < 0.25 else grow(MapLattice()) if r < 0.5 else gen_value(rng)
        j = i
        for _ in range(rng.randint(1, 3)):
            move = rng.random()
            j = grow(j) if move < 0.3 else copy_across(j) if move < 0.6 else j.merge(gen_delta(rng))
        before, after = fn(i), fn(j)
        if not result_leq(before, after):
            return Counterexample(i, j, before, after)
    return None
