"""PENMAN/AMR graph model: parsing, validation, simplification, merging, serialization.

Three node forms are distinguished so that text survives a round trip:

* ``var``   -- ``(w / want-01)``, addressable by its variable, may be re-entrant
* ``bare``  -- ``(recommend)``, a parenthesised concept without a variable
* ``const`` -- an attribute value such as ``-``, ``50`` or ``"Singapore"``

Bare and constant nodes get generated ids (``_1``, ``_2``, ...) numbered in
depth-first order, so two graphs with the same text always get the same ids.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

__all__ = [
    "AmrNode",
    "AmrEdge",
    "AmrGraph",
    "Issue",
    "ValidationReport",
    "ParseError",
    "SerializationError",
    "parse_penman",
    "serialize_penman",
    "validate_graph",
    "simplify_graph",
    "merge_context_response_graphs",
    "merge_sentence_graphs",
    "graphs_equal",
    "iter_penman_corpus",
    "load_penman_corpus",
    "MULTI_SENTENCE",
]

MULTI_SENTENCE = "multi-sentence"
NODE_KINDS = ("var", "bare", "const")

_SENSE_SUFFIX = re.compile(r"-\d\d$")
_SNT_ROLE = re.compile(r"^:snt\d+$")
_VARIABLE_LIKE = re.compile(r"^[a-z]\d*$")


class ParseError(ValueError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{message} (line {line}, column {column})")
        self.line = line
        self.column = column


class SerializationError(ValueError):
    pass


@dataclass(frozen=True)
class AmrNode:
    id: str
    concept: str
    kind: str = "var"


@dataclass(frozen=True)
class AmrEdge:
    source: str
    relation: str
    target: str


@dataclass(frozen=True)
class AmrGraph:
    nodes: tuple[AmrNode, ...]
    edges: tuple[AmrEdge, ...]
    root: str

    def node(self, node_id: str) -> AmrNode:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(node_id)

    @property
    def node_ids(self) -> list[str]:
        return [n.id for n in self.nodes]

    def concepts(self) -> dict[str, str]:
        return {n.id: n.concept for n in self.nodes}

    def out_edges(self, node_id: str) -> list[AmrEdge]:
        return [e for e in self.edges if e.source == node_id]

    def sentence_roots(self) -> list[str]:
        """Ids of the sentence-level roots (the ``:sntN`` targets of a flat multi-sentence root)."""
        if _is_flat_multi_sentence(self):
            return [e.target for e in self.out_edges(self.root)]
        return [self.root]

    def __len__(self) -> int:
        return len(self.nodes)


@dataclass(frozen=True)
class Issue:
    severity: str  # "error" | "warning"
    message: str
    location: str = ""


@dataclass(frozen=True)
class ValidationReport:
    issues: tuple[Issue, ...] = field(default_factory=tuple)

    @property
    def ok(self) -> bool:
        return not any(i.severity == "error" for i in self.issues)

    @property
    def errors(self) -> list[Issue]:
        return [i for i in self.issues if i.severity == "error"]


# ---------------------------------------------------------------------------
# parsing

_TOKEN = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<lparen>\()
  | (?P<rparen>\))
  | (?P<slash>/)
  | (?P<role>:[^\s()"]*)
  | (?P<string>"(?:[^"\\]|\\.)*")
  | (?P<symbol>[^\s()/:"][^\s()"]*)
    """,
    re.VERBOSE,
)


@dataclass
class _Tok:
    kind: str
    text: str
    line: int
    col: int


def _tokenize(text: str) -> list[_Tok]:
    toks: list[_Tok] = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        chunk = m.group()
        if kind != "ws":
            toks.append(_Tok(kind, chunk, line, pos - line_start + 1))
        newlines = chunk.count("\n")
        if newlines:
            line += newlines
            line_start = pos + chunk.rfind("\n") + 1
        pos = m.end()
    toks.append(_Tok("eof", "", line, pos - line_start + 1))
    return toks


class _Parser:
    def __init__(self, text: str):
        self.toks = _tokenize(text)
        self.i = 0
        self.nodes: list[AmrNode] = []
        self.edges: list[AmrEdge] = []
        self.defined: set[str] = set()
        # (edge index, symbol token) for bare symbols resolved after the full parse
        self.pending: list[tuple[int, _Tok]] = []
        self.anon = 0

    def peek(self) -> _Tok:
        return self.toks[self.i]

    def take(self) -> _Tok:
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def error(self, message: str, tok: _Tok) -> ParseError:
        where = "end-of-input" if tok.kind == "eof" else repr(tok.text)
        return ParseError(f"{message} at {where}", tok.line, tok.col)

    def placeholder(self) -> str:
        self.anon += 1
        return f"\x00{self.anon}"

    def parse(self) -> AmrGraph:
        if self.peek().kind != "lparen":
            raise self.error("expected '('", self.peek())
        root = self.parse_node()
        if self.peek().kind != "eof":
            raise self.error("trailing content after graph", self.peek())
        self.resolve_symbols()
        return _renumber_anonymous(AmrGraph(tuple(self.nodes), tuple(self.edges), root))

    def parse_node(self) -> str:
        self.take()  # '('
        head = self.take()
        if head.kind not in ("symbol", "string"):
            raise self.error("expected concept or variable", head)
        if self.peek().kind == "slash":
            self.take()
            concept = self.take()
            if concept.kind not in ("symbol", "string"):
                raise self.error("expected concept after '/'", concept)
            if head.text in self.defined:
                raise self.error(f"variable {head.text!r} defined twice", head)
            node_id = head.text
            self.defined.add(node_id)
            self.nodes.append(AmrNode(node_id, concept.text, "var"))
        else:
            node_id = self.placeholder()
            self.nodes.append(AmrNode(node_id, head.text, "bare"))
        while True:
            tok = self.peek()
            if tok.kind == "rparen":
                self.take()
                return node_id
            if tok.kind == "eof":
                raise self.error("unbalanced parenthesis: missing ')'", tok)
            if tok.kind != "role":
                raise self.error("missing relation label", tok)
            role = self.take()
            if role.text == ":":
                raise self.error("empty relation label", role)
            target = self.peek()
            if target.kind == "lparen":
                idx = len(self.edges)
                self.edges.append(AmrEdge(node_id, role.text, ""))
                child = self.parse_node()
                self.edges[idx] = AmrEdge(node_id, role.text, child)
            elif target.kind == "string":
                self.take()
                const_id = self.placeholder()
                self.nodes.append(AmrNode(const_id, target.text, "const"))
                self.edges.append(AmrEdge(node_id, role.text, const_id))
            elif target.kind == "symbol":
                self.take()
                self.pending.append((len(self.edges), target))
                self.edges.append(AmrEdge(node_id, role.text, ""))
            else:
                raise self.error(f"missing target for relation {role.text}", target)

    def resolve_symbols(self) -> None:
        # a bare symbol is a re-entrancy if it names a variable defined anywhere in the graph
        for idx, tok in self.pending:
            src, rel = self.edges[idx].source, self.edges[idx].relation
            if tok.text in self.defined:
                self.edges[idx] = AmrEdge(src, rel, tok.text)
            elif _VARIABLE_LIKE.match(tok.text):
                raise self.error(f"dangling reference to undefined variable {tok.text!r}", tok)
            else:
                const_id = self.placeholder()
                self.nodes.append(AmrNode(const_id, tok.text, "const"))
                self.edges[idx] = AmrEdge(src, rel, const_id)


def parse_penman(text: str) -> AmrGraph:
    """Parse one PENMAN graph. Lines starting with ``#`` are treated as metadata and skipped."""
    body = "\n".join("" if ln.lstrip().startswith("#") else ln for ln in text.splitlines())
    if not body.strip():
        raise ParseError("empty input", 1, 1)
    return _Parser(body).parse()


def iter_penman_corpus(text: str) -> Iterator[AmrGraph]:
    """Yield graphs from blank-line-separated PENMAN text."""
    block: list[str] = []
    for line in text.splitlines() + [""]:
        if line.strip():
            block.append(line)
            continue
        if any(not ln.lstrip().startswith("#") for ln in block):
            yield parse_penman("\n".join(block))
        block = []


def load_penman_corpus(path: str | Path) -> list[AmrGraph]:
    return list(iter_penman_corpus(Path(path).read_text(encoding="utf-8")))


# ---------------------------------------------------------------------------
# helpers

def _preorder(g: AmrGraph) -> list[str]:
    children: dict[str, list[str]] = {}
    for e in g.edges:
        children.setdefault(e.source, []).append(e.target)
    seen: set[str] = set()
    order: list[str] = []
    stack = [g.root]
    while stack:
        nid = stack.pop()
        if nid in seen:
            continue
        seen.add(nid)
        order.append(nid)
        stack.extend(reversed(children.get(nid, [])))
    return order


def _renumber_anonymous(g: AmrGraph) -> AmrGraph:
    """Give bare and constant nodes ids ``_1.._k`` in depth-first order."""
    taken = {n.id for n in g.nodes if n.kind == "var"}
    kinds = {n.id: n.kind for n in g.nodes}
    order = _preorder(g) + [n.id for n in g.nodes]
    mapping: dict[str, str] = {}
    counter = 0
    for nid in order:
        if nid in mapping or kinds.get(nid, "var") == "var":
            continue
        counter += 1
        while f"_{counter}" in taken:
            counter += 1
        mapping[nid] = f"_{counter}"
    return _rename(g, mapping)


def _rename(g: AmrGraph, mapping: dict[str, str]) -> AmrGraph:
    if not mapping:
        return g
    m = lambda x: mapping.get(x, x)  # noqa: E731
    nodes = tuple(AmrNode(m(n.id), n.concept, n.kind) for n in g.nodes)
    edges = tuple(AmrEdge(m(e.source), e.relation, m(e.target)) for e in g.edges)
    return AmrGraph(nodes, edges, m(g.root))


def _reachable(g: AmrGraph) -> set[str]:
    return set(_preorder(g))


def _is_flat_multi_sentence(g: AmrGraph) -> bool:
    try:
        root = g.node(g.root)
    except KeyError:
        return False
    out = g.out_edges(g.root)
    return root.concept == MULTI_SENTENCE and bool(out) and all(_SNT_ROLE.match(e.relation) for e in out)


def graphs_equal(a: AmrGraph, b: AmrGraph) -> bool:
    """Structural equality: same root, same node multiset, same edge multiset."""
    return (
        a.root == b.root
        and Counter(a.nodes) == Counter(b.nodes)
        and Counter(a.edges) == Counter(b.edges)
    )


# ---------------------------------------------------------------------------
# validation

def validate_graph(g: AmrGraph) -> ValidationReport:
    issues: list[Issue] = []
    ids = [n.id for n in g.nodes]
    for nid, count in Counter(ids).items():
        if count > 1:
            issues.append(Issue("error", f"duplicate node id {nid!r}", nid))
    known = set(ids)
    for n in g.nodes:
        if not n.concept.strip():
            issues.append(Issue("error", "empty concept", n.id))
        if n.kind not in NODE_KINDS:
            issues.append(Issue("error", f"unknown node kind {n.kind!r}", n.id))
    if g.root not in known:
        issues.append(Issue("error", f"root {g.root!r} is not a node", g.root))

    indegree: Counter[str] = Counter()
    for i, e in enumerate(g.edges):
        loc = f"edge {i} ({e.source} {e.relation} {e.target})"
        if not e.relation.startswith(":") or len(e.relation) < 2:
            issues.append(Issue("error", f"relation {e.relation!r} must start with ':'", loc))
        for end in (e.source, e.target):
            if end not in known:
                issues.append(Issue("error", f"edge references missing node {end!r}", loc))
        indegree[e.target] += 1
    for triple, count in Counter(g.edges).items():
        if count > 1:
            issues.append(Issue("error", "duplicate edge triple", f"{triple.source} {triple.relation} {triple.target}"))

    kinds = {n.id: n.kind for n in g.nodes}
    for e in g.edges:
        if kinds.get(e.source) == "const":
            issues.append(Issue("error", "constant node cannot have outgoing edges", e.source))
    for nid, kind in kinds.items():
        limit = 0 if nid == g.root else 1
        if kind != "var" and indegree[nid] > limit:
            issues.append(Issue("error", f"{kind} node is re-entrant but has no variable", nid))

    if g.root in known:
        reach = _reachable(g)
        for nid in ids:
            if nid not in reach:
                issues.append(Issue("error", "unreachable node", nid))
    return ValidationReport(tuple(issues))


# ---------------------------------------------------------------------------
# simplification

def simplify_graph(g: AmrGraph) -> AmrGraph:
    """Strip two-digit sense suffixes and drop ``:wiki`` edges together with their leaf targets."""
    nodes = tuple(
        AmrNode(n.id, _SENSE_SUFFIX.sub("", n.concept) if n.kind != "const" else n.concept, n.kind)
        for n in g.nodes
    )
    edges = tuple(e for e in g.edges if e.relation != ":wiki")
    pruned = AmrGraph(nodes, edges, g.root)
    keep = _reachable(pruned)
    pruned = AmrGraph(
        tuple(n for n in nodes if n.id in keep),
        tuple(e for e in edges if e.source in keep),
        g.root,
    )
    return _renumber_anonymous(pruned)


# ---------------------------------------------------------------------------
# merging

def merge_sentence_graphs(graphs: Sequence[AmrGraph]) -> AmrGraph:
    """Join sentence graphs under one ``multi-sentence`` root with ``:snt1``..``:sntK`` edges.

    Inputs that are themselves flat multi-sentence graphs contribute their
    sentence roots directly (their own root is dropped), so sentence numbering
    stays contiguous. Colliding variables are renamed ``w`` -> ``w2``, ``w3``...
    """
    if not graphs:
        raise ValueError("need at least one graph to merge")
    taken: set[str] = set()
    nodes: list[AmrNode] = []
    edges: list[AmrEdge] = []
    sentence_roots: list[str] = []
    for g in graphs:
        flat = _is_flat_multi_sentence(g)
        own_ids = {n.id for n in g.nodes}
        mapping: dict[str, str] = {}
        for n in g.nodes:
            if flat and n.id == g.root:
                continue
            new = n.id
            if new in taken:
                k = 2
                while f"{n.id}{k}" in taken or f"{n.id}{k}" in own_ids:
                    k += 1
                new = f"{n.id}{k}"
            mapping[n.id] = new
            taken.add(new)
        renamed = _rename(g, mapping)
        for n in renamed.nodes:
            if not (flat and n.id == renamed.root):
                nodes.append(n)
        for e in renamed.edges:
            if not (flat and e.source == renamed.root):
                edges.append(e)
        sentence_roots.extend(renamed.sentence_roots() if flat else [renamed.root])

    root_id = "\x00root"
    root_edges = [AmrEdge(root_id, f":snt{i}", sid) for i, sid in enumerate(sentence_roots, 1)]
    merged = AmrGraph(
        (AmrNode(root_id, MULTI_SENTENCE, "bare"), *nodes),
        (*root_edges, *edges),
        root_id,
    )
    return _renumber_anonymous(merged)


def merge_context_response_graphs(g_c: AmrGraph, g_r: AmrGraph) -> AmrGraph:
    """Merge the context graph and the response graph, context sentences first."""
    return merge_sentence_graphs([g_c, g_r])


# ---------------------------------------------------------------------------
# serialization

def serialize_penman(g: AmrGraph, indent: int = 2) -> str:
    """Render ``g`` as PENMAN text, one relation per line, ``indent`` spaces per depth level."""
    by_id = {n.id: n for n in g.nodes}
    if g.root not in by_id:
        raise SerializationError(f"root {g.root!r} is not a node")
    children: dict[str, list[AmrEdge]] = {}
    for e in g.edges:
        children.setdefault(e.source, []).append(e)
    emitted: set[str] = set()
    on_path: set[str] = set()

    def render(nid: str, depth: int) -> str:
        node = by_id[nid]
        if node.kind == "const":
            if children.get(nid):
                raise SerializationError(f"constant {node.concept!r} has outgoing edges")
            emitted.add(nid)
            return node.concept
        emitted.add(nid)
        on_path.add(nid)
        head = f"({nid} / {node.concept}" if node.kind == "var" else f"({node.concept}"
        parts = [head]
        pad = " " * (indent * (depth + 1))
        for e in children.get(nid, []):
            if e.target not in by_id:
                raise SerializationError(f"edge to missing node {e.target!r}")
            target = by_id[e.target]
            if e.target in emitted:
                if target.kind != "var":
                    kind = "cycle" if e.target in on_path else "re-entrancy"
                    raise SerializationError(f"{kind} through {target.kind} node {target.concept!r} has no variable")
                parts.append(f"\n{pad}{e.relation} {e.target}")
            else:
                parts.append(f"\n{pad}{e.relation} {render(e.target, depth + 1)}")
        on_path.discard(nid)
        return "".join(parts) + ")"

    return render(g.root, 0)
