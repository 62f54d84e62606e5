"""UCCA passages: anchored DAGs with categorized primary and remote edges.

Primary edges form a tree over units; remote edges add reentrancies.
Leaf units are anchored by token positions, and the anchors of leaves
partition the sentence. Serialization covers the corpus XML passage
format, a canonical JSON form, and a bracketed text rendering.
"""

from __future__ import annotations

import io
import json
import logging
from dataclasses import dataclass, field
from xml.etree import ElementTree as ET

log = logging.getLogger(__name__)

CATEGORIES = frozenset("ACDEFGHLNPQRSTU")
ELLIPSIS = "…"


@dataclass(frozen=True)
class UccaUnit:
    id: str
    anchors: frozenset[int] = frozenset()


@dataclass(frozen=True)
class UccaEdge:
    parent: str
    child: str
    categories: tuple[str, ...]
    remote: bool = False

    @property
    def label(self) -> str:
        return "|".join(self.categories)


@dataclass(frozen=True, eq=False)
class UccaPassage:
    passage_id: str
    tokens: tuple[str, ...]
    punct: frozenset[int]
    root: str
    units: dict[str, UccaUnit]
    edges: tuple[UccaEdge, ...]

    def __eq__(self, other) -> bool:
        if not isinstance(other, UccaPassage):
            return NotImplemented
        a, b = canonicalize(self), canonicalize(other)
        return (a.passage_id, a.tokens, a.punct, a.root, a.units, set(a.edges)) == \
               (b.passage_id, b.tokens, b.punct, b.root, b.units, set(b.edges))

    def primary_children(self, uid: str) -> list[UccaEdge]:
        return [e for e in self.edges if e.parent == uid and not e.remote]

    def remote_children(self, uid: str) -> list[UccaEdge]:
        return [e for e in self.edges if e.parent == uid and e.remote]

    def primary_parent(self, uid: str) -> str | None:
        for e in self.edges:
            if e.child == uid and not e.remote:
                return e.parent
        return None


def terminal_yield(passage: UccaPassage, uid: str, include_punct: bool = True) -> frozenset[int]:
    """Token ids reachable from ``uid`` via primary edges only."""
    if uid not in passage.units:
        raise KeyError(f"unknown unit id {uid!r}")
    seen: set[str] = set()

    def walk(u: str) -> set[int]:
        if u in seen:
            return set()
        seen.add(u)
        result = set(passage.units[u].anchors)
        for e in passage.primary_children(u):
            result |= walk(e.child)
        return result

    positions = walk(uid)
    if not include_punct:
        positions -= set(passage.punct)
    return frozenset(positions)


def all_yields(passage: UccaPassage, include_punct: bool = True) -> dict[str, frozenset[int]]:
    """Primary yields of every unit, computed bottom-up in one pass."""
    yields: dict[str, frozenset[int]] = {}
    children: dict[str, list[str]] = {}
    for e in passage.edges:
        if not e.remote:
            children.setdefault(e.parent, []).append(e.child)

    def walk(u: str) -> frozenset[int]:
        if u in yields:
            return yields[u]
        yields[u] = frozenset()  # cycle guard
        result = set(passage.units[u].anchors)
        for c in children.get(u, ()):
            result |= walk(c)
        if not include_punct:
            result -= set(passage.punct)
        yields[u] = frozenset(result)
        return yields[u]

    for u in passage.units:
        walk(u)
    return yields


def validate(passage: UccaPassage) -> list[str]:
    """All structural invariant violations, as strings naming the offender."""
    v: list[str] = []
    if passage.root not in passage.units:
        return [f"root unit {passage.root!r} does not exist"]
    for e in passage.edges:
        for end in (e.parent, e.child):
            if end not in passage.units:
                v.append(f"edge {e.parent}->{e.child} references unknown unit {end!r}")
        if not e.categories:
            v.append(f"edge {e.parent}->{e.child} has no categories")
        for cat in e.categories:
            if cat not in CATEGORIES:
                v.append(f"edge {e.parent}->{e.child} has unknown category {cat!r}")
        if e.remote and "U" in e.categories:
            v.append(f"remote edge {e.parent}->{e.child} carries U")
    if v:
        return v

    primary_parents: dict[str, list[str]] = {u: [] for u in passage.units}
    for e in passage.edges:
        if not e.remote:
            primary_parents[e.child].append(e.parent)
    for uid, parents in primary_parents.items():
        if uid == passage.root:
            if parents:
                v.append(f"root {uid} has a primary parent")
        elif len(parents) != 1:
            kind = "multiple primary parents" if len(parents) > 1 else "no primary parent"
            v.append(f"unit {uid} has {kind}")

    # cycle checks: primary tree, then the union graph including remotes
    for remote in (False, True):
        color: dict[str, int] = {}

        def visit(u: str) -> bool:
            color[u] = 1
            for e in passage.edges:
                if e.parent != u or (e.remote and not remote):
                    continue
                c = color.get(e.child, 0)
                if c == 1 or (c == 0 and visit(e.child)):
                    return True
            color[u] = 2
            return False

        for uid in passage.units:
            if color.get(uid, 0) == 0 and visit(uid):
                v.append("cycle via remote edges" if remote else f"primary cycle through {uid}")
                break
        if v:
            return v

    for uid, unit in passage.units.items():
        kids = passage.primary_children(uid)
        if unit.anchors and kids:
            v.append(f"unit {uid} has both anchors and primary children")
        if not unit.anchors and not kids:
            v.append(f"unit {uid} has neither anchors nor primary children")
    anchored: dict[int, str] = {}
    for uid, unit in passage.units.items():
        for pos in unit.anchors:
            if pos in anchored:
                v.append(f"token {pos} anchored by both {anchored[pos]} and {uid}")
            anchored[pos] = uid
    missing = set(range(1, len(passage.tokens) + 1)) - set(anchored)
    if missing:
        v.append(f"tokens {sorted(missing)} not anchored by any leaf")
    return v


def canonicalize(passage: UccaPassage) -> UccaPassage:
    """Regenerate unit ids in preorder ('0' root, then '1.1', '1.2', ...)."""
    yields = all_yields(passage)
    mapping: dict[str, str] = {passage.root: "0"}
    counter = 0

    def order_key(e: UccaEdge):
        y = yields[e.child]
        return (min(y) if y else 0, e.remote)

    def walk(uid: str) -> None:
        nonlocal counter
        for e in sorted(passage.primary_children(uid), key=order_key):
            counter += 1
            mapping[e.child] = f"1.{counter}"
            walk(e.child)

    walk(passage.root)
    units = {mapping[u]: UccaUnit(mapping[u], unit.anchors) for u, unit in passage.units.items()}

    def edge_key(e: UccaEdge):
        y = yields[e.child]
        return (e.remote, mapping[e.parent], min(y) if y else 0, e.categories)

    edges = tuple(UccaEdge(mapping[e.parent], mapping[e.child], e.categories, e.remote)
                  for e in sorted(passage.edges, key=edge_key))
    return UccaPassage(passage.passage_id, passage.tokens, passage.punct, "0", units, edges)


# ---------------------------------------------------------------------------
# XML passage format (as in the UCCA corpus releases)

def serialize_xml(passage: UccaPassage) -> str:
    p = canonicalize(passage)
    root = ET.Element("root", annotationID="0", passageID=p.passage_id)
    ET.SubElement(root, "attributes")
    l0 = ET.SubElement(root, "layer", layerID="0")
    ET.SubElement(l0, "attributes")
    for pos, form in enumerate(p.tokens, start=1):
        node = ET.SubElement(l0, "node", ID=f"0.{pos}",
                             type="Punctuation" if pos in p.punct else "Word")
        ET.SubElement(node, "attributes", paragraph="1", paragraph_position=str(pos), text=form)
    l1 = ET.SubElement(root, "layer", layerID="1")
    ET.SubElement(l1, "attributes")
    ids = sorted(p.units, key=lambda u: (u != "0", len(u), u))
    for uid in ids:
        node = ET.SubElement(l1, "node", ID=uid if uid != "0" else "1.0", type="FN")
        ET.SubElement(node, "attributes")
        out = [e for e in p.edges if e.parent == uid]
        out.sort(key=lambda e: (e.remote, e.child))
        for e in out:
            for cat in e.categories:
                el = ET.SubElement(node, "edge", toID=e.child, type=cat)
                ET.SubElement(el, "attributes", **({"remote": "True"} if e.remote else {}))
        for pos in sorted(p.units[uid].anchors):
            el = ET.SubElement(node, "edge", toID=f"0.{pos}", type="Terminal")
            ET.SubElement(el, "attributes")
    ET.indent(root)
    return ET.tostring(root, encoding="unicode") + "\n"


class UccaFormatError(ValueError):
    pass


def parse_xml(text: str) -> UccaPassage:
    """Parse a corpus-format XML passage.

    Implicit units are dropped with a warning; multiple edges between the
    same pair of nodes merge into one multi-category edge.
    """
    try:
        root = ET.fromstring(text)
    except ET.ParseError as e:
        raise UccaFormatError(f"malformed XML: {e}") from e
    passage_id = root.get("passageID", "")
    tokens: dict[int, str] = {}
    punct: set[int] = set()
    fn_nodes: dict[str, ET.Element] = {}
    implicit: set[str] = set()
    for layer in root.findall("layer"):
        if layer.get("layerID") == "0":
            for node in layer.findall("node"):
                attrs = node.find("attributes")
                pos = int(attrs.get("paragraph_position", node.get("ID", "0.0").split(".")[1]))
                tokens[pos] = attrs.get("text", "")
                if node.get("type") == "Punctuation":
                    punct.add(pos)
        elif layer.get("layerID") == "1":
            for node in layer.findall("node"):
                if node.get("type") not in ("FN", None):
                    log.warning("passage %s: dropping non-foundational node %s",
                                passage_id, node.get("ID"))
                    continue
                attrs = node.find("attributes")
                if attrs is not None and attrs.get("implicit") in ("True", "true", "1"):
                    implicit.add(node.get("ID"))
                    log.warning("passage %s: dropping implicit unit %s", passage_id, node.get("ID"))
                    continue
                fn_nodes[node.get("ID")] = node

    forms = tuple(tokens[i] for i in sorted(tokens))
    if sorted(tokens) != list(range(1, len(tokens) + 1)):
        raise UccaFormatError("terminal positions are not contiguous")

    units: dict[str, UccaUnit] = {}
    anchors: dict[str, set[int]] = {uid: set() for uid in fn_nodes}
    merged: dict[tuple[str, str, bool], list[str]] = {}
    order: list[tuple[str, str, bool]] = []
    has_parent: set[str] = set()
    for uid, node in fn_nodes.items():
        for edge in node.findall("edge"):
            to = edge.get("toID")
            cat = edge.get("type")
            attrs = edge.find("attributes")
            remote = attrs is not None and attrs.get("remote") in ("True", "true", "1")
            if cat == "Terminal" or (to or "").startswith("0."):
                if cat == "Terminal":
                    anchors[uid].add(int(to.split(".")[1]))
                continue
            if to in implicit:
                continue
            if to not in fn_nodes:
                raise UccaFormatError(f"edge from {uid} to unknown node {to}")
            if cat not in CATEGORIES:
                raise UccaFormatError(f"unknown category code {cat!r} on edge {uid}->{to}")
            key = (uid, to, remote)
            if key not in merged:
                merged[key] = []
                order.append(key)
            if cat not in merged[key]:
                merged[key].append(cat)
            if not remote:
                has_parent.add(to)

    for uid in fn_nodes:
        units[uid] = UccaUnit(uid, frozenset(anchors[uid]))
    roots = [uid for uid in fn_nodes if uid not in has_parent]
    if len(roots) != 1:
        raise UccaFormatError(f"expected one root foundational node, got {roots}")
    edges = tuple(UccaEdge(p, c, tuple(cats), r) for (p, c, r), cats in
                  ((k, merged[k]) for k in order))
    return UccaPassage(passage_id, forms, frozenset(punct), roots[0], units, edges)


# ---------------------------------------------------------------------------
# canonical JSON

def serialize_json(passage: UccaPassage) -> str:
    p = canonicalize(passage)
    yields = all_yields(p)
    data = {
        "id": p.passage_id,
        "tokens": list(p.tokens),
        "punct": sorted(p.punct),
        "root": p.root,
        "units": {uid: {"anchors": sorted(u.anchors)} for uid, u in sorted(p.units.items())},
        "edges": [
            {"parent": e.parent, "child": e.child, "categories": list(e.categories),
             "remote": e.remote}
            for e in sorted(p.edges, key=lambda e: (e.remote, e.parent,
                                                    min(yields[e.child] or {0}), e.child))
        ],
    }
    return json.dumps(data, sort_keys=True, indent=1) + "\n"


def parse_json(text: str) -> UccaPassage:
    data = json.loads(text)
    units = {uid: UccaUnit(uid, frozenset(u["anchors"])) for uid, u in data["units"].items()}
    edges = tuple(UccaEdge(e["parent"], e["child"], tuple(e["categories"]), e["remote"])
                  for e in data["edges"])
    return UccaPassage(data["id"], tuple(data["tokens"]), frozenset(data["punct"]),
                       data["root"], units, edges)


# ---------------------------------------------------------------------------
# bracketed text rendering

@dataclass
class BracketNode:
    """Renderer-facing view of a unit: label, leaf anchors, children, remotes."""
    label: str
    anchors: tuple[int, ...] = ()
    children: list["BracketNode"] = field(default_factory=list)
    remotes: list[tuple[str, tuple[int, ...]]] = field(default_factory=list)  # (label, target tokens)

    def first_token(self) -> int:
        firsts = [min(self.anchors)] if self.anchors else []
        firsts += [c.first_token() for c in self.children]
        return min(firsts) if firsts else 0


class _RenderState:
    def __init__(self):
        self.cursor = 1
        self.pending = False


def _render_forms(anchors: tuple[int, ...], forms: tuple[str, ...],
                  st: _RenderState | None) -> list[str]:
    parts: list[str] = []
    prev: int | None = None
    for t in anchors:
        if st is None:
            if prev is not None and t > prev + 1:
                parts.append(ELLIPSIS)
        elif t == st.cursor:
            st.cursor += 1
        elif t > st.cursor:
            parts.append(ELLIPSIS)
            st.cursor = t + 1
        else:  # displaced out of linear order
            st.pending = True
        parts.append(forms[t - 1])
        prev = t
    return parts


def _render_node(node: BracketNode, forms: tuple[str, ...], st: _RenderState) -> str:
    inner: list[str] = []
    if node.anchors:
        inner += _render_forms(node.anchors, forms, st)
    items: list[tuple[tuple[int, int], object]] = []
    for c in node.children:
        items.append(((c.first_token(), 0), c))
    for label, target in node.remotes:
        items.append(((min(target) if target else 0, 1), (label, target)))
    items.sort(key=lambda kv: kv[0])
    for _, item in items:
        if isinstance(item, BracketNode):
            k = item.first_token()
            if k > st.cursor:
                inner.append(ELLIPSIS)
                st.pending = False
                st.cursor = k
            elif st.pending and k == st.cursor:
                inner.append(ELLIPSIS)
                st.pending = False
            inner.append(_render_node(item, forms, st))
        else:
            label, target = item
            text = " ".join(_render_forms(tuple(sorted(target)), forms, None))
            inner.append(f"[{label}* {text}]")
    return f"[{node.label} " + " ".join(inner) + "]"


def render_brackets(nodes: list[BracketNode], forms: tuple[str, ...],
                    root_label: str | None = None) -> str:
    """Render units side by side, marking token-order breaks with an ellipsis."""
    st = _RenderState()
    top = BracketNode(root_label or "", children=list(nodes))
    if root_label is not None:
        return _render_node(top, forms, st)
    parts = []
    for item in sorted(nodes, key=lambda n: n.first_token()):
        k = item.first_token()
        if k > st.cursor:
            parts.append(ELLIPSIS)
            st.pending = False
            st.cursor = k
        elif st.pending and k == st.cursor:
            parts.append(ELLIPSIS)
            st.pending = False
        parts.append(_render_node(item, forms, st))
    return " ".join(parts)


def _passage_bracket_nodes(passage: UccaPassage) -> list[BracketNode]:
    yields = all_yields(passage)

    def build(uid: str, label: str) -> BracketNode:
        unit = passage.units[uid]
        node = BracketNode(label, tuple(sorted(unit.anchors)))
        for e in passage.primary_children(uid):
            node.children.append(build(e.child, e.label))
        for e in passage.remote_children(uid):
            node.remotes.append((e.label, tuple(sorted(yields[e.child]))))
        return node

    return [build(e.child, e.label) for e in passage.primary_children(passage.root)]


def bracket_string(passage: UccaPassage) -> str:
    """Deterministic bracketed rendering: [X ...] per unit, X|Y for multiple
    categories, * on remote children, token forms at leaves, left to right
    by minimum token position."""
    return render_brackets(_passage_bracket_nodes(passage), passage.tokens)


def normalize_bracket(text: str) -> str:
    """Whitespace-normalize a bracketing for comparison."""
    text = text.replace("...", ELLIPSIS)
    text = " ".join(text.split())
    text = text.replace("[ ", "[")
    while " ]" in text:
        text = text.replace(" ]", "]")
    return text
