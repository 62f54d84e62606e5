"""Staged rule pipeline from an annotated sentence to a UCCA passage.

The pipeline builds a working forest of provisional units over the
dependency tree, then refines it in stages: lexical-unit initialization,
main-relation (scene) identification, function-word and modifier
attachment, argument structure, coordination, scene-category resolution,
secondary-verb restructuring, head articulation, and cleanup. Working
labels ``+`` (undetermined scene) and ``-`` (non-scene) never survive to
the final passage; ``UNA`` marks the lexical leaf of a unit.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

from .conllulex_io import LexExpr, Sentence, Token
from . import lexicons as lx
from .lexicons import LexiconSet
from .ucca_model import (BracketNode, UccaEdge, UccaPassage, UccaUnit,
                         render_brackets, validate)

log = logging.getLogger(__name__)

SCENE_LABELS = ("+", "P", "S")
PURPOSE_SS = ("p.purpose", "p.explanation", "p.comparisonref")
SNACS_TEMPORAL = ("p.temporal", "p.time", "p.starttime", "p.endtime",
                  "p.frequency", "p.interval")
EVENTIVE_NOUN_SS = ("n.act", "n.phenomenon", "n.process", "n.event")
STATIVE_NOUN_SS = ("n.attribute", "n.feeling", "n.state")
POSSESSIVE_SCENE_SS = ("p.possessor", "p.originator", "p.recipient",
                       "p.socialrel", "p.orgmember", "p.gestalt", "p.whole")
TENSE_AUX_LEMMAS = ("be", "have", "do", "will", "get")
# dependents that follow a promoted head when the dependency tree is rewired
CLAUSE_RELS = ("nsubj", "csubj", "obj", "iobj", "ccomp", "xcomp", "obl",
               "advcl", "advmod", "aux", "cop", "mark", "cc", "conj",
               "parataxis", "discourse", "vocative", "expl", "dislocated",
               "punct", "list")


@dataclass
class Remote:
    categories: tuple[str, ...]
    target: "WNode"


class WNode:
    """Provisional unit: working label atoms, optional decoration, children."""

    _counter = 0

    def __init__(self, atoms: list[str], anchors: list[int] | None = None,
                 expr: LexExpr | None = None):
        WNode._counter += 1
        self.nid = WNode._counter
        self.atoms = list(atoms)
        self.decor: str | None = None
        self.parent: WNode | None = None
        self.children: list[WNode] = []
        self.remotes: list[Remote] = []
        self.anchors: list[int] = sorted(anchors or [])
        self.expr = expr
        self.quantity_flag = False
        self.possessive_flag = False

    @property
    def label(self) -> str:
        head = self.atoms[0] + (f"({self.decor})" if self.decor else "")
        return "|".join([head] + self.atoms[1:])

    @property
    def is_scene(self) -> bool:
        return self.atoms[0] in SCENE_LABELS

    def add(self, child: "WNode") -> "WNode":
        if child.parent is not None:
            child.parent.children.remove(child)
        child.parent = self
        self.children.append(child)
        return child

    def first_token(self) -> int:
        firsts = [self.anchors[0]] if self.anchors else []
        firsts += [c.first_token() for c in self.children if c.first_token()]
        return min(firsts) if firsts else 0

    def walk(self):
        yield self
        for c in list(self.children):
            yield from c.walk()

    def yield_tokens(self) -> set[int]:
        out = set(self.anchors)
        for c in self.children:
            out |= c.yield_tokens()
        return out

    def __repr__(self):
        return f"WNode({self.label}, {self.anchors or [c.label for c in self.children]})"


class DepTree:
    """Mutable view of the sentence's dependency structure."""

    def __init__(self, sentence: Sentence):
        self.n = len(sentence.tokens)
        self.heads = {t.id: t.head for t in sentence.tokens}
        self.rels = {t.id: t.deprel for t in sentence.tokens}

    def base(self, tid: int) -> str:
        return self.rels[tid].partition(":")[0]

    def children(self, tid: int, base: str | tuple[str, ...] | None = None) -> list[int]:
        bases = (base,) if isinstance(base, str) else base
        return sorted(t for t in self.heads
                      if self.heads[t] == tid and (base is None or self.base(t) in bases))

    def roots(self) -> list[int]:
        return sorted(t for t, h in self.heads.items() if h == 0)


class WorkGraph:
    def __init__(self, sentence: Sentence, lex: LexiconSet):
        self.sentence = sentence
        self.lex = lex
        self.dep = DepTree(sentence)
        self.root = WNode(["DUMMYROOT"])
        self.node_of: dict[int, WNode] = {}
        self.lexical_of: dict[int, WNode] = {}
        self.discarded: set[int] = set()

    def token(self, tid: int) -> Token:
        return self.sentence.token(tid)

    def unit_head_token(self, unit: WNode) -> int:
        toks = unit.expr.tokens
        for tid in toks:
            if self.dep.heads.get(tid, 0) not in toks:
                return tid
        return toks[0]

    def expr_lemma(self, unit: WNode) -> str:
        expr = unit.expr
        if expr and expr.lexlemma:
            return expr.lexlemma.lower()
        tid = expr.tokens[0] if expr else 0
        return self.token(tid).lemma.lower() if tid else ""

    def lexical_units(self) -> list[WNode]:
        """Top-level lexical units in token order (punctuation excluded)."""
        units = [c for c in self.root.children if c.expr is not None and c.atoms != ["U"]]
        return sorted(units, key=WNode.first_token)

    def attach(self, unit: WNode, parent: WNode, cat: str | list[str] | None) -> None:
        if cat is not None:
            unit.atoms = [cat] if isinstance(cat, str) else list(cat)
        parent.add(unit)

    def promote(self, dep_tok: int, head_tok: int, demoted_rel: str) -> None:
        """Swap a dependent over its head; clause-level dependents follow."""
        dep = self.dep
        dep.heads[dep_tok], dep.rels[dep_tok] = dep.heads[head_tok], dep.rels[head_tok]
        dep.heads[head_tok], dep.rels[head_tok] = dep_tok, demoted_rel
        for c in list(dep.children(head_tok)):
            if c != dep_tok and dep.base(c) in CLAUSE_RELS:
                dep.heads[c] = dep_tok


# ---------------------------------------------------------------------------
# Step 0.1: split the final preposition off idiomatic verb-preposition MWEs

def split_iav(sentence: Sentence) -> Sentence:
    """Detach the final preposition of each V.IAV expression into its own
    single-word unit; the residue is relabeled V.LVC.full or V.VPC.full by
    its syntax (particle/adposition residue -> VPC, else LVC)."""
    targets = [e for e in sentence.lexexprs
               if e.strength == "strong" and e.lexcat == "V.IAV" and len(e.tokens) > 1
               and sentence.token(e.tokens[-1]).upos in ("ADP", "PART")]
    if not targets:
        return sentence
    tokens = list(sentence.tokens)
    for expr in targets:
        prep_id = expr.tokens[-1]
        rest = expr.tokens[:-1]
        prep = tokens[prep_id - 1]
        tokens[prep_id - 1] = replace(prep, smwe=None, lexcat="P",
                                      lexlemma=prep.lemma.lower(), ss=None, ss2=None)
        if len(rest) == 1:
            only = tokens[rest[0] - 1]
            tokens[rest[0] - 1] = replace(only, smwe=None, lexcat="V",
                                          lexlemma=only.lemma.lower())
        else:
            particle = any(
                tokens[t - 1].upos in ("ADP", "PART") or
                sentence.token(t).deprel.startswith("compound:prt") for t in rest[1:])
            new_lexcat = "V.VPC.full" if particle else "V.LVC.full"
            first = tokens[rest[0] - 1]
            new_lexlemma = " ".join(tokens[t - 1].lemma.lower() for t in rest)
            tokens[rest[0] - 1] = replace(first, lexcat=new_lexcat, lexlemma=new_lexlemma)
            for pos, t in enumerate(rest, start=1):
                tokens[t - 1] = replace(tokens[t - 1], smwe=(tokens[t - 1].smwe[0], pos))
    from .conllulex_io import group_lexical_expressions
    new_tokens = tuple(tokens)
    return replace(sentence, tokens=new_tokens,
                   lexexprs=tuple(group_lexical_expressions(new_tokens, strict=False)))


# ---------------------------------------------------------------------------
# Step 0.2: initialize lexical units under the working root

def _mwe_creates_cycle(expr: LexExpr, dep: DepTree) -> bool:
    toks = set(expr.tokens)
    for t in expr.tokens:
        h = dep.heads.get(t, 0)
        if h == 0 or h in toks:
            continue
        seen = set()
        walk = h
        while walk and walk not in seen:
            seen.add(walk)
            walk = dep.heads.get(walk, 0)
            if walk in toks:
                return True
    return False


def init_units(sentence: Sentence, lex: LexiconSet) -> WorkGraph:
    g = WorkGraph(sentence, lex)
    exprs: list[LexExpr] = []
    for expr in sentence.lexexprs:
        if expr.strength == "weak":
            continue
        if len(expr.tokens) > 1 and _mwe_creates_cycle(expr, g.dep):
            log.info("%s: breaking MWE %s (would create a dependency cycle)",
                     sentence.sent_id, expr.lexlemma)
            for t in expr.tokens:
                tok = sentence.token(t)
                exprs.append(LexExpr((t,), "single", expr.lexcat, tok.lemma.lower(),
                                     expr.ss, expr.ss2))
        else:
            exprs.append(expr)
    exprs.sort(key=lambda e: e.tokens[0])

    for expr in exprs:
        toks = expr.tokens
        if all(sentence.token(t).upos == "PUNCT" for t in toks):
            unit = WNode(["U"], anchors=list(toks), expr=expr)
            g.root.add(unit)
            for t in toks:
                g.node_of[t] = unit
                g.lexical_of[t] = unit
            continue
        if expr.lexcat in ("V.LVC.full", "V.LVC.cause") and len(toks) > 1:
            outer = WNode(["+"], expr=expr)
            light_cat = "D" if expr.lexcat == "V.LVC.cause" else "F"
            lights = [t for t in toks if sentence.token(t).upos in ("VERB", "DET")]
            scene = [t for t in toks if t not in lights] or [toks[-1]]
            if len(scene) > 1:
                scene = [scene[-1]]
            lights = [t for t in toks if t not in scene]
            for t in lights:
                outer.add(WNode([light_cat], anchors=[t]))
            una = outer.add(WNode(["UNA"], anchors=scene))
            for t in toks:
                g.node_of[t] = outer
                g.lexical_of[t] = una
        else:
            outer = WNode(["LU"], expr=expr)
            una = outer.add(WNode(["UNA"], anchors=list(toks)))
            for t in toks:
                g.node_of[t] = outer
                g.lexical_of[t] = una
        g.root.add(outer)

    for expr in exprs:
        toks = set(expr.tokens)
        for t in expr.tokens:
            if g.dep.heads.get(t, 0) in toks:
                g.discarded.add(t)
    return g


# ---------------------------------------------------------------------------
# Step 0.3: identify scene-evoking lexical units

def _bfs_classify(g: WorkGraph, visit) -> None:
    from collections import deque
    queue = deque(g.dep.roots())
    seen: set[int] = set()
    while queue:
        t = queue.popleft()
        if t in seen:
            continue
        seen.add(t)
        extra = visit(t)
        if extra and extra not in seen:
            queue.append(extra)
        for c in g.dep.children(t):
            if c not in seen:
                queue.append(c)


def classify_main_relations(g: WorkGraph, lex: LexiconSet) -> WorkGraph:
    sent, dep = g.sentence, g.dep

    def visit(t: int) -> int | None:
        u = g.node_of.get(t)
        if u is None or u.atoms != ["LU"]:
            return None
        tok = sent.token(t)
        expr = u.expr
        lexcat = expr.lexcat or ""
        lemma = g.expr_lemma(u)
        ss = expr.ss or ""
        ss2 = expr.ss2 or ""
        head_tok = g.unit_head_token(u)
        h = dep.heads.get(head_tok, 0)
        rel = dep.base(head_tok)

        is_adj = lexcat == "ADJ" or (not lexcat and tok.upos == "ADJ")
        if is_adj and not lx.is_quantity_adj(lemma, lex) and rel != "discourse":
            u.atoms = ["S"]
            return None
        if rel == "expl" and lemma == "there":
            u.atoms = ["S"]
            return None
        if lemma == "be":
            expls = [c for c in dep.children(head_tok, "expl")
                     if sent.token(c).lemma.lower() == "there"]
            if expls:
                # existential: demote the copula, make "there" the head
                u.atoms = ["-"]
                g.promote(expls[0], head_tok, "cop")
                return expls[0]
        if tok.upos == "ADV" and rel != "discourse" and dep.children(head_tok, "cop"):
            u.atoms = ["S"]
            return None
        if lemma in ("thanks", "thank you"):
            u.atoms = ["P"]
            return None
        if (lexcat in ("P", "PP") and rel == "case" and h
                and dep.children(h, "cop")
                and ss not in PURPOSE_SS
                and not (ss2 == "p.extent" and lemma == "as")):
            u.atoms = ["S"]
            g.promote(head_tok, h, "obj")
            return None
        if rel == "cop" and lemma == "be" and h:
            h_unit = g.node_of.get(h)
            h_expr = h_unit.expr if h_unit else None
            nominal = h_expr is not None and (h_expr.lexcat or "") in ("N", "PRON", "NUM")
            scene_nominal = h_unit is not None and (
                h_unit.is_scene or any(len(c.atoms) > 1 for c in h_unit.children))
            if nominal and not dep.children(h, "case") and not scene_nominal:
                u.atoms = ["S"]
                g.promote(head_tok, h, "obj")
                return None
        if lexcat == "N" and tok.upos != "PROPN":
            if ss in STATIVE_NOUN_SS:
                u.atoms = ["S"]
            elif ss in EVENTIVE_NOUN_SS and not lx.is_part_of_day(lemma, lex):
                u.atoms = ["P"]
            elif lx.is_relational_noun(lemma, ss, lex):
                cats = lx.relational_categories(lemma, lex)
                una = u.children[0]
                inner = WNode(["UNA", *cats])
                u.children.remove(una)
                inner.add(una)
                u.add(inner)
                u.atoms = ["-"]
                for tid in expr.tokens:
                    g.lexical_of[tid] = inner
            else:
                u.atoms = ["-"]
            return None
        if lexcat.startswith("V") or tok.upos == "VERB":
            u.atoms = ["+"]
            return None
        if lexcat == "AUX" and rel not in ("aux", "cop"):
            u.atoms = ["+"]  # promoted auxiliary head, e.g. under ellipsis
            return None
        u.atoms = ["-"]
        return None

    _bfs_classify(g, visit)
    for u in g.root.children:
        if u.atoms == ["LU"]:
            u.atoms = ["-"]
    return g


# ---------------------------------------------------------------------------
# Step 1: attach functional and discourse-modifier words

def attach_function_words(g: WorkGraph, lex: LexiconSet) -> WorkGraph:
    for u in g.lexical_units():
        if u.parent is not g.root:
            continue
        t = g.unit_head_token(u)
        h = g.dep.heads.get(t, 0)
        if not h:
            rel0 = g.dep.base(t)
            if (u.expr.lexcat == "INTJ" or g.token(t).upos == "INTJ") and rel0 == "root":
                u.atoms = ["G"]
            continue
        rel = g.dep.base(t)
        hu = g.node_of.get(h)
        if hu is None or hu is u:
            continue
        lemma = g.expr_lemma(u)
        if rel == "det":
            if lemma in ("a", "an", "the"):
                cat = "F"
            elif lemma in ("no", "neither"):
                cat = "D"
            elif lemma in lex.demonstrative_determiners:
                cat = "E" if not hu.is_scene else "F"
            elif lemma in lex.quantifier_determiners:
                cat = "Q" if not hu.is_scene else "F"
            else:
                cat = "F"
            g.attach(u, hu, cat)
        elif rel == "aux":
            cat = "F" if lemma in TENSE_AUX_LEMMAS else "D"
            g.attach(u, hu, cat)
            if cat == "F":
                g.node_of[t] = hu  # dependents should never attach under F
        elif rel == "cop":
            g.attach(u, hu, "F")
            g.node_of[t] = hu
        elif rel in ("discourse", "vocative") and not u.is_scene:
            u.atoms = ["G"]  # stays at the top level
    return g


# ---------------------------------------------------------------------------
# Step 2: attach other modifiers

def _decide_nominal_cat(g: WorkGraph, t: int, scene_head: bool, lex: LexiconSet) -> str:
    tok = g.token(t)
    ss = (tok.ss or "")
    case_ss = [g.token(c).ss or "" for c in g.dep.children(t, ("case", "mark"))]
    if (ss == "n.time" or g.dep.rels[t].endswith(":tmod")
            or any(s in SNACS_TEMPORAL for s in case_ss)):
        return "T" if scene_head else "E"
    if ss in ("p.approximator", "p.manner", "p.extent") \
            or any(s in ("p.manner", "p.extent") for s in case_ss):
        return "D" if scene_head else "E"
    return "A" if scene_head else "E"


def _wrap_as_elaborator_scene(g: WorkGraph, u: WNode, hu: WNode, remote_to: WNode | None) -> None:
    wrapper = WNode(["E"])
    hu.add(wrapper)
    wrapper.add(u)
    if remote_to is not None:
        u.remotes.append(Remote(("A",), remote_to))


def attach_modifiers(g: WorkGraph, lex: LexiconSet) -> WorkGraph:
    dep = g.dep
    for u in g.lexical_units():
        if u.parent is not g.root:
            continue
        t = g.unit_head_token(u)
        h = dep.heads.get(t, 0)
        if not h:
            continue
        rel = dep.base(t)
        full_rel = dep.rels[t]
        hu = g.node_of.get(h)
        if hu is None or hu is u:
            continue
        lemma = g.expr_lemma(u)
        lexcat = u.expr.lexcat or ""
        ss = u.expr.ss or ""
        ss2 = u.expr.ss2 or ""

        if rel in ("amod", "advmod", "acl", "advcl"):
            if not u.is_scene:
                if lexcat == "DISC" or lx.is_discourse_word(lemma, lex):
                    g.attach(u, hu.parent or hu, "L")
                elif hu.is_scene and lx.is_locative_proadverb(lemma, lex) \
                        and g.token(t).upos == "ADV":
                    g.attach(u, hu, "A")
                elif ss in SNACS_TEMPORAL or ss == "n.time" or lx.is_temporal_word(lemma, lex):
                    g.attach(u, hu, "T" if hu.is_scene else "E")
                elif rel == "amod" and lx.is_quantity_adj(lemma, lex):
                    g.attach(u, hu, "Q" if not hu.is_scene else "D")
                else:
                    g.attach(u, hu, "D" if hu.is_scene else "E")
            else:
                markers = dep.children(t, ("mark", "case"))
                marker_lemmas = [g.token(c).lemma.lower() for c in markers]
                marker_ss = [g.token(c).ss or "" for c in markers]
                if rel == "amod" and u.atoms[0] == "S" and hu.atoms[0] == "S":
                    g.attach(u, hu, "C")  # adjectival compound
                elif markers and (any(m not in ("to", "that") for m in marker_lemmas)
                                  or any(s in PURPOSE_SS for s in marker_ss)):
                    # linking marker: the clause is a sister scene, not a modifier
                    g.attach(u, hu.parent or hu, None)
                elif hu.is_scene:
                    g.attach(u, hu, "D")
                else:
                    remote_to = g.lexical_of.get(h) if full_rel == "acl:relcl" else None
                    _wrap_as_elaborator_scene(g, u, hu, remote_to)
        elif rel == "nummod":
            g.attach(u, hu, "Q" if not hu.is_scene else "D")
        elif full_rel == "nmod:npmod" and lemma.endswith("self"):
            g.attach(u, hu, "F")
        elif (rel == "case" or full_rel == "nmod:poss") and \
                lexcat in ("P", "PP", "POSS", "PRON.POSS", "INF.P") and \
                ss not in PURPOSE_SS and not (ss2 == "p.extent" and lemma == "as"):
            if lexcat == "POSS":
                gov = dep.heads.get(h, 0)
                gu = g.node_of.get(gov) if gov else None
                if ss == "p.possessor" and gu is not None and gu is not u:
                    # ownership: the clitic evokes a possession scene under
                    # the possessed noun, with a remote to its lexical head
                    escn = WNode(["E"])
                    gu.add(escn)
                    g.attach(u, escn, "S")
                    possessor = g.node_of.get(h)
                    if possessor is not None and possessor is not u:
                        if possessor.atoms in (["-"], ["E"]):
                            g.attach(possessor, u, "A")
                        else:
                            wrap = WNode(["A"])
                            u.add(wrap)
                            wrap.add(possessor)
                    if gov in g.lexical_of:
                        u.remotes.append(Remote(("A",), g.lexical_of[gov]))
                else:
                    g.attach(u, hu, "R")
            elif lexcat == "PRON.POSS":
                h_ss = (g.node_of[h].expr.ss or "") if g.node_of.get(h) is not None \
                    and g.node_of[h].expr else ""
                if hu.is_scene:
                    g.attach(u, hu, "A")
                elif ss == "p.originator" and h_ss == "n.communication":
                    g.attach(u, hu, "A")
                elif ss in POSSESSIVE_SCENE_SS:
                    escn = WNode(["E"])
                    hu.add(escn)
                    g.attach(u, escn, ["A", "S"])
                    u.possessive_flag = True
                    if h in g.lexical_of:
                        escn.remotes.append(Remote(("A",), g.lexical_of[h]))
                    log.debug("%s: possessive %r (%s) treated as possession scene",
                              g.sentence.sent_id, lemma, ss)
                else:
                    g.attach(u, hu, "E")
            else:
                g.attach(u, hu, "R")
        elif rel in ("nmod", "compound"):
            if not u.is_scene:
                g.attach(u, hu, _decide_nominal_cat(g, t, hu.is_scene, lex))
            elif hu.is_scene:
                g.attach(u, hu, "D")
            else:
                if lx.is_quantity_species_noun(g.expr_lemma(hu), lex) and \
                        any(g.token(c).lemma.lower() == "of"
                            for c in dep.children(t, "case")):
                    hu.quantity_flag = True
                _wrap_as_elaborator_scene(g, u, hu, None)
        elif rel == "appos":
            if not u.is_scene:
                g.attach(u, hu, "E")
            else:
                _wrap_as_elaborator_scene(g, u, hu, None)
    return g


# ---------------------------------------------------------------------------
# Step 3: verbal argument structure; flag secondary-verb constructions

def attach_arguments(g: WorkGraph, lex: LexiconSet) -> WorkGraph:
    dep = g.dep
    rel_pron = ("that", "who", "whom", "what", "when", "where", "why", "how", "which")
    for u in g.lexical_units():
        if u.parent is not g.root:
            continue
        t = g.unit_head_token(u)
        h = dep.heads.get(t, 0)
        if not h:
            continue
        rel = dep.base(t)
        hu = g.node_of.get(h)
        if hu is None or hu is u:
            continue
        lemma = g.expr_lemma(u)
        lexcat = u.expr.lexcat or ""
        ss = u.expr.ss or ""

        if not u.is_scene and rel in ("nsubj", "obj", "iobj", "xcomp"):
            if hu.is_scene:
                if dep.rels[h] == "acl:relcl" and lexcat == "PRON" \
                        and dep.children(h) and t == min(dep.children(h)) \
                        and lemma in rel_pron:
                    g.attach(u, hu, "R")
                else:
                    g.attach(u, hu, "A")
        elif u.is_scene and hu.is_scene and rel in ("nsubj", "obj", "iobj", "csubj",
                                                    "ccomp", "xcomp"):
            head_unit = g.node_of.get(h)
            head_lemma = g.expr_lemma(head_unit) if head_unit and head_unit.expr else ""
            wrap = WNode(["^"] if lx.is_secondary_head(head_lemma, lex) else ["A"])
            hu.add(wrap)
            wrap.add(u)
        elif rel == "expl":
            if lemma == "it":
                g.attach(u, hu, "F")
                g.node_of[t] = hu
            elif lemma == "there":
                g.attach(u, hu, "S")
        elif rel == "mark" and lemma in ("to", "that") and ss != "p.purpose":
            g.attach(u, hu, "F" if lemma == "to" else "R")
        elif not u.is_scene and (rel == "mark" or lexcat == "DISC" or ss in PURPOSE_SS):
            if ss == "p.purpose" and not hu.is_scene:
                g.attach(u, hu, "R")
            else:
                g.attach(u, hu.parent or hu, "L")
        elif rel == "obl":
            if not u.is_scene:
                g.attach(u, hu, _decide_nominal_cat(g, t, hu.is_scene, lex))
            elif hu.is_scene:
                g.attach(u, hu, "D")
        elif rel == "dislocated":
            g.attach(u, hu, "A")

    # conservative fallback for anything still unattached: D under scenes,
    # E under non-scenes; coordination relations wait for the next step
    for u in g.lexical_units():
        if u.parent is not g.root or u.atoms[0] in ("U", "G"):
            continue
        t = g.unit_head_token(u)
        h = dep.heads.get(t, 0)
        rel = dep.base(t)
        if not h or rel in ("root", "conj", "cc", "parataxis", "list"):
            continue
        hu = g.node_of.get(h)
        if hu is None or hu is u or hu in u.walk():
            continue
        if u.is_scene:
            if hu.is_scene:
                g.attach(u, hu, "D")
            else:
                _wrap_as_elaborator_scene(g, u, hu, None)
        else:
            g.attach(u, hu, "D" if hu.is_scene else "E")
    return g


# ---------------------------------------------------------------------------
# Step 4: coordination

def build_coordination(g: WorkGraph, on_coordination=None) -> WorkGraph:
    dep = g.dep
    processed: set[int] = set()

    def preorder(node: WNode):
        yield node
        for c in sorted(node.children, key=WNode.first_token):
            yield from preorder(c)

    for u in list(preorder(g.root)):
        if u.expr is None or u.parent is None:
            continue
        t = g.unit_head_token(u)
        if t in processed:
            continue
        conjuncts = [c for c in dep.children(t, "conj") if c not in g.discarded]
        if not conjuncts:
            continue
        processed.add(t)
        pu = u.parent
        if any(g.node_of.get(c) in (u, pu) for c in conjuncts):
            pu = pu.parent or pu
        coord = WNode([u.atoms[0]])
        coord.decor = "COORD"
        pu.add(coord)
        if u.atoms == ["-"]:
            u.atoms = ["C"]
        coord.add(u)
        conjcat = u.atoms[0]
        scene_coord = conjcat in SCENE_LABELS
        moved: set[int] = set()
        for c in conjuncts:
            cu = g.node_of.get(c)
            if cu is None or cu in (coord, pu) or cu.nid in moved or coord in cu.walk():
                continue
            if cu.atoms == ["-"]:
                cu.atoms = [conjcat if conjcat != "-" else "C"]
            coord.add(cu)
            moved.add(cu.nid)
        cc_tokens = dep.children(t, ("cc", "cc:preconj"))
        for c in conjuncts:
            cc_tokens += dep.children(c, ("cc", "cc:preconj"))
        for c in sorted(set(cc_tokens)):
            ccu = g.node_of.get(c)
            if ccu is None or ccu.nid in moved or ccu.parent is coord:
                continue
            g.attach(ccu, coord, "L" if scene_coord else "N")
            moved.add(ccu.nid)
        if on_coordination is not None:
            on_coordination(g)
    return g


# ---------------------------------------------------------------------------
# Step 5: decide S or P for remaining undetermined scenes

def resolve_scene_category(g: WorkGraph, lex: LexiconSet) -> WorkGraph:
    for u in g.root.walk():
        if u.atoms != ["+"] or u.decor is not None:
            continue
        expr = u.expr
        lemma = g.expr_lemma(u) if expr else ""
        ss = (expr.ss or "") if expr else ""
        lexcat = (expr.lexcat or "") if expr else ""
        if ss == "v.stative" and lemma in ("be", "have"):
            u.atoms = ["S"]
        elif ss.startswith("v."):
            u.atoms = ["P"]
        elif ss in EVENTIVE_NOUN_SS:
            u.atoms = ["P"]
        elif lexcat == "AUX" or lexcat.startswith("V"):
            u.atoms = ["P"]
        else:
            log.debug("%s: undetermined scene %r defaulting to S", g.sentence.sent_id, lemma)
            u.atoms = ["S"]
    return g


# ---------------------------------------------------------------------------
# Step 6.1: restructure secondary-verb constructions

def restructure_secondary_verbs(g: WorkGraph) -> WorkGraph:
    def depth(n: WNode) -> int:
        d = 0
        while n.parent is not None:
            n, d = n.parent, d + 1
        return d

    flags = [u for u in g.root.walk() if u.atoms == ["^"]]
    for sec in sorted(flags, key=depth, reverse=True):
        pu = sec.parent
        for c in list(pu.children):
            if c.atoms == ["UNA"] and c.anchors:
                wrap = WNode(["D"])
                idx = pu.children.index(c)
                pu.children[idx] = wrap
                wrap.parent = pu
                c.parent = wrap
                wrap.children.append(c)
        inner = sec.children[0] if sec.children else None
        pu.children.remove(sec)
        if inner is None:
            continue
        if len(sec.children) == 1 and inner.atoms[0] in ("P", "S") and inner.decor is None \
                and pu.atoms[0] in ("P", "S") and pu.decor is None:
            # merge the embedded scene into the parent scene
            pu.atoms = [inner.atoms[0]]
            for c in list(inner.children):
                pu.add(c)
            pu.remotes.extend(inner.remotes)
            _retarget_remotes(g, inner, pu)
            for tid, n in g.node_of.items():
                if n is inner:
                    g.node_of[tid] = pu
        else:
            for c in list(sec.children):
                pu.add(c)
    return g


def _retarget_remotes(g: WorkGraph, old: WNode, new: WNode) -> None:
    for u in g.root.walk():
        for r in u.remotes:
            if r.target is old:
                r.target = new


# ---------------------------------------------------------------------------
# Step 6.2: articulation of lexical heads

def articulate_heads(g: WorkGraph, lex: LexiconSet) -> WorkGraph:
    order = [u for u in g.root.walk()][::-1]  # bottom-up
    for u in order:
        if u is g.root or u.decor == "COORD":
            continue
        if u.atoms[0] == "UNA" and len(u.atoms) > 1:
            # relational-noun unit: mark the head with its categories and
            # remember the scene-ness in the decoration
            cats = u.atoms[1:]
            leaf = u.children[0]
            wrap = WNode(list(cats))
            u.children.remove(leaf)
            wrap.add(leaf)
            u.add(wrap)
            u.decor = "|".join(cats)
            u.atoms = ["H", *cats]
            continue
        una = [c for c in u.children if c.atoms == ["UNA"] and c.anchors]
        if u.atoms[0] in ("P", "S") and u.decor is None and len(u.atoms) == 1:
            if una:
                wrap = WNode([u.atoms[0]])
                u.children.remove(una[0])
                wrap.add(una[0])
                u.add(wrap)
                u.decor = u.atoms[0]
                u.atoms = ["H"]
            elif u.children:
                u.atoms = ["H"]
        elif u.possessive_flag and una:
            wrap = WNode(list(u.atoms))
            u.children.remove(una[0])
            wrap.add(una[0])
            u.add(wrap)
            u.decor = "|".join(u.atoms)
            u.atoms = ["H", u.atoms[-1]]
        elif una:
            if u.atoms == ["-"] and len(u.children) == 1:
                u.atoms = ["C"]
            elif len(u.children) > 1:
                wrap = WNode(["Q" if u.quantity_flag else "C"])
                u.children.remove(una[0])
                wrap.add(una[0])
                u.add(wrap)
    return g


# ---------------------------------------------------------------------------
# Steps 7+: cleanup

def cleanup_strip_decorations(g: WorkGraph) -> WorkGraph:
    for u in g.root.walk():
        if u.atoms[0] == "H" and u.decor not in (None, "COORD"):
            if len(u.atoms) > 1:
                u.atoms = ["C"]
            u.decor = None
    return g


def _nearest_non_punct(g: WorkGraph, pos: int, step: int) -> int | None:
    n = len(g.sentence.tokens)
    pos += step
    while 1 <= pos <= n:
        if g.token(pos).upos != "PUNCT":
            return pos
        pos += step
    return None


def cleanup_move_punctuation(g: WorkGraph) -> WorkGraph:
    punct_units = [c for c in list(g.root.children) if c.atoms == ["U"]]
    for u in punct_units:
        t = min(u.anchors)
        left = _nearest_non_punct(g, t, -1)
        right = _nearest_non_punct(g, t, +1)
        target: WNode | None = None
        if left is not None and right is not None:
            needed = {left, right}
            best_size = None
            for cand in g.root.walk():
                if cand is g.root or cand.atoms == ["U"] or cand is u:
                    continue
                toks = cand.yield_tokens()
                if needed <= toks and (best_size is None or len(toks) < best_size):
                    best_size, target = len(toks), cand
        if target is None:
            non_punct = [c for c in g.root.children if c.atoms != ["U"]]
            if len(non_punct) == 1:
                target = non_punct[0]
        if target is not None and target is not u.parent:
            target.add(u)
    return g


def cleanup_relabel(g: WorkGraph) -> WorkGraph:
    for u in g.root.walk():
        if u.decor == "COORD":
            u.decor = None
            if u.atoms[0] in ("+", "P", "S", "H"):
                u.atoms = ["H"]
            elif u.atoms[0] == "-":
                u.atoms = ["C"]
    for u in g.root.walk():
        if u.atoms[0] == "+":
            u.atoms = ["H"] + u.atoms[1:]
        elif u.atoms[0] == "-":
            u.atoms = (["H"] if u.parent is g.root else ["C"]) + u.atoms[1:]
    for u in list(g.root.children):
        if u.atoms[0] in ("P", "S") and len(u.atoms) == 1:
            wrap = WNode(["H"])
            g.root.children[g.root.children.index(u)] = wrap
            wrap.parent = g.root
            u.parent = wrap
            wrap.children.append(u)
        elif u.atoms[0] not in ("L", "H", "F", "G", "U"):
            u.atoms = ["H"]
    return g


def cleanup_merge_unary(g: WorkGraph) -> WorkGraph:
    changed = True
    while changed:
        changed = False
        for u in list(g.root.walk()):
            pu = u.parent
            if (u.atoms == ["H"] and u.decor is None and pu is not None
                    and pu is not g.root and len(pu.children) == 1
                    and not u.anchors):
                pu.children.remove(u)
                for c in list(u.children):
                    pu.add(c)
                pu.remotes.extend(u.remotes)
                _retarget_remotes(g, u, pu)
                changed = True
                break
    return g


def cleanup_remove_lexical_marks(g: WorkGraph) -> WorkGraph:
    for u in list(g.root.walk()):
        if u.atoms == ["UNA"] and u.anchors:
            pu = u.parent
            if pu is None:
                continue
            if len(pu.children) == 1 and pu is not g.root:
                pu.anchors = list(u.anchors)
                pu.children.remove(u)
                _retarget_remotes(g, u, pu)
            else:
                u.atoms = ["C"]  # defensive: unexpected sibling structure
    return g


def finish_passage(g: WorkGraph) -> UccaPassage:
    sent = g.sentence
    units: dict[str, UccaUnit] = {}
    edges: list[UccaEdge] = []
    ids: dict[int, str] = {}
    counter = 0

    def uid(node: WNode) -> str:
        nonlocal counter
        if node.nid not in ids:
            if node is g.root:
                ids[node.nid] = "0"
            else:
                counter += 1
                ids[node.nid] = f"u{counter}"
        return ids[node.nid]

    def walk(node: WNode) -> None:
        units[uid(node)] = UccaUnit(uid(node), frozenset(node.anchors))
        for c in sorted(node.children, key=WNode.first_token):
            cats = tuple(c.atoms)
            edges.append(UccaEdge(uid(node), uid(c), cats, remote=False))
            walk(c)

    walk(g.root)
    for node in g.root.walk():
        for r in node.remotes:
            edges.append(UccaEdge(uid(node), uid(r.target), r.categories, remote=True))
    punct = frozenset(t.id for t in sent.tokens if t.upos == "PUNCT")
    return UccaPassage(sent.sent_id, tuple(t.form for t in sent.tokens), punct,
                       "0", units, tuple(edges))


def cleanup(g: WorkGraph) -> UccaPassage:
    cleanup_strip_decorations(g)
    cleanup_move_punctuation(g)
    cleanup_relabel(g)
    cleanup_merge_unary(g)
    cleanup_remove_lexical_marks(g)
    return finish_passage(g)


# ---------------------------------------------------------------------------
# whole pipeline

def _work_bracket_nodes(node: WNode) -> BracketNode:
    b = BracketNode(node.label, tuple(node.anchors))
    for c in node.children:
        b.children.append(_work_bracket_nodes(c))
    for r in node.remotes:
        b.remotes.append(("|".join(r.categories), tuple(sorted(r.target.yield_tokens()))))
    return b


def work_bracket(g: WorkGraph, include_root: bool = False) -> str:
    forms = tuple(t.form for t in g.sentence.tokens)
    if include_root:
        return render_brackets([_work_bracket_nodes(c) for c in g.root.children],
                               forms, root_label="DUMMYROOT")
    return render_brackets([_work_bracket_nodes(c) for c in g.root.children], forms)


def convert(sentence: Sentence, lex: LexiconSet | None = None) -> UccaPassage:
    """Convert one annotated sentence to a UCCA passage (total and deterministic)."""
    passage, _ = convert_with_trace(sentence, lex, want_trace=False)
    return passage


def convert_with_trace(sentence: Sentence, lex: LexiconSet | None = None,
                       want_trace: bool = True) -> tuple[UccaPassage, dict[str, object]]:
    """Convert, capturing the bracketing after each pipeline stage."""
    if lex is None:
        lex = lx.default_lexicons()
    trace: dict[str, object] = {}

    def snap(stage: str, g: WorkGraph, include_root: bool = False) -> None:
        if want_trace:
            trace[stage] = work_bracket(g, include_root=include_root)

    sentence = split_iav(sentence)
    g = init_units(sentence, lex)
    classify_main_relations(g, lex)
    snap("0.3", g, include_root=True)
    attach_function_words(g, lex)
    snap("1", g)
    attach_modifiers(g, lex)
    snap("2", g)
    attach_arguments(g, lex)
    snap("3", g)
    coordination_snaps: list[str] = []
    if want_trace:
        build_coordination(g, on_coordination=lambda gg: coordination_snaps.append(work_bracket(gg)))
        trace["4-each"] = coordination_snaps
    else:
        build_coordination(g)
    snap("4", g)
    resolve_scene_category(g, lex)
    snap("5", g)
    restructure_secondary_verbs(g)
    snap("6.1", g)
    articulate_heads(g, lex)
    snap("6.2", g)
    cleanup_strip_decorations(g)
    snap("7.1", g)
    cleanup_move_punctuation(g)
    snap("7.2", g)
    cleanup_relabel(g)
    snap("7.3", g)
    cleanup_merge_unary(g)
    cleanup_remove_lexical_marks(g)
    passage = finish_passage(g)
    if want_trace:
        from .ucca_model import bracket_string
        trace["final"] = bracket_string(passage)
    problems = validate(passage)
    if problems:
        raise AssertionError(f"{sentence.sent_id}: converter produced invalid passage: {problems}")
    return passage, trace
