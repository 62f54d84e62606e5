"""Read, validate and write CoNLL-U-Lex documents.

The format is the 19-column CoNLL-U-Lex layout: the ten CoNLL-U columns
followed by SMWE, LEXCAT, LEXLEMMA, SS, SS2, WMWE, WCAT, WLEMMA, LEXTAG.
Sentences are separated by blank lines; ``#`` lines carry metadata;
``_`` marks an absent value. Multiword-token ranges (``1-2``) and empty
nodes (``1.1``) are preserved verbatim for round-tripping but excluded
from the token list, since the conversion rules operate on syntactic
words only. Supersense labels are normalized to lowercase on ingest.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field, replace
from typing import Iterable, Iterator, TextIO

COLUMN_NAMES = (
    "id", "form", "lemma", "upos", "xpos", "feats", "head", "deprel", "deps", "misc",
    "smwe", "lexcat", "lexlemma", "ss", "ss2", "wmwe", "wcat", "wlemma", "lextag",
)
NUM_COLUMNS = len(COLUMN_NAMES)


class ConlluLexError(ValueError):
    """Raised on malformed CoNLL-U-Lex input in strict mode."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True)
class Token:
    """One syntactic-word row: UD fields plus the STREUSLE lexical columns."""

    id: int
    form: str
    lemma: str
    upos: str
    xpos: str
    feats: tuple[tuple[str, str], ...]
    head: int
    deprel: str
    deps: str = "_"
    misc: str = "_"
    smwe: tuple[int, int] | None = None
    lexcat: str | None = None
    lexlemma: str | None = None
    ss: str | None = None
    ss2: str | None = None
    wmwe: tuple[int, int] | None = None
    wcat: str | None = None
    wlemma: str | None = None
    lextag: str | None = None

    @property
    def feats_dict(self) -> dict[str, str]:
        return dict(self.feats)

    @property
    def base_deprel(self) -> str:
        return self.deprel.partition(":")[0]


@dataclass(frozen=True)
class LexExpr:
    """A strong/weak/single lexical expression: ordered token ids plus lexical tags."""

    tokens: tuple[int, ...]
    strength: str  # "strong", "weak" or "single"
    lexcat: str | None = None
    lexlemma: str | None = None
    ss: str | None = None
    ss2: str | None = None

    def __post_init__(self):
        if not self.tokens:
            raise ConlluLexError("lexical expression with no tokens")
        if list(self.tokens) != sorted(set(self.tokens)):
            raise ConlluLexError(f"lexical expression tokens not strictly increasing: {self.tokens}")


@dataclass(frozen=True)
class Sentence:
    sent_id: str
    text: str
    tokens: tuple[Token, ...]
    lexexprs: tuple[LexExpr, ...] = ()
    meta: tuple[str, ...] = ()  # raw '#' lines, in order
    extras: tuple[tuple[int, int, str], ...] = ()  # (anchor id, order, raw line) for ranges/empty nodes
    warnings: tuple[str, ...] = ()

    def token(self, tid: int) -> Token:
        return self.tokens[tid - 1]

    @property
    def root_id(self) -> int:
        for tok in self.tokens:
            if tok.head == 0:
                return tok.id
        return 0

    def children(self, tid: int) -> list[int]:
        return [t.id for t in self.tokens if t.head == tid]

    def strong_expr_of(self, tid: int) -> LexExpr:
        for expr in self.lexexprs:
            if expr.strength != "weak" and tid in expr.tokens:
                return expr
        raise KeyError(f"token {tid} belongs to no strong lexical expression")


@dataclass(frozen=True)
class Document:
    doc_id: str
    sentences: tuple[Sentence, ...]
    warnings: tuple[str, ...] = ()

    def sentence(self, sent_id: str) -> Sentence:
        for s in self.sentences:
            if s.sent_id == sent_id:
                return s
        raise KeyError(sent_id)


def _norm_ss(value: str | None) -> str | None:
    return value.lower() if value else value


def _parse_mwe(value: str, line: int, strict: bool, warnings: list[str]) -> tuple[int, int] | None:
    if value == "_":
        return None
    group, _, pos = value.partition(":")
    try:
        return int(group), int(pos)
    except ValueError:
        msg = f"malformed MWE reference {value!r}"
        if strict:
            raise ConlluLexError(msg, line)
        warnings.append(f"line {line}: {msg}")
        return None


def _parse_feats(value: str) -> tuple[tuple[str, str], ...]:
    if value in ("_", ""):
        return ()
    pairs = []
    for item in value.split("|"):
        key, _, val = item.partition("=")
        pairs.append((key, val))
    return tuple(pairs)


def _opt(value: str) -> str | None:
    return None if value == "_" else value


def group_lexical_expressions(tokens: Iterable[Token], strict: bool = True,
                              warnings: list[str] | None = None) -> list[LexExpr]:
    """Group tokens into lexical expressions from their SMWE/WMWE columns.

    Returns one strong LexExpr per strong MWE group, one single-token
    LexExpr per MWE-free token, and weak expressions with strength "weak".
    The strong/single expressions partition the sentence's token ids.
    """
    tokens = list(tokens)
    if warnings is None:
        warnings = []
    exprs: list[LexExpr] = []
    for attr, strength in (("smwe", "strong"), ("wmwe", "weak")):
        groups: dict[int, list[tuple[int, int]]] = {}
        for tok in tokens:
            ref = getattr(tok, attr)
            if ref is not None:
                groups.setdefault(ref[0], []).append((ref[1], tok.id))
        for gid, members in sorted(groups.items()):
            members.sort()
            positions = [p for p, _ in members]
            if positions != list(range(1, len(members) + 1)):
                msg = f"inconsistent positions in {strength} MWE group {gid}: {positions}"
                if strict:
                    raise ConlluLexError(msg)
                warnings.append(msg)
            ids = tuple(tid for _, tid in members)
            first = tokens[ids[0] - 1]
            exprs.append(LexExpr(ids, strength, first.lexcat, first.lexlemma, first.ss, first.ss2))
    for tok in tokens:
        if tok.smwe is None:
            exprs.append(LexExpr((tok.id,), "single", tok.lexcat,
                                 tok.lexlemma or tok.lemma, tok.ss, tok.ss2))
    exprs.sort(key=lambda e: (e.tokens[0], e.strength == "weak"))
    return exprs


def _check_sentence(sent_id: str, tokens: list[Token], strict: bool, warnings: list[str],
                    line: int) -> None:
    n = len(tokens)
    problems = []
    if [t.id for t in tokens] != list(range(1, n + 1)):
        problems.append(f"token ids not contiguous 1..{n}")
    roots = [t.id for t in tokens if t.head == 0]
    if len(roots) != 1:
        problems.append(f"expected exactly one root, got {roots}")
    for t in tokens:
        if not (0 <= t.head <= n) or t.head == t.id:
            problems.append(f"token {t.id} has invalid head {t.head}")
        if t.ss2 and not (t.ss or "").startswith("p."):
            problems.append(f"token {t.id} has ss2 {t.ss2} without a p.* scene role")
    for p in problems:
        msg = f"sentence {sent_id!r}: {p}"
        if strict:
            raise ConlluLexError(msg, line)
        warnings.append(msg)


def parse_document(source: str | TextIO, strict: bool = True) -> Document:
    """Parse a CoNLL-U-Lex character stream into a Document.

    In strict mode every structural violation raises ConlluLexError; in
    lenient mode violations are collected on the sentence/document
    ``warnings`` and parsing continues. Empty input yields an empty
    Document.
    """
    if isinstance(source, str):
        source = io.StringIO(source)
    doc_id = ""
    doc_warnings: list[str] = []
    sentences: list[Sentence] = []

    meta: list[str] = []
    rows: list[Token] = []
    extras: list[tuple[int, int, str]] = []
    warnings: list[str] = []
    sent_start_line = 1

    def flush(line_no: int) -> None:
        nonlocal meta, rows, extras, warnings, sent_start_line
        if not meta and not rows:
            return
        sent_id, text = "", ""
        for m in meta:
            body = m.lstrip("#").strip()
            key, _, val = body.partition("=")
            if key.strip() == "sent_id":
                sent_id = val.strip()
            elif key.strip() == "text":
                text = val.strip()
        _check_sentence(sent_id, rows, strict, warnings, line_no)
        exprs = tuple(group_lexical_expressions(rows, strict, warnings))
        sentences.append(Sentence(sent_id, text, tuple(rows), exprs, tuple(meta),
                                  tuple(extras), tuple(warnings)))
        meta, rows, extras, warnings = [], [], [], []
        sent_start_line = line_no + 1

    line_no = 0
    for line_no, raw in enumerate(source, start=1):
        line = raw.rstrip("\n")
        if not line.strip():
            flush(line_no)
            continue
        if line.startswith("#"):
            if line.lstrip("#").strip().startswith("newdoc"):
                _, _, val = line.partition("=")
                doc_id = val.strip()
            meta.append(line)
            continue
        first = line.split("\t", 1)[0]
        if "-" in first or "." in first:
            anchor = int(first.split("-")[0].split(".")[0])
            order = -1 if "-" in first else 1
            extras.append((anchor, order, line))
            continue
        cols = line.split("\t")
        if len(cols) != NUM_COLUMNS:
            msg = f"expected {NUM_COLUMNS} columns, got {len(cols)}"
            if strict:
                raise ConlluLexError(msg, line_no)
            warnings.append(f"line {line_no}: {msg}")
            cols = (cols + ["_"] * NUM_COLUMNS)[:NUM_COLUMNS]
        try:
            tid = int(cols[0])
        except ValueError:
            msg = f"non-integer token id {cols[0]!r}"
            if strict:
                raise ConlluLexError(msg, line_no)
            warnings.append(f"line {line_no}: {msg}")
            continue
        try:
            head = int(cols[6])
        except ValueError:
            msg = f"non-integer head {cols[6]!r}"
            if strict:
                raise ConlluLexError(msg, line_no)
            warnings.append(f"line {line_no}: {msg}")
            head = 0
        rows.append(Token(
            id=tid, form=cols[1], lemma=cols[2], upos=cols[3], xpos=cols[4],
            feats=_parse_feats(cols[5]), head=head, deprel=cols[7], deps=cols[8],
            misc=cols[9],
            smwe=_parse_mwe(cols[10], line_no, strict, warnings),
            lexcat=_opt(cols[11]), lexlemma=_opt(cols[12]),
            ss=_norm_ss(_opt(cols[13])), ss2=_norm_ss(_opt(cols[14])),
            wmwe=_parse_mwe(cols[15], line_no, strict, warnings),
            wcat=_opt(cols[16]), wlemma=_opt(cols[17]), lextag=_opt(cols[18]),
        ))
    flush(line_no + 1)
    return Document(doc_id, tuple(sentences), tuple(doc_warnings))


def _mwe_col(ref: tuple[int, int] | None) -> str:
    return "_" if ref is None else f"{ref[0]}:{ref[1]}"


def _feats_col(feats: tuple[tuple[str, str], ...]) -> str:
    return "|".join(f"{k}={v}" for k, v in feats) if feats else "_"


def token_to_row(tok: Token) -> str:
    cols = [
        str(tok.id), tok.form, tok.lemma, tok.upos, tok.xpos, _feats_col(tok.feats),
        str(tok.head), tok.deprel, tok.deps, tok.misc,
        _mwe_col(tok.smwe), tok.lexcat or "_", tok.lexlemma or "_",
        tok.ss or "_", tok.ss2 or "_",
        _mwe_col(tok.wmwe), tok.wcat or "_", tok.wlemma or "_", tok.lextag or "_",
    ]
    return "\t".join(cols)


def write_sentence(sent: Sentence, out: TextIO) -> None:
    if sent.meta:
        for m in sent.meta:
            out.write(m + "\n")
    else:
        if sent.sent_id:
            out.write(f"# sent_id = {sent.sent_id}\n")
        if sent.text:
            out.write(f"# text = {sent.text}\n")
    before: dict[int, list[str]] = {}
    after: dict[int, list[str]] = {}
    for anchor, order, raw in sent.extras:
        (before if order < 0 else after).setdefault(anchor, []).append(raw)
    for tok in sent.tokens:
        for raw in before.get(tok.id, ()):
            out.write(raw + "\n")
        out.write(token_to_row(tok) + "\n")
        for raw in after.get(tok.id, ()):
            out.write(raw + "\n")
    out.write("\n")


def write_document(doc: Document) -> str:
    """Emit canonical CoNLL-U-Lex text; parse(write(d)) == d for valid documents."""
    out = io.StringIO()
    for sent in doc.sentences:
        write_sentence(sent, out)
    return out.getvalue()


def read_file(path: str, strict: bool = True) -> Document:
    with open(path, encoding="utf-8") as f:
        return parse_document(f, strict=strict)


def iter_sentences(doc: Document) -> Iterator[Sentence]:
    return iter(doc.sentences)
