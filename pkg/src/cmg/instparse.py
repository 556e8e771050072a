"""Instruction DSL: exact grammar, canonical rendering, locative extraction and
the closed token vocabulary.

Grammar (all text lowercase ASCII, whitespace-insensitive):

    add    := "add a" COLOR SHAPE REL "the" COLOR SHAPE
    remove := "remove the" COLOR SHAPE REL "the" COLOR SHAPE
    change := "change the" COLOR SHAPE REL "the" COLOR SHAPE "to a" COLOR SHAPE
    REL    := "behind" | "in front of" | "to the left of" | "to the right of"
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

from .domain import COLORS, SHAPES, Op, Relation, category_id, category_name
from .errors import ParseError

END_MARKER = "<end>"

FUNCTION_WORDS = {"add", "a", "remove", "change", "the", "to", "there", "is",
                  "nothing"}

# Longest match first so "to the left of" wins over the bare function word "to".
_REL_PHRASES = [
    (("to", "the", "left", "of"), Relation.LEFT_OF),
    (("to", "the", "right", "of"), Relation.RIGHT_OF),
    (("in", "front", "of"), Relation.IN_FRONT_OF),
    (("behind",), Relation.BEHIND),
]


@dataclass(frozen=True)
class Instruction:
    op: Op
    subject: int
    relation: Relation
    anchor: int
    new_category: int | None = None
    surface: str = field(init=False, default="")

    def __post_init__(self):
        if self.subject == self.anchor:
            raise ValueError("subject and anchor must differ")
        if (self.new_category is not None) != (self.op is Op.CHANGE):
            raise ValueError("new_category is required exactly for change")
        object.__setattr__(self, "surface", render_text(self))


@dataclass(frozen=True)
class LocPhrase:
    relation: Relation
    anchor: int
    surface: str = field(init=False, default="")

    def __post_init__(self):
        object.__setattr__(
            self, "surface",
            f"{self.relation.surface} the {category_name(self.anchor)}")


def render_text(instr: Instruction) -> str:
    """Canonical surface form; inverse of :func:`parse`."""
    subj = category_name(instr.subject)
    anchor = category_name(instr.anchor)
    rel = instr.relation.surface
    if instr.op is Op.ADD:
        return f"add a {subj} {rel} the {anchor}"
    if instr.op is Op.REMOVE:
        return f"remove the {subj} {rel} the {anchor}"
    return (f"change the {subj} {rel} the {anchor} "
            f"to a {category_name(instr.new_category)}")


def extract_loc(instr: Instruction) -> LocPhrase:
    """Locative clause ("where" part) of the instruction."""
    return LocPhrase(relation=instr.relation, anchor=instr.anchor)


class _Cursor:
    """Word stream over raw text, tracking character offsets for errors."""

    def __init__(self, text: str):
        self.words = [(m.group(), m.start()) for m in re.finditer(r"\S+", text)]
        self.end_pos = len(text)
        self.i = 0

    def peek(self, ahead: int = 0) -> str | None:
        j = self.i + ahead
        return self.words[j][0] if j < len(self.words) else None

    def pos(self) -> int:
        return self.words[self.i][1] if self.i < len(self.words) else self.end_pos

    def take(self, expected: set[str]) -> str:
        word = self.peek()
        if word is None or word not in expected:
            raise ParseError("unexpected token" if word is not None else
                             "unexpected end of input", self.pos(), expected)
        self.i += 1
        return word

    def expect_end(self):
        if self.i < len(self.words):
            raise ParseError("trailing input", self.pos(), {END_MARKER})


def _parse_object(cur: _Cursor) -> int:
    color = cur.take(set(COLORS))
    shape = cur.take(set(SHAPES))
    return category_id(color, shape)


def _parse_relation(cur: _Cursor) -> Relation:
    first = {"behind", "in", "to"}
    head = cur.take(first)
    if head == "behind":
        return Relation.BEHIND
    if head == "in":
        cur.take({"front"})
        cur.take({"of"})
        return Relation.IN_FRONT_OF
    cur.take({"the"})
    side = cur.take({"left", "right"})
    cur.take({"of"})
    return Relation.LEFT_OF if side == "left" else Relation.RIGHT_OF


def parse(text: str) -> Instruction:
    """Parse an instruction surface; raises :class:`ParseError` otherwise."""
    cur = _Cursor(text)
    op_word = cur.take({"add", "remove", "change"})
    op = Op(op_word)
    cur.take({"a"} if op is Op.ADD else {"the"})
    subject = _parse_object(cur)
    relation = _parse_relation(cur)
    cur.take({"the"})
    anchor_pos = cur.pos()
    anchor = _parse_object(cur)
    new_category = None
    if op is Op.CHANGE:
        cur.take({"to"})
        cur.take({"a"})
        new_category = _parse_object(cur)
    cur.expect_end()
    if subject == anchor:
        raise ParseError("subject and anchor must name different objects",
                         anchor_pos, {"<object other than the subject>"})
    return Instruction(op=op, subject=subject, relation=relation, anchor=anchor,
                       new_category=new_category)


def extract_tokens(text: str) -> tuple[list[str], list[str]]:
    """Object and relation tokens of an instruction or description surface,
    in order of appearance. Unknown words are hard errors."""
    cur = _Cursor(text)
    objects: list[str] = []
    relations: list[str] = []
    while cur.peek() is not None:
        matched = next(
            ((phrase, rel) for phrase, rel in _REL_PHRASES
             if all(cur.peek(k) == w for k, w in enumerate(phrase))), None)
        if matched is not None:
            relations.append(matched[1].surface)
            cur.i += len(matched[0])
            continue
        word = cur.peek()
        if word in COLORS:
            cur.i += 1
            shape = cur.take(set(SHAPES))
            objects.append(f"{word} {shape}")
            continue
        if word in FUNCTION_WORDS:
            cur.i += 1
            continue
        raise ParseError("unknown token", cur.pos(),
                         set(COLORS) | FUNCTION_WORDS | {"behind", "in", "to"})
    return objects, relations


# --- closed vocabulary ------------------------------------------------------

_SPECIALS = ["<pad>", "<bos>", "<eos>"]
_RELATION_WORDS = ["behind", "in", "front", "of", "to", "left", "right"]
_SVO_WORDS = ["labels", "for", "reference", "target", "image", "contains"]
_PREFIX_WORDS = ["predict", "what", "instruction"]
_PUNCT = [",", ":", "."]

PREDICT_LABELS_PREFIX = "predict target labels :"
GEN_INSTRUCTION_PREFIX = "what is the instruction :"
SEPARATOR = "."


@dataclass(frozen=True)
class Vocab:
    tokens: tuple[str, ...]

    @staticmethod
    def default() -> "Vocab":
        toks = (_SPECIALS + COLORS + SHAPES + _RELATION_WORDS + ["the", "a"]
                + [op.value for op in Op] + ["there", "is", "nothing"]
                + _SVO_WORDS + _PREFIX_WORDS + _PUNCT)
        return Vocab(tokens=tuple(toks))

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def pad_id(self) -> int:
        return 0

    @property
    def bos_id(self) -> int:
        return 1

    @property
    def eos_id(self) -> int:
        return 2

    def id_of(self, token: str) -> int:
        try:
            return self.tokens.index(token)
        except ValueError:
            raise ParseError("token not in vocabulary", 0, set(self.tokens))

    def token_of(self, idx: int) -> str:
        return self.tokens[idx]

    def encode_text(self, text: str) -> list[int]:
        return [self.id_of(w) for w in tokenize(text)]

    def decode_text(self, ids: list[int]) -> str:
        return detokenize([self.tokens[i] for i in ids])

    def to_json(self) -> str:
        return json.dumps(list(self.tokens))

    @staticmethod
    def from_json(raw: str) -> "Vocab":
        return Vocab(tokens=tuple(json.loads(raw)))


def tokenize(text: str) -> list[str]:
    """Split into vocabulary tokens; punctuation is token-valued."""
    return re.findall(r"[a-z<>]+|[,:.]", text)


def detokenize(tokens: list[str]) -> str:
    """Inverse of :func:`tokenize` for canonical text: commas attach to the
    preceding token, everything else is space-joined."""
    out = ""
    for tok in tokens:
        if tok == ",":
            out += ","
        else:
            out += (" " if out else "") + tok
    return out
