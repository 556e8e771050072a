"""Factual and counterfactual description synthesis from weak labels.

The single differing category between the reference and target label sets is
recovered purely from the sets (never from scenes), instantiated into the
"there is a [OBJ] [LOC]" template, and surrounded with synthesized false
descriptions obtained by swapping exactly one slot for an unused token.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .domain import N_CATEGORIES, NONE_ID, RELATIONS, category_name
from .errors import ExhaustedTokens, InconsistentLabels
from .instparse import Instruction, LocPhrase, extract_loc

LabelSet = frozenset[int]


def diff_labels(labels_r: LabelSet, labels_t: LabelSet) -> tuple[int, int]:
    """The (reference, target) object of interest from the two label sets.

    Size shrinks by one -> (removed category, NONE); grows -> (NONE, added);
    equal sizes -> the swapped pair. Anything else is inconsistent.
    """
    if abs(len(labels_r) - len(labels_t)) > 1 or len(labels_r ^ labels_t) > 2:
        raise InconsistentLabels(
            f"label sets differ by more than one edit: {sorted(labels_r)} vs "
            f"{sorted(labels_t)}")
    if len(labels_r) > len(labels_t):
        diff = labels_r - labels_t
        if len(diff) != 1:
            raise InconsistentLabels("shrinking edit must remove exactly one")
        return next(iter(diff)), NONE_ID
    if len(labels_r) < len(labels_t):
        diff = labels_t - labels_r
        if len(diff) != 1:
            raise InconsistentLabels("growing edit must add exactly one")
        return NONE_ID, next(iter(diff))
    common = labels_r & labels_t
    diff_r, diff_t = labels_r - common, labels_t - common
    if len(diff_r) != 1 or len(diff_t) != 1:
        raise InconsistentLabels("equal-size edit must swap exactly one")
    return next(iter(diff_r)), next(iter(diff_t))


@dataclass(frozen=True)
class Description:
    surface: str
    kind: str  # factual | cf_object | cf_relation
    obj: int   # category id, possibly NONE
    loc: LocPhrase


def make_factual(obj: int, loc: LocPhrase) -> Description:
    phrase = "nothing" if obj == NONE_ID else f"a {category_name(obj)}"
    return Description(surface=f"there is {phrase} {loc.surface}",
                       kind="factual", obj=obj, loc=loc)


def _describe(obj: int, loc: LocPhrase, kind: str) -> Description:
    phrase = "nothing" if obj == NONE_ID else f"a {category_name(obj)}"
    return Description(surface=f"there is {phrase} {loc.surface}",
                       kind=kind, obj=obj, loc=loc)


def make_counterfactuals(factual: Description, scene_labels: LabelSet,
                         n: int, rng: random.Random) -> list[Description]:
    """n distinct false descriptions, each differing from the factual in one
    slot.

    Object swaps draw from categories absent from the scene, so the claim is
    false wherever the object would sit. Relation swaps are only offered for
    factuals naming a real object: with a NONE factual ("there is nothing
    ...") a relation swap usually stays true in these sparse scenes, so it is
    not a counterfactual at all.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    obj_pool = sorted(set(range(N_CATEGORIES)) - scene_labels - {factual.obj})
    rel_pool = [r for r in RELATIONS if r is not factual.loc.relation] \
        if factual.obj != NONE_ID else []
    if len(obj_pool) + len(rel_pool) < n:
        raise ExhaustedTokens(
            f"only {len(obj_pool) + len(rel_pool)} distinct candidates < {n}")

    out: list[Description] = []
    seen = {factual.surface}
    while len(out) < n:
        kind = rng.choice(["cf_object", "cf_relation"]) if rel_pool else "cf_object"
        if kind == "cf_object":
            cand = _describe(rng.choice(obj_pool), factual.loc, kind)
        else:
            rel = rng.choice(rel_pool)
            cand = _describe(factual.obj,
                             LocPhrase(relation=rel, anchor=factual.loc.anchor),
                             kind)
        if cand.surface not in seen:
            seen.add(cand.surface)
            out.append(cand)
    return out


@dataclass(frozen=True)
class DescriptionSet:
    ordered: tuple[Description, ...]
    factual_index: int
    shuffle_seed: int

    @property
    def factual(self) -> Description:
        return self.ordered[self.factual_index]

    @property
    def counterfactuals(self) -> list[Description]:
        return [d for i, d in enumerate(self.ordered)
                if i != self.factual_index]

    def surfaces(self) -> list[str]:
        return [d.surface for d in self.ordered]


def description_set(labels_r: LabelSet, labels_t: LabelSet,
                    instr: Instruction, side: str, n: int,
                    rng: random.Random) -> DescriptionSet:
    """Shuffled factual-plus-counterfactuals set for one side of the edit."""
    obj_r, obj_t = diff_labels(labels_r, labels_t)
    if side == "reference":
        obj, scene_labels = obj_r, labels_r
    elif side == "target":
        obj, scene_labels = obj_t, labels_t
    else:
        raise ValueError(f"side must be reference/target, got {side!r}")
    factual = make_factual(obj, extract_loc(instr))
    cfs = make_counterfactuals(factual, scene_labels, n, rng)
    shuffle_seed = rng.getrandbits(32)
    order = list(range(n + 1))
    random.Random(shuffle_seed).shuffle(order)
    items = [factual] + cfs
    ordered = tuple(items[i] for i in order)
    return DescriptionSet(ordered=ordered,
                          factual_index=order.index(0),
                          shuffle_seed=shuffle_seed)
