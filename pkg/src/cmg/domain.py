"""Shared domain constants: the category code, color palette, grid geometry and
spatial relations every other module builds on."""

from __future__ import annotations

import enum

GRID = 4          # cells per side
CELL_PX = 16      # pixels per cell
IMG_PX = GRID * CELL_PX  # 64

COLORS = ["red", "green", "blue", "cyan", "purple", "yellow", "gray", "brown"]
SHAPES = ["cube", "sphere", "cylinder"]

N_CATEGORIES = len(COLORS) * len(SHAPES)  # 24
NONE_ID = N_CATEGORIES                    # dummy "no object here" category

# RGB 0-255; background is a uniform light gray.
PALETTE = {
    "red": (220, 50, 50),
    "green": (60, 170, 60),
    "blue": (50, 80, 220),
    "cyan": (60, 200, 200),
    "purple": (150, 60, 200),
    "yellow": (230, 210, 60),
    "gray": (130, 130, 130),
    "brown": (140, 90, 50),
}
BACKGROUND = (235, 235, 235)


def category_id(color: str, shape: str) -> int:
    return COLORS.index(color) * len(SHAPES) + SHAPES.index(shape)


def category_color(cat: int) -> str:
    if not 0 <= cat < N_CATEGORIES:
        raise ValueError(f"category {cat} has no color")
    return COLORS[cat // len(SHAPES)]


def category_shape(cat: int) -> str:
    if not 0 <= cat < N_CATEGORIES:
        raise ValueError(f"category {cat} has no shape")
    return SHAPES[cat % len(SHAPES)]


def category_name(cat: int) -> str:
    """Human/category-token form, e.g. ``"red cube"``; NONE renders as ``"nothing"``."""
    if cat == NONE_ID:
        return "nothing"
    return f"{category_color(cat)} {category_shape(cat)}"


def parse_category(name: str) -> int:
    parts = name.split()
    if len(parts) != 2 or parts[0] not in COLORS or parts[1] not in SHAPES:
        raise ValueError(f"not a category name: {name!r}")
    return category_id(parts[0], parts[1])


class Relation(enum.Enum):
    BEHIND = "behind"
    IN_FRONT_OF = "in_front_of"
    LEFT_OF = "left_of"
    RIGHT_OF = "right_of"

    @property
    def surface(self) -> str:
        return _REL_SURFACE[self]

    @property
    def delta(self) -> tuple[int, int]:
        """(drow, dcol) from the anchor cell to the related cell."""
        return _REL_DELTA[self]


# "behind" is one row toward the top of the image, "in front of" one row down.
_REL_DELTA = {
    Relation.BEHIND: (-1, 0),
    Relation.IN_FRONT_OF: (1, 0),
    Relation.LEFT_OF: (0, -1),
    Relation.RIGHT_OF: (0, 1),
}

_REL_SURFACE = {
    Relation.BEHIND: "behind",
    Relation.IN_FRONT_OF: "in front of",
    Relation.LEFT_OF: "to the left of",
    Relation.RIGHT_OF: "to the right of",
}

RELATIONS = list(Relation)


class Op(enum.Enum):
    ADD = "add"
    REMOVE = "remove"
    CHANGE = "change"


OPS = list(Op)
