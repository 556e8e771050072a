"""Synthetic grid-scene universe: symbolic scenes, deterministic rendering,
instruction execution (the oracle for everything downstream), ground-truth
masks and dataset generation.

A scene is a set of uniquely-colored/shaped objects on a 4x4 grid of 16x16
pixel cells, drawn on a light gray 64x64 canvas.
"""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .domain import (
    BACKGROUND,
    CELL_PX,
    GRID,
    IMG_PX,
    N_CATEGORIES,
    OPS,
    PALETTE,
    Op,
    Relation,
    category_color,
    category_shape,
)
from .errors import IllegalEdit, UnresolvableReference
from .instparse import Instruction, parse

MIN_OBJECTS = 2
MAX_OBJECTS = 5

ALL_CELLS = [(r, c) for r in range(GRID) for c in range(GRID)]

Cell = tuple[int, int]
LabelSet = frozenset[int]


@dataclass(frozen=True, order=True)
class ObjectSpec:
    category: int
    cell: Cell

    def __post_init__(self):
        if not 0 <= self.category < N_CATEGORIES:
            raise ValueError(f"category {self.category} out of range")
        r, c = self.cell
        if not (0 <= r < GRID and 0 <= c < GRID):
            raise ValueError(f"cell {self.cell} outside the {GRID}x{GRID} grid")


@dataclass(frozen=True)
class Scene:
    objects: frozenset[ObjectSpec]
    seed: int = 0

    def __post_init__(self):
        cats = [o.category for o in self.objects]
        if len(set(cats)) != len(cats):
            raise ValueError("duplicate category in scene")
        cells = [o.cell for o in self.objects]
        if len(set(cells)) != len(cells):
            raise ValueError("overlapping cells in scene")

    def sorted_objects(self) -> list[ObjectSpec]:
        return sorted(self.objects)

    def at(self, cell: Cell) -> ObjectSpec | None:
        for o in self.objects:
            if o.cell == cell:
                return o
        return None

    def with_category(self, category: int) -> ObjectSpec | None:
        for o in self.objects:
            if o.category == category:
                return o
        return None


def labels(scene: Scene) -> LabelSet:
    """Image-level label set: the categories present in the scene."""
    return frozenset(o.category for o in scene.objects)


# --- rendering ---------------------------------------------------------------

def _lighter(rgb: tuple[int, int, int]) -> tuple[int, int, int]:
    return tuple((v + 255) // 2 for v in rgb)


def render_u8(scene: Scene) -> np.ndarray:
    """Deterministic 64x64x3 uint8 raster of the scene."""
    img = np.empty((IMG_PX, IMG_PX, 3), dtype=np.uint8)
    img[:] = BACKGROUND
    for obj in scene.sorted_objects():
        r0, c0 = obj.cell[0] * CELL_PX, obj.cell[1] * CELL_PX
        color = PALETTE[category_color(obj.category)]
        shape = category_shape(obj.category)
        if shape == "cube":
            img[r0 + 2:r0 + 14, c0 + 2:c0 + 14] = color
        elif shape == "sphere":
            yy, xx = np.ogrid[0:CELL_PX, 0:CELL_PX]
            disk = (yy - 7.5) ** 2 + (xx - 7.5) ** 2 <= 6.0 ** 2
            img[r0:r0 + CELL_PX, c0:c0 + CELL_PX][disk] = color
        else:  # cylinder: 8x12 body with a 2px lighter cap
            img[r0 + 2:r0 + 14, c0 + 4:c0 + 12] = color
            img[r0 + 2:r0 + 4, c0 + 4:c0 + 12] = _lighter(color)
    return img


def render(scene: Scene) -> np.ndarray:
    """Scene raster as float32 in [0, 1]."""
    return render_u8(scene).astype(np.float32) / 255.0


# --- instruction execution ----------------------------------------------------

def _resolve(scene: Scene, instr: Instruction) -> Cell:
    anchor = scene.with_category(instr.anchor)
    if anchor is None:
        raise UnresolvableReference(
            f"anchor {instr.anchor} not present in scene")
    dr, dc = instr.relation.delta
    return (anchor.cell[0] + dr, anchor.cell[1] + dc)


def _in_bounds(cell: Cell) -> bool:
    return 0 <= cell[0] < GRID and 0 <= cell[1] < GRID


def apply_instruction(scene: Scene, instr: Instruction) -> Scene:
    """Execute the edit symbolically; the single source of truth for targets."""
    cell = _resolve(scene, instr)
    if instr.op is Op.ADD:
        if not _in_bounds(cell):
            raise IllegalEdit(f"target cell {cell} out of bounds")
        if scene.at(cell) is not None:
            raise IllegalEdit(f"target cell {cell} occupied")
        if scene.with_category(instr.subject) is not None:
            raise IllegalEdit(f"category {instr.subject} already in scene")
        objects = scene.objects | {ObjectSpec(instr.subject, cell)}
    else:
        if not _in_bounds(cell):
            raise UnresolvableReference(
                f"referenced cell {cell} out of bounds")
        found = scene.at(cell)
        if found is None or found.category != instr.subject:
            raise UnresolvableReference(
                f"no {instr.subject} at cell {cell} "
                f"{instr.relation.value} anchor {instr.anchor}")
        if instr.op is Op.REMOVE:
            objects = scene.objects - {found}
        else:
            if scene.with_category(instr.new_category) is not None:
                raise IllegalEdit(
                    f"category {instr.new_category} already in scene")
            objects = (scene.objects - {found}) | {
                ObjectSpec(instr.new_category, cell)}
    if not MIN_OBJECTS <= len(objects) <= MAX_OBJECTS:
        raise IllegalEdit(f"edit leaves {len(objects)} objects, "
                          f"outside [{MIN_OBJECTS}, {MAX_OBJECTS}]")
    return Scene(objects=frozenset(objects), seed=scene.seed)


def gt_mask(scene: Scene, instr: Instruction) -> np.ndarray:
    """1.0 over the edited 16x16 cell, 0.0 elsewhere (evaluation only)."""
    cell = _resolve(scene, instr)
    if not _in_bounds(cell):
        raise UnresolvableReference(f"cell {cell} out of bounds")
    mask = np.zeros((IMG_PX, IMG_PX), dtype=np.float32)
    r0, c0 = cell[0] * CELL_PX, cell[1] * CELL_PX
    mask[r0:r0 + CELL_PX, c0:c0 + CELL_PX] = 1.0
    return mask


# --- sampling ------------------------------------------------------------------

def sample_scene(rng: random.Random, n_objects: int | None = None,
                 seed: int = 0) -> Scene:
    n = n_objects if n_objects is not None else rng.randint(MIN_OBJECTS,
                                                            MAX_OBJECTS)
    cats = rng.sample(range(N_CATEGORIES), n)
    cells = rng.sample(ALL_CELLS, n)
    return Scene(objects=frozenset(ObjectSpec(c, cell)
                                   for c, cell in zip(cats, cells)), seed=seed)


def _adjacent_pairs(scene: Scene) -> list[tuple[ObjectSpec, Relation, ObjectSpec]]:
    """(subject, relation, anchor) triples with subject at relation from anchor."""
    out = []
    for anchor in scene.sorted_objects():
        for rel in Relation:
            dr, dc = rel.delta
            cell = (anchor.cell[0] + dr, anchor.cell[1] + dc)
            subj = scene.at(cell) if _in_bounds(cell) else None
            if subj is not None:
                out.append((subj, rel, anchor))
    return out


def _add_slots(scene: Scene) -> list[tuple[Cell, Relation, ObjectSpec]]:
    out = []
    for anchor in scene.sorted_objects():
        for rel in Relation:
            dr, dc = rel.delta
            cell = (anchor.cell[0] + dr, anchor.cell[1] + dc)
            if _in_bounds(cell) and scene.at(cell) is None:
                out.append((cell, rel, anchor))
    return out


def _feasible_ops(scene: Scene) -> list[Op]:
    ops = []
    unused = N_CATEGORIES - len(scene.objects)
    if len(scene.objects) < MAX_OBJECTS and unused > 0 and _add_slots(scene):
        ops.append(Op.ADD)
    pairs = _adjacent_pairs(scene)
    if len(scene.objects) > MIN_OBJECTS and pairs:
        ops.append(Op.REMOVE)
    if unused > 0 and pairs:
        ops.append(Op.CHANGE)
    return ops


def sample_edit(rng: random.Random, scene: Scene,
                op: Op | None = None) -> tuple[Instruction, Scene]:
    """Draw a legal edit of the scene; raises IllegalEdit if none exists."""
    if op is None:
        feasible = _feasible_ops(scene)
        if not feasible:
            raise IllegalEdit("no feasible edit for scene")
        op = rng.choice(feasible)
    elif op not in _feasible_ops(scene):
        raise IllegalEdit(f"{op.value} infeasible for scene")

    unused = sorted(set(range(N_CATEGORIES)) - {o.category
                                                for o in scene.objects})
    if op is Op.ADD:
        _, rel, anchor = rng.choice(_add_slots(scene))
        instr = Instruction(op=op, subject=rng.choice(unused), relation=rel,
                            anchor=anchor.category)
    else:
        subj, rel, anchor = rng.choice(_adjacent_pairs(scene))
        new_cat = rng.choice(unused) if op is Op.CHANGE else None
        instr = Instruction(op=op, subject=subj.category, relation=rel,
                            anchor=anchor.category, new_category=new_cat)
    return instr, apply_instruction(scene, instr)


@dataclass(frozen=True)
class EditSample:
    id: str
    ref_scene: Scene
    instruction: Instruction
    tgt_scene: Scene  # evaluation only; training must not consume it
    labels_r: LabelSet
    labels_t: LabelSet
    gt_cell: Cell
    seed: int = 0


RESAMPLE_CAP = 1000


def sample_edit_sample(rng: random.Random, sample_id: str,
                       seed: int = 0) -> EditSample:
    """Draw (scene, edit) with the op type uniform over add/remove/change."""
    op = rng.choice(OPS)
    for _ in range(RESAMPLE_CAP):
        scene = sample_scene(rng, seed=seed)
        try:
            instr, tgt = sample_edit(rng, scene, op)
        except IllegalEdit:
            continue
        return EditSample(
            id=sample_id, ref_scene=scene, instruction=instr, tgt_scene=tgt,
            labels_r=labels(scene), labels_t=labels(tgt),
            gt_cell=_resolve(scene, instr), seed=seed)
    raise RuntimeError(f"resampling cap {RESAMPLE_CAP} exceeded for {op}")


# --- dataset generation ---------------------------------------------------------

@dataclass
class DatasetConfig:
    out_dir: str
    train_n: int = 5000
    val_n: int = 1000
    seed: int = 7
    png_cache: bool = False


def _derive_seed(base: int, split: str, index: int) -> int:
    digest = hashlib.blake2s(f"{base}:{split}:{index}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def _scene_to_list(scene: Scene) -> list[list[int]]:
    return [[o.category, o.cell[0], o.cell[1]] for o in scene.sorted_objects()]


def _scene_from_list(data: list[list[int]], seed: int = 0) -> Scene:
    return Scene(objects=frozenset(ObjectSpec(c, (r, k)) for c, r, k in data),
                 seed=seed)


def sample_to_record(s: EditSample, split: str) -> dict:
    return {
        "id": s.id,
        "split": split,
        "ref_scene": _scene_to_list(s.ref_scene),
        "tgt_scene": _scene_to_list(s.tgt_scene),
        "instruction": s.instruction.surface,
        "labels_r": sorted(s.labels_r),
        "labels_t": sorted(s.labels_t),
        "gt_cell": list(s.gt_cell),
        "seed": s.seed,
    }


def record_to_sample(rec: dict) -> EditSample:
    ref = _scene_from_list(rec["ref_scene"], rec["seed"])
    tgt = _scene_from_list(rec["tgt_scene"], rec["seed"])
    return EditSample(
        id=rec["id"], ref_scene=ref, instruction=parse(rec["instruction"]),
        tgt_scene=tgt, labels_r=frozenset(rec["labels_r"]),
        labels_t=frozenset(rec["labels_t"]),
        gt_cell=(rec["gt_cell"][0], rec["gt_cell"][1]), seed=rec["seed"])


def generate_split(base_seed: int, split: str, n: int) -> list[EditSample]:
    out = []
    for i in range(n):
        seed_i = _derive_seed(base_seed, split, i)
        rng = random.Random(seed_i)
        out.append(sample_edit_sample(rng, f"{split}-{i:06d}", seed=seed_i))
    return out


def gen_dataset(config: DatasetConfig) -> dict:
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = out_dir / "manifest.jsonl"
    counts = {}
    try:
        with manifest.open("w", encoding="utf-8") as fh:
            for split, n in [("train", config.train_n), ("val", config.val_n)]:
                samples = generate_split(config.seed, split, n)
                for s in samples:
                    fh.write(json.dumps(sample_to_record(s, split)) + "\n")
                counts[split] = len(samples)
                if config.png_cache:
                    _write_png_cache(out_dir / "png" / split, samples)
    except OSError as exc:
        raise OSError(f"writing dataset under {out_dir}: {exc}") from exc
    return {"path": str(manifest), **counts}


def _write_png_cache(cache_dir: Path, samples: list[EditSample]) -> None:
    from PIL import Image

    cache_dir.mkdir(parents=True, exist_ok=True)
    for s in samples:
        Image.fromarray(render_u8(s.ref_scene)).save(cache_dir / f"{s.id}.png")


def load_manifest(path: str | Path, split: str | None = None) -> list[EditSample]:
    samples = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            rec = json.loads(line)
            if split is None or rec["split"] == split:
                samples.append(record_to_sample(rec))
    return samples
