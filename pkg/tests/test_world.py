import json
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cmg.domain import (
    BACKGROUND,
    CELL_PX,
    IMG_PX,
    NONE_ID,
    Op,
    Relation,
    category_id,
)
from cmg.errors import IllegalEdit, UnresolvableReference
from cmg.instparse import Instruction, parse
from cmg.reasoner import symbolic_undo
from cmg.world import (
    DatasetConfig,
    ObjectSpec,
    Scene,
    apply_instruction,
    gen_dataset,
    gt_mask,
    labels,
    load_manifest,
    render,
    render_u8,
    sample_edit,
    sample_edit_sample,
    sample_scene,
)

RED_CUBE = category_id("red", "cube")
BLUE_SPHERE = category_id("blue", "sphere")
GREEN_CUBE = category_id("green", "cube")
PURPLE_SPHERE = category_id("purple", "sphere")


def scene_of(*objs: tuple[int, int, int]) -> Scene:
    return Scene(objects=frozenset(ObjectSpec(c, (r, k)) for c, r, k in objs))


# Relation semantics table, fixed before the executor was written:
# (relation, anchor cell) -> resolved cell.
RELATION_TABLE = [
    (Relation.BEHIND, (2, 2), (1, 2)),
    (Relation.IN_FRONT_OF, (2, 2), (3, 2)),
    (Relation.LEFT_OF, (2, 2), (2, 1)),
    (Relation.RIGHT_OF, (2, 2), (2, 3)),
    (Relation.BEHIND, (1, 0), (0, 0)),
    (Relation.RIGHT_OF, (3, 2), (3, 3)),
]


# --- rendering --------------------------------------------------------------

def test_empty_scene_renders_background():
    img = render(Scene(objects=frozenset()))
    assert img.shape == (IMG_PX, IMG_PX, 3)
    assert np.all(img == BACKGROUND[0] / 255.0)


def test_render_deterministic():
    scene = scene_of((RED_CUBE, 0, 0), (BLUE_SPHERE, 2, 2))
    assert np.array_equal(render(scene), render(scene))
    assert np.array_equal(render_u8(scene), render_u8(scene))


def test_render_golden_red_cube(data_dir):
    scene = scene_of((RED_CUBE, 0, 0))
    golden = np.load(data_dir / "golden_red_cube_00.npy")
    assert np.array_equal(render_u8(scene), golden)


def test_render_values_in_unit_range():
    scene = scene_of((RED_CUBE, 1, 1), (BLUE_SPHERE, 2, 3), (GREEN_CUBE, 0, 2))
    img = render(scene)
    assert img.dtype == np.float32
    assert img.min() >= 0.0 and img.max() <= 1.0


def test_render_rejects_overlapping_cells():
    with pytest.raises(ValueError):
        Scene(objects=frozenset({ObjectSpec(RED_CUBE, (1, 1)),
                                 ObjectSpec(BLUE_SPHERE, (1, 1))}))


def test_render_rejects_duplicate_categories():
    with pytest.raises(ValueError):
        Scene(objects=frozenset({ObjectSpec(RED_CUBE, (0, 0)),
                                 ObjectSpec(RED_CUBE, (1, 1))}))


def test_shapes_are_drawn_inside_their_cell():
    for cat, (r, c) in [(RED_CUBE, (1, 2)),
                        (category_id("blue", "sphere"), (0, 3)),
                        (category_id("green", "cylinder"), (3, 0))]:
        img = render_u8(scene_of((cat, r, c)))
        bg = np.array(BACKGROUND, dtype=np.uint8)
        nonbg = np.any(img != bg, axis=2)
        rows, cols = np.nonzero(nonbg)
        assert rows.min() >= r * CELL_PX and rows.max() < (r + 1) * CELL_PX
        assert cols.min() >= c * CELL_PX and cols.max() < (c + 1) * CELL_PX


# --- labels -----------------------------------------------------------------

def test_labels_paper_example():
    scene = scene_of((PURPLE_SPHERE, 1, 1), (GREEN_CUBE, 2, 3))
    assert labels(scene) == frozenset({PURPLE_SPHERE, GREEN_CUBE})


def test_labels_after_remove():
    scene = scene_of((RED_CUBE, 1, 1), (BLUE_SPHERE, 2, 2), (GREEN_CUBE, 3, 3))
    instr = parse("remove the red cube to the left of the blue sphere")
    # red cube at (2,1)? -- place it correctly relative to anchor
    scene = scene_of((RED_CUBE, 2, 1), (BLUE_SPHERE, 2, 2), (GREEN_CUBE, 3, 3))
    out = apply_instruction(scene, instr)
    assert RED_CUBE not in labels(out)
    assert labels(out) == frozenset({BLUE_SPHERE, GREEN_CUBE})


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=200)
def test_labels_of_add_is_union(seed):
    rng = random.Random(seed)
    sample = sample_edit_sample(rng, "x")
    if sample.instruction.op is Op.ADD:
        assert labels(sample.tgt_scene) == (
            labels(sample.ref_scene) | {sample.instruction.subject})


# --- instruction execution --------------------------------------------------

def test_apply_add_behind_example():
    scene = scene_of((BLUE_SPHERE, 2, 2), (GREEN_CUBE, 3, 3))
    instr = parse("add a red cube behind the blue sphere")
    out = apply_instruction(scene, instr)
    assert ObjectSpec(RED_CUBE, (1, 2)) in out.objects
    assert out.objects - {ObjectSpec(RED_CUBE, (1, 2))} == scene.objects


@pytest.mark.parametrize("relation,anchor_cell,expect_cell", RELATION_TABLE)
def test_relation_semantics_table(relation, anchor_cell, expect_cell):
    scene = Scene(objects=frozenset({ObjectSpec(BLUE_SPHERE, anchor_cell),
                                     ObjectSpec(GREEN_CUBE, (0, 3) if anchor_cell != (0, 3) else (3, 0))}))
    instr = Instruction(op=Op.ADD, subject=RED_CUBE, relation=relation,
                        anchor=BLUE_SPHERE)
    out = apply_instruction(scene, instr)
    assert ObjectSpec(RED_CUBE, expect_cell) in out.objects


def test_apply_remove_leaves_rest_unchanged():
    scene = scene_of((GREEN_CUBE, 2, 1), (PURPLE_SPHERE, 2, 2), (RED_CUBE, 0, 0))
    instr = parse("remove the green cube to the left of the purple sphere")
    out = apply_instruction(scene, instr)
    assert out.objects == scene.objects - {ObjectSpec(GREEN_CUBE, (2, 1))}


def test_apply_change_swaps_category_in_place():
    scene = scene_of((RED_CUBE, 1, 2), (BLUE_SPHERE, 2, 2), (GREEN_CUBE, 0, 0))
    instr = parse("change the red cube behind the blue sphere to a purple sphere")
    out = apply_instruction(scene, instr)
    assert ObjectSpec(PURPLE_SPHERE, (1, 2)) in out.objects
    assert RED_CUBE not in labels(out)


def test_apply_errors():
    scene = scene_of((BLUE_SPHERE, 0, 0), (GREEN_CUBE, 3, 3))
    # anchor missing
    with pytest.raises(UnresolvableReference):
        apply_instruction(scene, parse("add a red cube behind the purple sphere"))
    # resolved cell out of bounds (behind row 0)
    with pytest.raises(IllegalEdit):
        apply_instruction(scene, parse("add a red cube behind the blue sphere"))
    # occupied cell
    scene2 = scene_of((BLUE_SPHERE, 2, 2), (GREEN_CUBE, 1, 2))
    with pytest.raises(IllegalEdit):
        apply_instruction(scene2, parse("add a red cube behind the blue sphere"))
    # duplicate category
    with pytest.raises(IllegalEdit):
        apply_instruction(scene2, parse("add a green cube in front of the blue sphere"))
    # referenced object absent / mismatched
    with pytest.raises(UnresolvableReference):
        apply_instruction(scene2, parse("remove the red cube behind the blue sphere"))
    with pytest.raises(UnresolvableReference):
        apply_instruction(scene2, parse("remove the green cube in front of the blue sphere"))
    # removing below the minimum object count
    with pytest.raises(IllegalEdit):
        apply_instruction(scene2, parse("remove the green cube behind the blue sphere"))
    # change to a category already present
    scene3 = scene_of((RED_CUBE, 1, 2), (BLUE_SPHERE, 2, 2), (GREEN_CUBE, 0, 0))
    with pytest.raises(IllegalEdit):
        apply_instruction(scene3, parse("change the red cube behind the blue sphere to a green cube"))


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=300)
def test_apply_then_undo_restores_scene(seed):
    sample = sample_edit_sample(random.Random(seed), "x")
    back = apply_instruction(sample.tgt_scene, symbolic_undo(sample.instruction))
    assert back.objects == sample.ref_scene.objects


def test_edit_algebra_label_count():
    rng = random.Random(11)
    for _ in range(200):
        s = sample_edit_sample(rng, "x")
        delta = len(labels(s.tgt_scene)) - len(labels(s.ref_scene))
        assert delta == {Op.ADD: 1, Op.REMOVE: -1, Op.CHANGE: 0}[s.instruction.op]


# --- ground-truth masks ------------------------------------------------------

def test_gt_mask_cell_geometry():
    scene = scene_of((RED_CUBE, 0, 1), (BLUE_SPHERE, 0, 0))
    instr = parse("remove the red cube to the right of the blue sphere")
    mask = gt_mask(scene, instr)
    assert mask.shape == (IMG_PX, IMG_PX)
    assert np.all(mask[0:16, 16:32] == 1.0)
    assert mask.sum() == 256


def test_gt_mask_always_one_cell():
    rng = random.Random(5)
    for _ in range(100):
        s = sample_edit_sample(rng, "x")
        assert gt_mask(s.ref_scene, s.instruction).sum() == 256


def test_gt_mask_matches_undo_mask():
    rng = random.Random(6)
    for _ in range(100):
        s = sample_edit_sample(rng, "x")
        m_fwd = gt_mask(s.ref_scene, s.instruction)
        m_bwd = gt_mask(s.tgt_scene, symbolic_undo(s.instruction))
        assert np.array_equal(m_fwd, m_bwd)


def test_mask_label_consistency():
    rng = random.Random(7)
    for _ in range(200):
        s = sample_edit_sample(rng, "x")
        cell_cat_ref = next((o.category for o in s.ref_scene.objects
                             if o.cell == s.gt_cell), NONE_ID)
        cell_cat_tgt = next((o.category for o in s.tgt_scene.objects
                             if o.cell == s.gt_cell), NONE_ID)
        op = s.instruction.op
        assert cell_cat_ref == (NONE_ID if op is Op.ADD else s.instruction.subject)
        if op is Op.REMOVE:
            assert cell_cat_tgt == NONE_ID
        elif op is Op.ADD:
            assert cell_cat_tgt == s.instruction.subject
        else:
            assert cell_cat_tgt == s.instruction.new_category


# --- sampling ----------------------------------------------------------------

def test_sampling_deterministic():
    a = sample_scene(random.Random(42))
    b = sample_scene(random.Random(42))
    assert a == b
    ia, ta = sample_edit(random.Random(7), a)
    ib, tb = sample_edit(random.Random(7), b)
    assert ia == ib and ta == tb


def test_sampled_scenes_valid():
    rng = random.Random(0)
    for _ in range(200):
        s = sample_scene(rng)
        assert 2 <= len(s.objects) <= 5


def test_op_type_frequencies_uniform():
    rng = random.Random(123)
    counts = {op: 0 for op in Op}
    n = 10_000
    for _ in range(n):
        counts[sample_edit_sample(rng, "x").instruction.op] += 1
    for op in Op:
        assert abs(counts[op] / n - 1 / 3) < 0.02


def test_sampled_edits_always_apply():
    rng = random.Random(321)
    for _ in range(300):
        s = sample_edit_sample(rng, "x")
        assert apply_instruction(s.ref_scene, s.instruction) == s.tgt_scene


# --- dataset generation -------------------------------------------------------

def test_dataset_config_defaults():
    cfg = DatasetConfig(out_dir="unused")
    assert cfg.train_n == 5000 and cfg.val_n == 1000 and cfg.seed == 7


def test_gen_dataset_round_trip(tmp_path):
    cfg = DatasetConfig(out_dir=str(tmp_path), train_n=40, val_n=10, seed=3)
    summary = gen_dataset(cfg)
    assert summary["train"] == 40 and summary["val"] == 10

    train = load_manifest(tmp_path / "manifest.jsonl", split="train")
    val = load_manifest(tmp_path / "manifest.jsonl", split="val")
    assert len(train) == 40 and len(val) == 10
    assert not {s.id for s in train} & {s.id for s in val}

    for s in train[:10]:
        assert apply_instruction(s.ref_scene, s.instruction) == s.tgt_scene
        assert s.labels_r == labels(s.ref_scene)
        assert s.labels_t == labels(s.tgt_scene)

    # regenerating yields an identical manifest
    other = tmp_path / "again"
    other.mkdir()
    gen_dataset(DatasetConfig(out_dir=str(other), train_n=40, val_n=10, seed=3))
    assert (tmp_path / "manifest.jsonl").read_text() == \
        (other / "manifest.jsonl").read_text()


def test_manifest_record_shape(tmp_path):
    cfg = DatasetConfig(out_dir=str(tmp_path), train_n=2, val_n=1, seed=9)
    gen_dataset(cfg)
    lines = (tmp_path / "manifest.jsonl").read_text().splitlines()
    rec = json.loads(lines[0])
    assert set(rec) == {"id", "split", "ref_scene", "tgt_scene", "instruction",
                        "labels_r", "labels_t", "gt_cell", "seed"}
    assert all(len(o) == 3 for o in rec["ref_scene"])
