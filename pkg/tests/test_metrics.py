import numpy as np
import pytest

from tractcloud import geometry as g
from tractcloud import metrics as mt
from tractcloud.errors import (
    DegenerateBounds,
    EmptyAtlasTract,
    EmptyGrid,
    EmptyMatrix,
    EmptyTract,
    GridMismatch,
    ValueOutOfRange,
)

from conftest import random_resampled


# --- accuracy / macro F1 ---------------------------------------------------

def naive_scores(truth, pred, class_count):
    """Per-sample loops, no numpy tricks."""
    correct = sum(1 for t, p in zip(truth, pred) if t == p)
    acc = correct / len(truth)
    f1s = []
    for c in range(class_count):
        tp = sum(1 for t, p in zip(truth, pred) if t == c and p == c)
        fp = sum(1 for t, p in zip(truth, pred) if t != c and p == c)
        fn = sum(1 for t, p in zip(truth, pred) if t == c and p != c)
        if tp + fp + fn == 0:
            continue  # class absent from both sides
        f1s.append(2 * tp / (2 * tp + fp + fn) if tp else 0.0)
    return acc, sum(f1s) / len(f1s)


def test_accuracy_hand_case():
    cm = mt.confusion_matrix([0, 0, 1], [0, 1, 1], 2)
    assert mt.accuracy(cm) == pytest.approx(2 / 3)


def test_macro_f1_all_predicted_zero():
    # balanced 3-class truth, everything predicted as class 0:
    # F1 = (2/4 + 0 + 0) / 3 = 1/6... worked by hand below
    truth = [0, 1, 2]
    pred = [0, 0, 0]
    cm = mt.confusion_matrix(truth, pred, 3)
    # class 0: tp=1, fp=2, fn=0 -> f1 = 2/(2+2) = 0.5; classes 1, 2: 0
    assert mt.macro_f1(cm) == pytest.approx(0.5 / 3)
    assert mt.accuracy(cm) == pytest.approx(1 / 3)


def test_scores_vs_naive_oracle(rng):
    for _ in range(20):
        n = int(rng.integers(5, 200))
        c = int(rng.integers(2, 9))
        truth = rng.integers(0, c, size=n)
        pred = rng.integers(0, c, size=n)
        cm = mt.confusion_matrix(truth, pred, c)
        acc, f1 = naive_scores(truth, pred, c)
        assert mt.accuracy(cm) == pytest.approx(acc, abs=1e-12)
        assert mt.macro_f1(cm) == pytest.approx(f1, abs=1e-12)


def test_macro_f1_excludes_unseen_classes():
    cm = mt.confusion_matrix([0, 1], [0, 1], 5)  # classes 2-4 unseen
    assert mt.macro_f1(cm) == pytest.approx(1.0)


def test_label_permutation_invariance(rng):
    truth = rng.integers(0, 4, size=100)
    pred = rng.integers(0, 4, size=100)
    perm = rng.permutation(4)
    cm1 = mt.confusion_matrix(truth, pred, 4)
    cm2 = mt.confusion_matrix(perm[truth], perm[pred], 4)
    assert mt.accuracy(cm1) == pytest.approx(mt.accuracy(cm2), abs=1e-12)
    assert mt.macro_f1(cm1) == pytest.approx(mt.macro_f1(cm2), abs=1e-12)


def test_empty_matrix():
    with pytest.raises(EmptyMatrix):
        mt.accuracy(np.zeros((3, 3), dtype=np.int64))
    with pytest.raises(EmptyMatrix):
        mt.macro_f1(np.zeros((3, 3), dtype=np.int64))


def test_confusion_matrix_out_of_range():
    with pytest.raises(ValueOutOfRange):
        mt.confusion_matrix([0, 3], [0, 1], 3)


# --- TIR -------------------------------------------------------------------

def test_tir_boundary_inclusive():
    # exactly 50 predictions meets the threshold; 49 does not
    assert mt.tir([0] * 50, [0]) == 1.0
    assert mt.tir([0] * 49, [0]) == 0.0
    assert mt.tir([0] * 50 + [1] * 49, [0, 1]) == 0.5


def test_tir_ignores_other_classes():
    labels = [0] * 60 + [9] * 500
    assert mt.tir(labels, [0]) == 1.0


def test_tir_empty_class_set():
    with pytest.raises(ValueOutOfRange):
        mt.tir([0, 1], [])


def test_tir_bad_threshold():
    with pytest.raises(ValueOutOfRange):
        mt.tir([0], [0], threshold=0)


# --- TDA -------------------------------------------------------------------

def test_tda_identical_tracts(rng):
    t = random_resampled(rng, 10)
    assert mt.tda(t, t) == pytest.approx(0.0, abs=1e-12)


def test_tda_parallel_offset():
    base = g.resample(np.array([[0, 0, 0], [14, 0, 0]], float), 15)
    tract = np.stack([base, base + [0, 2.0, 0]])
    atlas = np.stack([base + [0, 1.0, 0]])
    assert mt.tda(tract, atlas) == pytest.approx(1.0, abs=1e-12)


def test_tda_exhaustive_oracle(rng):
    tract = random_resampled(rng, 12)
    atlas = random_resampled(rng, 9)
    expected = np.mean([min(g.mdf(s, a) for a in atlas) for s in tract])
    assert mt.tda(tract, atlas) == pytest.approx(expected, abs=1e-9)


def test_tda_empty_inputs(rng):
    t = random_resampled(rng, 3)
    with pytest.raises(EmptyTract):
        mt.tda(t[:0], t)
    with pytest.raises(EmptyAtlasTract):
        mt.tda(t, t[:0])


def test_tda_asymmetric(rng):
    # mean-of-min is directional by construction
    a = random_resampled(rng, 3)
    b = random_resampled(rng, 40)
    assert mt.tda(a, b) != pytest.approx(mt.tda(b, a))


# --- voxelize / wDice ------------------------------------------------------

def test_voxelize_axis_aligned_traversal():
    # a straight line from (0.5, 0.5, 0.5) to (9.5, 0.5, 0.5) with unit
    # voxels and explicit bounds [0, 10)^3 crosses exactly voxels x=0..9
    line = np.array([[0.5, 0.5, 0.5], [9.5, 0.5, 0.5]])
    grid = mt.voxelize([line], 1.0, bounds=([0, 0, 0], [10, 10, 10]))
    assert grid.dims == (10, 10, 10)
    expected = np.zeros((10, 10, 10), dtype=np.int64)
    expected[0:10, 0, 0] = 1
    assert np.array_equal(grid.counts, expected)


def test_voxelize_counts_streamline_once_per_voxel():
    # a tight zigzag inside one voxel still counts 1; two copies count 2
    zig = np.array([[0.2, 0.2, 0.2], [0.8, 0.8, 0.2], [0.2, 0.8, 0.8]])
    grid = mt.voxelize([zig, zig], 1.0, bounds=([0, 0, 0], [2, 2, 2]))
    assert grid.counts.max() == 2
    assert grid.counts.sum() == 2


def test_voxelize_dense_step_catches_thin_diagonal():
    # coarse vertices alone would miss intermediate voxels on a long segment
    line = np.array([[0.5, 0.5, 0.5], [19.5, 0.5, 0.5]])
    grid = mt.voxelize([line], 1.0, bounds=([0, 0, 0], [20, 1, 1]))
    assert grid.counts.sum() == 20


def test_voxelize_empty_bounds():
    with pytest.raises(DegenerateBounds):
        mt.voxelize([], 1.0)
    with pytest.raises(DegenerateBounds):
        mt.voxelize([np.zeros((2, 3))], 1.0, bounds=([0, 0, 0], [0, 1, 1]))


def test_voxelize_bad_voxel_size():
    with pytest.raises(ValueOutOfRange):
        mt.voxelize([np.zeros((2, 3))], 0.0)


def test_wdice_identical_is_one(rng):
    t = random_resampled(rng, 5)
    b = ([-60, -60, -60], [60, 60, 60])
    g1 = mt.voxelize(list(t), 2.0, bounds=b)
    g2 = mt.voxelize(list(t), 2.0, bounds=b)
    assert mt.wdice(g1, g2) == pytest.approx(1.0, abs=1e-12)


def test_wdice_disjoint_is_zero():
    b = ([0, 0, 0], [40, 4, 4])
    a = np.array([[1.0, 1, 1], [9, 1, 1]])
    c = np.array([[21.0, 1, 1], [29, 1, 1]])
    g1 = mt.voxelize([a], 1.0, bounds=b)
    g2 = mt.voxelize([c], 1.0, bounds=b)
    assert mt.wdice(g1, g2) == 0.0


def test_wdice_half_overlap():
    # {A, B} vs {B, C} with equal-weight voxel sets: wDice = 0.5
    b = ([0, 0, 0], [4, 2, 2])
    segA = np.array([[0.5, 0.5, 0.5], [0.6, 0.5, 0.5]])   # voxel (0,0,0)
    segB = np.array([[1.5, 0.5, 0.5], [1.6, 0.5, 0.5]])   # voxel (1,0,0)
    segC = np.array([[2.5, 0.5, 0.5], [2.6, 0.5, 0.5]])   # voxel (2,0,0)
    g1 = mt.voxelize([segA, segB], 1.0, bounds=b)
    g2 = mt.voxelize([segB, segC], 1.0, bounds=b)
    assert mt.wdice(g1, g2) == pytest.approx(0.5, abs=1e-12)


def test_wdice_symmetry(rng):
    b = ([-60, -60, -60], [60, 60, 60])
    g1 = mt.voxelize(list(random_resampled(rng, 6)), 2.0, bounds=b)
    g2 = mt.voxelize(list(random_resampled(rng, 6)), 2.0, bounds=b)
    assert mt.wdice(g1, g2) == pytest.approx(mt.wdice(g2, g1), abs=1e-15)


def test_wdice_grid_mismatch(rng):
    t = list(random_resampled(rng, 3))
    g1 = mt.voxelize(t, 2.0, bounds=([-60] * 3, [60] * 3))
    g2 = mt.voxelize(t, 2.0, bounds=([-62] * 3, [62] * 3))
    with pytest.raises(GridMismatch):
        mt.wdice(g1, g2)


def test_wdice_empty_grid():
    b = ([0, 0, 0], [2, 2, 2])
    g1 = mt.voxelize([np.array([[0.5, 0.5, 0.5], [1.5, 0.5, 0.5]])], 1.0, bounds=b)
    g2 = mt.VoxelGrid(g1.origin, g1.voxel_size, g1.dims,
                      np.zeros_like(g1.counts))
    with pytest.raises(EmptyGrid):
        mt.wdice(g1, g2)


# --- reports ---------------------------------------------------------------

def test_classification_report():
    rep = mt.classification_report([0, 0, 1], [0, 1, 1], 2)
    assert rep["accuracy"] == pytest.approx(2 / 3)
    assert rep["samples"] == 3


def test_tract_report_summary(rng):
    res = random_resampled(rng, 120)
    atlas = random_resampled(rng, 120)
    pred = np.array([0] * 60 + [1] * 40 + [2] * 20)
    atlas_labels = np.array([0, 1, 2] * 40)
    rows = mt.tract_report(pred, res, atlas, atlas_labels, [0, 1, 2],
                           {0: "a", 1: "b", 2: "c"}, threshold=50)
    assert len(rows) == 4
    assert rows[0]["identified"] and not rows[1]["identified"]
    assert rows[-1]["tract"] == "SUMMARY"
    assert "TIR=0.3333" in rows[-1]["identified"]
    # TDA averages only the identified tract
    assert rows[-1]["tda"] == pytest.approx(rows[0]["tda"])
    csv_text = mt.rows_to_csv(rows)
    assert csv_text.splitlines()[0] == "tract,class_id,count,identified,tda"
    assert len(csv_text.splitlines()) == 5
