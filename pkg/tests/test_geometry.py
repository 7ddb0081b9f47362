import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tractcloud import geometry as g
from tractcloud.errors import (
    DegenerateStreamline,
    EmptyTractogram,
    LengthMismatch,
    ValueOutOfRange,
)

from conftest import random_resampled, random_rotation


# --- resample ------------------------------------------------------------

def test_resample_straight_segment():
    out = g.resample(np.array([[0, 0, 0], [14, 0, 0]], float), 15)
    assert np.allclose(out[:, 0], np.arange(15))
    assert np.allclose(out[:, 1:], 0)


def test_resample_fixed_point(rng):
    # equal-chord-length polyline: resampling to the same m is the identity
    steps = rng.normal(size=(14, 3))
    steps = steps / np.linalg.norm(steps, axis=1, keepdims=True) * 2.0
    s = np.vstack([np.zeros(3), np.cumsum(steps, axis=0)])
    again = g.resample(s, 15)
    assert np.abs(again - s).max() < 1e-9


def test_resample_endpoints_exact(rng):
    for _ in range(20):
        raw = rng.normal(size=(rng.integers(2, 40), 3)) * 10
        out = g.resample(raw, 15)
        assert np.array_equal(out[0], raw[0])
        assert np.array_equal(out[-1], raw[-1])


def test_resample_dense_sampling_oracle(rng):
    # oracle: interpolate arc-length quantiles on a 1e5-point densification
    raw = rng.normal(size=(50, 3)) * 10
    seg = np.linalg.norm(np.diff(raw, axis=0), axis=1)
    arc = np.concatenate([[0.0], np.cumsum(seg)])
    dense_t = np.linspace(0.0, arc[-1], 100_000)
    dense = np.column_stack([np.interp(dense_t, arc, raw[:, i]) for i in range(3)])
    m = 15
    targets = np.linspace(0.0, arc[-1], m)
    expected = np.column_stack([np.interp(targets, dense_t, dense[:, i]) for i in range(3)])
    out = g.resample(raw, m)
    assert np.abs(out - expected).max() < 1e-4


def test_resample_degenerate():
    with pytest.raises(DegenerateStreamline):
        g.resample(np.zeros((3, 3)), 15)


# --- mdf -----------------------------------------------------------------

def test_mdf_identity_and_flip(rng):
    a = random_resampled(rng, 1)[0]
    assert g.mdf(a, a) == 0
    assert g.mdf(a, a[::-1]) == 0


def test_mdf_parallel_offset():
    a = g.resample(np.array([[0, 0, 0], [14, 0, 0]], float), 15)
    b = a + np.array([1.0, 0, 0])
    assert g.mdf(a, b) == pytest.approx(1.0, abs=1e-12)


def test_mdf_length_mismatch(rng):
    with pytest.raises(LengthMismatch):
        g.mdf(random_resampled(rng, 1, m=15)[0], random_resampled(rng, 1, m=10)[0])


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_mdf_symmetry_and_flip_invariance(seed):
    r = np.random.default_rng(seed)
    pair = random_resampled(r, 2)
    a, b = pair[0], pair[1]
    assert g.mdf(a, b) == g.mdf(b, a)
    assert g.mdf(a, b) == g.mdf(a[::-1], b)
    assert g.mdf(a, b) == g.mdf(a, b[::-1])
    assert g.mdf(a, b) >= 0


def test_mdf_rigid_invariance_and_scale_equivariance(rng):
    for _ in range(100):
        pair = random_resampled(rng, 2)
        a, b = pair
        d = g.mdf(a, b)
        R = random_rotation(rng)
        t = rng.normal(size=3) * 30
        assert abs(g.mdf(a @ R.T + t, b @ R.T + t) - d) < 1e-7
        c = float(rng.uniform(0.1, 5.0))
        assert abs(g.mdf(c * a, c * b) - c * d) < 1e-7


def test_centroid_lower_bound(rng):
    res = random_resampled(rng, 40)
    cents = g.streamline_centroids(res)
    for i in range(40):
        d = g.mdf_to_many(res[i], res)
        bound = np.linalg.norm(cents - cents[i], axis=1)
        assert np.all(bound <= d + 1e-12)


def test_mdf_to_many_matches_scalar(rng):
    res = random_resampled(rng, 30)
    d = g.mdf_to_many(res[0], res)
    for j in range(30):
        assert d[j] == pytest.approx(g.mdf(res[0], res[j]), abs=1e-12)


# --- centroid ------------------------------------------------------------

def test_centroid_symmetric():
    s = np.array([[-7, 0, 0], [7, 0, 0]], float)
    t = g.Tractogram([s])
    assert np.allclose(g.centroid(t), 0)


def test_centroid_translation(rng):
    t = g.Tractogram([rng.normal(size=(8, 3)) * 10 for _ in range(5)])
    c0 = g.centroid(t)
    shifted = g.Tractogram([s + np.array([5.0, 0, 0]) for s in t.streamlines])
    assert np.allclose(g.centroid(shifted) - c0, [5, 0, 0], atol=1e-9)


def test_centroid_naive_loop_oracle(rng):
    res = random_resampled(rng, 20)
    total = np.zeros(3)
    count = 0
    for s in res:
        for p in s:
            total += p
            count += 1
    assert np.allclose(g.centroid_of_points(res), total / count, atol=1e-12)


def test_centroid_empty():
    with pytest.raises(EmptyTractogram):
        g.centroid(g.Tractogram([]))


# --- transforms ----------------------------------------------------------

def test_sample_transform_degenerate_is_identity(rng):
    t = g.sample_transform(g.TransformRanges.zero(), rng)
    assert np.allclose(t.linear, np.eye(3))
    assert np.allclose(t.translation, 0)


def test_sample_transform_within_ranges():
    ranges = g.TransformRanges()
    rng = np.random.default_rng(0)
    for _ in range(10_000):
        t = g.sample_transform(ranges, rng)
        assert np.all(np.abs(t.translation) <= 50.0)
        scales = np.linalg.norm(t.linear, axis=0)  # rotation preserves column norms
        assert np.all(scales >= 1 - 0.45 - 1e-9)
        assert np.all(scales <= 1 + 0.05 + 1e-9)


def test_sample_transform_deterministic():
    ranges = g.TransformRanges()
    t1 = g.sample_transform(ranges, np.random.default_rng(42))
    t2 = g.sample_transform(ranges, np.random.default_rng(42))
    assert np.array_equal(t1.linear, t2.linear)
    assert np.array_equal(t1.translation, t2.translation)


def test_apply_transform_identity(rng):
    s = rng.normal(size=(6, 3))
    out = g.apply_transform(g.AffineTransform.identity(), s)
    assert np.allclose(out, s)


def test_apply_transform_translation():
    t = g.AffineTransform(np.eye(3), [0, 0, 10])
    tr = g.Tractogram([np.array([[1, 2, 3], [4, 5, 6]], float)])
    out = g.transform_tractogram(t, tr)
    assert np.allclose(g.centroid(out) - g.centroid(tr), [0, 0, 10], atol=1e-9)


def test_apply_transform_si_rotation():
    # 90 degrees about SI (z), right-handed: (1,0,0) -> (0,1,0)
    t = g.AffineTransform(g._rot_z(np.pi / 2), np.zeros(3))
    out = g.apply_transform(t, np.array([[1.0, 0, 0]]), pivot=np.zeros(3))
    assert np.allclose(out, [[0, 1, 0]], atol=1e-12)


def test_scale_range_validation():
    with pytest.raises(ValueOutOfRange):
        g.TransformRanges(scale_x=(-1.5, 0.0))
    with pytest.raises(ValueOutOfRange):
        g.TransformRanges(rot_lr=(10.0, -10.0))


# --- centering -----------------------------------------------------------

def test_center_to_reference_noop(rng):
    t = g.Tractogram([rng.normal(size=(8, 3)) * 10 for _ in range(5)])
    out = g.center_to_reference(t, g.centroid(t))
    for a, b in zip(t.streamlines, out.streamlines):
        assert np.allclose(a, b, atol=1e-9)


def test_center_to_reference_origin(rng):
    t = g.Tractogram([rng.normal(size=(8, 3)) * 10 + 40 for _ in range(5)])
    out = g.center_to_reference(t, np.zeros(3))
    assert np.linalg.norm(g.centroid(out)) < 1e-6


def test_center_preserves_mdf(rng):
    res = random_resampled(rng, 6)
    t = g.Tractogram(list(res))
    out = g.center_to_reference(t, rng.normal(size=3) * 25)
    res2 = np.stack(out.streamlines)
    for i in range(6):
        for j in range(i + 1, 6):
            assert g.mdf(res[i], res[j]) == pytest.approx(
                g.mdf(res2[i], res2[j]), abs=1e-9)
