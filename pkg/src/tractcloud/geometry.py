"""Streamline geometry: resampling, the MDF distance, affine transforms.

All coordinates are world-space millimeters. A streamline is an (n, 3)
float array with n >= 2; a tractogram is an ordered collection of them.
Resampled tractograms are dense (n, m, 3) arrays so distance and feature
code can stay vectorized.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateStreamline,
    EmptyTractogram,
    LengthMismatch,
    ValueOutOfRange,
)


@dataclass
class Tractogram:
    """Ordered collection of streamlines for one brain."""

    streamlines: list[np.ndarray] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.streamlines)

    def __iter__(self):
        return iter(self.streamlines)

    def copy(self) -> "Tractogram":
        return Tractogram([s.copy() for s in self.streamlines])


def as_streamline(points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 2:
        raise DegenerateStreamline(f"streamline must be (n>=2, 3), got shape {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise DegenerateStreamline("streamline contains non-finite coordinates")
    return pts


def resample(streamline, m: int) -> np.ndarray:
    """Resample a polyline to m points at equal arc-length intervals.

    Linear interpolation along the polyline; endpoints are preserved
    exactly.
    """
    pts = as_streamline(streamline)
    if m < 2:
        raise ValueOutOfRange(f"m must be >= 2, got {m}")
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    total = float(seg.sum())
    if total <= 0.0:
        raise DegenerateStreamline("zero total arc length")
    arc = np.concatenate([[0.0], np.cumsum(seg)])
    target = np.linspace(0.0, total, m)
    out = np.column_stack([np.interp(target, arc, pts[:, i]) for i in range(3)])
    out[0] = pts[0]
    out[-1] = pts[-1]
    return out


def resample_tractogram(t: Tractogram, m: int) -> np.ndarray:
    """Resample every streamline; returns an (n, m, 3) array."""
    if len(t) == 0:
        return np.zeros((0, m, 3), dtype=np.float64)
    return np.stack([resample(s, m) for s in t.streamlines])


def mdf(a, b) -> float:
    """Minimum average direct-flip distance between two resampled streamlines.

    min( mean_p ||a_p - b_p||, mean_p ||a_p - b_{m-1-p}|| )
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise LengthMismatch(f"shape mismatch: {a.shape} vs {b.shape}")
    # fsum makes the result independent of summation order, so
    # mdf(a, b) == mdf(b, a) == mdf(reverse(a), b) holds exactly
    m = a.shape[0]
    direct = math.fsum(np.linalg.norm(a - b, axis=1)) / m
    flipped = math.fsum(np.linalg.norm(a - b[::-1], axis=1)) / m
    return float(min(direct, flipped))


def mdf_to_many(query: np.ndarray, others: np.ndarray) -> np.ndarray:
    """MDF from one (m, 3) streamline to each row of an (n, m, 3) array."""
    query = np.asarray(query, dtype=np.float64)
    others = np.asarray(others, dtype=np.float64)
    if others.ndim != 3 or others.shape[1:] != query.shape:
        raise LengthMismatch(f"shape mismatch: {query.shape} vs {others.shape}")
    diff = others - query[None]
    direct = np.linalg.norm(diff, axis=2).mean(axis=1)
    diff_f = others[:, ::-1] - query[None]
    flipped = np.linalg.norm(diff_f, axis=2).mean(axis=1)
    return np.minimum(direct, flipped)


def centroid_of_points(resampled: np.ndarray) -> np.ndarray:
    """Mass center over all points of an (n, m, 3) resampled array."""
    resampled = np.asarray(resampled, dtype=np.float64)
    if resampled.ndim != 3 or resampled.shape[0] == 0:
        raise EmptyTractogram("cannot take centroid of an empty tractogram")
    return resampled.reshape(-1, 3).mean(axis=0)


def centroid(t: Tractogram, m: int = 15) -> np.ndarray:
    """Mass center of a tractogram, each streamline resampled to m points."""
    if len(t) == 0:
        raise EmptyTractogram("cannot take centroid of an empty tractogram")
    return centroid_of_points(resample_tractogram(t, m))


def streamline_centroids(resampled: np.ndarray) -> np.ndarray:
    """Per-streamline point means, (n, 3). ||c_a - c_b|| <= mdf(a, b)."""
    return np.asarray(resampled, dtype=np.float64).mean(axis=1)


@dataclass
class AffineTransform:
    """linear (3x3) applied about a pivot, then a translation (mm)."""

    linear: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        self.linear = np.asarray(self.linear, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if abs(np.linalg.det(self.linear)) <= 1e-9:
            raise ValueOutOfRange("affine linear part is singular")

    @staticmethod
    def identity() -> "AffineTransform":
        return AffineTransform(np.eye(3), np.zeros(3))


@dataclass
class TransformRanges:
    """Sampling intervals for synthetic transforms.

    Rotations in degrees about the left-right (x), anterior-posterior (y)
    and superior-inferior (z) axes; translations in mm; scales as signed
    fractions (-0.45 means shrink by 45%).
    """

    rot_lr: tuple[float, float] = (-45.0, 45.0)
    rot_ap: tuple[float, float] = (-10.0, 10.0)
    rot_si: tuple[float, float] = (-10.0, 10.0)
    trans_x: tuple[float, float] = (-50.0, 50.0)
    trans_y: tuple[float, float] = (-50.0, 50.0)
    trans_z: tuple[float, float] = (-50.0, 50.0)
    scale_x: tuple[float, float] = (-0.45, 0.05)
    scale_y: tuple[float, float] = (-0.45, 0.05)
    scale_z: tuple[float, float] = (-0.45, 0.05)

    def __post_init__(self):
        for name in ("rot_lr", "rot_ap", "rot_si", "trans_x", "trans_y",
                     "trans_z", "scale_x", "scale_y", "scale_z"):
            lo, hi = getattr(self, name)
            if not (lo <= hi):
                raise ValueOutOfRange(f"{name}: interval [{lo}, {hi}] has lo > hi")
            if name.startswith("scale") and lo <= -1.0:
                raise ValueOutOfRange(f"{name}: scale must stay above -100%")

    @staticmethod
    def zero() -> "TransformRanges":
        z = (0.0, 0.0)
        return TransformRanges(z, z, z, z, z, z, z, z, z)


def _rot_x(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]], dtype=np.float64)


def _rot_y(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]], dtype=np.float64)


def _rot_z(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]], dtype=np.float64)


def sample_transform(ranges: TransformRanges, rng: np.random.Generator) -> AffineTransform:
    """Draw one random affine: linear = R_lr @ R_ap @ R_si @ diag(1 + scale).

    Each parameter is uniform and independent within its range. Right-handed
    rotations about x (LR), y (AP), z (SI).
    """
    def u(interval):
        lo, hi = interval
        return float(rng.uniform(lo, hi)) if hi > lo else float(lo)

    ang_lr = np.deg2rad(u(ranges.rot_lr))
    ang_ap = np.deg2rad(u(ranges.rot_ap))
    ang_si = np.deg2rad(u(ranges.rot_si))
    trans = np.array([u(ranges.trans_x), u(ranges.trans_y), u(ranges.trans_z)])
    scales = 1.0 + np.array([u(ranges.scale_x), u(ranges.scale_y), u(ranges.scale_z)])
    linear = _rot_x(ang_lr) @ _rot_y(ang_ap) @ _rot_z(ang_si) @ np.diag(scales)
    return AffineTransform(linear, trans)


def apply_transform(t: AffineTransform, points: np.ndarray,
                    pivot: np.ndarray | None = None) -> np.ndarray:
    """p -> linear @ (p - pivot) + pivot + translation, any (..., 3) array."""
    pts = np.asarray(points, dtype=np.float64)
    piv = np.zeros(3) if pivot is None else np.asarray(pivot, dtype=np.float64)
    return (pts - piv) @ t.linear.T + piv + t.translation


def transform_tractogram(t: AffineTransform, tractogram: Tractogram,
                         pivot: np.ndarray | None = None) -> Tractogram:
    """Apply an affine to every streamline, pivoting about the tractogram
    centroid unless an explicit pivot is given."""
    if pivot is None:
        pivot = centroid(tractogram)
    return Tractogram([apply_transform(t, s, pivot) for s in tractogram.streamlines])


def center_to_reference(t: Tractogram, reference_centroid,
                        m: int = 15) -> Tractogram:
    """Translate so the mass center lands on reference_centroid."""
    if len(t) == 0:
        raise EmptyTractogram("cannot center an empty tractogram")
    shift = np.asarray(reference_centroid, dtype=np.float64) - centroid(t, m)
    return Tractogram([s + shift for s in t.streamlines])


def center_resampled(resampled: np.ndarray, reference_centroid) -> np.ndarray:
    """Same shift as center_to_reference but on an (n, m, 3) array."""
    shift = np.asarray(reference_centroid, dtype=np.float64) - centroid_of_points(resampled)
    return resampled + shift
