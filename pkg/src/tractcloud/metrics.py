"""Evaluation: accuracy, macro F1, tract identification rate, tract
distance to atlas, streamline voxelization and weighted Dice overlap."""

from __future__ import annotations

import io as _io
import csv
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateBounds,
    EmptyAtlasTract,
    EmptyGrid,
    EmptyMatrix,
    EmptyTract,
    GridMismatch,
    ValueOutOfRange,
)
from .geometry import mdf_to_many


# --- classification ------------------------------------------------------

def confusion_matrix(truth, pred, class_count: int) -> np.ndarray:
    truth = np.asarray(truth, dtype=np.int64)
    pred = np.asarray(pred, dtype=np.int64)
    if truth.shape != pred.shape:
        raise ValueOutOfRange(f"truth/pred length mismatch: {truth.shape} vs {pred.shape}")
    if truth.size and (min(truth.min(), pred.min()) < 0
                       or max(truth.max(), pred.max()) >= class_count):
        raise ValueOutOfRange(f"labels outside [0, {class_count})")
    cm = np.zeros((class_count, class_count), dtype=np.int64)
    np.add.at(cm, (truth, pred), 1)
    return cm


def accuracy(cm: np.ndarray) -> float:
    cm = np.asarray(cm)
    total = cm.sum()
    if total == 0:
        raise EmptyMatrix("confusion matrix has no samples")
    return float(np.trace(cm) / total)


def macro_f1(cm: np.ndarray) -> float:
    """Unweighted mean of per-class F1. Classes absent from both truth and
    prediction are excluded; an all-zero precision+recall denominator
    contributes 0."""
    cm = np.asarray(cm, dtype=np.float64)
    if cm.sum() == 0:
        raise EmptyMatrix("confusion matrix has no samples")
    tp = np.diag(cm)
    truth_tot = cm.sum(axis=1)
    pred_tot = cm.sum(axis=0)
    seen = (truth_tot + pred_tot) > 0
    denom = truth_tot + pred_tot
    f1 = np.zeros(cm.shape[0])
    nz = denom > 0
    f1[nz] = 2 * tp[nz] / denom[nz]
    return float(f1[seen].mean())


def tir(pred_labels, class_ids, threshold: int = 50) -> float:
    """Fraction of the given (anatomical) classes with at least
    ``threshold`` predicted streamlines; the comparison is inclusive."""
    if threshold < 1:
        raise ValueOutOfRange(f"threshold must be >= 1, got {threshold}")
    class_ids = list(class_ids)
    if not class_ids:
        raise ValueOutOfRange("empty class set")
    pred_labels = np.asarray(pred_labels, dtype=np.int64)
    counts = np.bincount(pred_labels, minlength=max(class_ids) + 1) if pred_labels.size \
        else np.zeros(max(class_ids) + 1, dtype=np.int64)
    identified = sum(1 for c in class_ids if counts[c] >= threshold)
    return identified / len(class_ids)


def tda(tract: np.ndarray, atlas_tract: np.ndarray) -> float:
    """Mean over tract streamlines of their minimum MDF to the atlas tract.
    Both are (n, m, 3) resampled arrays."""
    tract = np.asarray(tract, dtype=np.float64)
    atlas_tract = np.asarray(atlas_tract, dtype=np.float64)
    if tract.ndim != 3 or tract.shape[0] == 0:
        raise EmptyTract("tract has no streamlines")
    if atlas_tract.ndim != 3 or atlas_tract.shape[0] == 0:
        raise EmptyAtlasTract("atlas tract has no streamlines")
    mins = [mdf_to_many(s, atlas_tract).min() for s in tract]
    return float(np.mean(mins))


# --- voxel overlap -------------------------------------------------------

@dataclass
class VoxelGrid:
    origin: np.ndarray      # mm, lower corner
    voxel_size: float       # mm, isotropic
    dims: tuple[int, int, int]
    counts: np.ndarray      # per-voxel count of distinct visiting streamlines


def _dense_points(streamline: np.ndarray, step: float) -> np.ndarray:
    seg = np.linalg.norm(np.diff(streamline, axis=0), axis=1)
    total = float(seg.sum())
    if total == 0.0:
        return streamline[:1]
    arc = np.concatenate([[0.0], np.cumsum(seg)])
    n = max(int(np.ceil(total / step)) + 1, 2)
    target = np.linspace(0.0, total, n)
    return np.column_stack([np.interp(target, arc, streamline[:, i]) for i in range(3)])


def voxelize(streamlines, voxel_size: float, bounds=None) -> VoxelGrid:
    """Count, per voxel, how many distinct streamlines enter it. Each
    streamline is densely sampled at voxel_size/4 along its arc length and
    increments a voxel at most once.

    ``bounds`` is (lo, hi) corner pair in mm; computed from the data (with
    one voxel of margin) when omitted.
    """
    if voxel_size <= 0:
        raise ValueOutOfRange(f"voxel_size must be > 0, got {voxel_size}")
    streamlines = [np.asarray(s, dtype=np.float64) for s in streamlines]
    if bounds is None:
        if not streamlines:
            raise DegenerateBounds("cannot infer bounds from an empty tract")
        allpts = np.concatenate(streamlines)
        lo = allpts.min(axis=0) - voxel_size
        hi = allpts.max(axis=0) + voxel_size
    else:
        lo = np.asarray(bounds[0], dtype=np.float64)
        hi = np.asarray(bounds[1], dtype=np.float64)
    if np.any(hi <= lo):
        raise DegenerateBounds(f"bounds {lo} .. {hi} are degenerate")
    dims = tuple(int(np.ceil((hi[i] - lo[i]) / voxel_size)) for i in range(3))
    counts = np.zeros(dims, dtype=np.int64)
    for s in streamlines:
        pts = _dense_points(s, voxel_size / 4.0)
        idx = np.floor((pts - lo) / voxel_size).astype(np.int64)
        inside = np.all((idx >= 0) & (idx < np.array(dims)), axis=1)
        idx = np.unique(idx[inside], axis=0)
        counts[idx[:, 0], idx[:, 1], idx[:, 2]] += 1
    return VoxelGrid(origin=lo, voxel_size=float(voxel_size), dims=dims, counts=counts)


def wdice(g1: VoxelGrid, g2: VoxelGrid) -> float:
    """Weighted Dice: per-grid visitation weights w_v = count_v / total,
    scored as (sum_{common} w1 + sum_{common} w2) / (sum w1 + sum w2)."""
    if g1.dims != g2.dims or g1.voxel_size != g2.voxel_size \
            or not np.allclose(g1.origin, g2.origin):
        raise GridMismatch("grids differ in origin, voxel size, or dims")
    t1, t2 = g1.counts.sum(), g2.counts.sum()
    if t1 == 0 or t2 == 0:
        raise EmptyGrid("cannot score an empty grid")
    w1 = g1.counts / t1
    w2 = g2.counts / t2
    common = (g1.counts > 0) & (g2.counts > 0)
    return float((w1[common].sum() + w2[common].sum()) / (w1.sum() + w2.sum()))


# --- report --------------------------------------------------------------

def classification_report(truth, pred, class_count: int) -> dict:
    cm = confusion_matrix(truth, pred, class_count)
    return {"accuracy": accuracy(cm), "macro_f1": macro_f1(cm),
            "samples": int(cm.sum())}


def tract_report(pred_labels, resampled, atlas_resampled, atlas_labels,
                 class_ids, class_names=None, threshold: int = 50) -> list[dict]:
    """Per-tract rows (tract, count, identified, tda) plus a summary row.
    TDA averages only over identified tracts; empty atlas tracts are
    skipped with a warning."""
    pred_labels = np.asarray(pred_labels, dtype=np.int64)
    atlas_labels = np.asarray(atlas_labels, dtype=np.int64)
    rows = []
    tdas = []
    identified_n = 0
    for c in class_ids:
        name = (class_names or {}).get(c, str(c))
        count = int((pred_labels == c).sum())
        identified = count >= threshold
        row = {"tract": name, "class_id": int(c), "count": count,
               "identified": identified, "tda": ""}
        if identified:
            identified_n += 1
            atlas_tract = atlas_resampled[atlas_labels == c]
            if atlas_tract.shape[0] == 0:
                warnings.warn(f"atlas tract {name} is empty; skipping TDA")
            else:
                d = tda(resampled[pred_labels == c], atlas_tract)
                row["tda"] = d
                tdas.append(d)
        rows.append(row)
    rows.append({
        "tract": "SUMMARY", "class_id": "",
        "count": int(pred_labels.size),
        "identified": f"TIR={identified_n / len(list(class_ids)):.4f}",
        "tda": float(np.mean(tdas)) if tdas else "",
    })
    return rows


def rows_to_csv(rows: list[dict]) -> str:
    if not rows:
        return ""
    buf = _io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0].keys()), lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()
