"""Construction of the per-streamline context input tensor.

For each query streamline the classifier consumes an (m, 6, k+w) tensor:
channels 0-2 carry the query's own point coordinates (identical across all
context slots), channels 3-5 carry the coordinates of the context
streamline occupying that slot, paired point-by-point. Slots are the k
nearest neighbors (ascending MDF) followed by the w global samples. With
no context at all (k = w = 0) the tensor degenerates to (m, 3, 1): just
the query, matching the single-streamline baseline input.
"""

from __future__ import annotations

import numpy as np

from .errors import IndexOutOfRange, MixedResampling
from .neighbors import ContextSet


def _flip_context(query: np.ndarray, ctx: np.ndarray) -> np.ndarray:
    """Flip each context streamline when the reversed pairing is closer."""
    direct = np.linalg.norm(ctx - query[None], axis=2).mean(axis=1)
    flipped = np.linalg.norm(ctx[:, ::-1] - query[None], axis=2).mean(axis=1)
    out = ctx.copy()
    out[flipped < direct] = ctx[flipped < direct, ::-1]
    return out


def build_input(query: np.ndarray, context: ContextSet, resampled: np.ndarray,
                flip_align_context: bool = False) -> np.ndarray:
    """Assemble the (m, 6, k+w) input for one query streamline."""
    query = np.asarray(query, dtype=np.float64)
    m = query.shape[0]
    if resampled.ndim != 3 or resampled.shape[1] != m:
        raise MixedResampling(
            f"context streamlines have {resampled.shape[1:]} points, query has {m}")
    slot_ids = np.concatenate([context.local_ids, context.global_ids]).astype(np.int64)
    if slot_ids.size and (slot_ids.min() < 0 or slot_ids.max() >= resampled.shape[0]):
        raise IndexOutOfRange(f"context index out of range for n={resampled.shape[0]}")
    if slot_ids.size == 0:
        return query[:, :, None].copy()

    ctx = resampled[slot_ids]  # (S, m, 3)
    if flip_align_context:
        ctx = _flip_context(query, ctx)
    S = ctx.shape[0]
    out = np.empty((m, 6, S), dtype=np.float64)
    out[:, 0:3, :] = np.broadcast_to(query[:, :, None], (m, 3, S))
    out[:, 3:6, :] = ctx.transpose(1, 2, 0)
    return out


def build_batch(query_ids: np.ndarray, resampled: np.ndarray,
                local_ids: np.ndarray | None, global_ids: np.ndarray,
                flip_align_context: bool = False) -> np.ndarray:
    """Vectorized build_input for a batch sharing one tractogram.

    local_ids is the precomputed (n, k) neighbor table (None or k=0 for
    baseline mode), global_ids the (w,) per-brain sample. Returns
    (B, m, 6, k+w), or (B, m, 3, 1) when there is no context.
    """
    query_ids = np.asarray(query_ids, dtype=np.int64)
    queries = resampled[query_ids]  # (B, m, 3)
    B, m, _ = queries.shape
    k = 0 if local_ids is None else local_ids.shape[1]
    w = len(global_ids)
    if k + w == 0:
        return queries[:, :, :, None].copy()

    if k > 0:
        loc = resampled[local_ids[query_ids]]  # (B, k, m, 3)
    else:
        loc = np.zeros((B, 0, m, 3))
    if w > 0:
        glo = np.broadcast_to(resampled[global_ids], (B, w, m, 3))
    else:
        glo = np.zeros((B, 0, m, 3))
    ctx = np.concatenate([loc, glo], axis=1)  # (B, S, m, 3)
    if flip_align_context:
        direct = np.linalg.norm(ctx - queries[:, None], axis=3).mean(axis=2)
        flipped = np.linalg.norm(ctx[:, :, ::-1] - queries[:, None], axis=3).mean(axis=2)
        ctx = np.where((flipped < direct)[:, :, None, None], ctx[:, :, ::-1], ctx)

    S = k + w
    out = np.empty((B, m, 6, S), dtype=np.float64)
    out[:, :, 0:3, :] = queries[:, :, :, None]
    out[:, :, 3:6, :] = ctx.transpose(0, 2, 3, 1)
    return out
