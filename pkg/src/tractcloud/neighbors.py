"""Exact k-nearest-streamline search under MDF and global context sampling.

The pruned path relies on the lower bound ||centroid(a) - centroid(b)|| <=
mdf(a, b) (Jensen on the point-mean; flipping does not move the centroid),
so candidates whose centroid distance already exceeds the current k-th best
MDF can be skipped without evaluating them.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import BadMagic, IndexOutOfRange, TruncatedFile, ValueOutOfRange
from .geometry import mdf_to_many, streamline_centroids

_CHUNK = 64  # candidates evaluated per vectorized block in the pruned path


@dataclass
class ContextSet:
    """Neighbor context for one query streamline: the k MDF-nearest
    streamline indices (ascending distance) plus w random global indices."""

    local_ids: np.ndarray
    global_ids: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))


def _order_by_distance(dists: np.ndarray, ids: np.ndarray, k: int) -> np.ndarray:
    order = np.argsort(dists, kind="stable")  # ids are ascending, so stable sort ties by index
    return ids[order[:k]]


def knn_brute(query_id: int, resampled: np.ndarray, k: int,
              include_self: bool = False) -> np.ndarray:
    """Indices of the k streamlines nearest to the query under MDF.

    Ties break toward the lower index; k larger than available simply
    returns everything.
    """
    n = resampled.shape[0]
    if not (0 <= query_id < n):
        raise IndexOutOfRange(f"query_id {query_id} out of range for n={n}")
    if k < 0:
        raise ValueOutOfRange(f"k must be >= 0, got {k}")
    if k == 0:
        return np.zeros(0, dtype=np.int64)
    dists = mdf_to_many(resampled[query_id], resampled)
    ids = np.arange(n, dtype=np.int64)
    if not include_self:
        keep = ids != query_id
        dists, ids = dists[keep], ids[keep]
    return _order_by_distance(dists, ids, k)


def knn_pruned(query_id: int, resampled: np.ndarray, k: int,
               centroids: np.ndarray | None = None,
               include_self: bool = False,
               stats: dict | None = None) -> np.ndarray:
    """Same result as knn_brute, skipping candidates ruled out by the
    centroid-distance lower bound. ``stats`` (if given) receives the count
    of full MDF evaluations under key 'evaluated' and the candidate total
    under 'candidates'."""
    n = resampled.shape[0]
    if not (0 <= query_id < n):
        raise IndexOutOfRange(f"query_id {query_id} out of range for n={n}")
    if k < 0:
        raise ValueOutOfRange(f"k must be >= 0, got {k}")
    if centroids is None:
        centroids = streamline_centroids(resampled)
    ids = np.arange(n, dtype=np.int64)
    if not include_self:
        ids = ids[ids != query_id]
    if stats is not None:
        stats["candidates"] = stats.get("candidates", 0) + len(ids)
        stats.setdefault("evaluated", 0)
    if k == 0 or len(ids) == 0:
        return np.zeros(0, dtype=np.int64)

    bounds = np.linalg.norm(centroids[ids] - centroids[query_id], axis=1)
    by_bound = ids[np.argsort(bounds, kind="stable")]
    bounds = np.sort(bounds, kind="stable")

    best_d = np.zeros(0)
    best_i = np.zeros(0, dtype=np.int64)
    kth = np.inf
    for start in range(0, len(by_bound), _CHUNK):
        if bounds[start] > kth:
            break  # every remaining candidate has mdf >= bound > kth best
        cand = by_bound[start:start + _CHUNK]
        d = mdf_to_many(resampled[query_id], resampled[cand])
        if stats is not None:
            stats["evaluated"] += len(cand)
        best_d = np.concatenate([best_d, d])
        best_i = np.concatenate([best_i, cand])
        if len(best_d) >= k:
            kth = np.partition(best_d, k - 1)[k - 1]

    order = np.lexsort((best_i, best_d))[:k]
    return best_i[order]


def knn_all(resampled: np.ndarray, k: int, include_self: bool = False,
            stats: dict | None = None) -> np.ndarray:
    """Pruned kNN for every streamline; returns (n, min(k, n_avail)) ids."""
    n = resampled.shape[0]
    centroids = streamline_centroids(resampled)
    k_eff = min(k, n if include_self else n - 1)
    out = np.zeros((n, max(k_eff, 0)), dtype=np.int64)
    for i in range(n):
        out[i] = knn_pruned(i, resampled, k_eff, centroids, include_self, stats)
    return out


def sample_global(n: int, w: int, rng: np.random.Generator) -> np.ndarray:
    """w streamline indices, uniform without replacement (all of them if
    w >= n)."""
    if w < 0:
        raise ValueOutOfRange(f"w must be >= 0, got {w}")
    return rng.choice(n, size=min(w, n), replace=False).astype(np.int64)


def derive_seed(master_seed: int, brain_id: str, epoch: int) -> int:
    """Stable per-(brain, epoch) seed so sampling is independent of worker
    count and scheduling."""
    digest = hashlib.sha256(f"{master_seed}|{brain_id}|{epoch}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


# --- neighbor cache file ("TCNN") ---------------------------------------

CACHE_MAGIC = b"TCNN"


def write_neighbor_cache(ids: np.ndarray, path):
    ids = np.asarray(ids, dtype=np.int32)
    with open(path, "wb") as f:
        f.write(CACHE_MAGIC)
        f.write(struct.pack("<ii", ids.shape[0], ids.shape[1]))
        f.write(ids.astype("<i4").tobytes())


def read_neighbor_cache(path) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != CACHE_MAGIC:
        raise BadMagic(f"{path}: bad neighbor-cache magic {data[:4]!r}")
    if len(data) < 12:
        raise TruncatedFile(f"{path}: missing cache dimensions")
    n, k = struct.unpack_from("<ii", data, 4)
    need = 12 + 4 * n * k
    if len(data) != need:
        raise TruncatedFile(f"{path}: {len(data)} bytes, expected {need}")
    return np.frombuffer(data, dtype="<i4", count=n * k, offset=12).reshape(n, k).astype(np.int64)
