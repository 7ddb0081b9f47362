"""Streamline classifier: context feature layer, PointNet-style backbone,
cross-entropy loss, hand-derived gradients, Adam, model serialization.

Layout of one forward pass for input X of shape (B, m, c, S), c = 6 with
context (3 in single-streamline baseline mode):

  shared FC + ReLU over every (point, slot) column -> (B, m, S, h)
  max over the S context slots                     -> (B, m, h)
  shared per-point FC + ReLU stack                 -> (B, m, d_last)
  max over the m points                            -> (B, d_last)
  FC head (ReLU on hidden layers)                  -> (B, C) logits

Both max-pools route the gradient to the first argmax (ties break toward
the lowest index), which keeps the backward pass deterministic. Parameters
are stored float32; all matmuls and reductions run in float64.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import features, geometry, neighbors
from .errors import (
    BadMagic,
    DimMismatch,
    EmptyDataset,
    ModelConfigMismatch,
    OutOfRangeLabel,
    TruncatedFile,
    VersionMismatch,
)
from .io import ConfigFile

MODEL_MAGIC = b"TCM1"
MODEL_VERSION = 1


@dataclass
class DenseLayer:
    weights: np.ndarray  # (out, in)
    bias: np.ndarray     # (out,)


@dataclass
class Model:
    localglobal: DenseLayer
    backbone: list[DenseLayer]
    head: list[DenseLayer]
    m: int
    k: int
    w: int
    h: int
    class_names: dict[int, str]
    centroid: np.ndarray = field(default_factory=lambda: np.zeros(3))
    include_self: bool = False
    global_per_streamline: bool = False
    flip_align_context: bool = False

    @property
    def class_count(self) -> int:
        return self.head[-1].weights.shape[0]

    @property
    def input_channels(self) -> int:
        return self.localglobal.weights.shape[1]

    def layers(self) -> list[DenseLayer]:
        return [self.localglobal, *self.backbone, *self.head]

    def parameters(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers():
            out.append(layer.weights)
            out.append(layer.bias)
        return out

    def set_parameters(self, params: list[np.ndarray]):
        for layer, w, b in zip(self.layers(), params[0::2], params[1::2]):
            layer.weights = w
            layer.bias = b

    def check_config(self, config: ConfigFile):
        if (self.m, self.k, self.w, self.h) != (config.m, config.k, config.w, config.h):
            raise ModelConfigMismatch(
                f"model (m={self.m}, k={self.k}, w={self.w}, h={self.h}) vs "
                f"config (m={config.m}, k={config.k}, w={config.w}, h={config.h})")


def init_model(config: ConfigFile, class_count: int,
               class_names: dict[int, str] | None = None,
               centroid=None, rng: np.random.Generator | None = None,
               dtype=np.float32) -> Model:
    """He-uniform initialized model; baseline mode (k = w = 0) takes the
    3-channel single-streamline input."""
    if class_count < 2:
        raise DimMismatch(f"need at least 2 classes, got {class_count}")
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    cin = 6 if config.k + config.w > 0 else 3

    def dense(n_out, n_in):
        limit = np.sqrt(6.0 / n_in)
        w = rng.uniform(-limit, limit, size=(n_out, n_in)).astype(dtype)
        return DenseLayer(w, np.zeros(n_out, dtype=dtype))

    lg = dense(config.h, cin)
    backbone, prev = [], config.h
    for d in config.backbone_dims:
        backbone.append(dense(d, prev))
        prev = d
    head = []
    for d in config.head_dims:
        head.append(dense(d, prev))
        prev = d
    head.append(dense(class_count, prev))
    names = dict(class_names) if class_names else {i: f"class_{i:02d}" for i in range(class_count)}
    return Model(
        localglobal=lg, backbone=backbone, head=head,
        m=config.m, k=config.k, w=config.w, h=config.h,
        class_names=names,
        centroid=np.zeros(3) if centroid is None else np.asarray(centroid, dtype=np.float64),
        include_self=config.include_self,
        global_per_streamline=config.global_per_streamline,
        flip_align_context=config.flip_align_context,
    )


# --- forward / backward --------------------------------------------------

def localglobal_forward(t_i: np.ndarray, layer: DenseLayer) -> np.ndarray:
    """Shared FC + ReLU over each (point, slot) column, then max over slots.

    Accepts a single (m, c, S) input or a (B, m, c, S) batch; returns
    (m, h) or (B, m, h) respectively.
    """
    single = t_i.ndim == 3
    X = t_i[None] if single else t_i
    if X.shape[2] != layer.weights.shape[1]:
        raise DimMismatch(
            f"input has {X.shape[2]} channels, layer expects {layer.weights.shape[1]}")
    Xt = X.transpose(0, 1, 3, 2).astype(np.float64)  # (B, m, S, c)
    A = np.maximum(Xt @ layer.weights.T.astype(np.float64) + layer.bias.astype(np.float64), 0.0)
    R = A.max(axis=2)
    return R[0] if single else R


def forward(model: Model, X: np.ndarray, cache: dict | None = None) -> np.ndarray:
    """Logits for a (B, m, c, S) batch. Pass a dict as ``cache`` to retain
    intermediates for backward()."""
    if X.ndim != 4:
        raise DimMismatch(f"expected (B, m, c, S) input, got shape {X.shape}")
    if X.shape[2] != model.input_channels:
        raise DimMismatch(
            f"input has {X.shape[2]} channels, model expects {model.input_channels}")
    Xt = X.transpose(0, 1, 3, 2).astype(np.float64)  # (B, m, S, c)
    W0 = model.localglobal.weights.astype(np.float64)
    b0 = model.localglobal.bias.astype(np.float64)
    A0 = np.maximum(Xt @ W0.T + b0, 0.0)  # (B, m, S, h)
    slot_idx = np.argmax(A0, axis=2)      # first max -> lowest index on ties
    H = np.take_along_axis(A0, slot_idx[:, :, None, :], axis=2)[:, :, 0, :]  # (B, m, h)

    acts = [H]
    for layer in model.backbone:
        H = np.maximum(H @ layer.weights.T.astype(np.float64) + layer.bias.astype(np.float64), 0.0)
        acts.append(H)
    point_idx = np.argmax(H, axis=1)  # (B, d)
    D = np.take_along_axis(H, point_idx[:, None, :], axis=1)[:, 0, :]  # (B, d)

    head_acts = [D]
    G = D
    for layer in model.head[:-1]:
        G = np.maximum(G @ layer.weights.T.astype(np.float64) + layer.bias.astype(np.float64), 0.0)
        head_acts.append(G)
    last = model.head[-1]
    logits = G @ last.weights.T.astype(np.float64) + last.bias.astype(np.float64)

    if cache is not None:
        cache.update(Xt=Xt, A0=A0, slot_idx=slot_idx, acts=acts,
                     point_idx=point_idx, head_acts=head_acts, logits=logits)
    return logits


def cross_entropy(logits: np.ndarray, label: int) -> float:
    """-log softmax(logits)[label], max-subtracted for stability."""
    logits = np.asarray(logits, dtype=np.float64).ravel()
    if not (0 <= label < logits.shape[0]):
        raise OutOfRangeLabel(f"label {label} outside [0, {logits.shape[0]})")
    z = logits - logits.max()
    return float(np.log(np.exp(z).sum()) - z[label])


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def batch_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """(mean loss, per-sample gradient already divided by B)."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise OutOfRangeLabel(f"label outside [0, {logits.shape[1]})")
    B = logits.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    logZ = np.log(np.exp(z).sum(axis=1))
    loss = float((logZ - z[np.arange(B), labels]).mean())
    dlogits = softmax(logits)
    dlogits[np.arange(B), labels] -= 1.0
    return loss, dlogits / B


def backward(model: Model, cache: dict, dlogits: np.ndarray,
             grads: list[np.ndarray] | None = None) -> list[np.ndarray]:
    """Gradients of the (already-scaled) logit cotangent w.r.t. every
    parameter, ordered like model.parameters(). Pass ``grads`` to
    accumulate across sub-batches."""
    if grads is None:
        grads = [np.zeros(p.shape, dtype=np.float64) for p in model.parameters()]
    n_lg, n_bb = 2, 2 * len(model.backbone)

    # head
    d = dlogits
    head_acts = cache["head_acts"]
    for li in range(len(model.head) - 1, -1, -1):
        layer = model.head[li]
        inp = head_acts[li]
        gi = n_lg + n_bb + 2 * li
        grads[gi] += d.T @ inp
        grads[gi + 1] += d.sum(axis=0)
        d = d @ layer.weights.astype(np.float64)
        if li > 0:
            d = d * (inp > 0)

    # unpool over points
    acts = cache["acts"]
    H_last = acts[-1]
    dH = np.zeros_like(H_last)
    np.put_along_axis(dH, cache["point_idx"][:, None, :], d[:, None, :], axis=1)

    # backbone (shared per-point FC stack)
    d = dH
    for li in range(len(model.backbone) - 1, -1, -1):
        layer = model.backbone[li]
        inp = acts[li]
        d = d * (acts[li + 1] > 0)
        gi = n_lg + 2 * li
        dout = d.reshape(-1, d.shape[-1])
        grads[gi] += dout.T @ inp.reshape(-1, inp.shape[-1])
        grads[gi + 1] += dout.sum(axis=0)
        d = d @ layer.weights.astype(np.float64)

    # unpool over slots, then the shared context layer
    A0 = cache["A0"]
    dA0 = np.zeros_like(A0)
    np.put_along_axis(dA0, cache["slot_idx"][:, :, None, :], d[:, :, None, :], axis=2)
    dZ0 = dA0 * (A0 > 0)
    Xt = cache["Xt"]
    dz = dZ0.reshape(-1, dZ0.shape[-1])
    grads[0] += dz.T @ Xt.reshape(-1, Xt.shape[-1])
    grads[1] += dz.sum(axis=0)
    return grads


def loss_and_grads(model: Model, X: np.ndarray, labels: np.ndarray):
    """Convenience: mean batch loss plus full parameter gradients."""
    cache: dict = {}
    logits = forward(model, X, cache)
    loss, dlogits = batch_cross_entropy(logits, labels)
    return loss, backward(model, cache, dlogits), logits


# --- Adam ---------------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @staticmethod
    def for_params(params: list[np.ndarray], lr: float = 0.001) -> "AdamState":
        return AdamState(
            lr=lr,
            m=[np.zeros(p.shape, dtype=np.float64) for p in params],
            v=[np.zeros(p.shape, dtype=np.float64) for p in params],
        )


def adam_step(state: AdamState, params: list[np.ndarray],
              grads: list[np.ndarray]) -> list[np.ndarray]:
    """Standard bias-corrected Adam update; returns the updated params
    (cast back to each parameter's storage dtype)."""
    state.step += 1
    t = state.step
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        g = np.asarray(g, dtype=np.float64)
        state.m[i] = state.beta1 * state.m[i] + (1 - state.beta1) * g
        state.v[i] = state.beta2 * state.v[i] + (1 - state.beta2) * g * g
        m_hat = state.m[i] / (1 - state.beta1 ** t)
        v_hat = state.v[i] / (1 - state.beta2 ** t)
        new = p.astype(np.float64) - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        out.append(new.astype(p.dtype))
    return out


# --- training -----------------------------------------------------------

@dataclass
class Brain:
    """One training/inference subject, already resampled (and centered)."""

    brain_id: str
    resampled: np.ndarray              # (n, m, 3)
    labels: np.ndarray | None = None   # (n,)
    local_ids: np.ndarray | None = None  # (n, k_eff) neighbor table

    @property
    def n(self) -> int:
        return self.resampled.shape[0]


def prepare_brain(brain: Brain, config: ConfigFile):
    """Fill the neighbor table if the model uses local context."""
    if config.k > 0 and brain.local_ids is None:
        brain.local_ids = neighbors.knn_all(
            brain.resampled, config.k, include_self=config.include_self)


def _global_ids_for(brain: Brain, config: ConfigFile, master_seed: int, epoch: int):
    seed = neighbors.derive_seed(master_seed, brain.brain_id, epoch)
    rng = np.random.default_rng(seed)
    if config.global_per_streamline:
        return np.stack([neighbors.sample_global(brain.n, config.w, rng)
                         for _ in range(brain.n)])
    return neighbors.sample_global(brain.n, config.w, rng)


def _eval_split(model: Model, brains: list[Brain], entries, config: ConfigFile,
                master_seed: int, epoch: int, global_cache: dict):
    """Loss/accuracy over (brain_idx, stream_idx) entries, forward only."""
    total_loss, correct, count = 0.0, 0, 0
    by_brain: dict[int, list[int]] = {}
    for bi, si in entries:
        by_brain.setdefault(bi, []).append(si)
    for bi, sids in by_brain.items():
        brain = brains[bi]
        gids = global_cache[bi]
        sids = np.asarray(sids, dtype=np.int64)
        for start in range(0, len(sids), config.batch_size):
            chunk = sids[start:start + config.batch_size]
            X = features.build_batch(chunk, brain.resampled, brain.local_ids,
                                     gids if np.ndim(gids) == 1 else gids[chunk],
                                     config.flip_align_context)
            logits = forward(model, X)
            loss, _ = batch_cross_entropy(logits, brain.labels[chunk])
            total_loss += loss * len(chunk)
            correct += int((logits.argmax(axis=1) == brain.labels[chunk]).sum())
            count += len(chunk)
    return (total_loss / count, correct / count) if count else (float("nan"), float("nan"))


def train(brains: list[Brain], config: ConfigFile,
          class_names: dict[int, str], reference_centroid=None,
          val_brains: list[Brain] | None = None):
    """Train a classifier; returns (model, per-epoch metric rows).

    Deterministic given config.seed (single worker). Metric rows are dicts
    with epoch / split / loss / accuracy.
    """
    if not brains or all(b.n == 0 for b in brains):
        raise EmptyDataset("no training streamlines")
    C = len(class_names)
    for b in brains:
        if b.labels is None:
            raise EmptyDataset(f"brain {b.brain_id} has no labels")
        if b.labels.size and (b.labels.min() < 0 or b.labels.max() >= C):
            raise OutOfRangeLabel(f"brain {b.brain_id}: label outside [0, {C})")
        prepare_brain(b, config)

    present = np.zeros(C, dtype=bool)
    for b in brains:
        present[np.unique(b.labels)] = True
    if not present.all():
        missing = np.flatnonzero(~present).tolist()
        warnings.warn(f"classes absent from training data: {missing}")

    master_seed = config.seed
    rng = np.random.default_rng(master_seed)
    model = init_model(config, C, class_names, reference_centroid, rng)
    state = AdamState.for_params(model.parameters(), lr=config.learning_rate)

    all_entries = [(bi, si) for bi, b in enumerate(brains) for si in range(b.n)]
    split_rng = np.random.default_rng(neighbors.derive_seed(master_seed, "val-split", 0))
    if val_brains is None and config.val_fraction > 0:
        perm = split_rng.permutation(len(all_entries))
        n_val = int(round(config.val_fraction * len(all_entries)))
        val_entries = [all_entries[i] for i in perm[:n_val]]
        train_entries = [all_entries[i] for i in perm[n_val:]]
    else:
        train_entries = all_entries
        val_entries = []

    metrics = []
    for epoch in range(config.epochs):
        global_cache = {bi: _global_ids_for(b, config, master_seed, epoch)
                        for bi, b in enumerate(brains)}
        epoch_rng = np.random.default_rng(
            neighbors.derive_seed(master_seed, "shuffle", epoch))
        order = epoch_rng.permutation(len(train_entries))

        running_loss, correct, count = 0.0, 0, 0
        for start in range(0, len(order), config.batch_size):
            batch = [train_entries[i] for i in order[start:start + config.batch_size]]
            B = len(batch)
            by_brain: dict[int, list[int]] = {}
            for bi, si in batch:
                by_brain.setdefault(bi, []).append(si)
            grads = [np.zeros(p.shape, dtype=np.float64) for p in model.parameters()]
            batch_loss = 0.0
            for bi in sorted(by_brain):
                brain = brains[bi]
                sids = np.asarray(by_brain[bi], dtype=np.int64)
                gids = global_cache[bi]
                X = features.build_batch(sids, brain.resampled, brain.local_ids,
                                         gids if np.ndim(gids) == 1 else gids[sids],
                                         config.flip_align_context)
                cache: dict = {}
                logits = forward(model, X, cache)
                y = brain.labels[sids]
                loss, dlogits = batch_cross_entropy(logits, y)
                # rescale from sub-batch mean to full-batch mean
                backward(model, cache, dlogits * (len(sids) / B), grads)
                batch_loss += loss * len(sids)
                correct += int((logits.argmax(axis=1) == y).sum())
            model.set_parameters(adam_step(state, model.parameters(), grads))
            running_loss += batch_loss
            count += B

        metrics.append({"epoch": epoch, "split": "train",
                        "loss": running_loss / max(count, 1),
                        "accuracy": correct / max(count, 1)})
        if val_entries:
            vloss, vacc = _eval_split(model, brains, val_entries, config,
                                      master_seed, epoch, global_cache)
            metrics.append({"epoch": epoch, "split": "val",
                            "loss": vloss, "accuracy": vacc})
        elif val_brains:
            vb = [Brain(b.brain_id, b.resampled, b.labels, b.local_ids) for b in val_brains]
            for b in vb:
                prepare_brain(b, config)
            cacheg = {bi: _global_ids_for(b, config, master_seed, epoch)
                      for bi, b in enumerate(vb)}
            entries = [(bi, si) for bi, b in enumerate(vb) for si in range(b.n)]
            vloss, vacc = _eval_split(model, vb, entries, config,
                                      master_seed, epoch, cacheg)
            metrics.append({"epoch": epoch, "split": "val",
                            "loss": vloss, "accuracy": vacc})
    return model, metrics


def predict(model: Model, tractogram: geometry.Tractogram,
            config: ConfigFile | None = None, seed: int = 0,
            reg_free: bool = True, batch_size: int = 256):
    """Labels and softmax confidences for every streamline.

    The registration-free path first translates the brain onto the model's
    stored atlas centroid. Context sizes truncate gracefully for small
    brains (k caps at n-1, w at n).
    """
    if config is not None:
        model.check_config(config)
    if len(tractogram) == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0)
    resampled = geometry.resample_tractogram(tractogram, model.m)
    if reg_free:
        resampled = geometry.center_resampled(resampled, model.centroid)
    n = resampled.shape[0]

    local_ids = None
    if model.k > 0:
        k_eff = min(model.k, n if model.include_self else n - 1)
        if k_eff > 0:
            local_ids = neighbors.knn_all(resampled, k_eff, model.include_self)
    rng = np.random.default_rng(neighbors.derive_seed(seed, "predict-global", 0))
    if model.global_per_streamline and model.w > 0:
        gids = np.stack([neighbors.sample_global(n, model.w, rng) for _ in range(n)])
    else:
        gids = neighbors.sample_global(n, model.w, rng)

    # a brain too small for any context still predicts in baseline shape
    has_ctx = (local_ids is not None) or (np.size(gids) > 0)
    if model.input_channels == 6 and not has_ctx:
        gids = np.arange(n, dtype=np.int64)[:1]  # self as sole global slot

    labels = np.zeros(n, dtype=np.int64)
    confidence = np.zeros(n, dtype=np.float64)
    for start in range(0, n, batch_size):
        sids = np.arange(start, min(start + batch_size, n), dtype=np.int64)
        X = features.build_batch(sids, resampled, local_ids,
                                 gids if np.ndim(gids) == 1 else gids[sids],
                                 model.flip_align_context)
        probs = softmax(forward(model, X))
        labels[sids] = probs.argmax(axis=1)
        confidence[sids] = probs[np.arange(len(sids)), labels[sids]]
    return labels, confidence


# --- serialization ("TCM1") ----------------------------------------------

def save_model(model: Model, path):
    parts = [MODEL_MAGIC, struct.pack("<i", MODEL_VERSION)]
    flags = (int(model.include_self)
             | int(model.global_per_streamline) << 1
             | int(model.flip_align_context) << 2)
    parts.append(struct.pack("<6iI", model.m, model.k, model.w, model.h,
                             model.class_count, model.input_channels, flags))
    bb = [l.weights.shape[0] for l in model.backbone]
    hd = [l.weights.shape[0] for l in model.head[:-1]]
    parts.append(struct.pack(f"<i{len(bb)}i", len(bb), *bb))
    parts.append(struct.pack(f"<i{len(hd)}i", len(hd), *hd))
    parts.append(np.asarray(model.centroid, dtype="<f8").tobytes())
    parts.append(struct.pack("<i", len(model.class_names)))
    for cid in sorted(model.class_names):
        name = model.class_names[cid].encode("utf-8")
        parts.append(struct.pack("<ii", cid, len(name)))
        parts.append(name)
    for p in model.parameters():
        parts.append(np.asarray(p, dtype="<f4").tobytes())
    with open(path, "wb") as f:
        f.write(b"".join(parts))


def load_model(path) -> Model:
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != MODEL_MAGIC:
        if data[:3] == MODEL_MAGIC[:3]:
            raise VersionMismatch(f"{path}: model magic {data[:4]!r}, expected {MODEL_MAGIC!r}")
        raise BadMagic(f"{path}: not a model file (magic {data[:4]!r})")
    off = 4

    def take(fmt):
        nonlocal off
        size = struct.calcsize(fmt)
        if off + size > len(data):
            raise TruncatedFile(f"{path}: truncated at byte {off}")
        vals = struct.unpack_from(fmt, data, off)
        off += size
        return vals

    (version,) = take("<i")
    if version != MODEL_VERSION:
        raise VersionMismatch(f"{path}: model version {version}, expected {MODEL_VERSION}")
    m, k, w, h, C, cin, flags = take("<6iI")
    (n_bb,) = take("<i")
    bb = list(take(f"<{n_bb}i")) if n_bb else []
    (n_hd,) = take("<i")
    hd = list(take(f"<{n_hd}i")) if n_hd else []
    centroid = np.array(take("<3d"))
    (n_names,) = take("<i")
    names = {}
    for _ in range(n_names):
        cid, ln = take("<ii")
        if off + ln > len(data):
            raise TruncatedFile(f"{path}: truncated class name at byte {off}")
        names[cid] = data[off:off + ln].decode("utf-8")
        off += ln

    def read_tensor(shape):
        nonlocal off
        count = int(np.prod(shape))
        if off + 4 * count > len(data):
            raise TruncatedFile(f"{path}: truncated parameters at byte {off}")
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=off).reshape(shape).copy()
        off += 4 * count
        return arr

    def read_layer(n_out, n_in):
        return DenseLayer(read_tensor((n_out, n_in)), read_tensor((n_out,)))

    lg = read_layer(h, cin)
    backbone, prev = [], h
    for d in bb:
        backbone.append(read_layer(d, prev))
        prev = d
    head = []
    for d in hd:
        head.append(read_layer(d, prev))
        prev = d
    head.append(read_layer(C, prev))
    if off != len(data):
        raise TruncatedFile(f"{path}: {len(data) - off} trailing bytes")
    return Model(
        localglobal=lg, backbone=backbone, head=head, m=m, k=k, w=w, h=h,
        class_names=names, centroid=centroid,
        include_self=bool(flags & 1),
        global_per_streamline=bool(flags & 2),
        flip_align_context=bool(flags & 4),
    )
