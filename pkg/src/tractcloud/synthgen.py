"""Synthetic labeled tractography: jittered Bezier bundles plus a random
"other" class, standing in for a real labeled atlas at desk scale.

Every streamline is emitted with a random point-order flip so downstream
code must honor the forward/reverse equivalence of streamlines.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidSpec, ParseError, UnknownKey
from .geometry import (
    Tractogram,
    TransformRanges,
    apply_transform,
    centroid,
    resample,
    sample_transform,
)


def bezier(control_points: np.ndarray, ts: np.ndarray) -> np.ndarray:
    """de Casteljau evaluation of an arbitrary-degree Bezier curve."""
    pts = np.asarray(control_points, dtype=np.float64)
    layers = np.broadcast_to(pts[None, :, :], (len(ts), *pts.shape)).copy()
    t = np.asarray(ts, dtype=np.float64)[:, None, None]
    while layers.shape[1] > 1:
        layers = (1 - t) * layers[:, :-1, :] + t * layers[:, 1:, :]
    return layers[:, 0, :]


@dataclass
class BundlePrototype:
    control_points: np.ndarray  # (p >= 4, 3) mm
    count: int = 200
    radial_sigma: float = 2.0
    endpoint_sigma: float = 1.5

    def __post_init__(self):
        self.control_points = np.asarray(self.control_points, dtype=np.float64)
        if self.control_points.ndim != 2 or self.control_points.shape[0] < 4 \
                or self.control_points.shape[1] != 3:
            raise InvalidSpec(f"bundle needs >= 4 control points, got shape "
                              f"{self.control_points.shape}")
        if self.count < 1:
            raise InvalidSpec(f"bundle count must be >= 1, got {self.count}")
        if self.radial_sigma < 0 or self.endpoint_sigma < 0:
            raise InvalidSpec("jitter sigmas must be >= 0")


@dataclass
class SyntheticAtlasSpec:
    bundles: list[BundlePrototype]
    outlier_fraction: float = 0.0
    bbox: tuple[tuple[float, float, float], tuple[float, float, float]] = \
        ((-70.0, -70.0, -70.0), (70.0, 70.0, 70.0))
    seed: int = 0
    m: int = 15
    curve_samples: int = 60
    class_names: dict[int, str] = field(default_factory=dict)

    def __post_init__(self):
        if not self.bundles:
            raise InvalidSpec("spec needs at least one bundle")
        if not (0.0 <= self.outlier_fraction < 1.0):
            raise InvalidSpec(f"outlier_fraction must be in [0, 1), got "
                              f"{self.outlier_fraction}")
        lo, hi = np.asarray(self.bbox[0]), np.asarray(self.bbox[1])
        if np.any(hi <= lo):
            raise InvalidSpec("bbox upper corner must exceed lower corner")
        if not self.class_names:
            self.class_names = {i: f"bundle_{i:02d}" for i in range(len(self.bundles))}
            if self.outlier_fraction > 0:
                self.class_names[len(self.bundles)] = "other"

    @property
    def class_count(self) -> int:
        return len(self.bundles) + (1 if self.outlier_fraction > 0 else 0)

    def outlier_count(self) -> int:
        total_bundled = sum(b.count for b in self.bundles)
        f = self.outlier_fraction
        return int(round(f / (1.0 - f) * total_bundled)) if f > 0 else 0


def _bundle_streamlines(proto: BundlePrototype, m: int, curve_samples: int,
                        rng: np.random.Generator) -> list[np.ndarray]:
    ts = np.linspace(0.0, 1.0, curve_samples)
    curve = bezier(proto.control_points, ts)
    u = ts[:, None]
    out = []
    for _ in range(proto.count):
        base = rng.normal(0.0, proto.radial_sigma, size=3)
        e0 = rng.normal(0.0, proto.endpoint_sigma, size=3)
        e1 = rng.normal(0.0, proto.endpoint_sigma, size=3)
        pts = curve + base + (1 - u) * e0 + u * e1
        s = resample(pts, m)
        if rng.random() < 0.5:
            s = s[::-1].copy()
        out.append(s)
    return out


def _outlier_streamlines(count: int, bbox, m: int, curve_samples: int,
                         rng: np.random.Generator) -> list[np.ndarray]:
    lo = np.asarray(bbox[0], dtype=np.float64)
    hi = np.asarray(bbox[1], dtype=np.float64)
    ts = np.linspace(0.0, 1.0, curve_samples)
    out = []
    for _ in range(count):
        ctrl = rng.uniform(lo, hi, size=(4, 3))
        s = resample(bezier(ctrl, ts), m)
        if rng.random() < 0.5:
            s = s[::-1].copy()
        out.append(s)
    return out


def generate_atlas(spec: SyntheticAtlasSpec):
    """Build the labeled synthetic atlas; returns (Tractogram, labels,
    class_names). Bundle-major ordering, deterministic given spec.seed."""
    streamlines: list[np.ndarray] = []
    labels: list[int] = []
    for bi, proto in enumerate(spec.bundles):
        rng = np.random.default_rng(np.random.SeedSequence((spec.seed, bi)))
        ss = _bundle_streamlines(proto, spec.m, spec.curve_samples, rng)
        streamlines.extend(ss)
        labels.extend([bi] * len(ss))
    n_out = spec.outlier_count()
    if n_out:
        rng = np.random.default_rng(np.random.SeedSequence((spec.seed, len(spec.bundles))))
        ss = _outlier_streamlines(n_out, spec.bbox, spec.m, spec.curve_samples, rng)
        streamlines.extend(ss)
        labels.extend([len(spec.bundles)] * len(ss))
    return Tractogram(streamlines), np.asarray(labels, dtype=np.int64), dict(spec.class_names)


def generate_subject(atlas: Tractogram, labels: np.ndarray,
                     ranges: TransformRanges, rng: np.random.Generator,
                     noise_sigma: float = 0.5):
    """One synthetic subject: a single sampled affine (pivoting about the
    atlas centroid) applied to every streamline, plus per-point Gaussian
    noise. Labels carry over unchanged."""
    transform = sample_transform(ranges, rng)
    pivot = centroid(atlas)
    out = []
    for s in atlas.streamlines:
        pts = apply_transform(transform, s, pivot)
        if noise_sigma > 0:
            pts = pts + rng.normal(0.0, noise_sigma, size=pts.shape)
        out.append(pts)
    return Tractogram(out), np.asarray(labels, dtype=np.int64).copy(), transform


# --- demo spec -----------------------------------------------------------

_DEMO_CURVES = [
    # left-right arc over the top
    [(-60, 0, 30), (-20, 0, 62), (20, 0, 62), (60, 0, 30)],
    # anterior-posterior arcs, left and right
    [(-42, -60, 0), (-42, -20, 28), (-42, 20, 28), (-42, 60, 0)],
    [(42, -60, 0), (42, -20, 28), (42, 20, 28), (42, 60, 0)],
    # superior-inferior columns, left and right
    [(-28, 12, -52), (-34, 2, -18), (-28, -6, 18), (-28, 12, 52)],
    [(28, 12, -52), (34, 2, -18), (28, -6, 18), (28, 12, 52)],
    # frontal hook
    [(-8, 64, -28), (18, 70, -4), (18, 52, 22), (-8, 36, 34)],
    # posterior diagonal
    [(-50, -50, -20), (-16, -58, 4), (18, -46, 22), (52, -30, 40)],
    # bottom left-right arc
    [(-55, -10, -42), (-20, -22, -16), (20, -22, -16), (55, -10, -42)],
]


def default_demo_spec(streamlines_per_class: int = 200, seed: int = 7,
                      m: int = 15) -> SyntheticAtlasSpec:
    """8 separable bundles plus an equally sized 'other' class."""
    bundles = [BundlePrototype(np.array(c, dtype=np.float64),
                               count=streamlines_per_class)
               for c in _DEMO_CURVES]
    total = streamlines_per_class * len(bundles)
    frac = streamlines_per_class / (total + streamlines_per_class)
    return SyntheticAtlasSpec(bundles=bundles, outlier_fraction=frac,
                              seed=seed, m=m)


# --- spec file -----------------------------------------------------------

def _parse_points(text: str) -> np.ndarray:
    triples = []
    for part in text.split(";"):
        part = part.strip()
        if not part:
            continue
        vals = [v for v in part.replace(",", " ").split() if v]
        if len(vals) != 3:
            raise ParseError(f"control point needs 3 coordinates: {part!r}")
        triples.append([float(v) for v in vals])
    return np.asarray(triples, dtype=np.float64)


def parse_spec(path) -> SyntheticAtlasSpec:
    """Spec file: ``key = value`` lines with repeated ``bundle.<i>.*``
    groups; '#' starts a comment."""
    top: dict[str, str] = {}
    per_bundle: dict[int, dict[str, str]] = {}
    with open(path, "r") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParseError(f"{path}:{lineno}: expected 'key = value'")
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if key.startswith("bundle."):
                parts = key.split(".")
                if len(parts) != 3:
                    raise UnknownKey(f"{path}:{lineno}: bad bundle key {key!r}")
                try:
                    bi = int(parts[1])
                except ValueError:
                    raise ParseError(f"{path}:{lineno}: bad bundle index {parts[1]!r}") from None
                if parts[2] not in ("control_points", "count", "radial_sigma",
                                    "endpoint_sigma", "name"):
                    raise UnknownKey(f"{path}:{lineno}: unknown bundle key {parts[2]!r}")
                per_bundle.setdefault(bi, {})[parts[2]] = value
            elif key in ("seed", "m", "curve_samples", "outlier_fraction", "bbox"):
                top[key] = value
            else:
                raise UnknownKey(f"{path}:{lineno}: unknown key {key!r}")

    if not per_bundle:
        raise InvalidSpec(f"{path}: no bundles defined")
    indices = sorted(per_bundle)
    if indices != list(range(len(indices))):
        raise InvalidSpec(f"{path}: bundle indices must be dense from 0, got {indices}")

    bundles, names = [], {}
    for bi in indices:
        group = per_bundle[bi]
        if "control_points" not in group:
            raise InvalidSpec(f"{path}: bundle.{bi} has no control_points")
        bundles.append(BundlePrototype(
            control_points=_parse_points(group["control_points"]),
            count=int(group.get("count", 200)),
            radial_sigma=float(group.get("radial_sigma", 2.0)),
            endpoint_sigma=float(group.get("endpoint_sigma", 1.5)),
        ))
        names[bi] = group.get("name", f"bundle_{bi:02d}")

    kwargs: dict = {"bundles": bundles}
    if "seed" in top:
        kwargs["seed"] = int(top["seed"])
    if "m" in top:
        kwargs["m"] = int(top["m"])
    if "curve_samples" in top:
        kwargs["curve_samples"] = int(top["curve_samples"])
    if "outlier_fraction" in top:
        kwargs["outlier_fraction"] = float(top["outlier_fraction"])
    if "bbox" in top:
        vals = [float(v) for v in top["bbox"].replace(",", " ").split()]
        if len(vals) != 6:
            raise ParseError(f"{path}: bbox needs 6 numbers, got {len(vals)}")
        kwargs["bbox"] = (tuple(vals[:3]), tuple(vals[3:]))
    spec = SyntheticAtlasSpec(**kwargs)
    if float(spec.outlier_fraction) > 0:
        names[len(bundles)] = "other"
    spec.class_names = names
    return spec
