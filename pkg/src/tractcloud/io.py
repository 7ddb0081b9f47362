"""File formats: TrackVis TRK (v2 subset), label files, class names, config.

The TRK subset supported here is version 2, little-endian, no scalars and
no properties. Streamlines are exposed in world (RAS mm) coordinates: TRK
stores voxel-mm, which we map to world via the header's vox_to_ras matrix
(legacy all-zero matrices are treated as identity, i.e. voxel-mm == world).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, fields

import numpy as np

from .errors import (
    BadMagic,
    CountMismatch,
    IoFailure,
    LengthMismatch,
    OutOfRangeLabel,
    ParseError,
    TruncatedStream,
    UnknownKey,
    UnsupportedScalars,
    UnsupportedVersion,
    ValueOutOfRange,
)
from .geometry import Tractogram, TransformRanges

TRK_MAGIC = b"TRACK\x00"
TRK_HEADER_SIZE = 1000

# TrackVis v2 header layout (little-endian, 1000 bytes):
#   id_string[6], dim int16[3], voxel_size f32[3], origin f32[3],
#   n_scalars int16, scalar_name char[10][20], n_properties int16,
#   property_name char[10][20], vox_to_ras f32[4][4], reserved[444],
#   voxel_order[4], pad2[4], image_orientation_patient f32[6], pad1[2],
#   invert/swap flags[6], n_count int32, version int32, hdr_size int32
_TRK_STRUCT = struct.Struct("<6s3h3f3fh200sh200s16f444s4s4s6f2s6B3i")


@dataclass
class TrkHeader:
    dim: tuple[int, int, int] = (0, 0, 0)
    voxel_size: tuple[float, float, float] = (1.0, 1.0, 1.0)
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)
    n_scalars: int = 0
    n_properties: int = 0
    vox_to_ras: np.ndarray = field(default_factory=lambda: np.eye(4, dtype=np.float64))
    voxel_order: bytes = b"RAS\x00"
    n_count: int = 0
    version: int = 2
    hdr_size: int = TRK_HEADER_SIZE

    def validate(self):
        if self.hdr_size != TRK_HEADER_SIZE:
            raise UnsupportedVersion(f"hdr_size {self.hdr_size} != {TRK_HEADER_SIZE}")
        if self.version != 2:
            raise UnsupportedVersion(f"TRK version {self.version} not supported (need 2)")
        if self.n_scalars != 0 or self.n_properties != 0:
            raise UnsupportedScalars(
                f"scalars/properties not supported (n_scalars={self.n_scalars}, "
                f"n_properties={self.n_properties})")
        if self.n_count < 0:
            raise TruncatedStream(f"negative n_count {self.n_count}")


def _pack_header(h: TrkHeader) -> bytes:
    mat = np.asarray(h.vox_to_ras, dtype=np.float32).reshape(16)
    return _TRK_STRUCT.pack(
        TRK_MAGIC,
        *[int(v) for v in h.dim],
        *[float(v) for v in h.voxel_size],
        *[float(v) for v in h.origin],
        int(h.n_scalars), b"\x00" * 200,
        int(h.n_properties), b"\x00" * 200,
        *[float(v) for v in mat],
        b"\x00" * 444,
        (h.voxel_order + b"\x00" * 4)[:4],
        b"\x00" * 4,
        *([0.0] * 6),
        b"\x00" * 2,
        *([0] * 6),
        int(h.n_count), int(h.version), int(h.hdr_size),
    )


def _unpack_header(buf: bytes) -> TrkHeader:
    if len(buf) < TRK_HEADER_SIZE:
        raise TruncatedStream(f"header is {len(buf)} bytes, need {TRK_HEADER_SIZE}")
    vals = _TRK_STRUCT.unpack(buf[:TRK_HEADER_SIZE])
    if vals[0] != TRK_MAGIC:
        raise BadMagic(f"bad id_string {vals[0]!r}")
    mat = np.array(vals[14:30], dtype=np.float64).reshape(4, 4)
    h = TrkHeader(
        dim=tuple(vals[1:4]),
        voxel_size=tuple(vals[4:7]),
        origin=tuple(vals[7:10]),
        n_scalars=vals[10],
        n_properties=vals[12],
        vox_to_ras=mat,
        voxel_order=vals[31],
        n_count=vals[46],
        version=vals[47],
        hdr_size=vals[48],
    )
    h.validate()
    return h


def _world_maps(h: TrkHeader):
    """(voxel-mm -> world, world -> voxel-mm) point maps for a header."""
    mat = np.asarray(h.vox_to_ras, dtype=np.float64)
    if np.allclose(mat, 0.0):
        return (lambda p: p), (lambda p: p)
    vs = np.asarray(h.voxel_size, dtype=np.float64)
    if np.any(vs <= 0):
        raise ValueOutOfRange(f"non-positive voxel_size {tuple(vs)}")
    lin, off = mat[:3, :3], mat[:3, 3]
    inv = np.linalg.inv(lin)

    def to_world(p):
        return (p / vs) @ lin.T + off

    def to_voxmm(p):
        return ((p - off) @ inv.T) * vs

    return to_world, to_voxmm


def read_trk(path) -> tuple[TrkHeader, Tractogram]:
    """Read a TRK file; streamlines come back in world (RAS mm) coordinates."""
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as e:
        raise IoFailure(f"cannot read {path}: {e}") from e

    header = _unpack_header(data)
    to_world, _ = _world_maps(header)

    streamlines = []
    off = TRK_HEADER_SIZE
    for i in range(header.n_count):
        if off + 4 > len(data):
            raise TruncatedStream(f"{path}: truncated at streamline {i}, byte {off}")
        (npts,) = struct.unpack_from("<i", data, off)
        off += 4
        if npts < 0 or off + 12 * npts > len(data):
            raise TruncatedStream(f"{path}: truncated points for streamline {i}, byte {off}")
        pts = np.frombuffer(data, dtype="<f4", count=3 * npts, offset=off)
        off += 12 * npts
        streamlines.append(to_world(pts.reshape(npts, 3).astype(np.float64)))
    if off != len(data):
        raise TruncatedStream(f"{path}: {len(data) - off} trailing bytes after {header.n_count} streamlines")
    return header, Tractogram(streamlines)


def write_trk(header: TrkHeader, tractogram: Tractogram, path):
    """Write a TRK file. Input streamlines are world mm and are converted
    back to voxel-mm through the header matrix. Byte-deterministic."""
    if header.n_count != len(tractogram):
        raise CountMismatch(f"header n_count {header.n_count} != {len(tractogram)} streamlines")
    header.validate()
    _, to_voxmm = _world_maps(header)
    try:
        with open(path, "wb") as f:
            f.write(_pack_header(header))
            for s in tractogram.streamlines:
                pts = to_voxmm(np.asarray(s, dtype=np.float64)).astype("<f4")
                f.write(struct.pack("<i", pts.shape[0]))
                f.write(pts.tobytes())
    except OSError as e:
        raise IoFailure(f"cannot write {path}: {e}") from e


def make_header(tractogram: Tractogram) -> TrkHeader:
    """Identity-affine header (voxel size 1 mm) for a tractogram."""
    return TrkHeader(n_count=len(tractogram))


# --- label files -------------------------------------------------------

@dataclass
class LabelFile:
    labels: np.ndarray
    class_names: dict[int, str] = field(default_factory=dict)


def read_labels(path, expected_count: int | None = None,
                class_count: int | None = None) -> LabelFile:
    """One integer label per line; validated against count and class range."""
    labels = []
    try:
        with open(path, "r") as f:
            lines = f.readlines()
    except OSError as e:
        raise IoFailure(f"cannot read {path}: {e}") from e
    for lineno, line in enumerate(lines, start=1):
        text = line.strip()
        if not text:
            continue
        try:
            labels.append(int(text))
        except ValueError:
            raise ParseError(f"{path}:{lineno}: not an integer: {text!r}") from None
    arr = np.asarray(labels, dtype=np.int64)
    if expected_count is not None and len(arr) != expected_count:
        raise LengthMismatch(f"{path}: {len(arr)} labels, expected {expected_count}")
    if arr.size and arr.min() < 0:
        raise OutOfRangeLabel(f"{path}: negative label {arr.min()}")
    if class_count is not None and arr.size and arr.max() >= class_count:
        raise OutOfRangeLabel(f"{path}: label {arr.max()} >= class count {class_count}")
    return LabelFile(labels=arr)


def write_labels(labels, path):
    with open(path, "w") as f:
        for v in np.asarray(labels).ravel():
            f.write(f"{int(v)}\n")


def read_class_names(path) -> dict[int, str]:
    """Class-names file: one ``id<TAB>name`` per line."""
    names = {}
    with open(path, "r") as f:
        for lineno, line in enumerate(f, start=1):
            text = line.rstrip("\n")
            if not text.strip():
                continue
            parts = text.split("\t")
            if len(parts) != 2:
                raise ParseError(f"{path}:{lineno}: expected 'id<TAB>name'")
            try:
                cid = int(parts[0])
            except ValueError:
                raise ParseError(f"{path}:{lineno}: bad class id {parts[0]!r}") from None
            names[cid] = parts[1]
    return names


def write_class_names(names: dict[int, str], path):
    with open(path, "w") as f:
        for cid in sorted(names):
            f.write(f"{cid}\t{names[cid]}\n")


# --- config ------------------------------------------------------------

@dataclass
class ConfigFile:
    """Flat key=value configuration with range-checked values."""

    m: int = 15
    k: int = 20
    w: int = 500
    h: int = 64
    backbone_dims: tuple[int, ...] = (64, 128, 1024)
    head_dims: tuple[int, ...] = (512, 256)
    learning_rate: float = 0.001
    epochs: int = 20
    batch_size: int = 1024
    seed: int = 0
    voxel_size: float = 2.0
    noise_sigma: float = 0.5
    val_fraction: float = 0.0
    include_self: bool = False
    global_per_streamline: bool = False
    flip_align_context: bool = False
    rot_lr: tuple[float, float] = (-45.0, 45.0)
    rot_ap: tuple[float, float] = (-10.0, 10.0)
    rot_si: tuple[float, float] = (-10.0, 10.0)
    trans_x: tuple[float, float] = (-50.0, 50.0)
    trans_y: tuple[float, float] = (-50.0, 50.0)
    trans_z: tuple[float, float] = (-50.0, 50.0)
    scale_x: tuple[float, float] = (-0.45, 0.05)
    scale_y: tuple[float, float] = (-0.45, 0.05)
    scale_z: tuple[float, float] = (-0.45, 0.05)

    def transform_ranges(self) -> TransformRanges:
        return TransformRanges(
            self.rot_lr, self.rot_ap, self.rot_si,
            self.trans_x, self.trans_y, self.trans_z,
            self.scale_x, self.scale_y, self.scale_z)

    def validate(self):
        if self.m < 2:
            raise ValueOutOfRange(f"m must be >= 2, got {self.m}")
        for name in ("k", "w", "epochs", "seed"):
            if getattr(self, name) < 0:
                raise ValueOutOfRange(f"{name} must be >= 0, got {getattr(self, name)}")
        for name in ("h", "batch_size"):
            if getattr(self, name) < 1:
                raise ValueOutOfRange(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.learning_rate <= 0:
            raise ValueOutOfRange(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.voxel_size <= 0:
            raise ValueOutOfRange(f"voxel_size must be > 0, got {self.voxel_size}")
        if self.noise_sigma < 0:
            raise ValueOutOfRange(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if not (0.0 <= self.val_fraction < 1.0):
            raise ValueOutOfRange(f"val_fraction must be in [0, 1), got {self.val_fraction}")
        if any(d < 1 for d in self.backbone_dims + self.head_dims):
            raise ValueOutOfRange("layer dims must be >= 1")
        self.transform_ranges()  # interval checks


def _parse_value(name: str, text: str, kind):
    try:
        if kind is bool:
            low = text.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(text)
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        parts = [p.strip() for p in text.split(",") if p.strip()]
        if kind == tuple[int, ...]:
            return tuple(int(p) for p in parts)
        # float interval "lo,hi"
        vals = tuple(float(p) for p in parts)
        if len(vals) != 2:
            raise ValueError(text)
        return vals
    except ValueError:
        raise ParseError(f"bad value for {name}: {text!r}") from None


def parse_config(path) -> ConfigFile:
    """Parse ``key = value`` lines ('#' comments); unknown keys rejected."""
    cfg = ConfigFile()
    kinds = {f.name: f.type for f in fields(ConfigFile)}
    types = {
        "m": int, "k": int, "w": int, "h": int, "epochs": int,
        "batch_size": int, "seed": int,
        "learning_rate": float, "voxel_size": float, "noise_sigma": float,
        "val_fraction": float,
        "include_self": bool, "global_per_streamline": bool,
        "flip_align_context": bool,
        "backbone_dims": tuple[int, ...], "head_dims": tuple[int, ...],
    }
    with open(path, "r") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParseError(f"{path}:{lineno}: expected 'key = value'")
            name, _, text = line.partition("=")
            name = name.strip()
            text = text.strip()
            if name not in kinds:
                raise UnknownKey(f"{path}:{lineno}: unknown key {name!r}")
            kind = types.get(name, "interval")
            setattr(cfg, name, _parse_value(name, text, kind))
    cfg.validate()
    return cfg
