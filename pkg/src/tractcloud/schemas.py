"""Pydantic request/response models for the service endpoints."""

from __future__ import annotations

from pydantic import BaseModel, Field

from .geometry import TransformRanges

Interval = tuple[float, float]


class RangesModel(BaseModel):
    """Affine sampling intervals; defaults mirror TransformRanges."""

    rot_lr: Interval = (-45.0, 45.0)
    rot_ap: Interval = (-10.0, 10.0)
    rot_si: Interval = (-10.0, 10.0)
    trans_x: Interval = (-50.0, 50.0)
    trans_y: Interval = (-50.0, 50.0)
    trans_z: Interval = (-50.0, 50.0)
    scale_x: Interval = (-0.45, 0.05)
    scale_y: Interval = (-0.45, 0.05)
    scale_z: Interval = (-0.45, 0.05)

    def to_ranges(self) -> TransformRanges:
        return TransformRanges(
            self.rot_lr, self.rot_ap, self.rot_si,
            self.trans_x, self.trans_y, self.trans_z,
            self.scale_x, self.scale_y, self.scale_z)


class GenRequest(BaseModel):
    out_dir: str
    seed: int | None = None
    spec_path: str | None = None
    streamlines_per_class: int = Field(default=200, ge=1)


class GenResponse(BaseModel):
    seed: int
    atlas: str
    streamlines: int
    classes: int
    class_counts: dict[str, int]


class AugmentRequest(BaseModel):
    in_path: str
    labels_path: str
    n: int = Field(ge=1)
    out_dir: str
    seed: int | None = None
    noise_sigma: float = Field(default=0.5, ge=0.0)
    ranges: RangesModel = RangesModel()


class AugmentResponse(BaseModel):
    seed: int
    count: int
    files: list[str]


class KnnRequest(BaseModel):
    in_path: str
    k: int = Field(ge=0)
    out_path: str
    m: int = Field(default=15, ge=2)
    include_self: bool = False


class KnnResponse(BaseModel):
    streamlines: int
    k: int
    cache: str
    mdf_evaluated_fraction: float


class TrainRequest(BaseModel):
    data_dir: str
    out_path: str
    config_path: str | None = None
    seed: int | None = None
    threads: int = Field(default=1, ge=1)


class TrainResponse(BaseModel):
    seed: int
    model: str
    metrics_file: str
    metrics_csv: str
    brains: int
    streamlines: int
    final_train_accuracy: float | None


class PredictRequest(BaseModel):
    model_path: str
    in_path: str
    out_path: str
    reg_free: bool = True
    seed: int | None = None
    config_path: str | None = None


class PredictResponse(BaseModel):
    seed: int
    labels: str
    confidences: str
    streamlines: int
    mean_confidence: float | None


class EvaluateRequest(BaseModel):
    pred_path: str
    truth_path: str | None = None
    in_path: str | None = None
    atlas_dir: str | None = None
    wdice_against: str | None = None
    threshold: int = Field(default=50, ge=1)
    voxel_size: float = Field(default=2.0, gt=0.0)
    m: int = Field(default=15, ge=2)
    out_path: str | None = None


class EvaluateResponse(BaseModel):
    streamlines: int
    accuracy: float | None = None
    macro_f1: float | None = None
    samples: int | None = None
    tir: float | None = None
    tda: float | None = None
    mean_wdice: float | None = None
    report_csv: str
    report_file: str | None = None


class ErrorResponse(BaseModel):
    error: str
    detail: str
