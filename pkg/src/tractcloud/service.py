"""FastAPI service wrapping the pipeline stages.

Data moves by file path: every endpoint reads and writes files on the
machine the service runs on and returns a JSON summary. Usage problems map
to HTTP 400, data problems (bad files, mismatched models) to HTTP 422.
"""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse

from . import workflows
from .errors import TractCloudError, UsageError
from .schemas import (
    AugmentRequest,
    AugmentResponse,
    EvaluateRequest,
    EvaluateResponse,
    GenRequest,
    GenResponse,
    KnnRequest,
    KnnResponse,
    PredictRequest,
    PredictResponse,
    TrainRequest,
    TrainResponse,
)

app = FastAPI(title="tractcloud", version="0.1.0")


@app.exception_handler(TractCloudError)
def _tractcloud_error(request: Request, exc: TractCloudError):
    status = 400 if isinstance(exc, UsageError) else 422
    return JSONResponse(status_code=status,
                        content={"error": type(exc).__name__, "detail": str(exc)})


@app.exception_handler(RequestValidationError)
def _bad_request(request: Request, exc: RequestValidationError):
    # malformed payloads are usage errors, same as bad CLI flags
    return JSONResponse(status_code=400,
                        content={"error": "UsageError", "detail": str(exc.errors())})


@app.exception_handler(FileNotFoundError)
def _missing_file(request: Request, exc: FileNotFoundError):
    return JSONResponse(status_code=422,
                        content={"error": "FileNotFound", "detail": str(exc)})


@app.get("/health")
def health():
    return {"status": "ok"}


@app.post("/gen", response_model=GenResponse)
def gen(req: GenRequest):
    return workflows.run_gen(req.out_dir, seed=req.seed, spec_path=req.spec_path,
                             streamlines_per_class=req.streamlines_per_class)


@app.post("/augment", response_model=AugmentResponse)
def augment(req: AugmentRequest):
    return workflows.run_augment(req.in_path, req.labels_path, req.n, req.out_dir,
                                 seed=req.seed, ranges=req.ranges.to_ranges(),
                                 noise_sigma=req.noise_sigma)


@app.post("/knn", response_model=KnnResponse)
def knn(req: KnnRequest):
    return workflows.run_knn(req.in_path, req.k, req.out_path, m=req.m,
                             include_self=req.include_self)


@app.post("/train", response_model=TrainResponse)
def train(req: TrainRequest):
    return workflows.run_train(req.data_dir, req.out_path,
                               config_path=req.config_path, seed=req.seed,
                               threads=workflows.thread_cap(req.threads))


@app.post("/predict", response_model=PredictResponse)
def predict(req: PredictRequest):
    return workflows.run_predict(req.model_path, req.in_path, req.out_path,
                                 reg_free=req.reg_free, seed=req.seed,
                                 config_path=req.config_path)


@app.post("/evaluate", response_model=EvaluateResponse)
def evaluate(req: EvaluateRequest):
    return workflows.run_evaluate(
        req.pred_path, truth_path=req.truth_path, in_path=req.in_path,
        atlas_dir=req.atlas_dir, wdice_against=req.wdice_against,
        threshold=req.threshold, voxel_size=req.voxel_size, m=req.m,
        out_path=req.out_path)


def serve():  # pragma: no cover
    """Console entry point: run the service under uvicorn."""
    import argparse

    import uvicorn

    parser = argparse.ArgumentParser(prog="tractcloud-serve")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8000)
    args = parser.parse_args()
    uvicorn.run(app, host=args.host, port=args.port)
