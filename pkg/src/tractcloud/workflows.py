"""End-to-end operations behind the service endpoints and CLI subcommands.

Each function takes plain paths/values, performs one pipeline stage on
disk, and returns a JSON-friendly summary dict. File conventions:

  <name>.trk           tractogram
  <name>.labels.txt    one class id per line, paired with <name>.trk
  classes.txt          ``id<TAB>name`` catalog for a data directory
"""

from __future__ import annotations

import os
import secrets
from pathlib import Path

import numpy as np

from . import geometry, io, metrics, neighbors, nn, synthgen
from .errors import DataError, EmptyDataset, UsageError
from .io import ConfigFile


def _resolve_seed(seed: int | None) -> int:
    # absent an explicit seed, draw one and report it so the run can be
    # reproduced after the fact
    return seed if seed is not None else secrets.randbelow(2 ** 31)


def labels_path_for(trk_path) -> Path:
    p = Path(trk_path)
    return p.with_name(p.name[:-len(".trk")] + ".labels.txt") if p.name.endswith(".trk") \
        else p.with_suffix(".labels.txt")


def run_gen(out_dir, seed: int | None = None, spec_path=None,
            streamlines_per_class: int = 200) -> dict:
    """Generate a synthetic labeled atlas (demo spec unless a spec file is
    given) into out_dir as atlas.trk / atlas.labels.txt / classes.txt."""
    seed = _resolve_seed(seed)
    if spec_path is not None:
        spec = synthgen.parse_spec(spec_path)
        spec.seed = seed
    else:
        spec = synthgen.default_demo_spec(streamlines_per_class, seed=seed)
    tractogram, labels, class_names = synthgen.generate_atlas(spec)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    trk_path = out / "atlas.trk"
    io.write_trk(io.make_header(tractogram), tractogram, trk_path)
    io.write_labels(labels, labels_path_for(trk_path))
    io.write_class_names(class_names, out / "classes.txt")
    counts = np.bincount(labels, minlength=len(class_names))
    return {
        "seed": seed,
        "atlas": str(trk_path),
        "streamlines": len(tractogram),
        "classes": len(class_names),
        "class_counts": {class_names[i]: int(counts[i]) for i in sorted(class_names)},
    }


def run_augment(in_path, labels_path, n: int, out_dir,
                seed: int | None = None,
                ranges: geometry.TransformRanges | None = None,
                noise_sigma: float = 0.5) -> dict:
    """Write n randomly transformed copies of a labeled tractogram."""
    if n < 1:
        raise UsageError(f"--n must be >= 1, got {n}")
    seed = _resolve_seed(seed)
    ranges = ranges if ranges is not None else geometry.TransformRanges()
    _, tractogram = io.read_trk(in_path)
    labels = io.read_labels(labels_path, expected_count=len(tractogram)).labels
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for i in range(n):
        rng = np.random.default_rng(neighbors.derive_seed(seed, f"augment-{i}", 0))
        subj, subj_labels, _ = synthgen.generate_subject(
            tractogram, labels, ranges, rng, noise_sigma)
        trk_path = out / f"aug_{i:03d}.trk"
        io.write_trk(io.make_header(subj), subj, trk_path)
        io.write_labels(subj_labels, labels_path_for(trk_path))
        written.append(str(trk_path))
    src_classes = Path(in_path).parent / "classes.txt"
    if src_classes.exists() and not (out / "classes.txt").exists():
        (out / "classes.txt").write_text(src_classes.read_text())
    return {"seed": seed, "count": n, "files": written}


def run_knn(in_path, k: int, out_path, m: int = 15,
            include_self: bool = False) -> dict:
    """Precompute the exact k-nearest-neighbor table and cache it."""
    _, tractogram = io.read_trk(in_path)
    resampled = geometry.resample_tractogram(tractogram, m)
    stats: dict = {}
    ids = neighbors.knn_all(resampled, k, include_self=include_self, stats=stats)
    neighbors.write_neighbor_cache(ids, out_path)
    evaluated = stats.get("evaluated", 0)
    candidates = max(stats.get("candidates", 0), 1)
    return {
        "streamlines": len(tractogram),
        "k": int(ids.shape[1]),
        "cache": str(out_path),
        "mdf_evaluated_fraction": evaluated / candidates,
    }


def _scan_data_dir(data_dir, m: int):
    """Load every <name>.trk + labels pair; atlas.trk (if present) defines
    the reference centroid and comes first."""
    d = Path(data_dir)
    trks = sorted(d.glob("*.trk"))
    if not trks:
        raise EmptyDataset(f"no .trk files in {data_dir}")
    trks.sort(key=lambda p: (p.name != "atlas.trk", p.name))
    brains = []
    for trk in trks:
        lp = labels_path_for(trk)
        if not lp.exists():
            raise DataError(f"{trk}: missing label file {lp}")
        _, tractogram = io.read_trk(trk)
        resampled = geometry.resample_tractogram(tractogram, m)
        labels = io.read_labels(lp, expected_count=len(tractogram)).labels
        brains.append((trk.stem, resampled, labels))
    names_file = d / "classes.txt"
    class_names = io.read_class_names(names_file) if names_file.exists() else None
    return brains, class_names


def run_train(data_dir, out_path, config_path=None, seed: int | None = None,
              threads: int = 1, metrics_path=None) -> dict:
    """Train on every labeled tractogram in data_dir; write the model and a
    per-epoch metrics CSV."""
    config = io.parse_config(config_path) if config_path else ConfigFile()
    if seed is not None:
        config.seed = seed
    raw, class_names = _scan_data_dir(data_dir, config.m)
    if class_names is None:
        C = int(max(labels.max() for _, _, labels in raw)) + 1
        class_names = {i: f"class_{i:02d}" for i in range(C)}
    reference = geometry.centroid_of_points(raw[0][1])
    brains = [
        nn.Brain(name, geometry.center_resampled(resampled, reference), labels)
        for name, resampled, labels in raw
    ]
    model, rows = nn.train(brains, config, class_names, reference_centroid=reference)
    nn.save_model(model, out_path)
    csv_rows = [{"epoch": r["epoch"], "split": r["split"],
                 "loss": f"{r['loss']:.6f}", "accuracy": f"{r['accuracy']:.6f}"}
                for r in rows]
    csv_text = metrics.rows_to_csv(csv_rows)
    metrics_path = metrics_path or (str(out_path) + ".metrics.csv")
    Path(metrics_path).write_text(csv_text)
    return {
        "seed": config.seed,
        "model": str(out_path),
        "metrics_file": str(metrics_path),
        "metrics_csv": csv_text,
        "brains": len(brains),
        "streamlines": int(sum(b.n for b in brains)),
        "final_train_accuracy": rows[-1]["accuracy"] if rows else None,
    }


def run_predict(model_path, in_path, out_path, reg_free: bool = True,
                seed: int | None = None, config_path=None) -> dict:
    """Classify a tractogram; labels go to out_path, confidences alongside
    it as <out>.conf.txt."""
    seed = _resolve_seed(seed)
    model = nn.load_model(model_path)
    config = io.parse_config(config_path) if config_path else None
    _, tractogram = io.read_trk(in_path)
    labels, confidence = nn.predict(model, tractogram, config=config,
                                    seed=seed, reg_free=reg_free)
    io.write_labels(labels, out_path)
    conf_path = str(out_path) + ".conf.txt"
    with open(conf_path, "w") as f:
        for c in confidence:
            f.write(f"{c:.6f}\n")
    return {
        "seed": seed,
        "labels": str(out_path),
        "confidences": conf_path,
        "streamlines": int(labels.size),
        "mean_confidence": float(confidence.mean()) if labels.size else None,
    }


def _anatomical_class_ids(class_names: dict[int, str]) -> list[int]:
    return [c for c, name in sorted(class_names.items())
            if name.strip().lower() != "other"]


def run_evaluate(pred_path, truth_path=None, in_path=None, atlas_dir=None,
                 wdice_against=None, threshold: int = 50,
                 voxel_size: float = 2.0, m: int = 15,
                 out_path=None) -> dict:
    """Score a prediction: accuracy/macro-F1 against truth labels, or
    TIR/TDA against a labeled atlas directory, optionally plus a per-tract
    weighted-Dice comparison with a second prediction."""
    if truth_path is None and atlas_dir is None:
        raise UsageError("evaluate needs --truth or --atlas")
    pred = io.read_labels(pred_path).labels
    result: dict = {"streamlines": int(pred.size)}
    csv_sections: list[str] = []

    if truth_path is not None:
        truth = io.read_labels(truth_path, expected_count=len(pred)).labels
        C = int(max(truth.max(initial=0), pred.max(initial=0))) + 1
        rep = metrics.classification_report(truth, pred, C)
        result.update(rep)
        csv_sections.append(metrics.rows_to_csv([
            {"metric": "accuracy", "value": f"{rep['accuracy']:.6f}"},
            {"metric": "macro_f1", "value": f"{rep['macro_f1']:.6f}"},
        ]))

    if atlas_dir is not None:
        if in_path is None:
            raise UsageError("evaluate --atlas needs --in (the predicted tractogram)")
        atlas_dir = Path(atlas_dir)
        _, atlas_tr = io.read_trk(atlas_dir / "atlas.trk")
        atlas_labels = io.read_labels(labels_path_for(atlas_dir / "atlas.trk"),
                                      expected_count=len(atlas_tr)).labels
        names_file = atlas_dir / "classes.txt"
        class_names = io.read_class_names(names_file) if names_file.exists() \
            else {int(c): str(c) for c in np.unique(atlas_labels)}
        class_ids = _anatomical_class_ids(class_names)
        _, subj_tr = io.read_trk(in_path)
        if len(subj_tr) != len(pred):
            raise DataError(f"{in_path}: {len(subj_tr)} streamlines but "
                            f"{len(pred)} predicted labels")
        subj = geometry.resample_tractogram(subj_tr, m)
        atlas_rs = geometry.resample_tractogram(atlas_tr, m)
        # compare geometry in a shared frame: subject centered onto the atlas
        subj = geometry.center_resampled(subj, geometry.centroid_of_points(atlas_rs))
        rows = metrics.tract_report(pred, subj, atlas_rs, atlas_labels,
                                    class_ids, class_names, threshold)
        result["tir"] = metrics.tir(pred, class_ids, threshold)
        tdas = [r["tda"] for r in rows[:-1] if r["tda"] != ""]
        result["tda"] = float(np.mean(tdas)) if tdas else None
        csv_sections.append(metrics.rows_to_csv(rows))

        if wdice_against is not None:
            other = io.read_labels(wdice_against, expected_count=len(pred)).labels
            allpts = subj.reshape(-1, 3)
            bounds = (allpts.min(axis=0) - voxel_size, allpts.max(axis=0) + voxel_size)
            wrows = []
            for c in class_ids:
                a = subj[pred == c]
                b = subj[other == c]
                if a.shape[0] == 0 or b.shape[0] == 0:
                    wrows.append({"tract": class_names[c], "wdice": ""})
                    continue
                ga = metrics.voxelize(a, voxel_size, bounds)
                gb = metrics.voxelize(b, voxel_size, bounds)
                wrows.append({"tract": class_names[c],
                              "wdice": f"{metrics.wdice(ga, gb):.6f}"})
            vals = [float(r["wdice"]) for r in wrows if r["wdice"] != ""]
            result["mean_wdice"] = float(np.mean(vals)) if vals else None
            csv_sections.append(metrics.rows_to_csv(wrows))

    report = "\n".join(csv_sections)
    result["report_csv"] = report
    if out_path is not None:
        Path(out_path).write_text(report)
        result["report_file"] = str(out_path)
    return result


def thread_cap(threads: int | None) -> int:
    """--threads flag with the TRACTCLOUD_THREADS fallback. The pipeline
    itself is sequential; the cap is recorded for BLAS-level tuning."""
    if threads is not None:
        return max(1, threads)
    env = os.environ.get("TRACTCLOUD_THREADS")
    return max(1, int(env)) if env else 1
