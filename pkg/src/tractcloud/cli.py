"""Command-line client for the tractcloud service.

Subcommands map one-to-one onto service endpoints. By default requests run
against an in-process instance of the app; pass --server URL to talk to a
running ``tractcloud-serve`` instead. Exit codes: 0 success, 1 usage
error, 2 data error.
"""

from __future__ import annotations

import argparse
import json
import sys


class _Parser(argparse.ArgumentParser):
    """argparse variant whose usage errors exit with code 1, not 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _add_range_flags(p: argparse.ArgumentParser):
    for name, default in (
        ("rot-lr", (-45.0, 45.0)), ("rot-ap", (-10.0, 10.0)),
        ("rot-si", (-10.0, 10.0)),
        ("trans-x", (-50.0, 50.0)), ("trans-y", (-50.0, 50.0)),
        ("trans-z", (-50.0, 50.0)),
        ("scale-x", (-0.45, 0.05)), ("scale-y", (-0.45, 0.05)),
        ("scale-z", (-0.45, 0.05)),
    ):
        p.add_argument(f"--{name}", nargs=2, type=float, default=list(default),
                       metavar=("LO", "HI"))


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tractcloud",
                     description="Registration-free streamline parcellation toolkit")
    parser.add_argument("--server", default=None,
                        help="base URL of a running service (default: in-process)")
    parser.add_argument("--threads", type=int, default=None,
                        help="worker cap (TRACTCLOUD_THREADS is the fallback; "
                             "1 guarantees bitwise reproducibility)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic labeled atlas")
    p.add_argument("--spec", default=None, help="bundle spec file (default: demo spec)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--per-class", type=int, default=200,
                   help="streamlines per class for the demo spec")

    p = sub.add_parser("augment", help="write randomly transformed copies")
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--noise-sigma", type=float, default=0.5)
    _add_range_flags(p)

    p = sub.add_parser("knn", help="precompute the neighbor cache")
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--out", required=True, help="cache file")
    p.add_argument("--m", type=int, default=15)

    p = sub.add_parser("train", help="train a classifier")
    p.add_argument("--data", required=True, help="directory of .trk + .labels.txt pairs")
    p.add_argument("--config", default=None, help="key=value config file")
    p.add_argument("--out", required=True, help="model output path")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--threads", type=int, default=None,
                   help="worker cap (1 guarantees bitwise reproducibility)")

    p = sub.add_parser("predict", help="classify a tractogram")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--out", required=True, help="label output file")
    p.add_argument("--reg-free", action="store_true",
                   help="center onto the stored atlas centroid first")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", default=None)

    p = sub.add_parser("evaluate", help="score a prediction")
    p.add_argument("--pred", required=True, help="predicted label file")
    p.add_argument("--truth", default=None, help="ground-truth label file")
    p.add_argument("--atlas", default=None, help="labeled atlas directory")
    p.add_argument("--in", dest="in_path", default=None,
                   help="the predicted tractogram (needed with --atlas)")
    p.add_argument("--wdice-against", default=None,
                   help="second label file for weighted-Dice comparison")
    p.add_argument("--threshold", type=int, default=50)
    p.add_argument("--voxel-size", type=float, default=2.0)
    p.add_argument("--m", type=int, default=15)
    p.add_argument("--out", default=None, help="report CSV output path")
    return parser


def _request_for(args) -> tuple[str, dict]:
    if args.command == "gen":
        return "/gen", {"out_dir": args.out, "seed": args.seed,
                        "spec_path": args.spec,
                        "streamlines_per_class": args.per_class}
    if args.command == "augment":
        ranges = {key: getattr(args, key) for key in
                  ("rot_lr", "rot_ap", "rot_si", "trans_x", "trans_y",
                   "trans_z", "scale_x", "scale_y", "scale_z")}
        return "/augment", {"in_path": args.in_path, "labels_path": args.labels,
                            "n": args.n, "out_dir": args.out, "seed": args.seed,
                            "noise_sigma": args.noise_sigma, "ranges": ranges}
    if args.command == "knn":
        return "/knn", {"in_path": args.in_path, "k": args.k,
                        "out_path": args.out, "m": args.m}
    if args.command == "train":
        return "/train", {"data_dir": args.data, "out_path": args.out,
                          "config_path": args.config, "seed": args.seed,
                          "threads": args.threads or 1}
    if args.command == "predict":
        return "/predict", {"model_path": args.model, "in_path": args.in_path,
                            "out_path": args.out, "reg_free": args.reg_free,
                            "seed": args.seed, "config_path": args.config}
    if args.command == "evaluate":
        return "/evaluate", {"pred_path": args.pred, "truth_path": args.truth,
                             "in_path": args.in_path, "atlas_dir": args.atlas,
                             "wdice_against": args.wdice_against,
                             "threshold": args.threshold,
                             "voxel_size": args.voxel_size, "m": args.m,
                             "out_path": args.out}
    raise AssertionError(args.command)


def _post(server: str | None, path: str, payload: dict):
    if server:
        import httpx

        return httpx.post(server.rstrip("/") + path, json=payload, timeout=None)
    from fastapi.testclient import TestClient

    from .service import app

    with TestClient(app, raise_server_exceptions=False) as client:
        return client.post(path, json=payload)


def _print_result(command: str, body: dict):
    csv_text = body.pop("metrics_csv", None) or body.pop("report_csv", None)
    if "seed" in body and body["seed"] is not None:
        print(f"seed: {body['seed']}", file=sys.stderr)
    if csv_text:
        sys.stdout.write(csv_text)
        if not csv_text.endswith("\n"):
            sys.stdout.write("\n")
    print(json.dumps(body, indent=2), file=sys.stderr)


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        path, payload = _request_for(args)
        resp = _post(args.server, path, payload)
    except OSError as e:
        print(f"tractcloud: {e}", file=sys.stderr)
        return 2

    if resp.status_code == 200:
        _print_result(args.command, dict(resp.json()))
        return 0
    try:
        body = resp.json()
    except ValueError:
        body = {"error": "HTTPError", "detail": resp.text}
    print(f"tractcloud: {body.get('error', 'error')}: {body.get('detail', '')}",
          file=sys.stderr)
    return 1 if resp.status_code in (400, 404) else 2


if __name__ == "__main__":
    sys.exit(main())
