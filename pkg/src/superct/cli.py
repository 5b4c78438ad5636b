"""Command-line interface and experiment orchestration.

Every command writes its outputs plus a ``manifest.yaml`` (resolved
config, seeds, versions, input/output hashes) into the output
directory, so runs can be reproduced and checked bit-for-bit.

Exit codes: 0 success, 2 bad configuration or arguments, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__, io
from .config import (
    ConfigError,
    build_ep,
    build_geometry,
    build_iterative,
    build_lalm,
    build_learning,
    build_protocol,
    build_train,
    build_ultra,
    load_config,
)
from .fbp import fbp_reconstruct
from .geometry import Image, LINE_INTEGRAL, Sinogram
from .metrics import evaluate
from .patches import CodeAssignment, extract_patches, majority_vote_map
from .phantom import shepp_logan
from .projector import forward_project
from .simulate import simulate_measurements
from .solvers import SolverDivergence, pwls_ep_reconstruct, pwls_ultra_reconstruct
from .super_model import apply_super, fbp_init, train_super
from .surrogate import spultra_reconstruct
from .transform_learning import learn_union

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _sha256(path) -> str:
    h = hashlib.sha256()
    h.update(Path(path).read_bytes())
    return h.hexdigest()


def _write_manifest(outdir: Path, command: str, cfg: dict, inputs: list, outputs: list):
    manifest = {
        "command": command,
        "config": cfg,
        "versions": {"superct": __version__, "numpy": np.__version__},
        "inputs": {str(p): _sha256(p) for p in inputs if Path(p).exists()},
        "outputs": {str(p): _sha256(p) for p in sorted(map(str, outputs))},
    }
    (outdir / "manifest.yaml").write_text(yaml.safe_dump(manifest, sort_keys=True))


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_log_csv(log: list[dict], path):
    if not log:
        return
    keys = sorted({k for row in log for k in row})
    with Path(path).open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=keys)
        writer.writeheader()
        writer.writerows(log)


def _cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    geom = build_geometry(cfg)
    protocol = build_protocol(cfg)
    if args.image:
        image = io.load_image(args.image)
        if (image.rows, image.cols) != (geom.image_rows, geom.image_cols):
            raise ConfigError("input image does not match geometry grid")
    else:
        image = shepp_logan(geom.image_rows, geom.image_cols)
    out = _outdir(args)
    sino = forward_project(image, geom)
    meas = simulate_measurements(sino, protocol)
    io.save_image(image, out / "reference.img")
    io.save_sinogram(sino, out / "line_integrals.sino")
    io.save_measurements(meas, out / "meas")
    outputs = sorted(p for p in out.iterdir() if p.name != "manifest.yaml")
    _write_manifest(out, "simulate", cfg, [args.config] + ([args.image] if args.image else []), outputs)
    return EXIT_OK


def _cmd_fbp(args) -> int:
    cfg = load_config(args.config)
    geom = build_geometry(cfg)
    window = (cfg.get("method") or {}).get("window", "ram-lak")
    if args.sino:
        sino = io.load_sinogram(args.sino)
        if sino.kind != LINE_INTEGRAL:
            raise ConfigError("fbp needs a line-integral sinogram")
        inputs = [args.config, args.sino]
    else:
        meas = io.load_measurements(args.meas)
        sino = Sinogram(meas.geometry, meas.post_log, LINE_INTEGRAL)
        inputs = [args.config, args.meas + ".postlog.sino"]
    out = _outdir(args)
    recon = fbp_reconstruct(sino, geom, window=window)
    recon.values = np.clip(recon.values, 0.0, None)
    io.save_image(recon, out / "fbp.img")
    io.export_png(recon, out / "fbp.png", window=tuple(args.window))
    _write_manifest(out, "fbp", cfg, inputs, [out / "fbp.img", out / "fbp.png"])
    return EXIT_OK


def _cmd_learn_ultra(args) -> int:
    cfg = load_config(args.config)
    learn_cfg = build_learning(cfg)
    mats = []
    for path in args.images:
        img = io.load_image(path)
        mats.append(extract_patches(img.values, learn_cfg.patch))
    patches = np.concatenate(mats, axis=1)
    out = _outdir(args)
    union, state = learn_union(patches, learn_cfg, return_state=True)
    io.save_transforms(union, out / "transforms.trn")
    _write_log_csv(
        [{"iteration": i, "objective": v} for i, v in enumerate(state.objective)],
        out / "learning.csv",
    )
    _write_manifest(
        out, "learn-ultra", cfg, [args.config] + list(args.images),
        [out / "transforms.trn", out / "learning.csv"],
    )
    return EXIT_OK


def _cmd_reconstruct(args) -> int:
    cfg = load_config(args.config)
    geom = build_geometry(cfg)
    method = cfg.get("method") or {}
    meas = io.load_measurements(args.meas)
    init = io.load_image(args.init) if args.init else None
    out = _outdir(args)
    log: list[dict] = []
    assignment: CodeAssignment | None = None
    inputs = [args.config, args.meas + ".counts.sino"]

    if args.method == "pwls-ep":
        ep = build_ep(method)
        lalm = build_lalm(method)
        recon = pwls_ep_reconstruct(
            meas, geom, ep, lalm, n_outer=int(method.get("outer_iters", 1)),
            init=init, log=log,
        )
    elif args.method in ("pwls-ultra", "spultra"):
        if not args.transforms:
            raise ConfigError(f"--transforms is required for {args.method}")
        union = io.load_transforms(args.transforms)
        params = build_ultra(method, union)
        inputs.append(args.transforms)
        if args.method == "pwls-ultra":
            recon, assignment = pwls_ultra_reconstruct(meas, geom, params, init=init, log=log)
        else:
            init_img = init if init is not None else fbp_init(meas, geom)
            recon, assignment = spultra_reconstruct(
                meas, geom, params, init_img, params.outer_iters, log=log
            )
            if recon.meta.get("diverged"):
                raise SolverDivergence("spultra diverged", last_finite=recon)
    else:
        raise ConfigError(f"unknown method {args.method!r}")

    io.save_image(recon, out / "recon.img")
    io.export_png(recon, out / "recon.png", window=tuple(args.window))
    outputs = [out / "recon.img", out / "recon.png"]
    if assignment is not None:
        io.save_labels(
            assignment, geom.image_rows, geom.image_cols,
            params.transforms.K, out / "clusters.lbl",
        )
        outputs.append(out / "clusters.lbl")
    _write_log_csv(log, out / "iterations.csv")
    if log:
        outputs.append(out / "iterations.csv")
    _write_manifest(out, f"reconstruct:{args.method}", cfg, inputs, outputs)
    return EXIT_OK


def _cmd_train_super(args) -> int:
    cfg = load_config(args.config)
    geom = build_geometry(cfg)
    protocol = build_protocol(cfg)
    sup = cfg.get("super") or {}
    train_cfg = build_train(cfg)
    union = io.load_transforms(args.transforms) if args.transforms else None
    spec = build_iterative(cfg, union)
    pairs = []
    for i, path in enumerate(args.refs):
        ref = io.load_image(path)
        sino = forward_project(ref, geom)
        proto_i = type(protocol)(protocol.I0, protocol.sigma, protocol.seed + i)
        pairs.append((simulate_measurements(sino, proto_i), ref))
    out = _outdir(args)
    model = train_super(
        pairs,
        n_layers=int(sup.get("n_layers", 3)),
        sup_cfg=train_cfg,
        iter_spec=spec,
        seed=int(sup.get("seed", cfg.get("seed", 0))),
    )
    io.save_model(model, out)
    outputs = sorted(p for p in out.rglob("*") if p.is_file() and p.name != "manifest.yaml")
    _write_manifest(
        out, "train-super", cfg,
        [args.config] + list(args.refs) + ([args.transforms] if args.transforms else []),
        outputs,
    )
    return EXIT_OK


def _cmd_apply_super(args) -> int:
    cfg = load_config(args.config) if args.config else {}
    model = io.load_model(args.model)
    meas = io.load_measurements(args.meas)
    out = _outdir(args)
    recon, snaps = apply_super(model, meas=meas)
    io.save_image(recon, out / "recon.img")
    io.export_png(recon, out / "recon.png", window=tuple(args.window))
    outputs = [out / "recon.img", out / "recon.png"]
    if args.snapshots:
        for i, snap in enumerate(snaps):
            p = out / f"layer_{i:03d}.img"
            io.save_image(snap, p)
            outputs.append(p)
    _write_manifest(
        out, "apply-super", cfg,
        [args.meas + ".counts.sino", str(Path(args.model) / "model.yaml")], outputs,
    )
    return EXIT_OK


def _cmd_eval(args) -> int:
    recon = io.load_image(args.recon)
    ref = io.load_image(args.ref)
    report = evaluate(recon, ref)
    out = _outdir(args)
    (out / "report.yaml").write_text(yaml.safe_dump(report.as_dict(), sort_keys=True))
    with (out / "report.csv").open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["rmse_hu", "psnr_db", "ssim"])
        writer.writeheader()
        writer.writerow(report.as_dict())
    print(f"rmse_hu={report.rmse:.4f} psnr_db={report.psnr:.4f} ssim={report.ssim:.4f}")
    _write_manifest(
        out, "eval", {}, [args.recon, args.ref],
        [out / "report.yaml", out / "report.csv"],
    )
    return EXIT_OK


def _cmd_export_clusters(args) -> int:
    labels, rows, cols, patch_cfg, k = io.load_labels(args.labels)
    assignment = CodeAssignment(
        labels=labels,
        codes=np.zeros((patch_cfg.dim, len(labels))),
        costs=np.zeros(len(labels)),
        patch_cfg=patch_cfg,
    )
    vote = majority_vote_map(assignment, rows, cols, n_classes=k)
    out = _outdir(args)
    outputs = []
    for cls in range(k):
        p = out / f"class_{cls + 1:02d}.png"
        io.export_mask_png(vote == cls, p)
        outputs.append(p)
    np.save(out / "cluster_map.npy", vote)
    outputs.append(out / "cluster_map.npy")
    _write_manifest(out, "export-clusters", {}, [args.labels], outputs)
    return EXIT_OK


def _add_window(p):
    p.add_argument(
        "--window", nargs=2, type=float, default=list(io.DISPLAY_WINDOW_HU),
        metavar=("LO", "HI"), help="display window in HU (default 800 1200)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="superct", description="Low-dose CT reconstruction toolkit"
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="project an image and simulate noisy counts")
    p.add_argument("--config", required=True)
    p.add_argument("--image", help="input image file (default: head phantom)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("fbp", help="filtered back-projection reconstruction")
    p.add_argument("--config", required=True)
    p.add_argument("--meas", help="measurement set prefix")
    p.add_argument("--sino", help="line-integral sinogram file")
    p.add_argument("--out", required=True)
    _add_window(p)
    p.set_defaults(func=_cmd_fbp)

    p = sub.add_parser("learn-ultra", help="learn a union of sparsifying transforms")
    p.add_argument("--config", required=True)
    p.add_argument("--images", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_learn_ultra)

    p = sub.add_parser("reconstruct", help="model-based iterative reconstruction")
    p.add_argument("--config", required=True)
    p.add_argument("--method", required=True, choices=["pwls-ep", "pwls-ultra", "spultra"])
    p.add_argument("--meas", required=True, help="measurement set prefix")
    p.add_argument("--transforms", help="transform union file")
    p.add_argument("--init", help="initial image (default: FBP)")
    p.add_argument("--out", required=True)
    _add_window(p)
    p.set_defaults(func=_cmd_reconstruct)

    p = sub.add_parser("train-super", help="greedy layer-by-layer cascade training")
    p.add_argument("--config", required=True)
    p.add_argument("--refs", nargs="+", required=True, help="reference images")
    p.add_argument("--transforms", help="transform union file (ultra/spultra modules)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train_super)

    p = sub.add_parser("apply-super", help="run a trained cascade on measurements")
    p.add_argument("--config")
    p.add_argument("--model", required=True)
    p.add_argument("--meas", required=True)
    p.add_argument("--snapshots", action="store_true", help="save per-layer outputs")
    p.add_argument("--out", required=True)
    _add_window(p)
    p.set_defaults(func=_cmd_apply_super)

    p = sub.add_parser("eval", help="RMSE/PSNR/SSIM against a reference image")
    p.add_argument("--recon", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("export-clusters", help="pixel-level majority-vote class masks")
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_export_clusters)

    return parser


def cli_run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverDivergence, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


def main():  # pragma: no cover - thin wrapper
    sys.exit(cli_run())


if __name__ == "__main__":  # pragma: no cover
    main()
