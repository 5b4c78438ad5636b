"""Binary file formats, text sidecars, and display exports.

Every binary starts with a 16-byte header: a 12-byte ASCII magic and a
little-endian u32 version, followed by little-endian u32 dimensions and
the payload.  Image and sinogram payloads are little-endian f32; the
transform-union payload is f64.  A YAML sidecar (``<path>.meta``)
carries geometry and bookkeeping fields.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
import yaml
from PIL import Image as PILImage

from .denoiser import ConvDenoiser, TrainConfig
from .geometry import (
    FAN_ARC,
    Geometry,
    Image,
    LINE_INTEGRAL,
    MU_WATER_DEFAULT,
    PARALLEL,
    Sinogram,
)
from .patches import CodeAssignment, PatchConfig, TransformUnion
from .simulate import MeasurementSet, ScanProtocol
from .solvers import EpParams, OsLalmConfig, UltraParams
from .super_model import IterativeSpec, SuperLayer, SuperModel

VERSION = 1
MAGIC_IMAGE = b"SUPERCT-IMG\x00"
MAGIC_SINO = b"SUPERCT-SIN\x00"
MAGIC_TRANSFORM = b"SUPERCT-TRN\x00"
MAGIC_WEIGHTS = b"SUPERCT-WTS\x00"
MAGIC_LABELS = b"SUPERCT-LBL\x00"

DISPLAY_WINDOW_HU = (800.0, 1200.0)


def _write_header(fh, magic: bytes):
    assert len(magic) == 12
    fh.write(magic + struct.pack("<I", VERSION))


def _read_header(fh, magic: bytes, path):
    head = fh.read(16)
    if len(head) != 16 or head[:12] != magic:
        raise ValueError(f"{path}: bad magic, expected {magic!r}")
    (version,) = struct.unpack("<I", head[12:16])
    if version != VERSION:
        raise ValueError(f"{path}: unsupported version {version}")


def _sidecar(path) -> Path:
    return Path(str(path) + ".meta")


def _write_sidecar(path, doc: dict):
    _sidecar(path).write_text(yaml.safe_dump(doc, sort_keys=True))


def _read_sidecar(path) -> dict:
    p = _sidecar(path)
    if not p.exists():
        return {}
    return yaml.safe_load(p.read_text()) or {}


def geometry_to_dict(geom: Geometry) -> dict:
    doc = {
        "kind": geom.kind,
        "n_views": int(geom.n_views),
        "n_bins": int(geom.n_bins),
        "image_rows": int(geom.image_rows),
        "image_cols": int(geom.image_cols),
        "pixel_size": float(geom.pixel_size),
        "detector_bin_spacing": float(geom.detector_bin_spacing),
        "view_angles": [float(a) for a in geom.view_angles],
    }
    if geom.kind == FAN_ARC:
        doc["source_to_iso"] = float(geom.source_to_iso)
        doc["source_to_detector"] = float(geom.source_to_detector)
    return doc


def geometry_from_dict(doc: dict) -> Geometry:
    return Geometry(
        kind=doc["kind"],
        n_views=int(doc["n_views"]),
        n_bins=int(doc["n_bins"]),
        image_rows=int(doc["image_rows"]),
        image_cols=int(doc["image_cols"]),
        pixel_size=float(doc["pixel_size"]),
        view_angles=np.asarray(doc["view_angles"], dtype=np.float64),
        source_to_iso=float(doc.get("source_to_iso", 0.0)),
        source_to_detector=float(doc.get("source_to_detector", 0.0)),
        detector_bin_spacing=float(doc["detector_bin_spacing"]),
    )


# ---------------------------------------------------------------------------
# images and sinograms


def save_image(image: Image, path):
    path = Path(path)
    with path.open("wb") as fh:
        _write_header(fh, MAGIC_IMAGE)
        fh.write(struct.pack("<II", image.rows, image.cols))
        fh.write(image.values.astype("<f4").tobytes())
    meta = {"mu_water": float(image.mu_water)}
    if image.meta:
        meta["extra"] = {k: v for k, v in image.meta.items()}
    _write_sidecar(path, meta)


def load_image(path) -> Image:
    path = Path(path)
    with path.open("rb") as fh:
        _read_header(fh, MAGIC_IMAGE, path)
        rows, cols = struct.unpack("<II", fh.read(8))
        vals = np.frombuffer(fh.read(rows * cols * 4), dtype="<f4")
    if vals.size != rows * cols:
        raise ValueError(f"{path}: truncated payload")
    meta = _read_sidecar(path)
    img = Image(
        values=vals.reshape(rows, cols).astype(np.float64),
        mu_water=float(meta.get("mu_water", MU_WATER_DEFAULT)),
    )
    img.meta.update(meta.get("extra", {}))
    return img


def save_sinogram(sino: Sinogram, path, extra: dict | None = None):
    path = Path(path)
    with path.open("wb") as fh:
        _write_header(fh, MAGIC_SINO)
        fh.write(struct.pack("<II", sino.geometry.n_views, sino.geometry.n_bins))
        fh.write(sino.values.astype("<f4").tobytes())
    doc = {"kind": sino.kind, "geometry": geometry_to_dict(sino.geometry)}
    if extra:
        doc.update(extra)
    _write_sidecar(path, doc)


def load_sinogram(path) -> Sinogram:
    path = Path(path)
    with path.open("rb") as fh:
        _read_header(fh, MAGIC_SINO, path)
        n_views, n_bins = struct.unpack("<II", fh.read(8))
        vals = np.frombuffer(fh.read(n_views * n_bins * 4), dtype="<f4")
    if vals.size != n_views * n_bins:
        raise ValueError(f"{path}: truncated payload")
    meta = _read_sidecar(path)
    if "geometry" not in meta:
        raise ValueError(f"{path}: sidecar with geometry is required")
    geom = geometry_from_dict(meta["geometry"])
    return Sinogram(
        geometry=geom,
        values=vals.reshape(n_views, n_bins).astype(np.float64),
        kind=meta.get("kind", LINE_INTEGRAL),
    )


def save_measurements(meas: MeasurementSet, prefix):
    prefix = str(prefix)
    proto = {
        "protocol": {
            "I0": float(meas.protocol.I0),
            "sigma": float(meas.protocol.sigma),
            "seed": int(meas.protocol.seed),
        }
    }
    save_sinogram(
        Sinogram(meas.geometry, meas.counts, "counts"), prefix + ".counts.sino", proto
    )
    save_sinogram(
        Sinogram(meas.geometry, meas.post_log, LINE_INTEGRAL),
        prefix + ".postlog.sino",
        proto,
    )
    save_sinogram(
        Sinogram(meas.geometry, meas.weights, LINE_INTEGRAL),
        prefix + ".weights.sino",
        proto,
    )


def load_measurements(prefix) -> MeasurementSet:
    prefix = str(prefix)
    counts = load_sinogram(prefix + ".counts.sino")
    postlog = load_sinogram(prefix + ".postlog.sino")
    weights = load_sinogram(prefix + ".weights.sino")
    meta = _read_sidecar(prefix + ".counts.sino")
    proto = meta.get("protocol", {})
    return MeasurementSet(
        geometry=counts.geometry,
        counts=counts.values,
        post_log=postlog.values,
        weights=weights.values,
        protocol=ScanProtocol(
            I0=float(proto.get("I0", 1.0)),
            sigma=float(proto.get("sigma", 0.0)),
            seed=int(proto.get("seed", 0)),
        ),
    )


# ---------------------------------------------------------------------------
# transform unions, denoiser weights, cluster labels


def save_transforms(union: TransformUnion, path):
    path = Path(path)
    with path.open("wb") as fh:
        _write_header(fh, MAGIC_TRANSFORM)
        fh.write(struct.pack("<II", union.K, union.patch_side))
        fh.write(union.transforms.astype("<f8").tobytes())


def load_transforms(path) -> TransformUnion:
    path = Path(path)
    with path.open("rb") as fh:
        _read_header(fh, MAGIC_TRANSFORM, path)
        k, side = struct.unpack("<II", fh.read(8))
        d = side * side
        vals = np.frombuffer(fh.read(k * d * d * 8), dtype="<f8")
    if vals.size != k * d * d:
        raise ValueError(f"{path}: truncated payload")
    return TransformUnion(
        transforms=vals.reshape(k, d, d).astype(np.float64), patch_side=side
    )


def save_weight_tensors(tensors: list[np.ndarray], path):
    path = Path(path)
    with path.open("wb") as fh:
        _write_header(fh, MAGIC_WEIGHTS)
        fh.write(struct.pack("<I", len(tensors)))
        for t in tensors:
            fh.write(struct.pack("<I", t.ndim))
            fh.write(struct.pack(f"<{t.ndim}I", *t.shape))
            fh.write(np.ascontiguousarray(t).astype("<f4").tobytes())


def load_weight_tensors(path) -> list[np.ndarray]:
    path = Path(path)
    tensors = []
    with path.open("rb") as fh:
        _read_header(fh, MAGIC_WEIGHTS, path)
        (count,) = struct.unpack("<I", fh.read(4))
        for _ in range(count):
            (ndim,) = struct.unpack("<I", fh.read(4))
            shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
            n = int(np.prod(shape)) if ndim else 1
            vals = np.frombuffer(fh.read(n * 4), dtype="<f4")
            if vals.size != n:
                raise ValueError(f"{path}: truncated payload")
            tensors.append(vals.reshape(shape).astype(np.float64))
    return tensors


def save_labels(assignment: CodeAssignment, rows: int, cols: int, n_classes: int, path):
    cfg = assignment.patch_cfg
    path = Path(path)
    with path.open("wb") as fh:
        _write_header(fh, MAGIC_LABELS)
        fh.write(
            struct.pack(
                "<6I", rows, cols, cfg.patch_side, cfg.stride, n_classes,
                len(assignment.labels),
            )
        )
        fh.write(assignment.labels.astype("<u4").tobytes())


def load_labels(path):
    """Returns (labels, rows, cols, patch_cfg, n_classes)."""
    path = Path(path)
    with path.open("rb") as fh:
        _read_header(fh, MAGIC_LABELS, path)
        rows, cols, side, stride, k, n = struct.unpack("<6I", fh.read(24))
        labels = np.frombuffer(fh.read(n * 4), dtype="<u4").astype(np.int64)
    if labels.size != n:
        raise ValueError(f"{path}: truncated payload")
    return labels, rows, cols, PatchConfig(side, stride), k


# ---------------------------------------------------------------------------
# trained cascade models


def _iterative_to_dict(spec: IterativeSpec) -> dict:
    doc = {
        "kind": spec.kind,
        "n_outer": spec.n_outer,
        "inner": {
            "alpha": spec.inner.alpha,
            "M": spec.inner.M,
            "P": spec.inner.P,
            "x_max": spec.inner.x_max,
        },
    }
    if spec.ep is not None:
        doc["ep"] = {
            "beta": spec.ep.beta,
            "delta_hu": spec.ep.delta_hu,
            "use_kappa": spec.ep.use_kappa,
        }
    if spec.ultra is not None:
        u = spec.ultra
        doc["ultra"] = {
            "beta": u.beta,
            "gamma": u.gamma,
            "outer_iters": u.outer_iters,
            "patch_side": u.patch.patch_side,
            "stride": u.patch.stride,
            "inner": {
                "alpha": u.inner.alpha,
                "M": u.inner.M,
                "P": u.inner.P,
                "x_max": u.inner.x_max,
            },
        }
    return doc


def _iterative_from_dict(doc: dict, transforms: TransformUnion | None) -> IterativeSpec:
    inner = OsLalmConfig(**doc["inner"])
    ep = None
    ultra = None
    if "ep" in doc:
        ep = EpParams(**doc["ep"])
    if "ultra" in doc:
        u = dict(doc["ultra"])
        u_inner = OsLalmConfig(**u.pop("inner"))
        patch = PatchConfig(u.pop("patch_side"), u.pop("stride"))
        ultra = UltraParams(
            transforms=transforms, patch=patch, inner=u_inner, **u
        )
    return IterativeSpec(
        kind=doc["kind"], ep=ep, ultra=ultra, inner=inner, n_outer=doc["n_outer"]
    )


def save_model(model: SuperModel, outdir):
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "n_layers": model.n_layers,
        "meta": model.meta,
        "layers": [],
    }
    transforms_saved = False
    for i, layer in enumerate(model.layers):
        wfile = f"layer_{i:03d}.wts"
        save_weight_tensors(layer.denoiser.weight_tensors(), outdir / wfile)
        doc = {"weights": wfile, "iterative": _iterative_to_dict(layer.iterative)}
        if layer.iterative.ultra is not None and not transforms_saved:
            save_transforms(layer.iterative.ultra.transforms, outdir / "transforms.trn")
            transforms_saved = True
        manifest["layers"].append(doc)
    (outdir / "model.yaml").write_text(yaml.safe_dump(manifest, sort_keys=True))


def load_model(outdir) -> SuperModel:
    outdir = Path(outdir)
    manifest = yaml.safe_load((outdir / "model.yaml").read_text())
    transforms = None
    tfile = outdir / "transforms.trn"
    if tfile.exists():
        transforms = load_transforms(tfile)
    layers = []
    for doc in manifest["layers"]:
        weights = load_weight_tensors(outdir / doc["weights"])
        denoiser = ConvDenoiser(weights)
        layers.append(
            SuperLayer(
                denoiser=denoiser,
                iterative=_iterative_from_dict(doc["iterative"], transforms),
            )
        )
    return SuperModel(layers=layers, meta=manifest.get("meta", {}))


# ---------------------------------------------------------------------------
# display exports


def to_display(image: Image, window: tuple[float, float] = DISPLAY_WINDOW_HU) -> np.ndarray:
    """8-bit grayscale with the given HU display window."""
    lo, hi = window
    if hi <= lo:
        raise ValueError("window must satisfy hi > lo")
    hu = image.to_hu()
    scaled = np.clip((hu - lo) / (hi - lo), 0.0, 1.0)
    return np.round(scaled * 255.0).astype(np.uint8)


def export_png(image: Image, path, window: tuple[float, float] = DISPLAY_WINDOW_HU):
    PILImage.fromarray(to_display(image, window), mode="L").save(Path(path))


def export_pgm(image: Image, path, window: tuple[float, float] = DISPLAY_WINDOW_HU):
    data = to_display(image, window)
    with Path(path).open("wb") as fh:
        fh.write(f"P5\n{data.shape[1]} {data.shape[0]}\n255\n".encode())
        fh.write(data.tobytes())


def export_mask_png(mask: np.ndarray, path):
    PILImage.fromarray(np.where(mask, 255, 0).astype(np.uint8), mode="L").save(Path(path))
