"""Experiment configuration: schema-validated YAML documents.

Unknown keys are rejected so typos fail loudly; every section is
optional except the ones a given command needs.
"""

from __future__ import annotations

from pathlib import Path
from typing import Any, Optional

import numpy as np
import yaml

from .denoiser import TrainConfig
from .geometry import FAN_ARC, Geometry, PARALLEL, fan_beam, parallel_beam
from .patches import PatchConfig, TransformUnion
from .simulate import ScanProtocol
from .solvers import EpParams, OsLalmConfig, UltraParams
from .super_model import IterativeSpec
from .transform_learning import LearnConfig


class ConfigError(ValueError):
    """Invalid or incomplete experiment configuration."""


_NUM = (int, float)

_SCHEMA: dict[str, Any] = {
    "seed": int,
    "geometry": {
        "kind": str,
        "n_views": int,
        "n_bins": int,
        "image_rows": int,
        "image_cols": int,
        "pixel_size": _NUM,
        "bin_spacing": _NUM,
        "angular_range": _NUM,
        "source_to_iso": _NUM,
        "source_to_detector": _NUM,
    },
    "protocol": {
        "I0": _NUM,
        "sigma": _NUM,
        "seed": int,
    },
    "method": {
        "id": str,
        "window": str,
        "beta": _NUM,
        "delta_hu": _NUM,
        "use_kappa": bool,
        "gamma": _NUM,
        "outer_iters": int,
        "patch_side": int,
        "stride": int,
        "alpha": _NUM,
        "subsets": int,
        "inner_iters": int,
        "x_max_hu": _NUM,
    },
    "learning": {
        "K": int,
        "eta": _NUM,
        "lambda0": _NUM,
        "n_iters": int,
        "seed": int,
        "patch_side": int,
        "stride": int,
    },
    "super": {
        "n_layers": int,
        "epochs": int,
        "lr_start": _NUM,
        "lr_end": _NUM,
        "optimizer": str,
        "momentum": _NUM,
        "crop": int,
        "seed": int,
        "iterative": str,
    },
}


def _validate(doc: Any, schema: Any, path: str):
    if isinstance(schema, dict):
        if not isinstance(doc, dict):
            raise ConfigError(f"{path or 'document'}: expected a mapping")
        for key, value in doc.items():
            if key not in schema:
                known = ", ".join(sorted(schema))
                raise ConfigError(f"{path}{key}: unknown key (known: {known})")
            if value is not None:
                _validate(value, schema[key], f"{path}{key}.")
    else:
        if isinstance(schema, tuple):
            ok = isinstance(doc, schema) and not isinstance(doc, bool)
        elif schema is int:
            ok = isinstance(doc, int) and not isinstance(doc, bool)
        else:
            ok = isinstance(doc, schema)
        if not ok:
            names = (
                "/".join(t.__name__ for t in schema)
                if isinstance(schema, tuple)
                else schema.__name__
            )
            raise ConfigError(f"{path[:-1]}: expected {names}, got {type(doc).__name__}")


def load_config(path) -> dict:
    try:
        doc = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: YAML parse error: {exc}") from exc
    if doc is None:
        doc = {}
    _validate(doc, _SCHEMA, "")
    return doc


def _require(cfg: dict, section: str) -> dict:
    if section not in cfg or cfg[section] is None:
        raise ConfigError(f"config section {section!r} is required for this command")
    return cfg[section]


def build_geometry(cfg: dict) -> Geometry:
    g = _require(cfg, "geometry")
    for key in ("kind", "n_views", "n_bins", "image_rows", "image_cols", "pixel_size"):
        if key not in g:
            raise ConfigError(f"geometry.{key} is required")
    common = dict(
        n_views=g["n_views"],
        n_bins=g["n_bins"],
        image_rows=g["image_rows"],
        image_cols=g["image_cols"],
        pixel_size=float(g["pixel_size"]),
        bin_spacing=(None if g.get("bin_spacing") is None else float(g["bin_spacing"])),
    )
    try:
        if g["kind"] == PARALLEL:
            rng = g.get("angular_range")
            return parallel_beam(
                angular_range=float(rng) if rng is not None else np.pi, **common
            )
        if g["kind"] == FAN_ARC:
            for key in ("source_to_iso", "source_to_detector"):
                if key not in g:
                    raise ConfigError(f"geometry.{key} is required for fan-arc")
            return fan_beam(
                source_to_iso=float(g["source_to_iso"]),
                source_to_detector=float(g["source_to_detector"]),
                **common,
            )
    except ValueError as exc:
        raise ConfigError(f"geometry: {exc}") from exc
    raise ConfigError(f"geometry.kind: unknown kind {g['kind']!r}")


def build_protocol(cfg: dict) -> ScanProtocol:
    p = _require(cfg, "protocol")
    if "I0" not in p:
        raise ConfigError("protocol.I0 is required")
    try:
        return ScanProtocol(
            I0=float(p["I0"]),
            sigma=float(p.get("sigma", 0.0)),
            seed=int(p.get("seed", cfg.get("seed", 0))),
        )
    except ValueError as exc:
        raise ConfigError(f"protocol: {exc}") from exc


def build_lalm(method: dict) -> OsLalmConfig:
    from .geometry import MU_WATER_DEFAULT

    kwargs = {}
    if method.get("alpha") is not None:
        kwargs["alpha"] = float(method["alpha"])
    if method.get("subsets") is not None:
        kwargs["M"] = int(method["subsets"])
    if method.get("inner_iters") is not None:
        kwargs["P"] = int(method["inner_iters"])
    if method.get("x_max_hu") is not None:
        kwargs["x_max"] = MU_WATER_DEFAULT * (1.0 + float(method["x_max_hu"]) / 1000.0)
    try:
        return OsLalmConfig(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"method: {exc}") from exc


def build_ep(method: dict) -> EpParams:
    if method.get("beta") is None:
        raise ConfigError("method.beta is required for pwls-ep")
    try:
        return EpParams(
            beta=float(method["beta"]),
            delta_hu=float(method.get("delta_hu", 20.0)),
            use_kappa=bool(method.get("use_kappa", True)),
        )
    except ValueError as exc:
        raise ConfigError(f"method: {exc}") from exc


def build_ultra(method: dict, transforms: TransformUnion) -> UltraParams:
    for key in ("beta", "gamma"):
        if method.get(key) is None:
            raise ConfigError(f"method.{key} is required for this method")
    patch = PatchConfig(
        int(method.get("patch_side", transforms.patch_side)),
        int(method.get("stride", 1)),
    )
    if patch.patch_side != transforms.patch_side:
        raise ConfigError(
            f"method.patch_side {patch.patch_side} != transform file "
            f"patch side {transforms.patch_side}"
        )
    try:
        return UltraParams(
            beta=float(method["beta"]),
            gamma=float(method["gamma"]),
            transforms=transforms,
            outer_iters=int(method.get("outer_iters", 4)),
            patch=patch,
            inner=build_lalm(method),
        )
    except ValueError as exc:
        raise ConfigError(f"method: {exc}") from exc


def build_learning(cfg: dict) -> LearnConfig:
    doc = cfg.get("learning") or {}
    try:
        return LearnConfig(
            K=int(doc.get("K", 5)),
            eta=(None if doc.get("eta") is None else float(doc["eta"])),
            lambda0=float(doc.get("lambda0", 31.0)),
            n_iters=int(doc.get("n_iters", 50)),
            seed=int(doc.get("seed", cfg.get("seed", 0))),
            patch=PatchConfig(int(doc.get("patch_side", 8)), int(doc.get("stride", 1))),
        )
    except ValueError as exc:
        raise ConfigError(f"learning: {exc}") from exc


def build_train(cfg: dict) -> TrainConfig:
    doc = cfg.get("super") or {}
    try:
        return TrainConfig(
            epochs=int(doc.get("epochs", 10)),
            lr_start=float(doc.get("lr_start", 1e-3)),
            lr_end=float(doc.get("lr_end", 1e-4)),
            optimizer=str(doc.get("optimizer", "adam")),
            momentum=float(doc.get("momentum", 0.99)),
            crop=int(doc.get("crop", 32)),
            seed=int(doc.get("seed", cfg.get("seed", 0))),
        )
    except ValueError as exc:
        raise ConfigError(f"super: {exc}") from exc


def build_iterative(
    cfg: dict, transforms: Optional[TransformUnion] = None
) -> IterativeSpec:
    doc = cfg.get("super") or {}
    kind = doc.get("iterative", "none")
    method = cfg.get("method") or {}
    try:
        if kind == "none":
            return IterativeSpec(kind="none")
        inner = build_lalm(method)
        n_outer = int(method.get("outer_iters", 4)) if kind != "pwls-ep" else 1
        if kind == "pwls-ep":
            return IterativeSpec(kind=kind, ep=build_ep(method), inner=inner, n_outer=1)
        if kind in ("pwls-ultra", "spultra"):
            if transforms is None:
                raise ConfigError(f"super.iterative={kind} needs a transforms file")
            return IterativeSpec(
                kind=kind,
                ultra=build_ultra(method, transforms),
                inner=inner,
                n_outer=n_outer,
            )
    except ValueError as exc:
        raise ConfigError(f"super: {exc}") from exc
    raise ConfigError(f"super.iterative: unknown module {kind!r}")
