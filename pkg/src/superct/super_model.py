"""Cascaded supervised + iterative reconstruction (greedy layer-wise
training).

A model is an ordered list of layers; each layer applies its own
trained denoiser and then runs a fixed-budget iterative reconstruction
initialized with the denoiser output.  Layers are trained one at a
time on the previous layer's outputs against the references, so
earlier layers are frozen by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .denoiser import ConvDenoiser, SupervisedModule, TrainConfig
from .fbp import fbp_reconstruct
from .geometry import Geometry, Image, LINE_INTEGRAL, Sinogram
from .simulate import MeasurementSet
from .solvers import (
    EpParams,
    OsLalmConfig,
    UltraParams,
    pwls_ep_reconstruct,
    pwls_ultra_reconstruct,
)
from .surrogate import spultra_reconstruct

ITERATIVE_KINDS = ("pwls-ep", "pwls-ultra", "spultra", "none")


@dataclass(frozen=True)
class IterativeSpec:
    """Fixed-budget iterative module attached to one layer."""

    kind: str = "none"
    ep: Optional[EpParams] = None
    ultra: Optional[UltraParams] = None
    inner: OsLalmConfig = field(default_factory=lambda: OsLalmConfig(M=4, P=4))
    n_outer: int = 1  # image-update calls (EP) or outer iterations (SPULTRA)

    def __post_init__(self):
        if self.kind not in ITERATIVE_KINDS:
            raise ValueError(f"unknown iterative module {self.kind!r}")
        if self.kind == "pwls-ep" and self.ep is None:
            raise ValueError("pwls-ep needs EpParams")
        if self.kind in ("pwls-ultra", "spultra") and self.ultra is None:
            raise ValueError(f"{self.kind} needs UltraParams")


def run_iterative(
    spec: IterativeSpec, meas: MeasurementSet, geom: Geometry, init: Image
) -> Image:
    init = Image(np.clip(init.values, 0.0, None), init.mu_water, dict(init.meta))
    if spec.kind == "none":
        return init
    if spec.kind == "pwls-ep":
        return pwls_ep_reconstruct(
            meas, geom, spec.ep, spec.inner, n_outer=spec.n_outer, init=init
        )
    if spec.kind == "pwls-ultra":
        return pwls_ultra_reconstruct(meas, geom, spec.ultra, init=init)[0]
    if spec.kind == "spultra":
        return spultra_reconstruct(meas, geom, spec.ultra, init, spec.n_outer)[0]
    raise ValueError(spec.kind)  # pragma: no cover


@dataclass
class SuperLayer:
    denoiser: SupervisedModule
    iterative: IterativeSpec


@dataclass
class SuperModel:
    layers: list[SuperLayer]
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.layers:
            raise ValueError("model needs at least one layer")

    @property
    def n_layers(self) -> int:
        return len(self.layers)


def fbp_init(meas: MeasurementSet, geom: Geometry) -> Image:
    img = fbp_reconstruct(Sinogram(geom, meas.post_log, LINE_INTEGRAL), geom)
    img.values = np.clip(img.values, 0.0, None)
    return img


def _layer_seed(seed: int, layer: int) -> int:
    return seed * 100003 + layer


def mean_rmse_hu(images: list[Image], refs: list[Image]) -> float:
    from .metrics import rmse_hu

    return float(np.mean([rmse_hu(x, r) for x, r in zip(images, refs)]))


def train_super(
    pairs: list[tuple[MeasurementSet, Image]],
    n_layers: int,
    sup_cfg: TrainConfig,
    iter_spec: IterativeSpec,
    seed: int = 0,
) -> SuperModel:
    """Greedy layer-by-layer training.

    Each layer's denoiser is trained on the previous layer's outputs
    against the references (weights re-initialized per layer from the
    derived seed), then all training images are passed through the
    denoiser and the iterative module to feed the next layer.
    """
    if n_layers < 1:
        raise ValueError("n_layers must be >= 1")
    if not pairs:
        raise ValueError("need at least one training pair")
    geom = pairs[0][0].geometry
    for meas, ref in pairs:
        if meas.geometry is not geom and (
            meas.geometry.n_views != geom.n_views
            or meas.geometry.n_bins != geom.n_bins
            or not meas.geometry.same_grid(geom)
        ):
            raise ValueError("all measurements must share one geometry")
        if (ref.rows, ref.cols) != (geom.image_rows, geom.image_cols):
            raise ValueError("references must match the geometry grid")

    refs = [ref for _, ref in pairs]
    current = [fbp_init(meas, geom) for meas, _ in pairs]
    layers: list[SuperLayer] = []
    rmse_per_layer: list[float] = []

    for layer in range(n_layers):
        cfg = replace(sup_cfg, seed=_layer_seed(seed, layer))
        denoiser = ConvDenoiser.train(list(zip(current, refs)), cfg)
        denoised = [denoiser.apply(x) for x in current]
        current = [
            run_iterative(iter_spec, meas, geom, d)
            for (meas, _), d in zip(pairs, denoised)
        ]
        layers.append(SuperLayer(denoiser=denoiser, iterative=iter_spec))
        rmse_per_layer.append(mean_rmse_hu(current, refs))

    return SuperModel(
        layers=layers,
        meta={"train_rmse_hu_per_layer": rmse_per_layer, "seed": seed},
    )


def apply_super(
    model: SuperModel,
    meas: Optional[MeasurementSet] = None,
    init: Optional[Image] = None,
    geom: Optional[Geometry] = None,
    collect_layers: bool = True,
) -> tuple[Image, list[Image]]:
    """Deterministic forward pass through every layer.

    ``meas`` is required unless every layer's iterative module is
    ``none``; without an explicit ``init`` the input is the FBP of the
    measurements.
    """
    needs_meas = any(layer.iterative.kind != "none" for layer in model.layers)
    if needs_meas and meas is None:
        raise ValueError("model contains iterative modules; measurements required")
    if geom is None:
        if meas is None:
            raise ValueError("need a geometry or measurements")
        geom = meas.geometry
    if init is None:
        if meas is None:
            raise ValueError("need an initial image or measurements")
        x = fbp_init(meas, geom)
    else:
        if (init.rows, init.cols) != (geom.image_rows, geom.image_cols):
            raise ValueError("init image does not match geometry grid")
        x = init

    snapshots: list[Image] = []
    for layer in model.layers:
        x = layer.denoiser.apply(x)
        if layer.iterative.kind != "none":
            x = run_iterative(layer.iterative, meas, geom, x)
        else:
            x = Image(np.clip(x.values, 0.0, None), x.mu_water, dict(x.meta))
        if collect_layers:
            snapshots.append(x.copy())
    return x, snapshots
