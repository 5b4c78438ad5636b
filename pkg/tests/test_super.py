import numpy as np
import pytest

from superct.denoiser import ConvDenoiser, TrainConfig, init_weights
from superct.geometry import Image, parallel_beam
from superct.phantom import shepp_logan
from superct.projector import forward_project
from superct.simulate import ScanProtocol, simulate_measurements
from superct.solvers import EpParams, OsLalmConfig, make_quadratic, os_lalm_update
from superct.projector import Projector
from superct.super_model import (
    IterativeSpec,
    SuperLayer,
    SuperModel,
    apply_super,
    fbp_init,
    run_iterative,
    train_super,
)


def _training_set(n_pairs=3, size=32, i0=1e5, seed=0):
    geom = parallel_beam(48, 48, size, size, 1.0)
    base = shepp_logan(size, size)
    rng = np.random.default_rng(seed)
    pairs = []
    for i in range(n_pairs):
        # vary the anatomy slightly so pairs differ
        ref = Image(np.clip(base.values * rng.uniform(0.9, 1.1), 0, None))
        sino = forward_project(ref, geom)
        meas = simulate_measurements(sino, ScanProtocol(I0=i0, sigma=5.0, seed=100 + i))
        pairs.append((meas, ref))
    return geom, pairs


def _quick_cfg():
    return TrainConfig(epochs=2, crop=16, seed=0)


def test_single_layer_none_module_is_just_the_denoiser():
    geom, pairs = _training_set(2)
    model = train_super(pairs, 1, _quick_cfg(), IterativeSpec(kind="none"), seed=0)
    assert model.n_layers == 1
    meas = pairs[0][0]
    out, snaps = apply_super(model, meas=meas)
    start = fbp_init(meas, geom)
    direct = model.layers[0].denoiser.apply(start)
    direct = Image(np.clip(direct.values, 0.0, None))
    assert np.allclose(out.values, direct.values)
    assert len(snaps) == 1


def test_all_zero_weights_and_none_modules_pass_fbp_through():
    geom, pairs = _training_set(1)
    zero = ConvDenoiser([np.zeros_like(w) for w in init_weights(0)])
    model = SuperModel(layers=[
        SuperLayer(zero, IterativeSpec(kind="none")),
        SuperLayer(zero, IterativeSpec(kind="none")),
    ])
    meas = pairs[0][0]
    out, snaps = apply_super(model, meas=meas)
    fbp = fbp_init(meas, geom)
    assert np.allclose(out.values, fbp.values)
    assert len(snaps) == 2


def test_training_does_not_mutate_earlier_layers():
    geom, pairs = _training_set(2)
    spec = IterativeSpec(
        kind="pwls-ep", ep=EpParams(beta=2.0**6),
        inner=OsLalmConfig(alpha=1.999, M=4, P=4), n_outer=1,
    )
    m1 = train_super(pairs, 1, _quick_cfg(), spec, seed=7)
    m2 = train_super(pairs, 2, _quick_cfg(), spec, seed=7)
    first_of_one = m1.layers[0].denoiser.weights
    first_of_two = m2.layers[0].denoiser.weights
    for w1, w2 in zip(first_of_one, first_of_two):
        assert np.array_equal(w1, w2)


def test_reproducible_given_seed():
    geom, pairs = _training_set(2)
    spec = IterativeSpec(kind="none")
    m1 = train_super(pairs, 2, _quick_cfg(), spec, seed=3)
    m2 = train_super(pairs, 2, _quick_cfg(), spec, seed=3)
    for l1, l2 in zip(m1.layers, m2.layers):
        for w1, w2 in zip(l1.denoiser.weights, l2.denoiser.weights):
            assert np.array_equal(w1, w2)


def test_ep_layer_beta_zero_is_wls_refinement_of_denoised():
    geom, pairs = _training_set(1)
    meas = pairs[0][0]
    den = ConvDenoiser(init_weights(5))
    start = fbp_init(meas, geom)
    denoised = den.apply(start)
    cfg = OsLalmConfig(alpha=1.5, M=1, P=20, x_max=1.0)
    spec = IterativeSpec(kind="pwls-ep", ep=EpParams(beta=0.0), inner=cfg, n_outer=1)
    out = run_iterative(spec, meas, geom, denoised)
    proj = Projector(geom)
    prob = make_quadratic(proj, meas.weights.ravel(), meas.post_log.ravel())
    ref = os_lalm_update(np.clip(denoised.values.ravel(), 0, None), prob, None, 0.0, cfg)
    assert np.array_equal(out.values.ravel(), ref)


def test_snapshot_count_matches_layers():
    geom, pairs = _training_set(1)
    model = train_super(pairs, 3, _quick_cfg(), IterativeSpec(kind="none"), seed=0)
    _, snaps = apply_super(model, meas=pairs[0][0])
    assert len(snaps) == 3


def test_apply_requires_measurements_for_iterative_models():
    geom, pairs = _training_set(1)
    spec = IterativeSpec(kind="pwls-ep", ep=EpParams(beta=1.0),
                         inner=OsLalmConfig(M=2, P=2), n_outer=1)
    model = train_super(pairs, 1, _quick_cfg(), spec, seed=0)
    with pytest.raises(ValueError, match="measurements"):
        apply_super(model, meas=None, init=Image(np.zeros((32, 32))))


def test_geometry_mismatch_rejected():
    geom, pairs = _training_set(1)
    model = train_super(pairs, 1, _quick_cfg(), IterativeSpec(kind="none"), seed=0)
    with pytest.raises(ValueError, match="grid"):
        apply_super(model, meas=pairs[0][0], init=Image(np.zeros((16, 16))))


def test_train_rmse_history_recorded():
    geom, pairs = _training_set(2)
    model = train_super(pairs, 2, _quick_cfg(), IterativeSpec(kind="none"), seed=0)
    hist = model.meta["train_rmse_hu_per_layer"]
    assert len(hist) == 2
    assert all(v >= 0 for v in hist)
