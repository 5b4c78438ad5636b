import numpy as np
import pytest

from superct.fbp import fbp_reconstruct
from superct.geometry import Image, LINE_INTEGRAL, Sinogram, parallel_beam
from superct.patches import PatchConfig, TransformUnion, cluster_image
from superct.phantom import shepp_logan
from superct.projector import MatrixOperator, Projector, forward_project
from superct.simulate import MeasurementSet, ScanProtocol, simulate_measurements
from superct.solvers import (
    EpParams,
    OsLalmConfig,
    QuadraticProblem,
    UltraParams,
    compute_DA,
    compute_DR,
    ep_hessian_diag,
    ep_potential,
    ep_potential_grad,
    ep_reg_grad,
    ep_reg_value,
    kappa_from_projector,
    make_quadratic,
    os_lalm_update,
    pwls_ep_reconstruct,
    pwls_ultra_reconstruct,
    rho_schedule,
    spectral_norm,
    ultra_reg_grad,
    ultra_reg_value,
)
from superct.transform_learning import dct_matrix_2d


def test_rho_schedule_values():
    assert rho_schedule(0, 1.999) == 1.0
    assert rho_schedule(1, 1.999) == pytest.approx(0.722601, abs=1e-6)


def test_rho_schedule_monotone_to_zero():
    alpha = 1.999
    rhos = np.array([rho_schedule(t, alpha) for t in range(1, 10_001)])
    assert np.all(np.diff(rhos) < 0)
    assert rhos[-1] < 1e-3


def test_rho_schedule_validation():
    with pytest.raises(ValueError):
        rho_schedule(-1, 1.5)
    with pytest.raises(ValueError):
        rho_schedule(0, 2.0)


def test_compute_DA_small_matrix():
    A = np.array([[1.0, 1.0], [0.0, 2.0]])
    op = MatrixOperator(A)
    d = compute_DA(op, np.ones(2))
    assert d == pytest.approx([2.0, 6.0])


def test_compute_DA_zero_weights_floored():
    op = MatrixOperator(np.ones((3, 2)))
    d = compute_DA(op, np.zeros(3))
    assert np.all(d > 0.0)
    assert np.all(d < 1e-200)


def test_DA_majorizes_AtWA_power_iteration():
    geom = parallel_beam(48, 48, 32, 32, 1.0)
    proj = Projector(geom)
    rng = np.random.default_rng(0)
    W = rng.uniform(0.5, 2.0, size=proj.n_rays)
    D = compute_DA(proj, W)
    d_isq = 1.0 / np.sqrt(D)

    def apply_sym(v):
        return d_isq * proj.adjoint(W * proj.forward(d_isq * v))

    v = np.ones(proj.n_pixels) / np.sqrt(proj.n_pixels)
    lam = 0.0
    for _ in range(300):
        w = apply_sym(v)
        v = w / np.linalg.norm(w)
        lam = float(v @ apply_sym(v))
    assert lam <= 1.0 + 1e-8


def test_spectral_norm_matches_svd(rng):
    for _ in range(5):
        B = rng.normal(size=(16, 16))
        G = B.T @ B
        assert spectral_norm(G) == pytest.approx(
            np.linalg.eigvalsh(G)[-1], rel=1e-8
        )


def test_compute_DR_identity_tiling():
    union = TransformUnion(np.eye(16)[None], patch_side=4)
    d = compute_DR(1.0, union, 1.0, PatchConfig(4, 4), 8, 8)
    assert np.allclose(d, 2.0)


def test_compute_DR_zero_beta():
    union = TransformUnion(np.eye(16)[None], patch_side=4)
    assert np.all(compute_DR(0.0, union, 1.0, PatchConfig(4, 4), 8, 8) == 0.0)


def test_compute_DR_interior_overlap():
    side = 8
    union = TransformUnion((2.0 * dct_matrix_2d(side))[None], patch_side=side)
    beta = 3.0
    d = compute_DR(beta, union, 1.0, PatchConfig(side, 1), 32, 32).reshape(32, 32)
    spec = 4.0  # ||(2 DCT)^T (2 DCT)||_2 = 4
    assert d[16, 16] == pytest.approx(2 * beta * spec * 64, rel=1e-9)


def _wls_system(seed=8):
    rng = np.random.default_rng(seed)
    A = rng.uniform(0.0, 1.0, size=(20, 10)) * (rng.uniform(size=(20, 10)) < 0.4) + 0.05
    W = rng.uniform(0.5, 2.0, size=20)
    xt = rng.uniform(0.5, 1.5, size=10)
    y = A @ xt + 0.01 * rng.normal(size=20)
    x_ls = np.linalg.solve(A.T @ (W[:, None] * A), A.T @ (W * y))
    return A, W, y, x_ls


def test_os_lalm_matches_weighted_least_squares_400_iters():
    A, W, y, x_ls = _wls_system()
    assert x_ls.min() > 0  # box must stay inactive
    op = MatrixOperator(A)
    prob = make_quadratic(op, W, y)
    cfg = OsLalmConfig(alpha=1.5, M=1, P=400, x_max=1e9)
    x = os_lalm_update(np.zeros(10), prob, None, 0.0, cfg)
    assert np.linalg.norm(x - x_ls) / np.linalg.norm(x_ls) < 1e-6


def test_os_lalm_zero_weights_is_noop(rng):
    A = rng.uniform(size=(12, 6))
    op = MatrixOperator(A)
    prob = make_quadratic(op, np.zeros(12), rng.normal(size=12))
    x0 = rng.uniform(0.2, 0.8, size=6)
    x = os_lalm_update(x0, prob, None, 0.0, OsLalmConfig(alpha=1.5, M=2, P=7, x_max=1.0))
    assert np.allclose(x, x0)


def test_os_lalm_box_projection(rng):
    A, W, y, _ = _wls_system()
    op = MatrixOperator(A)
    prob = make_quadratic(op, W, y)
    cfg = OsLalmConfig(alpha=1.5, M=2, P=10, x_max=0.3)
    x0 = np.full(10, 5.0)  # violates the box
    x = os_lalm_update(x0, prob, None, 0.0, cfg)
    assert np.all(x >= 0.0) and np.all(x <= 0.3)


def test_os_lalm_subsets_approximate_full():
    # interleaved view subsets approximate the full gradient on a real
    # scan geometry (they would not on an arbitrary matrix)
    ph = shepp_logan(32, 32)
    geom = parallel_beam(48, 48, 32, 32, 1.0)
    meas = simulate_measurements(
        forward_project(ph, geom), ScanProtocol(I0=1e5, sigma=5.0, seed=0)
    )
    proj = Projector(geom)
    prob = make_quadratic(proj, meas.weights.ravel(), meas.post_log.ravel())
    x0 = np.zeros(proj.n_pixels)
    x1 = os_lalm_update(x0, prob, None, 0.0,
                        OsLalmConfig(alpha=1.0, M=1, P=400, x_max=1.0))
    x4 = os_lalm_update(x0, prob, None, 0.0,
                        OsLalmConfig(alpha=1.0, M=4, P=100, x_max=1.0))
    rmse1 = np.sqrt(np.mean((x1 - ph.values.ravel()) ** 2))
    rmse4 = np.sqrt(np.mean((x4 - ph.values.ravel()) ** 2))
    assert abs(rmse1 - rmse4) / rmse1 < 0.02


# ---------------------------------------------------------------------------
# edge-preserving pieces


def test_ep_potential_values():
    delta = 20.0
    assert ep_potential(np.array([20.0]), delta)[0] == pytest.approx(
        400.0 * (1 - np.log(2.0))
    )
    assert ep_potential(np.array([0.0]), delta)[0] == 0.0
    t = np.linspace(-100, 100, 41)
    assert np.allclose(ep_potential(t, delta), ep_potential(-t, delta))
    assert ep_potential_grad(np.array([0.0]), delta)[0] == 0.0


def test_ep_potential_grad_matches_fd():
    delta = 7.0
    t = np.linspace(-30, 30, 13)
    h = 1e-6
    fd = (ep_potential(t + h, delta) - ep_potential(t - h, delta)) / (2 * h)
    assert np.allclose(ep_potential_grad(t, delta), fd, atol=1e-6)


def test_ep_reg_grad_matches_fd(rng):
    x = rng.normal(size=(8, 8)) * 0.01
    kappa = rng.uniform(0.5, 1.5, size=(8, 8))
    delta, beta = 0.0004, 2.5
    g = ep_reg_grad(x, kappa, delta, beta)
    h = 1e-9
    for idx in [(0, 0), (3, 4), (7, 7), (5, 1)]:
        xp = x.copy(); xp[idx] += h
        xm = x.copy(); xm[idx] -= h
        fd = beta * (ep_reg_value(xp, kappa, delta) - ep_reg_value(xm, kappa, delta)) / (2 * h)
        assert g[idx] == pytest.approx(fd, rel=1e-4)


def test_ep_hessian_diag_bounds_curvature():
    kappa = np.ones((6, 6))
    d = ep_hessian_diag(kappa, beta=1.0)
    assert d[3, 3] == pytest.approx(4.0 * 8)  # interior: 8 neighbors
    assert d[0, 0] == pytest.approx(4.0 * 3)  # corner: 3 neighbors


def test_kappa_weights_properties():
    geom = parallel_beam(24, 36, 24, 24, 1.0)
    proj = Projector(geom)
    rng = np.random.default_rng(1)
    W = rng.uniform(0.1, 3.0, size=proj.n_rays)
    kappa = kappa_from_projector(proj, W)
    assert np.all(kappa >= 0)
    a1 = proj.adjoint(np.ones(proj.n_rays))
    assert np.all(kappa[a1 == 0] == 0.0)


def _small_measurements(i0=1e5, size=32, views=48, seed=0):
    ph = shepp_logan(size, size)
    geom = parallel_beam(views, int(size * 1.5), size, size, 1.0)
    sino = forward_project(ph, geom)
    meas = simulate_measurements(sino, ScanProtocol(I0=i0, sigma=5.0, seed=seed))
    return ph, geom, meas


def test_pwls_ep_beta_zero_reduces_to_wls():
    ph, geom, meas = _small_measurements()
    proj = Projector(geom)
    cfg = OsLalmConfig(alpha=1.0, M=1, P=200, x_max=1.0)
    img = pwls_ep_reconstruct(meas, geom, EpParams(beta=0.0), cfg,
                              init=Image(np.zeros((32, 32))))
    prob = make_quadratic(proj, meas.weights.ravel(), meas.post_log.ravel())
    x_ref = os_lalm_update(np.zeros(32 * 32), prob, None, 0.0, cfg)
    assert np.allclose(img.values.ravel(), x_ref)


def test_pwls_ep_objective_decreases():
    ph, geom, meas = _small_measurements()
    log = []
    cfg = OsLalmConfig(alpha=1.999, M=4, P=4)
    pwls_ep_reconstruct(meas, geom, EpParams(beta=2.0**8), cfg, n_outer=5, log=log)
    objs = [row["objective"] for row in log]
    assert objs[-1] <= objs[0]


def _toy_union(side=8):
    base = dct_matrix_2d(side)
    rot = base.copy()
    rot[0] = base[1]
    rot[1] = base[0]
    return TransformUnion(np.stack([base, rot]), patch_side=side)


def test_ultra_reg_grad_matches_fd(rng):
    rows = cols = 32
    x = rng.uniform(0.0, 0.04, size=(rows, cols))
    union = _toy_union()
    cfg = PatchConfig(8, 4)
    gamma, beta = 0.01, 5.0
    assignment = cluster_image(x, union, gamma, cfg)
    g = ultra_reg_grad(x.ravel(), assignment, union, 1.0, beta, rows, cols)
    h = 3e-7
    rng_idx = [(0, 0), (10, 20), (31, 31), (16, 5)]
    for idx in rng_idx:
        xp = x.copy(); xp[idx] += h
        xm = x.copy(); xm[idx] -= h
        fp = beta * ultra_reg_value(xp, assignment, union, 1.0, gamma)
        fm = beta * ultra_reg_value(xm, assignment, union, 1.0, gamma)
        fd = (fp - fm) / (2 * h)
        assert g[idx[0] * cols + idx[1]] == pytest.approx(fd, rel=1e-5, abs=1e-12)


def test_pwls_ultra_beta_zero_is_wls():
    # with the regularizer off the image update is exactly the WLS
    # OS-LALM pass, whatever the transforms are
    ph, geom, meas = _small_measurements()
    proj = Projector(geom)
    union = _toy_union()
    cfg = OsLalmConfig(alpha=1.0, M=1, P=50, x_max=1.0)
    params = UltraParams(beta=0.0, gamma=20.0, transforms=union,
                         outer_iters=1, patch=PatchConfig(8, 4), inner=cfg)
    img, asg = pwls_ultra_reconstruct(meas, geom, params, init=Image(np.zeros((32, 32))))
    prob = make_quadratic(proj, meas.weights.ravel(), meas.post_log.ravel())
    x_ref = os_lalm_update(np.zeros(32 * 32), prob, None, 0.0, cfg)
    assert np.array_equal(img.values.ravel(), x_ref)


def test_pwls_ultra_objective_monotone_single_subset():
    ph, geom, meas = _small_measurements()
    union = _toy_union()
    params = UltraParams(
        beta=10.0, gamma=0.004, transforms=union, outer_iters=8,
        patch=PatchConfig(8, 2),
        inner=OsLalmConfig(alpha=1.0, M=1, P=5),
    )
    log = []
    pwls_ultra_reconstruct(meas, geom, params, log=log)
    objs = np.array([row["objective"] for row in log])
    assert np.all(np.diff(objs) <= 1e-8 * np.abs(objs[:-1]))


def test_pwls_ultra_returns_final_assignment():
    ph, geom, meas = _small_measurements()
    union = _toy_union()
    params = UltraParams(beta=1.0, gamma=0.004, transforms=union, outer_iters=2,
                         patch=PatchConfig(8, 4),
                         inner=OsLalmConfig(alpha=1.999, M=2, P=2))
    img, asg = pwls_ultra_reconstruct(meas, geom, params)
    fresh = cluster_image(img.values, union, params.gamma, params.patch)
    assert np.array_equal(asg.labels, fresh.labels)
