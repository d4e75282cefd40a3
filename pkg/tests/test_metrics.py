import numpy as np
import pytest

from conftest import scalar_problem
from fedminimax.algorithms import AlgorithmConfig, ClientStates, run_local_sgda, \
    run_momentum_local_sgda
from fedminimax.core import StepSchedule, SyncSchedule
from fedminimax.metrics import (is_finite_nonneg, moreau_envelope, moreau_grad, moreau_prox,
                                phi_gap, records, saddle_point, stationarity_phi, sync_error,
                                time_mean, trace_metrics)
from fedminimax.oracles import finite_diff_grad
from fedminimax.problems import HeterogeneityProfile, QuadraticProblem, make_quadratic


def _convex_scalar():
    # Phi(x) = x^2/2 via an inner problem that contributes nothing
    return QuadraticProblem([[[1.0]]], [[[0.0]]], [[[1.0]]], [[0.0]], [[0.0]])


def test_stationarity_at_minimiser(ncsc):
    xs, _ = saddle_point(ncsc)
    assert stationarity_phi(ncsc, xs) <= 1e-12


def test_stationarity_scalar(scalar):
    assert stationarity_phi(scalar, np.array([1.0])) == pytest.approx(0.25)


def test_stationarity_matches_finite_differences():
    p = make_quadratic(3, 5, 5, "NC_PL", HeterogeneityProfile(0.2, 0.2), 0.0, seed=4)
    x = np.random.default_rng(0).standard_normal(5)
    fd = finite_diff_grad(lambda z: p.envelope(z)[0], x)
    assert stationarity_phi(p, x) == pytest.approx(fd @ fd, rel=1e-4)


def test_moreau_of_half_square():
    p = _convex_scalar()
    assert moreau_prox(p, np.array([2.0]), 1.0).x_hat[0] == pytest.approx(1.0)
    assert moreau_grad(p, np.array([2.0]), 1.0)[0] == pytest.approx(1.0)


def test_moreau_grad_zero_at_minimiser(ncsc):
    xs, _ = saddle_point(ncsc)
    assert np.linalg.norm(moreau_grad(ncsc, xs)) < 1e-10


@pytest.mark.parametrize("tag", ("NC_SC", "NC_C"))
def test_moreau_grad_matches_envelope_differences(tag):
    p = make_quadratic(3, 5, 5, tag, HeterogeneityProfile(0.2, 0.2), 0.0, seed=7)
    x = np.random.default_rng(2).standard_normal(5)
    lam = 1.0 / (2 * p.lipschitz)
    g = moreau_grad(p, x, lam)
    fd = finite_diff_grad(lambda z: moreau_envelope(p, z, lam), x)
    assert np.linalg.norm(fd - g) <= 1e-4 * np.linalg.norm(g)


def test_moreau_default_identity_is_exact():
    p = make_quadratic(3, 5, 5, "NC_C", HeterogeneityProfile(0.2, 0.2), 0.0, seed=1)
    x = np.ones(5)
    x_hat = moreau_prox(p, x).x_hat
    assert np.array_equal(moreau_grad(p, x), 2 * p.lipschitz * (x - x_hat))
    lam = 1 / (2 * p.lipschitz)
    np.testing.assert_allclose(moreau_grad(p, x, lam), (x - x_hat) / lam, rtol=1e-12)


def test_moreau_rejects_large_lambda(scalar):
    # Phi = -x^2/4 is 1/2-weakly convex
    assert scalar.phi_weak_convexity == pytest.approx(0.5)
    with pytest.raises(ValueError):
        moreau_grad(scalar, np.zeros(1), lam=3.0)
    with pytest.raises(ValueError):
        moreau_grad(scalar, np.zeros(1), lam=-1.0)
    moreau_grad(scalar, np.zeros(1), lam=1.0)


def test_sync_error_examples():
    assert sync_error((np.array([[0.0], [2.0]]), np.zeros((2, 1)))) == (1.0, 0.0)
    same = ClientStates(np.ones((3, 2)), np.ones((3, 2)))
    assert sync_error(same) == (0.0, 0.0)


def test_phi_gap_examples(scalar):
    assert phi_gap(scalar, np.array([0.0]), np.array([1.0])) == pytest.approx(1.0)
    x = np.array([0.7])
    assert phi_gap(scalar, x, scalar.y_star(x)) == 0.0


def test_phi_gap_zero_only_at_maximiser(ncsc):
    rng = np.random.default_rng(1)
    x = rng.standard_normal(5)
    ys = ncsc.y_star(x)
    assert phi_gap(ncsc, x, ys) <= 1e-12
    assert phi_gap(ncsc, x, ys + 0.1 * rng.standard_normal(5)) > 0


def test_phi_gap_quadratic_growth_on_pl():
    p = make_quadratic(4, 5, 5, "NC_PL", HeterogeneityProfile(0.3, 0.3), 0.0, seed=0)
    rng = np.random.default_rng(5)
    mu = p.mu
    for _ in range(200):
        x, y = rng.standard_normal(5) * 2, rng.standard_normal(5) * 2
        yp = p.solution_set_projection(x, y)
        assert phi_gap(p, x, y) >= 0.5 * mu * np.sum((y - yp) ** 2) - 1e-8


def test_pl_inequality_pointwise():
    p = make_quadratic(4, 5, 5, "NC_PL", HeterogeneityProfile(0.3, 0.3), 0.0, seed=1)
    rng = np.random.default_rng(6)
    for _ in range(1000):
        x, y = rng.standard_normal(5) * 2, rng.standard_normal(5) * 2
        gy = p.global_grad(x, y)[1]
        assert gy @ gy >= 2 * p.mu * phi_gap(p, x, y) - 1e-8


def test_trace_metrics_shapes_and_values(ncsc):
    tr = run_local_sgda(ncsc, AlgorithmConfig(StepSchedule(0.02, 0.05), SyncSchedule(4, 40),
                                              metric_stride=3))
    m = trace_metrics(ncsc, tr)
    k = len(tr.steps)
    for key in ("grad_phi_sq", "phi_gap", "delta_x", "dist_to_saddle"):
        assert m[key].shape == (k,)
        assert is_finite_nonneg(m[key])
    assert m["moreau_grad_sq"] is None
    np.testing.assert_allclose(m["grad_phi_sq"][2], stationarity_phi(ncsc, tr.x[2]), rtol=1e-12)
    recs = records(m)
    assert recs[1].t == 3 and recs[1].moreau_grad_norm_sq is None


def test_trace_metrics_moreau_on_nonquadratic_envelope():
    p = make_quadratic(2, 4, 4, "NC_C", HeterogeneityProfile(0.2, 0.2), 0.1, seed=0)
    tr = run_local_sgda(p, AlgorithmConfig(StepSchedule(0.02, 0.05), SyncSchedule(2, 20)))
    m = trace_metrics(p, tr)
    assert m["moreau_grad_sq"] is not None
    g = moreau_grad(p, tr.x[5])
    assert m["moreau_grad_sq"][5] == pytest.approx(g @ g, rel=1e-8)


def test_direction_error_recorded(ncsc):
    step = StepSchedule(0.02, 0.05, alpha=0.5, beta_x=1.0, beta_y=1.0)
    tr = run_momentum_local_sgda(ncsc, AlgorithmConfig(step, SyncSchedule(2, 20)))
    assert is_finite_nonneg(trace_metrics(ncsc, tr)["dir_err_x"])


def test_time_mean_of_constant():
    assert time_mean(np.full(17, 2.5)) == 2.5
