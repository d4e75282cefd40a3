import itertools
import json

import numpy as np
import pytest

from conftest import scalar_problem
from fedminimax.core import ConfigError, RngStream
from fedminimax.oracles import finite_diff_grad
from fedminimax.problems import (HeterogeneityProfile, OnePointConcaveProblem, QuadraticProblem,
                                 envelope_oracle, load_problem, make_quadratic, project_ball,
                                 project_simplex, project_y, stochastic_grad, validate_assumptions)

ALL_TAGS = ("NC_SC", "NC_PL", "NC_C", "NC_1PC")


def _instance(tag, n=3, het=(0.3, 0.3), sigma=0.1, seed=0):
    return make_quadratic(n, 5, 5, tag, HeterogeneityProfile(*het), sigma, seed=seed)


def test_scalar_stochastic_grad_is_exact_without_noise(scalar):
    gx, gy = stochastic_grad(scalar, 0, np.array([1.0]), np.array([1.0]), RngStream(0, 0))
    assert gx[0] == 0.0 and gy[0] == -1.0


def test_scalar_envelope(scalar):
    phi, g, ys = envelope_oracle(scalar, np.array([1.0]))
    assert ys[0] == pytest.approx(0.5)
    assert g[0] == pytest.approx(-0.5)
    assert phi == pytest.approx(-0.25)


def test_stochastic_grad_variance():
    p = _instance("NC_SC", sigma=0.3)
    x, y = np.ones(5), -np.ones(5)
    exact = p.client_grad(1, x, y)[0]
    s = RngStream(9, 1)
    draws = np.array([stochastic_grad(p, 1, x, y, s)[0] for _ in range(100_000)])
    var = np.mean(np.sum((draws - exact) ** 2, axis=1))
    assert var == pytest.approx(0.09, rel=0.05)


def test_stochastic_grad_unbiased():
    p = _instance("NC_SC", sigma=0.5)
    x, y = np.full(5, 0.3), np.full(5, -0.2)
    exact = p.client_grad(0, x, y)[1]
    s = RngStream(4, 0)
    N = 10_000
    mean = np.mean([stochastic_grad(p, 0, x, y, s)[1] for _ in range(N)], axis=0)
    # per-coordinate sd is sigma/sqrt(d2)
    assert np.all(np.abs(mean - exact) <= 3 * 0.5 / np.sqrt(5) / np.sqrt(N) * 1.5)


def test_zero_gradient_at_saddle(ncsc):
    A, b, _ = ncsc.phi_quadratic()
    xs = np.linalg.solve(A, -b)
    gx, gy = ncsc.global_grad(xs, ncsc.y_star(xs))
    assert np.linalg.norm(gx) < 1e-10 and np.linalg.norm(gy) < 1e-10


@pytest.mark.parametrize("tag", ALL_TAGS)
def test_client_gradients_match_finite_differences(tag):
    p = _instance(tag)
    rng = np.random.default_rng(0)
    for _ in range(100):
        i = int(rng.integers(p.n))
        x, y = rng.standard_normal(p.d1), rng.standard_normal(p.d2)
        gx, gy = p.client_grad(i, x, y)
        fx = finite_diff_grad(lambda z: p.client_value(i, z, y), x)
        fy = finite_diff_grad(lambda z: p.client_value(i, x, z), y)
        np.testing.assert_allclose(fx, gx, rtol=1e-5, atol=1e-7)
        np.testing.assert_allclose(fy, gy, rtol=1e-5, atol=1e-7)


@pytest.mark.parametrize("tag", ALL_TAGS)
def test_generated_instances_pass_their_checks(tag):
    p = _instance(tag)
    rep = validate_assumptions(p, sample_count=200)
    assert rep.ok, rep.checks
    assert rep.L_f == pytest.approx(p.lipschitz)


@pytest.mark.parametrize("tag", ("NC_SC", "NC_PL"))
def test_generated_spectrum(tag):
    p = make_quadratic(4, 5, 5, tag, HeterogeneityProfile(), 0.0, seed=1, mu=0.25, kappa=4.0)
    w = np.linalg.eigvalsh(p.Mbar)
    assert np.linalg.eigvalsh(p.Qbar)[0] < 0
    assert p.lipschitz == pytest.approx(1.0, rel=1e-9)
    if tag == "NC_SC":
        assert w[0] == pytest.approx(0.25, abs=1e-10)
    else:
        assert abs(w[0]) < 1e-10
        rep = validate_assumptions(p)
        assert abs(rep.mu - 0.25) <= 1e-10


def test_pl_range_condition():
    p = _instance("NC_PL", het=(0.4, 0.4))
    w, v = np.linalg.eigh(p.Mbar)
    null = v[:, np.abs(w) < 1e-10]
    assert null.shape[1] >= 1
    for i in range(p.n):
        assert np.abs(null.T @ p.d[i]).max() < 1e-10
        assert np.abs(null.T @ p.B[i].T).max() < 1e-10


def test_sc_request_with_zero_mu_rejected():
    with pytest.raises(ConfigError):
        make_quadratic(2, 3, 3, "NC_SC", mu=0.0)


def test_zero_heterogeneity_gives_identical_clients():
    p = make_quadratic(5, 4, 4, "NC_SC", HeterogeneityProfile(), 0.1, seed=2)
    for arr in (p.Q, p.B, p.M, p.c, p.d):
        assert np.all(arr == arr[0])
    rep = validate_assumptions(p)
    assert rep.varsigma_x == 0.0 and rep.varsigma_y == 0.0


def test_offset_heterogeneity_is_exact():
    p = make_quadratic(6, 5, 5, "NC_SC", HeterogeneityProfile(0.5, 0.2), 0.0, seed=2)
    rep = validate_assumptions(p)
    assert rep.varsigma_exact
    assert rep.varsigma_x == pytest.approx(0.5, abs=1e-12)
    assert rep.varsigma_y == pytest.approx(0.2, abs=1e-12)


def test_offset_heterogeneity_monotone():
    levels = [0.0, 0.1, 0.4, 1.0]
    got = [validate_assumptions(make_quadratic(4, 3, 3, "NC_SC", HeterogeneityProfile(v, 0.0),
                                               0.0, seed=0)).varsigma_x for v in levels]
    assert all(a <= b for a, b in zip(got, got[1:]))


def test_rotation_mode_heterogeneity_measured():
    p = make_quadratic(4, 3, 3, "NC_SC", HeterogeneityProfile(0.3, 0.3, "rotation"), 0.0, seed=0)
    rep = validate_assumptions(p)
    assert not rep.varsigma_exact
    assert rep.varsigma_x > 0


def test_sc_instance_pl_with_lambda_min(ncsc):
    rep = validate_assumptions(ncsc)
    assert rep.checks["pl"]
    assert rep.mu == pytest.approx(np.linalg.eigvalsh(ncsc.Mbar)[0])


def test_envelope_gradient_matches_finite_differences():
    for tag in ("NC_SC", "NC_PL", "NC_C"):
        p = _instance(tag)
        x = np.random.default_rng(1).standard_normal(5)
        g = envelope_oracle(p, x)[1]
        fd = finite_diff_grad(lambda z: p.envelope(z)[0], x)
        assert np.linalg.norm(fd - g) <= 1e-5 * np.linalg.norm(g)


def test_envelope_minimiser_is_stationary(ncsc):
    A, b, _ = ncsc.phi_quadratic()
    g = envelope_oracle(ncsc, np.linalg.solve(A, -b))[1]
    assert np.linalg.norm(g) < 1e-10


def test_ystar_zeroes_y_gradient():
    for tag in ("NC_SC", "NC_PL"):
        p = _instance(tag)
        rng = np.random.default_rng(2)
        for _ in range(10):
            x = rng.standard_normal(5)
            assert np.linalg.norm(p.global_grad(x, p.y_star(x))[1]) < 1e-10


def test_envelope_rejects_unsupported():
    p = _instance("NC_SC")
    con = QuadraticProblem(p.Q, p.B, p.M, p.c, p.d, y_constraint="simplex")
    with pytest.raises(ValueError):
        envelope_oracle(con, np.zeros(5))


def test_projections():
    np.testing.assert_allclose(project_ball(np.array([3.0, 4.0]), 1.0), [0.6, 0.8])
    np.testing.assert_allclose(project_simplex(np.array([0.2, 0.2])), [0.5, 0.5])
    y = np.array([0.1, 0.6, 0.3])
    np.testing.assert_allclose(project_simplex(y), y, atol=1e-15)


def test_simplex_projection_matches_grid_search():
    y = np.array([0.9, -0.4])
    t = np.linspace(0, 1, 200_001)
    cand = np.stack([t, 1 - t], axis=1)
    best = cand[np.argmin(np.sum((cand - y) ** 2, axis=1))]
    np.testing.assert_allclose(project_simplex(y), best, atol=1e-5)


def test_project_y_requires_constraint(ncsc):
    with pytest.raises(ValueError):
        project_y(ncsc, np.zeros(5))


@pytest.mark.parametrize("tag", ALL_TAGS)
def test_json_round_trip(tag, tmp_path):
    p = _instance(tag)
    path = tmp_path / "p.json"
    p.save(path)
    q = load_problem(path)
    assert type(q) is type(p)
    x, y = np.ones(5), np.full(5, 0.1)
    assert q.global_value(x, y) == p.global_value(x, y)
    assert json.loads(path.read_text())["class_tag"] == tag


def test_load_rejects_foreign_document():
    with pytest.raises(ValueError):
        load_problem({"format": "something-else"})


def test_one_point_concave_is_not_concave():
    p = _instance("NC_1PC")
    assert isinstance(p, OnePointConcaveProblem)
    rep = validate_assumptions(p, sample_count=300)
    assert rep.checks["one_point_concave"] and rep.checks["not_concave"]


def test_structure_independent_of_n():
    a = make_quadratic(4, 5, 5, "NC_SC", HeterogeneityProfile(), 0.5, seed=0)
    b = make_quadratic(16, 5, 5, "NC_SC", HeterogeneityProfile(), 0.5, seed=0)
    np.testing.assert_array_equal(a.Qbar, b.Qbar)
    np.testing.assert_array_equal(a.x0, b.x0)
