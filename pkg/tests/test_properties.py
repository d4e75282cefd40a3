import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fedminimax.algorithms import (AlgorithmConfig, ClientStates, run_local_sgda,
                                   run_local_sgda_plus, run_momentum_local_sgda, spread,
                                   sync_states)
from fedminimax.core import (ConfigError, RngStream, StepSchedule, SyncSchedule, anchored_mean,
                             draw_gaussian)
from fedminimax.harness import config_hash
from fedminimax.metrics import phi_gap
from fedminimax.oracles import centralized_sgda_reference, fit_rate
from fedminimax.problems import HeterogeneityProfile, make_quadratic, project_ball, \
    project_simplex

SLOW = settings(max_examples=20, deadline=None)
FAST = settings(max_examples=100, deadline=None)
finite = st.floats(-1e3, 1e3, allow_nan=False)
seeds = st.integers(0, 2 ** 32)


@FAST
@given(seeds, st.integers(-1, 50), st.integers(0, 300))
def test_advance_equals_discarding(seed, client, k):
    a, b = RngStream(seed, client), RngStream(seed, client)
    a.advance(k)
    assert a.normals(1)[0] == b.normals(k + 1)[-1]


@FAST
@given(seeds, st.lists(st.integers(1, 40), min_size=1, max_size=8))
def test_chunked_draws_equal_one_long_draw(seed, sizes):
    s = RngStream(seed, 0)
    parts = np.concatenate([s.normals(k) for k in sizes])
    assert np.array_equal(parts, RngStream(seed, 0).normals(sum(sizes)))


@FAST
@given(seeds, st.permutations(range(4)))
def test_stream_outputs_ignore_interleaving(seed, order):
    ref = [RngStream(seed, i).normals(6) for i in range(4)]
    streams = [RngStream(seed, i) for i in range(4)]
    got = [[] for _ in range(4)]
    for _ in range(3):
        for i in order:
            got[i].append(streams[i].normals(2))
    for i in range(4):
        assert np.array_equal(np.concatenate(got[i]), ref[i])


@FAST
@given(seeds, st.integers(1, 30), st.floats(0, 10))
def test_draw_gaussian_advances_by_dim(seed, dim, sigma):
    s = RngStream(seed)
    v = draw_gaussian(s, dim, sigma)
    assert v.shape == (dim,) and s.counter == dim and np.all(np.isfinite(v))


@FAST
@given(st.floats(0, 2), st.floats(0.01, 50), st.floats(0.01, 50))
def test_step_schedule_convexity_rule(alpha, bx, by):
    ok = 0 < alpha <= 1 and alpha * bx <= 1 + 1e-12 and alpha * by <= 1 + 1e-12
    try:
        StepSchedule(0.1, 0.1, alpha, bx, by)
        assert ok
    except ConfigError:
        assert not ok


@FAST
@given(arrays(float, st.tuples(st.integers(1, 6), st.integers(1, 4)), elements=finite))
def test_anchored_mean_of_repeated_row_is_exact(a):
    rows = np.repeat(a[:1], a.shape[0], 0)
    assert np.array_equal(anchored_mean(rows), a[0])


@FAST
@given(arrays(float, st.integers(1, 8), elements=finite), st.floats(0.1, 10))
def test_ball_projection(y, r):
    p = project_ball(y, r)
    assert np.linalg.norm(p) <= r * (1 + 1e-12)
    np.testing.assert_allclose(project_ball(p, r), p, rtol=1e-12, atol=1e-12)
    if np.linalg.norm(y) <= r:
        assert np.array_equal(p, y)


@FAST
@given(arrays(float, st.integers(1, 8), elements=st.floats(-10, 10)), seeds)
def test_simplex_projection_is_nearest_feasible(y, seed):
    p = project_simplex(y)
    assert np.all(p >= 0) and abs(p.sum() - 1) < 1e-12
    np.testing.assert_allclose(project_simplex(p), p, atol=1e-12)
    rng = np.random.default_rng(seed % 2 ** 32)
    others = rng.dirichlet(np.ones(y.size), 50)
    assert np.all(np.sum((others - y) ** 2, 1) >= np.sum((p - y) ** 2) - 1e-9)


@FAST
@given(arrays(float, st.tuples(st.integers(1, 6), st.integers(2, 6)), elements=finite),
       arrays(float, 6, elements=finite))
def test_spread_properties(P, shift):
    dx, dy = spread(P, 1)
    assert dx >= 0 and dy >= 0
    same = np.repeat(P[:1], P.shape[0], 0)
    assert spread(same, 1) == (0.0, 0.0)
    moved = spread(P + shift[: P.shape[1]], 1)
    np.testing.assert_allclose(moved, (dx, dy), rtol=1e-6, atol=1e-6)


@FAST
@given(arrays(float, st.tuples(st.integers(1, 6), st.integers(1, 4)), elements=finite),
       st.sampled_from(["average", "reset", "keep"]))
def test_sync_idempotent(X, policy):
    st_ = ClientStates(X, -X, 2 * X, X + 1)
    once = sync_states(st_, policy)
    twice = sync_states(once, policy)
    for f in ("x", "y", "d_x", "d_y"):
        assert np.array_equal(getattr(once, f), getattr(twice, f))
    assert np.all(once.x == once.x[0])


@SLOW
@given(st.integers(1, 4), seeds, st.floats(0, 0.5))
def test_tau_one_bit_identity(n, seed, sigma):
    het = HeterogeneityProfile(0.3, 0.3) if n > 1 else HeterogeneityProfile()
    p = make_quadratic(n, 3, 3, "NC_SC", het, sigma, seed=seed % 1000)
    c = AlgorithmConfig(StepSchedule(0.02, 0.1), SyncSchedule(1, 60), seed=seed)
    a, b = run_local_sgda(p, c), centralized_sgda_reference(p, c)
    assert np.array_equal(a.x, b.x) and np.array_equal(a.y, b.y)


@SLOW
@given(st.integers(1, 5), st.integers(1, 4), seeds)
def test_snapshot_argument_frozen_between_refreshes(tau, mult, seed):
    S = tau * mult
    T = S * 3
    p = make_quadratic(2, 3, 3, "NC_SC", HeterogeneityProfile(0.2, 0.2), 0.3, seed=seed % 100)
    calls = []
    orig = p.grad_y
    p.grad_y = lambda X, Y: (calls.append(np.array(X)), orig(X, Y))[1]
    run_local_sgda_plus(p, AlgorithmConfig(StepSchedule(0.02, 0.05), SyncSchedule(tau, T, S),
                                           seed=seed))
    for t in range(1, T):
        if t % S:
            assert np.array_equal(calls[t], calls[t - 1])


@SLOW
@given(st.floats(0.05, 1.0), st.floats(0.1, 1.0), seeds)
def test_momentum_direction_is_convex_combination(alpha, frac, seed):
    beta = frac / alpha
    p = make_quadratic(1, 3, 2, "NC_SC", HeterogeneityProfile(), 0.0, seed=seed % 100)
    step = StepSchedule(0.05, 0.1, alpha=alpha, beta_x=beta, beta_y=beta)
    tr = run_momentum_local_sgda(p, AlgorithmConfig(step, SyncSchedule(1, 30)))
    for t in range(tr.T - 1):
        g = p.mean_grad_x(tr.x[t + 1], tr.y[t + 1])[0]
        lo = np.minimum(tr.dir_x[t], g) - 1e-12 * (1 + np.abs(g))
        hi = np.maximum(tr.dir_x[t], g) + 1e-12 * (1 + np.abs(g))
        assert np.all((tr.dir_x[t + 1] >= lo) & (tr.dir_x[t + 1] <= hi))


@SLOW
@given(st.integers(1, 3), seeds, st.floats(0, 0.3))
def test_zero_noise_identical_clients_have_no_drift(n, seed, scale):
    p = make_quadratic(n, 3, 3, "NC_SC", HeterogeneityProfile(), 0.0, seed=seed % 100)
    tr = run_local_sgda(p, AlgorithmConfig(StepSchedule(0.02, 0.05), SyncSchedule(4, 40)))
    assert np.all(tr.delta_x == 0) and np.all(tr.delta_y == 0)


@SLOW
@given(st.sampled_from(["NC_SC", "NC_PL"]), seeds)
def test_gap_nonnegative_and_pl(tag, seed):
    p = make_quadratic(3, 4, 4, tag, HeterogeneityProfile(0.3, 0.3), 0.0, seed=seed % 1000)
    rng = np.random.default_rng(seed)
    for _ in range(20):
        x, y = rng.standard_normal(4) * 2, rng.standard_normal(4) * 2
        gap = phi_gap(p, x, y)
        gy = p.global_grad(x, y)[1]
        assert gap >= 0
        assert gy @ gy >= 2 * p.mu * gap - 1e-8


@FAST
@given(st.floats(-3, 3), st.floats(0.01, 100), st.integers(3, 10))
def test_fit_recovers_power_and_ignores_scale(slope, c, k):
    xs = np.geomspace(1, 1000, k)
    f1 = fit_rate(xs, c * xs ** slope)
    f2 = fit_rate(xs, xs ** slope)
    assert abs(f1.slope - slope) < 1e-9 and abs(f1.slope - f2.slope) < 1e-9
    assert 0 <= f1.r_squared <= 1


json_leaf = st.one_of(st.integers(), st.floats(allow_nan=False, allow_infinity=False), st.text())


@FAST
@given(st.dictionaries(st.text(min_size=1), json_leaf, min_size=1), st.randoms())
def test_config_hash_ignores_key_order(doc, rnd):
    keys = list(doc)
    rnd.shuffle(keys)
    assert config_hash({k: doc[k] for k in keys}) == config_hash(doc)
