"""Independent references: finite differences, brute-force inner maximisation,
log-log rate fitting and a centralized SGDA baseline."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import optimize, stats

from .algorithms import AlgorithmConfig, ClientStates, ServerState, Trace, _Recorder, \
    _client_streams, _output_index
from .core import NoiseBank, anchored_mean


def finite_diff_grad(fn: Callable[[np.ndarray], float], x, h: float = 1e-5,
                     refine: bool = True, rtol: float = 1e-4) -> np.ndarray:
    """Central differences per coordinate.

    With ``refine`` the estimate is compared against step ``h/2``; if they
    disagree by more than ``rtol`` (relative) the Richardson combination
    ``(4 g_{h/2} - g_h) / 3`` is returned instead.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    x = np.asarray(x, dtype=float)

    def central(step):
        g = np.empty_like(x)
        for j in range(x.size):
            e = np.zeros_like(x)
            e[j] = step
            g[j] = (fn(x + e) - fn(x - e)) / (2.0 * step)
        return g

    g = central(h)
    if not refine:
        return g
    g2 = central(h / 2.0)
    scale = max(np.linalg.norm(g2), 1e-12)
    if np.linalg.norm(g2 - g) / scale > rtol:
        return (4.0 * g2 - g) / 3.0
    return g


@dataclass
class InnerMaxResult:
    y: np.ndarray
    value: float
    grad_norm: float
    converged: bool
    starts: int
    iterations: int

    def __iter__(self):
        return iter((self.y, self.value))


def brute_force_inner_max(problem, x, starts: int = 8, tol: float = 1e-10, seed: int = 0,
                          max_iter: int = 5000, start_scale: float = 2.0) -> InnerMaxResult:
    """Multi-start gradient ascent on ``f(x, .)`` with exact line search.

    Unconstrained problems follow the gradient ray; constrained problems
    search along the projected path ``P(y + a g)``.  Stops when the (projected)
    gradient mapping has norm ``<= tol``.  Iterates as ``(y_best, value)``.
    """
    if starts < 1:
        raise ValueError("starts must be >= 1")
    x = np.asarray(x, dtype=float)
    rng = np.random.default_rng(seed)
    constrained = problem.constrained
    d2 = problem.d2

    def f(y):
        return float(problem.mean_value(x, y)[0])

    def grad(y):
        return problem.global_grad(x, y)[1]

    def proj(y):
        return problem.project_y(y) if constrained else y

    def residual(y, g):
        return float(np.linalg.norm(proj(y + g) - y)) if constrained else float(np.linalg.norm(g))

    best = None
    total_iter = 0
    for s in range(starts):
        y = proj(np.asarray(problem.y0, dtype=float).copy() if s == 0
                 else rng.standard_normal(d2) * start_scale)
        g = grad(y)
        it = 0
        while residual(y, g) > tol and it < max_iter:
            def neg(a, y=y, g=g):
                return -f(proj(y + a * g))

            hi = 1.0 / max(problem.lipschitz, 1e-12)
            while hi < 1e12 and neg(2 * hi) < neg(hi):
                hi *= 2.0
            res = optimize.minimize_scalar(neg, bounds=(0.0, 2 * hi), method="bounded",
                                           options={"xatol": 1e-14 * hi})
            a = res.x if res.fun <= neg(2 * hi) else 2 * hi
            y_new = proj(y + a * g)
            if f(y_new) < f(y) - 1e-15 * (1 + abs(f(y))) or np.array_equal(y_new, y):
                break
            y = y_new
            g = grad(y)
            it += 1
        total_iter += it
        cand = (f(y), y, residual(y, g))
        if best is None or cand[0] > best[0]:
            best = cand
    value, y, gn = best
    return InnerMaxResult(y, value, gn, gn <= max(tol, 1e-8), starts, total_iter)


@dataclass
class RateFit:
    slope: float
    intercept: float
    r_squared: float
    points: list
    stderr: float = 0.0
    ci_low: float = float("nan")
    ci_high: float = float("nan")
    burn_in: float = 0.0


def fit_rate(xs: Sequence[float], ys: Sequence[float], burn_in: float = 0.0,
             confidence: float = 0.95) -> RateFit:
    """Ordinary least squares of ``log y`` on ``log x``.

    ``burn_in`` drops that leading fraction of the points (sorted by ``x``)
    before fitting; at least three points must remain.
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.shape != ys.shape or xs.ndim != 1:
        raise ValueError("xs and ys must be 1-D and of equal length")
    if np.any(xs <= 0) or np.any(ys <= 0):
        raise ValueError("fit_rate needs strictly positive data")
    if not 0 <= burn_in < 1:
        raise ValueError("burn_in must lie in [0, 1)")
    order = np.argsort(xs, kind="stable")
    xs, ys = xs[order], ys[order]
    drop = int(math.floor(burn_in * xs.size))
    xs, ys = xs[drop:], ys[drop:]
    if xs.size < 3:
        raise ValueError("at least 3 points are needed after burn-in")
    if np.all(xs == xs[0]):
        raise ValueError("degenerate xs: all values equal")
    lx, ly = np.log(xs), np.log(ys)
    reg = stats.linregress(lx, ly)
    resid = ly - (reg.intercept + reg.slope * lx)
    sst = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 if sst == 0 else max(0.0, min(1.0, 1.0 - float(resid @ resid) / sst))
    dof = lx.size - 2
    stderr = float(reg.stderr) if np.isfinite(reg.stderr) else 0.0
    q = stats.t.ppf(0.5 + confidence / 2, dof) if dof > 0 else float("inf")
    slope = 0.0 if sst == 0 else float(reg.slope)
    return RateFit(slope, float(reg.intercept) if sst else float(ly.mean()), r2,
                   list(zip(lx.tolist(), ly.tolist())), stderr,
                   slope - q * stderr, slope + q * stderr, burn_in)


def centralized_sgda_reference(problem, config: AlgorithmConfig) -> Trace:
    """Single-process SGDA stepping with the average of the ``n`` client
    stochastic gradients (a size-``n`` minibatch).

    Uses the same per-client noise streams as the local-update runners, so
    with ``tau = 1`` it must reproduce Local SGDA exactly.
    """
    n, d1, d2 = problem.n, problem.d1, problem.d2
    T = config.sync.horizon_T
    stride = config.metric_stride
    step = config.step
    seta = np.concatenate([np.full(d1, -step.eta_x), np.full(d2, step.eta_y)])
    bank = NoiseBank(_client_streams(config.seed, n), d1, d2, problem.sigma,
                     shared=config.shared_noise, block=config.noise_block)
    w = np.concatenate([problem.x0, problem.y0]).astype(float)
    if problem.constrained:
        w[d1:] = problem.project_y(w[d1:])
    rec_steps = np.arange(0, T, stride)
    rec = _Recorder(rec_steps.size, 1, d1, d2, False)
    out_idx = _output_index(config.seed, T)
    x_out = None
    for t in range(T):
        if t % stride == 0:
            rec.add(w, np.zeros((1, d1 + d2)))
        if t == out_idx:
            x_out = w[:d1].copy()
        G = problem.joint_grad(np.repeat(w[None], n, 0))
        G += bank.next_joint()
        w = w + seta * anchored_mean(G)
        if problem.constrained:
            w[d1:] = problem.project_y(w[d1:])
    rec.flush()
    if x_out is None:
        x_out = w[:d1].copy()
    states = np.broadcast_to(w, (n, d1 + d2)).copy()
    return Trace(
        algorithm="centralized_sgda", n=n, T=T, tau=1, steps=rec_steps,
        x=rec.traj[:, :d1], y=rec.traj[:, d1:], delta_x=rec.dx, delta_y=rec.dy,
        x_final=w[:d1].copy(), y_final=w[d1:].copy(), output_index=out_idx, x_output=x_out,
        comm_rounds=0, server=ServerState(w[:d1].copy(), w[d1:].copy()),
        clients=ClientStates(states[:, :d1], states[:, d1:]), config=config,
        projected=problem.constrained,
    )


def monotone_trend(values: Sequence[float], window: Optional[int] = None) -> bool:
    """True when block means over ``window``-sized chunks never increase."""
    v = np.asarray(values, dtype=float)
    window = window or max(1, v.size // 8)
    blocks = [v[i:i + window].mean() for i in range(0, v.size - window + 1, window)]
    return bool(np.all(np.diff(blocks) <= 0))
