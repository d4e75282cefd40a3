"""Stationarity, Moreau-envelope, gap and consensus measures.

Pointwise functions take a single ``x`` (and ``y``); :func:`trace_metrics`
evaluates everything along a recorded trajectory in vectorised form.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .algorithms import ClientStates, Trace, spread

logger = logging.getLogger(__name__)

GAP_TOL = 1e-10
PROX_TOL = 1e-10
PROX_MAX_ITER = 100


@dataclass
class MetricRecord:
    t: int
    grad_phi_norm_sq: Optional[float] = None
    moreau_grad_norm_sq: Optional[float] = None
    phi_gap: Optional[float] = None
    sync_err_x: float = 0.0
    sync_err_y: float = 0.0
    dist_to_saddle: Optional[float] = None


def stationarity_phi(problem, x) -> float:
    """``||grad Phi(x)||^2`` from the closed-form envelope."""
    _, g, _ = problem.envelope(np.asarray(x, dtype=float))
    return float(g @ g)


def _clip_gap(gap):
    gap = np.asarray(gap, dtype=float)
    if np.any(gap < -GAP_TOL):
        raise ValueError(f"negative gap {gap.min():.3e}: inner maximiser is inexact")
    return np.maximum(gap, 0.0)


def phi_gap(problem, x, y) -> float:
    """``Phi(x) - f(x, y)``, clipped at zero within ``1e-10``."""
    phi, _, _ = problem.envelope(np.asarray(x, dtype=float))
    return float(_clip_gap(phi - problem.mean_value(x, y)[0]))


def sync_error(states) -> tuple:
    """``(1/n) sum_i ||x_i - xbar||^2`` and the same for y."""
    if isinstance(states, ClientStates):
        P = np.concatenate([states.x, states.y], axis=1)
        d1 = states.x.shape[1]
    else:
        x, y = states
        x, y = np.atleast_2d(x), np.atleast_2d(y)
        P = np.concatenate([x, y], axis=1)
        d1 = x.shape[1]
    dx, dy = spread(P, d1)
    return float(dx), float(dy)


def default_lambda(problem) -> float:
    return 1.0 / (2.0 * problem.lipschitz)


@dataclass
class ProxResult:
    x_hat: np.ndarray
    grad_norm: float
    iterations: int
    converged: bool


def _prox_newton(problem, x, lam, start=None) -> ProxResult:
    """Damped Newton on ``Phi(z) + ||z - x||^2 / (2 lam)``."""
    inv = 1.0 / lam

    def obj(z):
        phi, g, _ = problem.envelope(z)
        return phi + 0.5 * inv * np.sum((z - x) ** 2), g + inv * (z - x)

    z = np.array(x if start is None else start, dtype=float)
    val, grad = obj(z)
    for it in range(PROX_MAX_ITER):
        gn = float(np.linalg.norm(grad))
        if gn <= PROX_TOL:
            return ProxResult(z, gn, it, True)
        H = problem.phi_hessian(z) + inv * np.eye(z.size)
        try:
            step = np.linalg.solve(H, grad)
            if grad @ step <= 0:
                raise np.linalg.LinAlgError
        except np.linalg.LinAlgError:
            step = lam * grad
        s = 1.0
        while True:
            cand = z - s * step
            cval, cgrad = obj(cand)
            if cval <= val - 1e-4 * s * (grad @ step) or s < 1e-12:
                break
            # near the optimum the decrease drops below the resolution of val
            if (cval <= val + 1e-13 * max(1.0, abs(val))
                    and np.linalg.norm(cgrad) < 0.5 * gn):
                break
            s *= 0.5
        if s < 1e-12 and cval > val:
            # no decrease possible in floating point; accept the current point
            break
        z, val, grad = cand, cval, cgrad
    gn = float(np.linalg.norm(grad))
    return ProxResult(z, gn, PROX_MAX_ITER, gn <= PROX_TOL)


def _check_lambda(problem, lam):
    if lam <= 0:
        raise ValueError("lambda must be positive")
    rho = problem.phi_weak_convexity
    if 1.0 / lam <= rho:
        raise ValueError(f"prox objective is not strongly convex: 1/lambda={1 / lam:.4g} "
                         f"<= weak-convexity modulus {rho:.4g}")


def moreau_prox(problem, x, lam: Optional[float] = None) -> ProxResult:
    """``argmin_z Phi(z) + ||z - x||^2 / (2 lam)``; linear solve for quadratic ``Phi``."""
    lam = default_lambda(problem) if lam is None else float(lam)
    _check_lambda(problem, lam)
    x = np.asarray(x, dtype=float)
    quad = problem.phi_quadratic()
    if quad is not None:
        A, b, _ = quad
        x_hat = np.linalg.solve(A + np.eye(x.size) / lam, x / lam - b)
        return ProxResult(x_hat, 0.0, 0, True)
    res = _prox_newton(problem, x, lam)
    if not res.converged:
        logger.warning("prox solve stopped at gradient norm %.2e", res.grad_norm)
    return res


def moreau_grad(problem, x, lam: Optional[float] = None) -> np.ndarray:
    """Gradient of the Moreau envelope ``Phi_lam`` at ``x``, i.e. ``(x - x_hat)/lam``.

    With the default ``lam = 1/(2 L_f)`` the factor ``1/lam`` is taken to be
    ``2 L_f`` itself, so the output is exactly ``2 L_f (x - x_hat)``.
    """
    x = np.asarray(x, dtype=float)
    scale = 2.0 * problem.lipschitz if lam is None else 1.0 / lam
    res = moreau_prox(problem, x, lam)
    return scale * (x - res.x_hat)


def moreau_envelope(problem, x, lam: Optional[float] = None) -> float:
    """``Phi_lam(x) = min_z Phi(z) + ||z - x||^2 / (2 lam)``."""
    lam = default_lambda(problem) if lam is None else float(lam)
    x = np.asarray(x, dtype=float)
    z = moreau_prox(problem, x, lam).x_hat
    phi, _, _ = problem.envelope(z)
    return float(phi + np.sum((z - x) ** 2) / (2.0 * lam))


def _moreau_grad_sq_batch(problem, xs, lam=None):
    scale = 2.0 * problem.lipschitz if lam is None else 1.0 / lam
    lam = default_lambda(problem) if lam is None else lam
    _check_lambda(problem, lam)
    quad = problem.phi_quadratic()
    if quad is not None:
        A, b, _ = quad
        H = A + np.eye(xs.shape[1]) / lam
        x_hat = np.linalg.solve(H, (xs / lam - b).T).T
    else:
        x_hat = np.empty_like(xs)
        prev = None
        for k, x in enumerate(xs):
            res = _prox_newton(problem, x, lam, start=prev)
            if not res.converged:
                logger.warning("prox solve stopped at gradient norm %.2e", res.grad_norm)
            x_hat[k] = prev = res.x_hat
    g = scale * (xs - x_hat)
    return np.sum(g * g, axis=1)


def saddle_point(problem):
    """``(x*, y*)`` for quadratic envelopes with a unique minimiser, else ``None``."""
    quad = problem.phi_quadratic()
    if quad is None:
        return None
    A, b, _ = quad
    if np.linalg.eigvalsh(A)[0] <= 1e-12:
        return None
    xs = np.linalg.solve(A, -b)
    return xs, problem.y_star(xs)


def trace_metrics(problem, trace: Trace, moreau: Optional[bool] = None,
                  lam: Optional[float] = None) -> dict:
    """Metric arrays along ``trace.steps``; unavailable metrics map to ``None``.

    ``moreau`` defaults to on for instances whose envelope is not quadratic
    (where the envelope gradient is the natural measure) and off otherwise.
    """
    xs, ys = trace.x, trace.y
    out = {"t": trace.steps, "delta_x": trace.delta_x, "delta_y": trace.delta_y,
           "comm_rounds_so_far": trace.comm_rounds_so_far,
           "grad_phi_sq": None, "moreau_grad_sq": None, "phi_gap": None,
           "dist_to_saddle": None, "dir_err_x": None}
    if getattr(problem, "envelope_kind", None) is None:
        return out
    phi, g = problem.envelope_batch(xs)
    out["grad_phi_sq"] = np.sum(g * g, axis=1)
    out["phi_gap"] = _clip_gap(phi - problem.mean_value(xs, ys))
    if moreau is None:
        moreau = problem.phi_quadratic() is None
    if moreau:
        out["moreau_grad_sq"] = _moreau_grad_sq_batch(problem, xs, lam)
    if problem.class_tag == "NC_SC":
        sp = saddle_point(problem)
        if sp is not None:
            out["dist_to_saddle"] = (np.sum((xs - sp[0]) ** 2, axis=1)
                                     + np.sum((ys - sp[1]) ** 2, axis=1))
    if trace.dir_x is not None:
        gx = problem.mean_grad_x(xs, ys)
        out["dir_err_x"] = np.sum((gx - trace.dir_x) ** 2, axis=1)
    return out


def records(metrics: dict) -> list:
    """Row-wise :class:`MetricRecord` view of a :func:`trace_metrics` result."""
    def val(name, k):
        a = metrics.get(name)
        return None if a is None else float(a[k])

    return [
        MetricRecord(int(t), val("grad_phi_sq", k), val("moreau_grad_sq", k), val("phi_gap", k),
                     float(metrics["delta_x"][k]), float(metrics["delta_y"][k]),
                     val("dist_to_saddle", k))
        for k, t in enumerate(metrics["t"])
    ]


def time_mean(values) -> float:
    """Mean over time, anchored at the first value so constants are returned exactly."""
    v = np.asarray(values, dtype=float)
    return float(v[0] + np.mean(v - v[0]))


def is_finite_nonneg(values) -> bool:
    v = np.asarray(values, dtype=float)
    return bool(np.all(np.isfinite(v)) and np.all(v >= 0))


__all__ = [
    "MetricRecord", "stationarity_phi", "phi_gap", "sync_error", "moreau_grad", "moreau_prox",
    "moreau_envelope", "trace_metrics", "records", "saddle_point", "default_lambda", "ProxResult",
    "time_mean",
]
