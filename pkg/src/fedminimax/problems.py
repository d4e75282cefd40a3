"""Synthetic federated minimax problems with exact gradients and envelope oracles.

Two families are provided:

* :class:`QuadraticProblem` -- clients
  ``f_i(x, y) = 1/2 x'Q_i x + x'B_i y - 1/2 y'M_i y + c_i'x + d_i'y``
  plus an optional bounded separable term ``ripple * sum_j cos(x_j)`` used to
  make the nonconvex-concave (NC_C) instances nonconvex while keeping the
  envelope bounded below.
* :class:`OnePointConcaveProblem` -- a concave quadratic in ``y`` passed
  through a coordinatewise reparameterisation that keeps one-point-concavity
  toward ``y*(x)`` but breaks concavity (NC_1PC).

All gradient methods are batched: ``X`` has shape ``(n, d1)`` and ``Y``
``(n, d2)``, row ``i`` being evaluated with client ``i``'s function.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .core import ConfigError, RngStream, anchored_mean, client_mean, draw_gaussian

CLASS_TAGS = ("NC_SC", "NC_PL", "NC_C", "NC_1PC")
Y_CONSTRAINTS = ("none", "ball", "simplex")
FORMAT_NAME = "fedminimax-problem"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class HeterogeneityProfile:
    """Target heterogeneity levels.

    ``mode="offset"`` shifts the linear terms ``c_i, d_i`` only, which makes the
    gradient dissimilarity constant in ``(x, y)`` and exactly equal to
    ``varsigma_x`` / ``varsigma_y``.  ``mode="rotation"`` perturbs ``B_i``.
    """

    varsigma_x: float = 0.0
    varsigma_y: float = 0.0
    mode: str = "offset"

    def __post_init__(self):
        if self.varsigma_x < 0 or self.varsigma_y < 0:
            raise ConfigError("heterogeneity levels must be non-negative")
        if self.mode not in ("offset", "rotation"):
            raise ConfigError(f"unknown heterogeneity mode {self.mode!r}")


# ---------------------------------------------------------------------------
# projections


def project_ball(y: np.ndarray, radius: float) -> np.ndarray:
    """Euclidean projection of each row of ``y`` onto the ball of given radius."""
    y = np.asarray(y, dtype=float)
    norms = np.linalg.norm(y, axis=-1, keepdims=True)
    scale = np.where(norms > radius, radius / np.where(norms > 0, norms, 1.0), 1.0)
    return y * scale


def project_simplex(y: np.ndarray) -> np.ndarray:
    """Euclidean projection of each row onto ``{v >= 0, sum(v) = 1}``.

    Sort-and-threshold method of Duchi et al. (2008).
    """
    y = np.asarray(y, dtype=float)
    flat = y.reshape(-1, y.shape[-1])
    d = flat.shape[1]
    u = -np.sort(-flat, axis=1)
    css = np.cumsum(u, axis=1) - 1.0
    ind = np.arange(1, d + 1)
    cond = u - css / ind > 0
    rho = d - 1 - np.argmax(cond[:, ::-1], axis=1)
    theta = css[np.arange(flat.shape[0]), rho] / (rho + 1.0)
    out = np.maximum(flat - theta[:, None], 0.0)
    return out.reshape(y.shape)


# ---------------------------------------------------------------------------
# helpers


def _orthogonal(rng: np.random.Generator, d: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))


def _centered_offsets(rng: np.random.Generator, n: int, d: int, level: float) -> np.ndarray:
    """``n`` vectors with zero mean and mean squared norm ``level**2``."""
    raw = rng.standard_normal((n, d))
    if n == 1:
        return np.zeros((1, d))
    raw = raw - client_mean(raw)
    ms = np.mean(np.sum(raw ** 2, axis=1))
    return raw * (level / math.sqrt(ms))


def _sym_norm(h: np.ndarray) -> float:
    w = np.linalg.eigvalsh(h)
    return float(max(w[-1], -w[0]))


def _max_norm_over_box(base: np.ndarray, rows: np.ndarray, lo: float, hi: float):
    """``max ||base + rows' diag(v) rows||_2`` over ``v`` in ``[lo, hi]^k``.

    The norm is convex in ``v`` so the maximum sits at a vertex; vertices are
    enumerated when ``k <= 14``.  Returns ``(value, exact)``.
    """
    k = rows.shape[0]
    if k <= 14:
        best = 0.0
        for signs in itertools.product((lo, hi), repeat=k):
            v = np.asarray(signs)
            best = max(best, _sym_norm(base + rows.T @ (v[:, None] * rows)))
        return best, True
    bound = _sym_norm(base) + max(abs(lo), abs(hi)) * np.linalg.norm(rows, 2) ** 2
    return float(bound), False


def _pinv_psd(m: np.ndarray, tol: float = 1e-12):
    w, v = np.linalg.eigh(m)
    scale = max(1.0, float(np.max(np.abs(w))))
    keep = w > tol * scale
    inv = (v[:, keep] / w[keep]) @ v[:, keep].T
    return inv, w, v, keep


def _rows(X, A):
    # einsum keeps each row's result independent of the number of rows (BLAS does not)
    return np.einsum("ni,ij->nj", X, A)


def _arr(a):
    return np.asarray(a, dtype=float)


# ---------------------------------------------------------------------------
# problem classes


class MinimaxProblem:
    """Shared behaviour of the problem families (projection, sampling, I/O)."""

    n: int
    d1: int
    d2: int
    sigma: float
    class_tag: str
    y_constraint: str
    radius: float
    x0: np.ndarray
    y0: np.ndarray
    meta: dict

    def project_y(self, y: np.ndarray) -> np.ndarray:
        if self.y_constraint == "ball":
            return project_ball(y, self.radius)
        if self.y_constraint == "simplex":
            return project_simplex(y)
        raise ValueError("project_y requires a ball or simplex constraint on y")

    @property
    def constrained(self) -> bool:
        return self.y_constraint != "none"

    def joint_grad(self, W: np.ndarray) -> np.ndarray:
        """Stacked ``[grad_x, grad_y]`` for joint states ``W`` of shape ``(n, d1+d2)``."""
        X, Y = W[:, : self.d1], W[:, self.d1:]
        return np.concatenate([self.grad_x(X, Y), self.grad_y(X, Y)], axis=1)

    def global_value(self, x, y) -> float:
        X = np.broadcast_to(x, (self.n, self.d1))
        Y = np.broadcast_to(y, (self.n, self.d2))
        return float(client_mean(self.value(X, Y)[:, None])[0])

    def global_grad(self, x, y):
        X = np.broadcast_to(x, (self.n, self.d1))
        Y = np.broadcast_to(y, (self.n, self.d2))
        return client_mean(self.grad_x(X, Y)), client_mean(self.grad_y(X, Y))

    def client_value(self, i: int, x, y) -> float:
        X = np.broadcast_to(x, (self.n, self.d1))
        Y = np.broadcast_to(y, (self.n, self.d2))
        return float(self.value(X, Y)[i])

    def client_grad(self, i: int, x, y):
        X = np.broadcast_to(x, (self.n, self.d1))
        Y = np.broadcast_to(y, (self.n, self.d2))
        return self.grad_x(X, Y)[i].copy(), self.grad_y(X, Y)[i].copy()

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    # subclasses provide: value, grad_x, grad_y, to_dict, lipschitz,
    # envelope, phi_quadratic, phi_hessian, phi_weak_convexity


class QuadraticProblem(MinimaxProblem):
    family = "quadratic"

    def __init__(self, Q, B, M, c, d, *, sigma=0.0, class_tag="NC_SC", y_constraint="none",
                 radius=1.0, ripple=0.0, x0=None, y0=None, meta=None):
        self.Q, self.B, self.M = _arr(Q), _arr(B), _arr(M)
        self.c, self.d = _arr(c), _arr(d)
        self.n, self.d1, self.d2 = self.B.shape
        if self.Q.shape != (self.n, self.d1, self.d1) or self.M.shape != (self.n, self.d2, self.d2):
            raise ValueError("inconsistent client matrix shapes")
        if self.c.shape != (self.n, self.d1) or self.d.shape != (self.n, self.d2):
            raise ValueError("inconsistent client vector shapes")
        if not (np.allclose(self.Q, np.swapaxes(self.Q, 1, 2), atol=1e-12)
                and np.allclose(self.M, np.swapaxes(self.M, 1, 2), atol=1e-12)):
            raise ValueError("Q_i and M_i must be symmetric")
        if class_tag not in CLASS_TAGS or y_constraint not in Y_CONSTRAINTS:
            raise ValueError("unknown class tag or y constraint")
        self.sigma = float(sigma)
        self.class_tag = class_tag
        self.y_constraint = y_constraint
        self.radius = float(radius)
        self.ripple = float(ripple)
        self.x0 = np.zeros(self.d1) if x0 is None else _arr(x0)
        self.y0 = np.zeros(self.d2) if y0 is None else _arr(y0)
        self.meta = dict(meta or {})
        self.shared_matrices = all(
            np.array_equal(a, a[0:1].repeat(self.n, 0)) for a in (self.Q, self.B, self.M)
        )
        self.Qbar, self.Bbar, self.Mbar = anchored_mean(self.Q), anchored_mean(self.B), anchored_mean(self.M)
        self.cbar, self.dbar = anchored_mean(self.c), anchored_mean(self.d)
        self._lipschitz = None
        self._envelope_cache = None
        self._joint = None
        if self.shared_matrices and not self.ripple:
            # rows of W @ J are [x'Q + y'B', x'B - y'M]
            self._joint = np.block([[self.Q[0], self.B[0]], [self.B[0].T, -self.M[0]]])
            self._joint_offset = np.concatenate([self.c, self.d], axis=1)

    # -- per-client evaluation ---------------------------------------------
    def value(self, X, Y):
        X, Y = np.asarray(X), np.asarray(Y)
        v = (0.5 * np.einsum("ni,nij,nj->n", X, self.Q, X)
             + np.einsum("ni,nij,nj->n", X, self.B, Y)
             - 0.5 * np.einsum("ni,nij,nj->n", Y, self.M, Y)
             + np.sum(self.c * X, axis=1) + np.sum(self.d * Y, axis=1))
        if self.ripple:
            v = v + self.ripple * np.sum(np.cos(X), axis=1)
        return v

    def grad_x(self, X, Y):
        if self.shared_matrices:
            g = _rows(X, self.Q[0]) + _rows(Y, self.B[0].T) + self.c
        else:
            g = np.einsum("nij,nj->ni", self.Q, X) + np.einsum("nij,nj->ni", self.B, Y) + self.c
        if self.ripple:
            g = g - self.ripple * np.sin(X)
        return g

    def joint_grad(self, W):
        if self._joint is None:
            return super().joint_grad(W)
        return _rows(W, self._joint) + self._joint_offset

    def grad_y(self, X, Y):
        if self.shared_matrices:
            return _rows(X, self.B[0]) - _rows(Y, self.M[0]) + self.d
        return np.einsum("nji,nj->ni", self.B, X) - np.einsum("nij,nj->ni", self.M, Y) + self.d

    def mean_value(self, xs, ys):
        """Averaged objective ``f(x, y)`` at each row pair of ``xs`` and ``ys``."""
        xs, ys = np.atleast_2d(xs), np.atleast_2d(ys)
        v = (0.5 * np.einsum("ki,ij,kj->k", xs, self.Qbar, xs)
             + np.einsum("ki,ij,kj->k", xs, self.Bbar, ys)
             - 0.5 * np.einsum("ki,ij,kj->k", ys, self.Mbar, ys)
             + xs @ self.cbar + ys @ self.dbar)
        if self.ripple:
            v = v + self.ripple * np.sum(np.cos(xs), axis=1)
        return v

    def mean_grad_x(self, xs, ys):
        """x-gradient of the averaged objective at each row pair."""
        g = np.atleast_2d(xs) @ self.Qbar + np.atleast_2d(ys) @ self.Bbar.T + self.cbar
        if self.ripple:
            g = g - self.ripple * np.sin(xs)
        return g

    def envelope_batch(self, xs):
        """``(Phi, grad Phi)`` at each row of ``xs``."""
        xs = np.atleast_2d(xs)
        kind = self.envelope_kind
        if kind == "quadratic":
            _, A, b, const, _ = self._envelope_parts()
            g = xs @ A + b
            return 0.5 * np.einsum("ki,ki->k", xs, xs @ A) + xs @ b + const, g
        if kind == "ball_linear":
            u = xs @ self.Bbar + self.dbar
            nu = np.linalg.norm(u, axis=1)
            phi = 0.5 * np.einsum("ki,ki->k", xs, xs @ self.Qbar) + xs @ self.cbar + self.radius * nu
            g = xs @ self.Qbar + self.cbar + self.radius * (u @ self.Bbar.T) / nu[:, None]
            if self.ripple:
                phi = phi + self.ripple * np.sum(np.cos(xs), axis=1)
                g = g - self.ripple * np.sin(xs)
            return phi, g
        raise ValueError("no closed-form envelope for this instance")

    # -- constants -----------------------------------------------------------
    def _jacobian(self, i):
        return np.block([[self.Q[i], self.B[i]], [self.B[i].T, -self.M[i]]])

    @property
    def lipschitz(self) -> float:
        """Exact Lipschitz constant of the stacked gradient (max over clients)."""
        if self._lipschitz is None:
            clients = [0] if self.shared_matrices else range(self.n)
            if self.ripple:
                rows = np.eye(self.d1, self.d1 + self.d2)
                self._lipschitz = max(
                    _max_norm_over_box(self._jacobian(i), rows, -self.ripple, self.ripple)[0]
                    for i in clients
                )
            else:
                self._lipschitz = max(_sym_norm(self._jacobian(i)) for i in clients)
        return self._lipschitz

    @property
    def mu(self) -> Optional[float]:
        """Smallest nonzero eigenvalue of the averaged ``M`` (PL constant)."""
        if self.y_constraint != "none":
            return None
        w = np.linalg.eigvalsh(self.Mbar)
        scale = max(1.0, float(np.max(np.abs(w))))
        pos = w[w > 1e-10 * scale]
        return float(pos[0]) if pos.size else None

    @property
    def kappa(self) -> Optional[float]:
        mu = self.mu
        return None if mu is None else self.lipschitz / mu

    # -- envelope -----------------------------------------------------------
    def _envelope_parts(self):
        if self._envelope_cache is None:
            K, w, v, keep = _pinv_psd(self.Mbar)
            if np.any(w < -1e-10 * max(1.0, np.max(np.abs(w)))):
                raise ValueError("averaged M is not positive semidefinite")
            # range condition: B'x + d must lie in range(M) for every x
            null = v[:, ~keep]
            if null.size and (np.abs(null.T @ self.Bbar.T).max(initial=0) > 1e-9
                              or np.abs(null.T @ self.dbar).max(initial=0) > 1e-9):
                raise ValueError("max_y f(x, y) is unbounded: range condition fails")
            A = self.Qbar + self.Bbar @ K @ self.Bbar.T
            b = self.cbar + self.Bbar @ K @ self.dbar
            const = 0.5 * self.dbar @ K @ self.dbar
            self._envelope_cache = (K, 0.5 * (A + A.T), b, float(const), null)
        return self._envelope_cache

    @property
    def envelope_kind(self) -> Optional[str]:
        if self.y_constraint == "none" and not self.ripple:
            return "quadratic"
        if self.y_constraint == "ball" and not np.any(self.Mbar):
            return "ball_linear"
        return None

    def phi_quadratic(self):
        """``(A, b, const)`` with ``Phi(x) = x'Ax/2 + b'x + const``, or ``None``."""
        if self.envelope_kind != "quadratic":
            return None
        _, A, b, const, _ = self._envelope_parts()
        return A, b, const

    def y_star(self, x):
        kind = self.envelope_kind
        x = np.asarray(x, dtype=float)
        if kind == "quadratic":
            K = self._envelope_parts()[0]
            return (x @ self.Bbar + self.dbar) @ K
        if kind == "ball_linear":
            u = x @ self.Bbar + self.dbar
            return self.radius * u / np.linalg.norm(u, axis=-1, keepdims=True)
        raise ValueError("no closed-form inner maximiser for this instance")

    def envelope(self, x):
        """``(Phi(x), grad Phi(x), y*(x))`` for a single point ``x``."""
        x = np.asarray(x, dtype=float)
        kind = self.envelope_kind
        if kind == "quadratic":
            _, A, b, const, _ = self._envelope_parts()
            ys = self.y_star(x)
            phi = 0.5 * x @ A @ x + b @ x + const
            grad = self.Qbar @ x + self.cbar + self.Bbar @ ys
            return float(phi), grad, ys
        if kind == "ball_linear":
            u = x @ self.Bbar + self.dbar
            nu = np.linalg.norm(u)
            phi = 0.5 * x @ self.Qbar @ x + self.cbar @ x + self.radius * nu
            grad = self.Qbar @ x + self.cbar + self.radius * (self.Bbar @ u) / nu
            if self.ripple:
                phi += self.ripple * np.sum(np.cos(x))
                grad = grad - self.ripple * np.sin(x)
            return float(phi), grad, self.radius * u / nu
        raise ValueError("envelope oracle supports unconstrained quadratics and "
                         "ball-constrained linear-in-y instances only")

    def phi_hessian(self, x):
        kind = self.envelope_kind
        if kind == "quadratic":
            return self._envelope_parts()[1]
        if kind == "ball_linear":
            u = x @ self.Bbar + self.dbar
            nu = np.linalg.norm(u)
            inner = (np.eye(self.d2) - np.outer(u, u) / nu ** 2) / nu
            h = self.Qbar + self.radius * self.Bbar @ inner @ self.Bbar.T
            if self.ripple:
                h = h - self.ripple * np.diag(np.cos(x))
            return h
        raise ValueError("no envelope Hessian for this instance")

    @property
    def phi_weak_convexity(self) -> float:
        """Upper bound on the weak-convexity modulus of ``Phi``."""
        kind = self.envelope_kind
        if kind == "quadratic":
            return max(0.0, -float(np.linalg.eigvalsh(self._envelope_parts()[1])[0]))
        if kind == "ball_linear":
            return max(0.0, self.ripple - float(np.linalg.eigvalsh(self.Qbar)[0]))
        raise ValueError("no envelope for this instance")

    def solution_set_projection(self, x, y):
        """Nearest maximiser of ``f(x, .)`` to ``y`` (unconstrained quadratics)."""
        K, _, _, _, null = self._envelope_parts()
        ys = self.y_star(x)
        if null.size:
            ys = ys + null @ (null.T @ (y - ys))
        return ys

    # -- serialisation -------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "format": FORMAT_NAME, "version": FORMAT_VERSION, "family": self.family,
            "class_tag": self.class_tag, "n": self.n, "d1": self.d1, "d2": self.d2,
            "sigma": self.sigma, "y_constraint": self.y_constraint, "radius": self.radius,
            "ripple": self.ripple, "meta": self.meta,
            "x0": self.x0.tolist(), "y0": self.y0.tolist(),
            "clients": [
                {"Q": self.Q[i].tolist(), "B": self.B[i].tolist(), "M": self.M[i].tolist(),
                 "c": self.c[i].tolist(), "d": self.d[i].tolist()}
                for i in range(self.n)
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "QuadraticProblem":
        cl = doc["clients"]
        return cls(
            [c["Q"] for c in cl], [c["B"] for c in cl], [c["M"] for c in cl],
            [c["c"] for c in cl], [c["d"] for c in cl],
            sigma=doc["sigma"], class_tag=doc["class_tag"], y_constraint=doc["y_constraint"],
            radius=doc.get("radius", 1.0), ripple=doc.get("ripple", 0.0),
            x0=doc["x0"], y0=doc["y0"], meta=doc.get("meta"),
        )


def _phi_1pc(z, bump, omega):
    return 0.5 * z ** 2 + (bump / omega ** 2) * (1.0 - np.cos(omega * z))


def _dphi_1pc(z, bump, omega):
    return z + (bump / omega) * np.sin(omega * z)


class OnePointConcaveProblem(MinimaxProblem):
    """``f_i(x,y) = x'Px/2 + c_i'x + e_i'y - sum_j m_j phi(z_j)``, ``z = U'(y - Kx - k)``.

    ``phi(z) = z^2/2 + (bump/omega^2)(1 - cos(omega z))``.  For
    ``bump <= 1.5`` one has ``z phi'(z) >= phi(z)``, which gives
    one-point-concavity toward ``y*(x) = Kx + k``; ``bump > 1`` makes
    ``phi`` nonconvex, so ``f`` is not concave in ``y``.  The ``e_i`` sum to
    zero, so ``Phi(x) = x'Px/2 + cbar'x`` exactly.
    """

    family = "one_point_concave"

    def __init__(self, P, K, k, U, m, c, e, *, bump=1.25, omega=2.0, sigma=0.0,
                 y_constraint="none", radius=1.0, x0=None, y0=None, meta=None):
        self.P, self.K, self.k = _arr(P), _arr(K), _arr(k)
        self.U, self.m = _arr(U), _arr(m)
        self.c, self.e = _arr(c), _arr(e)
        self.n, self.d1 = self.c.shape
        self.d2 = self.e.shape[1]
        if not np.allclose(client_mean(self.e), 0.0, atol=1e-12):
            raise ValueError("y-offsets e_i must average to zero")
        self.bump, self.omega = float(bump), float(omega)
        self.sigma = float(sigma)
        self.class_tag = "NC_1PC"
        self.y_constraint = y_constraint
        self.radius = float(radius)
        self.x0 = np.zeros(self.d1) if x0 is None else _arr(x0)
        self.y0 = np.zeros(self.d2) if y0 is None else _arr(y0)
        self.meta = dict(meta or {})
        self.cbar = anchored_mean(self.c)
        self._lipschitz = None
        self.ripple = 0.0

    def _z(self, X, Y):
        return _rows(Y - _rows(X, self.K.T) - self.k, self.U)

    def value(self, X, Y):
        X, Y = np.asarray(X), np.asarray(Y)
        z = self._z(X, Y)
        return (0.5 * np.einsum("ni,ij,nj->n", X, self.P, X) + np.sum(self.c * X, axis=1)
                + np.sum(self.e * Y, axis=1)
                - np.sum(self.m * _phi_1pc(z, self.bump, self.omega), axis=1))

    def grad_x(self, X, Y):
        w = _rows(self.m * _dphi_1pc(self._z(X, Y), self.bump, self.omega), self.U.T)
        return _rows(X, self.P) + self.c + _rows(w, self.K)

    def grad_y(self, X, Y):
        w = _rows(self.m * _dphi_1pc(self._z(X, Y), self.bump, self.omega), self.U.T)
        return self.e - w

    def mean_value(self, xs, ys):
        xs, ys = np.atleast_2d(xs), np.atleast_2d(ys)
        z = (ys - xs @ self.K.T - self.k) @ self.U
        return (0.5 * np.einsum("ki,ij,kj->k", xs, self.P, xs) + xs @ self.cbar
                + ys @ client_mean(self.e) - _phi_1pc(z, self.bump, self.omega) @ self.m)

    def mean_grad_x(self, xs, ys):
        xs, ys = np.atleast_2d(xs), np.atleast_2d(ys)
        z = (ys - xs @ self.K.T - self.k) @ self.U
        w = (self.m * _dphi_1pc(z, self.bump, self.omega)) @ self.U.T
        return xs @ self.P + self.cbar + w @ self.K

    def envelope_batch(self, xs):
        xs = np.atleast_2d(xs)
        g = xs @ self.P + self.cbar
        return 0.5 * np.einsum("ki,ki->k", xs, xs @ self.P) + xs @ self.cbar, g

    @property
    def lipschitz(self) -> float:
        if self._lipschitz is None:
            base = np.zeros((self.d1 + self.d2,) * 2)
            base[: self.d1, : self.d1] = self.P
            G = self.U.T @ np.hstack([-self.K, np.eye(self.d2)])
            rows = np.sqrt(self.m)[:, None] * G
            self._lipschitz = _max_norm_over_box(base, rows, -(1 + self.bump), -(1 - self.bump))[0]
        return self._lipschitz

    mu = None
    kappa = None
    envelope_kind = "quadratic"

    def phi_quadratic(self):
        return self.P, self.cbar, 0.0

    def y_star(self, x):
        return np.asarray(x, dtype=float) @ self.K.T + self.k

    def envelope(self, x):
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.P @ x + self.cbar @ x), self.P @ x + self.cbar, self.y_star(x)

    def phi_hessian(self, x):
        return self.P

    @property
    def phi_weak_convexity(self) -> float:
        return max(0.0, -float(np.linalg.eigvalsh(self.P)[0]))

    def solution_set_projection(self, x, y):
        return self.y_star(x)

    def to_dict(self) -> dict:
        return {
            "format": FORMAT_NAME, "version": FORMAT_VERSION, "family": self.family,
            "class_tag": self.class_tag, "n": self.n, "d1": self.d1, "d2": self.d2,
            "sigma": self.sigma, "y_constraint": self.y_constraint, "radius": self.radius,
            "meta": self.meta, "x0": self.x0.tolist(), "y0": self.y0.tolist(),
            "P": self.P.tolist(), "K": self.K.tolist(), "k": self.k.tolist(),
            "U": self.U.tolist(), "m": self.m.tolist(), "bump": self.bump, "omega": self.omega,
            "clients": [{"c": self.c[i].tolist(), "e": self.e[i].tolist()} for i in range(self.n)],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "OnePointConcaveProblem":
        cl = doc["clients"]
        return cls(doc["P"], doc["K"], doc["k"], doc["U"], doc["m"],
                   [c["c"] for c in cl], [c["e"] for c in cl],
                   bump=doc["bump"], omega=doc["omega"], sigma=doc["sigma"],
                   y_constraint=doc["y_constraint"], radius=doc.get("radius", 1.0),
                   x0=doc["x0"], y0=doc["y0"], meta=doc.get("meta"))


class ConvexQuadraticProblem:
    """Minimisation-only clients ``g_i(x) = x'P_i x/2 + c_i'x`` for Local SGD."""

    def __init__(self, P, c, *, sigma=0.0, x0=None):
        self.P, self.c = _arr(P), _arr(c)
        self.n, self.d = self.c.shape
        self.sigma = float(sigma)
        self.x0 = np.zeros(self.d) if x0 is None else _arr(x0)
        self.Pbar, self.cbar = anchored_mean(self.P), anchored_mean(self.c)
        w = np.linalg.eigvalsh(self.P)
        if np.any(w < -1e-12):
            raise ValueError("client functions must be convex")
        self.lipschitz = float(w.max())
        self.x_star = np.linalg.lstsq(self.Pbar, -self.cbar, rcond=None)[0]
        self.f_star = self.value(self.x_star)

    def grad(self, X):
        return np.einsum("nij,nj->ni", self.P, X) + self.c

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return 0.5 * np.einsum("...i,ij,...j->...", x, self.Pbar, x) + x @ self.cbar

    @property
    def varsigma(self) -> float:
        """Heterogeneity, exact when all ``P_i`` coincide."""
        return float(math.sqrt(np.mean(np.sum((self.c - self.cbar) ** 2, axis=1))))


def make_convex_quadratic(n, d, *, sigma=0.0, varsigma=0.0, seed=0, cond=4.0, L=1.0):
    rng_s, rng_h, rng_0 = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3))
    W = _orthogonal(rng_s, d)
    w = np.linspace(L / cond, L, d)
    P = (W * w) @ W.T
    P = 0.5 * (P + P.T)
    cbar = rng_s.standard_normal(d) / math.sqrt(d)
    c = cbar + _centered_offsets(rng_h, n, d, varsigma)
    x0 = rng_0.standard_normal(d) * 2.0 / math.sqrt(d)
    return ConvexQuadraticProblem(np.repeat(P[None], n, 0), c, sigma=sigma, x0=x0)


# ---------------------------------------------------------------------------
# generator


def _spectral_norm_block(sQ, sqrtB, M):
    return _sym_norm(np.block([[sQ, sqrtB], [sqrtB.T, -M]]))


def make_quadratic(n: int, d1: int, d2: int, class_tag: str = "NC_SC",
                   het: HeterogeneityProfile = HeterogeneityProfile(), sigma: float = 0.0,
                   seed: int = 0, *, mu: float = 0.25, kappa: float = 4.0,
                   y_constraint: Optional[str] = None, radius: float = 1.0,
                   x0_scale: float = 2.0) -> MinimaxProblem:
    """Build an ``n``-client instance of the requested assumption class.

    NC_SC / NC_PL: ``lambda_min(Mbar) = mu`` (smallest nonzero eigenvalue for
    NC_PL, which also has ``max(1, d2//4)`` zero eigenvalues), ``L_f = kappa*mu``
    exactly, ``Qbar`` indefinite, and ``Phi`` strongly convex so it is bounded
    below.  NC_C: ``M = 0`` with a ball constraint on ``y``; ``Qbar`` is
    positive definite and the ripple term ``cos`` makes ``f`` nonconvex in
    ``x``.  NC_1PC: see :class:`OnePointConcaveProblem`.

    The global structure depends only on ``seed`` (not on ``n``), so sweeps
    over ``n`` share the same averaged objective.
    """
    if min(n, d1, d2) < 1:
        raise ConfigError("n, d1, d2 must be >= 1")
    if class_tag not in CLASS_TAGS:
        raise ConfigError(f"unknown class tag {class_tag!r}")
    if n == 1 and (het.varsigma_x or het.varsigma_y):
        raise ConfigError("a single client cannot be heterogeneous")
    if sigma < 0:
        raise ConfigError("sigma must be non-negative")
    rng_s, rng_h, rng_0 = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3))
    meta = {"seed": int(seed), "generator": {
        "n": n, "d1": d1, "d2": d2, "class_tag": class_tag, "sigma": sigma,
        "het": asdict(het), "mu": mu, "kappa": kappa, "y_constraint": y_constraint,
        "radius": radius, "x0_scale": x0_scale}}
    x0 = rng_0.standard_normal(d1) * (x0_scale / math.sqrt(d1))

    if class_tag == "NC_1PC":
        return _make_1pc(n, d1, d2, het, sigma, rng_s, rng_h, x0, meta,
                         y_constraint or "none", radius)
    if class_tag == "NC_C":
        return _make_ncc(n, d1, d2, het, sigma, rng_s, rng_h, x0, meta,
                         y_constraint or "ball", radius)

    if mu <= 0:
        raise ConfigError(f"{class_tag} requires mu > 0")
    if kappa <= 1:
        raise ConfigError("kappa must exceed 1 for a nonconvex instance")
    k0 = 0 if class_tag == "NC_SC" else max(1, d2 // 4)
    if d2 - k0 < 1:
        raise ConfigError("NC_PL needs d2 >= 2")
    V = _orthogonal(rng_s, d2)
    W = _orthogonal(rng_s, d1)
    # work in units where mu = 1, rescale at the end
    m = np.empty(d2)
    m[:k0] = 0.0
    m[k0] = 1.0
    m[k0 + 1:] = rng_s.uniform(1.0, 1.0 + 0.1 * (kappa - 1.0), d2 - k0 - 1)
    r = min(d1, d2 - k0)
    # strongly coupled modes: Q has eigenvalue -s on each of them while the
    # envelope Hessian (s*a before the mu rescale) stays well conditioned
    a = rng_s.uniform(6.0, 8.0, d1)
    cdiag = np.zeros(d1)
    cdiag[:r] = a[:r] + 1.0
    E = np.zeros((d1, d2))
    E[:r, k0:] = np.linalg.qr(rng_s.standard_normal((d2 - k0, r)))[0].T
    Mu = (V * m) @ V.T
    B0 = (W * np.sqrt(cdiag)) @ E @ np.diag(np.sqrt(m)) @ V.T
    Q0 = (W * (a - cdiag)) @ W.T
    Q0 = 0.5 * (Q0 + Q0.T)
    Mu = 0.5 * (Mu + Mu.T)

    def norm_at(s):
        return _spectral_norm_block(s * Q0, math.sqrt(s) * B0, Mu)

    lo, hi = 0.0, 1.0
    while norm_at(hi) < kappa:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if norm_at(mid) < kappa:
            lo = mid
        else:
            hi = mid
    s = 0.5 * (lo + hi)
    Qbar, Bbar, Mbar = mu * s * Q0, mu * math.sqrt(s) * B0, mu * Mu
    # linear terms: d must lie in range(M) for the inner max to exist
    rangeP = V[:, k0:] @ V[:, k0:].T
    cbar = mu * rng_s.standard_normal(d1) / math.sqrt(d1)
    dbar = mu * rangeP @ rng_s.standard_normal(d2) / math.sqrt(d2)

    Bs = np.repeat(Bbar[None], n, 0)
    if het.mode == "offset":
        cs = cbar + _centered_offsets(rng_h, n, d1, het.varsigma_x)
        ds = dbar + _centered_offsets(rng_h, n, d2, het.varsigma_y) @ rangeP
        if het.varsigma_y and n > 1:
            # projecting onto range(M) changes the level; restore it exactly
            dev = ds - dbar
            ds = dbar + dev * (het.varsigma_y / math.sqrt(np.mean(np.sum(dev ** 2, axis=1))))
    else:
        pert = rng_h.standard_normal((n, d1, d2)) @ rangeP
        if n > 1:
            pert -= client_mean(pert)
            pert *= het.varsigma_x / math.sqrt(np.mean(np.linalg.norm(pert, 2, axis=(1, 2)) ** 2))
        else:
            pert[:] = 0.0
        Bs = Bs + pert
        cs = np.repeat(cbar[None], n, 0)
        ds = dbar + _centered_offsets(rng_h, n, d2, het.varsigma_y) @ rangeP
    meta["scale"] = s
    return QuadraticProblem(
        np.repeat(Qbar[None], n, 0), Bs, np.repeat(Mbar[None], n, 0), cs, ds,
        sigma=sigma, class_tag=class_tag, y_constraint=y_constraint or "none",
        radius=radius, x0=x0, meta=meta,
    )


def _make_ncc(n, d1, d2, het, sigma, rng_s, rng_h, x0, meta, y_constraint, radius):
    if y_constraint != "ball":
        raise ConfigError("NC_C instances use a ball constraint on y")
    if d2 < 2:
        raise ConfigError("NC_C needs d2 >= 2 so that B'x + d never vanishes")
    W = _orthogonal(rng_s, d1)
    V = _orthogonal(rng_s, d2)
    Qbar = (W * rng_s.uniform(0.5, 1.5, d1)) @ W.T
    Qbar = 0.5 * (Qbar + Qbar.T)
    ripple = 1.0
    r = min(d1, d2 - 1)
    S = np.zeros((d1, d2))
    S[np.arange(r), np.arange(r)] = rng_s.uniform(0.5, 1.0, r)
    Bbar = _orthogonal(rng_s, d1) @ S @ V.T
    # d has a component outside range(B') so B'x + d is bounded away from zero
    dbar = V[:, :r] @ rng_s.standard_normal(r) / math.sqrt(d2) + 0.5 * V[:, d2 - 1]
    cbar = rng_s.standard_normal(d1) / math.sqrt(d1)
    cs = cbar + _centered_offsets(rng_h, n, d1, het.varsigma_x)
    ds = dbar + _centered_offsets(rng_h, n, d2, het.varsigma_y)
    meta["ripple"] = ripple
    return QuadraticProblem(
        np.repeat(Qbar[None], n, 0), np.repeat(Bbar[None], n, 0), np.zeros((n, d2, d2)), cs, ds,
        sigma=sigma, class_tag="NC_C", y_constraint="ball", radius=radius, ripple=ripple,
        x0=x0, meta=meta,
    )


def _make_1pc(n, d1, d2, het, sigma, rng_s, rng_h, x0, meta, y_constraint, radius):
    if y_constraint != "none":
        raise ConfigError("NC_1PC instances are unconstrained in y")
    W = _orthogonal(rng_s, d1)
    P = (W * rng_s.uniform(0.5, 1.5, d1)) @ W.T
    P = 0.5 * (P + P.T)
    K = 0.5 * rng_s.standard_normal((d2, d1)) / math.sqrt(d1)
    k = rng_s.standard_normal(d2) / math.sqrt(d2)
    U = _orthogonal(rng_s, d2)
    m = rng_s.uniform(0.5, 1.0, d2)
    cbar = rng_s.standard_normal(d1) / math.sqrt(d1)
    c = cbar + _centered_offsets(rng_h, n, d1, het.varsigma_x)
    e = _centered_offsets(rng_h, n, d2, het.varsigma_y)
    return OnePointConcaveProblem(P, K, k, U, m, c, e, sigma=sigma, x0=x0, meta=meta)


def load_problem(source) -> MinimaxProblem:
    """Load a problem from a JSON path or an already-parsed document."""
    doc = source if isinstance(source, dict) else json.loads(Path(source).read_text())
    if doc.get("format") != FORMAT_NAME:
        raise ValueError("not a fedminimax problem document")
    if doc["family"] == "quadratic":
        return QuadraticProblem.from_dict(doc)
    if doc["family"] == "one_point_concave":
        return OnePointConcaveProblem.from_dict(doc)
    raise ValueError(f"unknown problem family {doc['family']!r}")


# ---------------------------------------------------------------------------
# operations


def stochastic_grad(instance: MinimaxProblem, client_i: int, x, y, stream: RngStream):
    """Client gradient plus independent Gaussian noise of variance ``sigma^2``.

    The x-noise is drawn before the y-noise from the same stream, matching the
    order used by the simulator.
    """
    gx, gy = instance.client_grad(client_i, x, y)
    nx = draw_gaussian(stream, instance.d1, instance.sigma)
    ny = draw_gaussian(stream, instance.d2, instance.sigma)
    return gx + nx, gy + ny


def envelope_oracle(instance: MinimaxProblem, x):
    """``(Phi(x), grad Phi(x), y*(x))`` from the closed-form inner maximiser."""
    return instance.envelope(x)


def project_y(instance: MinimaxProblem, y):
    return instance.project_y(y)


@dataclass
class AssumptionReport:
    class_tag: str
    L_f: float
    L_f_exact: bool
    mu: Optional[float]
    kappa: Optional[float]
    varsigma_x: float
    varsigma_y: float
    varsigma_exact: bool
    q_min_eig: Optional[float] = None
    pl_min_slack: Optional[float] = None
    qg_min_slack: Optional[float] = None
    one_pc_min_slack: Optional[float] = None
    concavity_min_slack: Optional[float] = None
    checks: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(self.checks.values())


def _sample_points(instance, rng, count, scale=2.0):
    xs = rng.standard_normal((count, instance.d1)) * scale
    ys = rng.standard_normal((count, instance.d2)) * scale
    if instance.constrained:
        ys = instance.project_y(ys)
    return xs, ys


def validate_assumptions(instance: MinimaxProblem, sample_count: int = 100, seed: int = 0,
                         tol: float = 1e-8) -> AssumptionReport:
    """Measure the constants of the instance and check its class conditions.

    Failures are recorded in ``report.checks``; nothing is raised.
    """
    if sample_count < 1:
        raise ValueError("sample_count must be >= 1")
    rng = np.random.default_rng(seed)
    xs, ys = _sample_points(instance, rng, sample_count)
    n = instance.n

    offset_exact = False
    if isinstance(instance, QuadraticProblem):
        offset_exact = instance.shared_matrices
    elif isinstance(instance, OnePointConcaveProblem):
        offset_exact = True
    if offset_exact:
        dev_c = instance.c - anchored_mean(instance.c)
        dev_d = (instance.d if isinstance(instance, QuadraticProblem) else instance.e)
        dev_d = dev_d - anchored_mean(dev_d)
        vs_x = math.sqrt(np.mean(np.sum(dev_c ** 2, axis=1)))
        vs_y = math.sqrt(np.mean(np.sum(dev_d ** 2, axis=1)))
    else:
        vs_x = vs_y = 0.0
        for x, y in zip(xs, ys):
            X = np.broadcast_to(x, (n, instance.d1))
            Y = np.broadcast_to(y, (n, instance.d2))
            gx, gy = instance.grad_x(X, Y), instance.grad_y(X, Y)
            vs_x = max(vs_x, math.sqrt(np.mean(np.sum((gx - anchored_mean(gx)) ** 2, axis=1))))
            vs_y = max(vs_y, math.sqrt(np.mean(np.sum((gy - anchored_mean(gy)) ** 2, axis=1))))

    L = instance.lipschitz
    L_exact = True
    if isinstance(instance, QuadraticProblem) and instance.ripple and instance.d1 > 14:
        L_exact = False
    mu = instance.mu
    report = AssumptionReport(
        class_tag=instance.class_tag, L_f=L, L_f_exact=L_exact, mu=mu,
        kappa=None if mu is None else L / mu, varsigma_x=vs_x, varsigma_y=vs_y,
        varsigma_exact=offset_exact,
    )
    if isinstance(instance, QuadraticProblem):
        report.q_min_eig = float(np.linalg.eigvalsh(instance.Qbar)[0])

    has_env = instance.envelope_kind is not None
    if not has_env:
        report.notes.append("no closed-form envelope; PL/QG/1PC checks skipped")
        return report

    pl, qg, opc = [], [], []
    for x, y in zip(xs, ys):
        phi, _, ystar = instance.envelope(x)
        fxy = instance.global_value(x, y)
        gap = phi - fxy
        _, gy = instance.global_grad(x, y)
        if mu is not None:
            pl.append(gy @ gy - 2 * mu * gap)
            yp = instance.solution_set_projection(x, y)
            qg.append(gap - 0.5 * mu * np.sum((y - yp) ** 2))
        opc.append((instance.global_value(x, y) - instance.global_value(x, ystar)) - gy @ (y - ystar))
    if pl:
        report.pl_min_slack = float(min(pl))
        report.qg_min_slack = float(min(qg))
        report.checks["pl"] = report.pl_min_slack >= -tol
        report.checks["quadratic_growth"] = report.qg_min_slack >= -tol
    report.one_pc_min_slack = float(min(opc))
    report.checks["one_point_concave"] = report.one_pc_min_slack >= -tol

    # concavity in y along short random segments; for NC_1PC the segments run
    # along single reparameterised coordinates where the curvature can flip
    conc = []
    for j, (x, y) in enumerate(zip(xs, ys)):
        if isinstance(instance, OnePointConcaveProblem):
            y2 = y + 0.7 * instance.U[:, j % instance.d2]
        else:
            y2 = y + 0.7 * rng.standard_normal(instance.d2)
        if instance.constrained:
            y2 = instance.project_y(y2)
        _, g2 = instance.global_grad(x, y2)
        conc.append(instance.global_value(x, y2) + g2 @ (y - y2) - instance.global_value(x, y))
    report.concavity_min_slack = float(min(conc))
    concave = report.concavity_min_slack >= -tol
    if instance.class_tag == "NC_1PC":
        report.checks["not_concave"] = not concave
    else:
        report.checks["concave_in_y"] = concave
    if instance.class_tag == "NC_SC":
        report.checks["strongly_concave"] = mu is not None and bool(
            np.linalg.eigvalsh(instance.Mbar)[0] >= mu * (1 - 1e-9))
    return report
