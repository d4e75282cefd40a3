"""Local-update minimax algorithms on a vectorised client population.

All runners share one engine.  Client iterates are stacked row-wise into a
joint state ``W`` of shape ``(n, d1 + d2)`` (x-block first).  For unconstrained
problems each client is stored as the last synchronised point plus an
accumulated sum of directions, ``w_i = w_sync + seta * U_i`` with
``seta = [-eta_x, +eta_y]``.  A sync adds ``seta * mean(U)`` to ``w_sync``;
with ``tau = 1`` this is literally ``w + seta * mean(G)``, the averaged-gradient
SGDA step.  Constrained problems store ``W`` directly and project y after
every move.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import (SERVER, ConfigError, NoiseBank, RngStream, StepSchedule, SyncSchedule,
                   anchored_mean)

MOMENTUM_SYNC = ("average", "reset", "keep")
ALGORITHMS = ("local_sgda", "momentum_local_sgda", "local_sgda_plus",
              "momentum_local_sgda_plus", "local_sgd", "centralized_sgda")


@dataclass(frozen=True)
class AlgorithmConfig:
    step: StepSchedule
    sync: SyncSchedule
    seed: int = 0
    metric_stride: int = 1
    momentum_sync: str = "average"
    shared_noise: bool = False
    noise_block: int = 512

    def __post_init__(self):
        if self.metric_stride < 1:
            raise ConfigError("metric_stride must be >= 1")
        if self.momentum_sync not in MOMENTUM_SYNC:
            raise ConfigError(f"momentum_sync must be one of {MOMENTUM_SYNC}")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")


@dataclass
class ServerState:
    x_bar: np.ndarray
    y_bar: np.ndarray
    x_snapshot: Optional[np.ndarray] = None
    round_count: int = 0
    snapshot_count: int = 0


@dataclass
class ClientStates:
    """Struct-of-arrays view of all clients (row ``i`` is client ``i``)."""

    x: np.ndarray
    y: np.ndarray
    d_x: Optional[np.ndarray] = None
    d_y: Optional[np.ndarray] = None

    @property
    def n(self) -> int:
        return self.x.shape[0]

    def client(self, i: int) -> dict:
        out = {"x": self.x[i], "y": self.y[i]}
        if self.d_x is not None:
            out["d_x"], out["d_y"] = self.d_x[i], self.d_y[i]
        return out


def sync_states(states: ClientStates, momentum_sync: Optional[str] = None) -> ClientStates:
    """Replace every client by the server average (ascending-index summation).

    Directions follow ``momentum_sync``; ``None`` leaves them alone.
    """
    n = states.n
    x = np.broadcast_to(anchored_mean(states.x), states.x.shape).copy()
    y = np.broadcast_to(anchored_mean(states.y), states.y.shape).copy()
    dx, dy = states.d_x, states.d_y
    if dx is not None and momentum_sync == "average":
        dx = np.repeat(anchored_mean(dx)[None], n, 0)
        dy = np.repeat(anchored_mean(dy)[None], n, 0)
    elif dx is not None and momentum_sync == "reset":
        dx, dy = np.zeros_like(dx), np.zeros_like(dy)
    return ClientStates(x, y, dx, dy)


@dataclass
class Trace:
    """Virtual-average trajectory and bookkeeping of one run.

    Arrays indexed by ``k`` correspond to ``steps[k]``; each entry is the state
    at the start of that step (before its update).
    """

    algorithm: str
    n: int
    T: int
    tau: int
    steps: np.ndarray
    x: np.ndarray
    y: np.ndarray
    delta_x: np.ndarray
    delta_y: np.ndarray
    x_final: np.ndarray
    y_final: np.ndarray
    output_index: int
    x_output: np.ndarray
    comm_rounds: int
    server: ServerState
    clients: ClientStates
    config: Optional[AlgorithmConfig] = None
    snapshot_steps: list = field(default_factory=list)
    projected: bool = False
    dir_x: Optional[np.ndarray] = None
    dir_y: Optional[np.ndarray] = None

    @property
    def comm_rounds_so_far(self) -> np.ndarray:
        return self.steps // self.tau


def spread(P: np.ndarray, d1: int):
    """``(1/n) sum_i ||p_i - mean(p)||^2`` for the x and y blocks.

    ``P`` has shape ``(..., n, d)``.  Rows are centred relative to row 0 first,
    so the result is exactly zero whenever all rows coincide.
    """
    n = P.shape[-2]
    R = P - P[..., :1, :]
    R -= R.sum(axis=-2, keepdims=True) / n
    R *= R
    return R[..., :d1].sum(axis=(-1, -2)) / n, R[..., d1:].sum(axis=(-1, -2)) / n


def _row_mean(P):
    """Client mean over axis 1, exact when all clients coincide."""
    return P[:, 0] + (P - P[:, :1]).sum(axis=1) / P.shape[1]


class _Recorder:
    """Buffers recorded client states and reduces them in vectorised chunks."""

    def __init__(self, K, n, d1, d2, with_dirs, chunk=256):
        D = d1 + d2
        self.d1, self.n = d1, n
        self.traj = np.empty((K, D))
        self.dx = np.empty(K)
        self.dy = np.empty(K)
        self.dirs = np.empty((K, D)) if with_dirs else None
        self.chunk = chunk
        self._base = np.empty((chunk, D))
        self._pos = np.empty((chunk, n, D))
        self._dir = np.empty((chunk, n, D)) if with_dirs else None
        self._fill = 0
        self._k = 0

    def add(self, base, P, Dir=None):
        j = self._fill
        self._base[j] = base
        self._pos[j] = P
        if Dir is not None:
            self._dir[j] = Dir
        self._fill += 1
        if self._fill == self.chunk:
            self.flush()

    def flush(self):
        m, k = self._fill, self._k
        if not m:
            return
        P = self._pos[:m]
        self.traj[k:k + m] = self._base[:m] + _row_mean(P)
        self.dx[k:k + m], self.dy[k:k + m] = spread(P, self.d1)
        if self.dirs is not None:
            self.dirs[k:k + m] = _row_mean(self._dir[:m])
        self._k += m
        self._fill = 0


def _client_streams(seed: int, n: int):
    return [RngStream(seed, client=i, purpose="grad") for i in range(n)]


def _output_index(seed: int, T: int) -> int:
    """Uniform index in ``{1, ..., T}`` from the server's output stream."""
    u = RngStream(seed, client=SERVER, purpose="output").uniform()
    return 1 + min(T - 1, int(u * T))


def _check(problem, config: AlgorithmConfig):
    for attr in ("x0", "y0"):
        v = getattr(problem, attr)
        want = problem.d1 if attr == "x0" else problem.d2
        if np.shape(v) != (want,):
            raise ConfigError(f"{attr} has shape {np.shape(v)}, expected ({want},)")
    if config.sync.horizon_T % config.sync.tau:
        raise ConfigError("T must be divisible by tau")


def _run(problem, config: AlgorithmConfig, variant: str) -> Trace:
    _check(problem, config)
    n, d1, d2 = problem.n, problem.d1, problem.d2
    T, tau = config.sync.horizon_T, config.sync.tau
    plus = variant in ("local_sgda_plus", "momentum_local_sgda_plus")
    mom = variant in ("momentum_local_sgda", "momentum_local_sgda_plus")
    S = config.sync.s_interval
    if plus and S is None:
        raise ConfigError(f"{variant} requires a snapshot interval S")
    step = config.step
    msync = "reset" if variant == "momentum_local_sgda_plus" else config.momentum_sync
    alpha = step.alpha
    mix = np.concatenate([np.full(d1, step.beta_x * alpha), np.full(d2, step.beta_y * alpha)])
    seta = np.concatenate([np.full(d1, -step.eta_x), np.full(d2, step.eta_y)])
    constrained = problem.constrained
    stride = config.metric_stride

    bank = NoiseBank(_client_streams(config.seed, n), d1, d2, problem.sigma,
                     shared=config.shared_noise, block=config.noise_block)
    w0 = np.concatenate([problem.x0, problem.y0]).astype(float)
    xs = w0[:d1].copy() if plus else None
    snapshot_steps = [0] if plus else []
    out_idx = _output_index(config.seed, T)
    x_out = None

    def grads(W):
        if xs is None:
            return problem.joint_grad(W)
        G = np.empty_like(W)
        G[:, :d1] = problem.grad_x(W[:, :d1], W[:, d1:])
        G[:, d1:] = problem.grad_y(np.broadcast_to(xs, (n, d1)), W[:, d1:])
        return G

    K = (T + stride - 1) // stride
    rec_steps = np.arange(0, T, stride)
    rec = _Recorder(K, n, d1, d2, mom)
    zero = np.zeros(d1 + d2)

    if constrained:
        W = np.repeat(w0[None], n, 0)
        W[:, d1:] = problem.project_y(W[:, d1:])
        w_sync = W[0].copy()
    else:
        w_sync = w0.copy()
        U = np.zeros((n, d1 + d2))
    if mom:
        Wi = W if constrained else np.broadcast_to(w_sync, (n, d1 + d2))
        Dir = grads(Wi) + bank.next_joint()
    rounds = 0
    k = 0
    for t in range(T):
        if t % stride == 0:
            if constrained:
                rec.add(zero, W, Dir if mom else None)
            else:
                rec.add(w_sync, U * seta, Dir if mom else None)
        if t == out_idx:
            if constrained:
                x_out = anchored_mean(W[:, :d1])
            else:
                x_out = w_sync[:d1] + anchored_mean(U[:, :d1] * seta[:d1])

        if mom:
            if constrained:
                W = W + alpha * (seta * Dir)
                W[:, d1:] = problem.project_y(W[:, d1:])
                Wn = W
            else:
                U += alpha * Dir
                Wn = w_sync + U * seta
            G = grads(Wn)
            G += bank.next_joint()
            Dir += mix * (G - Dir)
        else:
            if constrained:
                G = grads(W)
                G += bank.next_joint()
                W = W + seta * G
                W[:, d1:] = problem.project_y(W[:, d1:])
            else:
                Wn = w_sync + U * seta
                G = grads(Wn)
                G += bank.next_joint()
                U += G

        if (t + 1) % tau == 0:
            rounds += 1
            if constrained:
                w_sync = anchored_mean(W)
                W[:] = w_sync
            else:
                w_sync = w_sync + seta * anchored_mean(U)
                U[:] = 0.0
            if mom:
                if msync == "average":
                    Dir[:] = anchored_mean(Dir)
                elif msync == "reset":
                    Dir[:] = 0.0
        if plus and (t + 1) % S == 0:
            xs = w_sync[:d1].copy()
            snapshot_steps.append(t + 1)

    rec.flush()
    traj = rec.traj
    if constrained:
        final_states = W
    else:
        final_states = w_sync + U * seta
    w_final = anchored_mean(final_states)
    if x_out is None:
        x_out = w_final[:d1].copy()
    clients = ClientStates(final_states[:, :d1].copy(), final_states[:, d1:].copy())
    if mom:
        clients.d_x, clients.d_y = Dir[:, :d1].copy(), Dir[:, d1:].copy()
    server = ServerState(w_sync[:d1].copy(), w_sync[d1:].copy(),
                         None if xs is None else xs.copy(), rounds,
                         max(0, len(snapshot_steps) - 1))
    return Trace(
        algorithm=variant, n=n, T=T, tau=tau, steps=rec_steps,
        x=traj[:, :d1], y=traj[:, d1:], delta_x=rec.dx, delta_y=rec.dy,
        x_final=w_final[:d1], y_final=w_final[d1:], output_index=out_idx, x_output=x_out,
        comm_rounds=T // tau, server=server, clients=clients, config=config,
        snapshot_steps=snapshot_steps, projected=constrained,
        dir_x=None if rec.dirs is None else rec.dirs[:, :d1],
        dir_y=None if rec.dirs is None else rec.dirs[:, d1:],
    )


def run_local_sgda(problem, config: AlgorithmConfig) -> Trace:
    """Local SGDA: simultaneous local descent/ascent, model averaging every ``tau`` steps."""
    return _run(problem, config, "local_sgda")


def run_momentum_local_sgda(problem, config: AlgorithmConfig,
                            momentum_sync: Optional[str] = None) -> Trace:
    """Momentum Local SGDA.

    Each client moves ``x <- x + alpha * (-eta_x d_x)`` (and ascends in y), then
    refreshes ``d <- d + beta*alpha*(g - d)`` with a fresh stochastic gradient at
    the new point.  ``momentum_sync`` picks what happens to directions at a sync:
    ``average`` (default), ``reset`` to zero, or ``keep``.
    """
    if momentum_sync is not None:
        config = AlgorithmConfig(config.step, config.sync, config.seed, config.metric_stride,
                                 momentum_sync, config.shared_noise, config.noise_block)
    return _run(problem, config, "momentum_local_sgda")


def run_local_sgda_plus(problem, config: AlgorithmConfig) -> Trace:
    """Local SGDA+: y-gradients use the snapshot ``x~`` refreshed every ``S`` steps."""
    return _run(problem, config, "local_sgda_plus")


def run_momentum_local_sgda_plus(problem, config: AlgorithmConfig) -> Trace:
    """Momentum variant of Local SGDA+; directions are reset to zero at every sync."""
    return _run(problem, config, "momentum_local_sgda_plus")


def local_sgd_step_bound(L: float, tau: int) -> float:
    """Largest admissible Local SGD step, ``min(1/(4L), 1/(8L(tau-1)))``."""
    bound = 1.0 / (4.0 * L)
    if tau > 1:
        bound = min(bound, 1.0 / (8.0 * L * (tau - 1)))
    return bound


def run_local_sgd(problem, config: AlgorithmConfig) -> Trace:
    """Local SGD on a minimisation-only problem; uses ``config.step.eta_x``.

    Raises :class:`ConfigError` when the step exceeds the admissible bound for
    the given ``tau``.
    """
    n, d = problem.n, problem.d
    T, tau = config.sync.horizon_T, config.sync.tau
    eta = config.step.eta_x
    bound = local_sgd_step_bound(problem.lipschitz, tau)
    if eta > bound * (1 + 1e-12):
        raise ConfigError(f"step {eta:.4g} exceeds the Local SGD bound {bound:.4g} for tau={tau}")
    if np.shape(problem.x0) != (d,):
        raise ConfigError("x0 dimension mismatch")
    bank = NoiseBank(_client_streams(config.seed, n), d, 0, problem.sigma, block=config.noise_block)
    stride = config.metric_stride
    rec_steps = np.arange(0, T, stride)
    rec = _Recorder(rec_steps.size, n, d, 0, False)
    out_idx = _output_index(config.seed, T)
    x_out = None
    x_sync = np.asarray(problem.x0, dtype=float).copy()
    U = np.zeros((n, d))
    for t in range(T):
        if t % stride == 0:
            rec.add(x_sync, -eta * U)
        if t == out_idx:
            x_out = x_sync + anchored_mean(-eta * U)
        G = problem.grad(x_sync - eta * U)
        G += bank.next_joint()
        U += G
        if (t + 1) % tau == 0:
            x_sync = x_sync - eta * anchored_mean(U)
            U[:] = 0.0
    rec.flush()
    traj, dxs = rec.traj, rec.dx
    final = x_sync - eta * U
    x_final = anchored_mean(final)
    if x_out is None:
        x_out = x_final.copy()
    empty = np.empty((rec_steps.size, 0))
    return Trace(
        algorithm="local_sgd", n=n, T=T, tau=tau, steps=rec_steps, x=traj, y=empty,
        delta_x=dxs, delta_y=np.zeros(rec_steps.size), x_final=x_final, y_final=np.empty(0),
        output_index=out_idx, x_output=x_out, comm_rounds=T // tau,
        server=ServerState(x_sync.copy(), np.empty(0), round_count=T // tau),
        clients=ClientStates(final.copy(), np.empty((n, 0))), config=config,
    )


RUNNERS = {
    "local_sgda": run_local_sgda,
    "momentum_local_sgda": run_momentum_local_sgda,
    "local_sgda_plus": run_local_sgda_plus,
    "momentum_local_sgda_plus": run_momentum_local_sgda_plus,
}
