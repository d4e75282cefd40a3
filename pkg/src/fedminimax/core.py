"""Numeric building blocks shared by the simulator.

Vectors are plain 1-D ``float64`` numpy arrays; per-client state is kept as
2-D arrays with one row per client.  Randomness comes from counter-based
streams so that every draw is a pure function of ``(seed, stream_id, index)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

logger = logging.getLogger(__name__)

PURPOSES = {"grad": 0, "output": 1, "init": 2, "sample": 3}
SERVER = -1

_TWO_PI = 2.0 * math.pi
_INV_2_53 = 1.0 / 9007199254740992.0


class ConfigError(ValueError):
    """Raised when an algorithm or schedule configuration is invalid."""


def _stream_key(seed: int, client: int, purpose: str) -> np.ndarray:
    if purpose not in PURPOSES:
        raise ValueError(f"unknown stream purpose {purpose!r}")
    # client index shifted so the server stream (-1) maps to 0
    ss = np.random.SeedSequence([int(seed), int(client) + 1, PURPOSES[purpose]])
    return ss.generate_state(2, dtype=np.uint64)


def _normals_at(key: np.ndarray, start: int, count: int) -> np.ndarray:
    """Standard normals for logical indices ``start .. start+count-1``.

    Logical draws ``2m`` and ``2m+1`` are the cosine and sine outputs of one
    Box-Muller transform of raw Philox words ``2m`` and ``2m+1``; Philox block
    ``b`` holds raw words ``4b .. 4b+3``.
    """
    if count == 0:
        return np.empty(0)
    p0 = start // 2
    p1 = (start + count + 1) // 2
    block, offset = divmod(2 * p0, 4)
    bitgen = np.random.Philox(key=key, counter=block)
    raw = bitgen.random_raw(offset + 2 * (p1 - p0))[offset:]
    u1 = ((raw[0::2] >> np.uint64(11)).astype(np.float64) + 1.0) * _INV_2_53
    theta = (raw[1::2] >> np.uint64(11)).astype(np.float64) * (_TWO_PI * _INV_2_53)
    r = np.sqrt(-2.0 * np.log(u1))
    z = np.empty(2 * (p1 - p0))
    z[0::2] = r * np.cos(theta)
    z[1::2] = r * np.sin(theta)
    lo = start - 2 * p0
    return z[lo:lo + count]


def _uniforms_at(key: np.ndarray, start: int, count: int) -> np.ndarray:
    first_word = 2 * start
    block, offset = divmod(first_word, 4)
    bitgen = np.random.Philox(key=key, counter=block)
    raw = bitgen.random_raw(offset + 2 * count)[offset:]
    return (raw[0::2] >> np.uint64(11)).astype(np.float64) * _INV_2_53


class RngStream:
    """Counter-based random stream identified by ``(seed, client, purpose)``.

    Each logical draw consumes one counter value, so the output of a stream
    never depends on how draws from other streams are interleaved with it.
    A small read-ahead cache avoids rebuilding the bit generator per call;
    it does not change any value.
    """

    _CHUNK = 4096

    def __init__(self, seed: int, client: int = SERVER, purpose: str = "grad", counter: int = 0):
        if seed < 0 or counter < 0:
            raise ValueError("seed and counter must be non-negative")
        self.seed = int(seed)
        self.stream_id = (int(client), purpose)
        self.counter = int(counter)
        self._key = _stream_key(seed, client, purpose)
        self._cache = np.empty(0)
        self._cache_start = 0

    def copy(self) -> "RngStream":
        return RngStream(self.seed, self.stream_id[0], self.stream_id[1], self.counter)

    def advance(self, k: int) -> "RngStream":
        if k < 0:
            raise ValueError("cannot advance a stream backwards")
        self.counter += int(k)
        return self

    def normals(self, count: int) -> np.ndarray:
        """Return ``count`` standard normals and advance the counter."""
        start, stop = self.counter, self.counter + count
        cache_stop = self._cache_start + self._cache.size
        if not (self._cache_start <= start and stop <= cache_stop):
            self._cache = _normals_at(self._key, start, max(count, self._CHUNK))
            self._cache_start = start
        lo = start - self._cache_start
        out = self._cache[lo:lo + count].copy()
        self.counter = stop
        return out

    def uniform(self) -> float:
        """One uniform on ``[0, 1)``; consumes one counter value."""
        value = float(_uniforms_at(self._key, self.counter, 1)[0])
        self.counter += 1
        return value

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id}, counter={self.counter})"


def draw_gaussian(stream: RngStream, dim: int, sigma: float) -> np.ndarray:
    """Zero-mean Gaussian vector with ``E||v||^2 = sigma**2``.

    Each coordinate has standard deviation ``sigma / sqrt(dim)``.  The stream
    advances by exactly ``dim`` draws, including when ``sigma`` is zero.
    """
    if dim < 1:
        raise ValueError("dim must be >= 1")
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    z = stream.normals(dim)
    if sigma == 0:
        return np.zeros(dim)
    return z * (sigma / math.sqrt(dim))


class NoiseBank:
    """Per-client gradient noise, prefetched in blocks of steps.

    Row ``i`` of each step's noise is exactly what ``draw_gaussian`` on client
    ``i``'s stream would produce next (x-block first, then y-block).  In
    shared mode both blocks are scaled prefixes of one draw, mimicking a single
    minibatch feeding both gradients.
    """

    def __init__(self, streams, d1: int, d2: int, sigma: float, shared: bool = False, block: int = 512):
        if sigma < 0:
            raise ValueError("sigma must be non-negative")
        self.streams = list(streams)
        self.d1, self.d2 = d1, d2
        self.sigma = float(sigma)
        self.shared = shared
        self.width = max(d1, d2) if shared else d1 + d2
        self.block = block
        scale = [np.full(d1, self.sigma / math.sqrt(d1))]
        if d2:
            scale.append(np.full(d2, self.sigma / math.sqrt(d2)))
        self._scale = np.concatenate(scale)
        self._buf = None
        self._pos = block

    def _refill(self):
        n = len(self.streams)
        raw = np.empty((n, self.block, self.width))
        for i, s in enumerate(self.streams):
            raw[i] = s.normals(self.block * self.width).reshape(self.block, self.width)
        if self.sigma == 0:
            buf = np.zeros((n, self.block, self.d1 + self.d2))
        elif self.shared:
            buf = np.concatenate([raw[..., : self.d1], raw[..., : self.d2]], axis=-1) * self._scale
        else:
            buf = raw * self._scale
        # step-major so that each step's (n, d) slice is contiguous
        self._buf = np.ascontiguousarray(buf.transpose(1, 0, 2))
        self._pos = 0

    def next_joint(self) -> np.ndarray:
        """Noise for one step as an ``(n, d1 + d2)`` array."""
        if self._pos == self.block:
            self._refill()
        z = self._buf[self._pos]
        self._pos += 1
        return z

    def next(self) -> Tuple[np.ndarray, np.ndarray]:
        """Noise for one step: arrays of shape ``(n, d1)`` and ``(n, d2)``."""
        z = self.next_joint()
        return z[:, : self.d1], z[:, self.d1:]


def client_mean(a: np.ndarray) -> np.ndarray:
    """Mean over the leading (client) axis, summed in ascending index order."""
    acc = a[0].copy()
    for row in a[1:]:
        acc += row
    return acc / a.shape[0]


def anchored_mean(a: np.ndarray) -> np.ndarray:
    """``client_mean`` computed relative to row 0.

    Returns row 0 unchanged when all rows are equal, which makes repeated
    averaging exactly idempotent.
    """
    return a[0] + client_mean(a - a[0])


@dataclass(frozen=True)
class StepSchedule:
    """Constant step sizes and momentum parameters."""

    eta_x: float
    eta_y: float
    alpha: float = 1.0
    beta_x: float = 1.0
    beta_y: float = 1.0

    def __post_init__(self):
        if self.eta_x < 0 or self.eta_y < 0:
            raise ConfigError("step sizes must be non-negative")
        if not (0 < self.alpha <= 1):
            raise ConfigError("alpha must lie in (0, 1]")
        if self.beta_x <= 0 or self.beta_y <= 0:
            raise ConfigError("beta_x and beta_y must be positive")
        # momentum updates must stay convex combinations
        if self.alpha * self.beta_x > 1 + 1e-12 or self.alpha * self.beta_y > 1 + 1e-12:
            raise ConfigError("alpha * beta must not exceed 1")


@dataclass(frozen=True)
class SyncSchedule:
    """Averaging interval ``tau``, snapshot interval and horizon."""

    tau: int
    horizon_T: int
    s_interval: Optional[int] = None

    def __post_init__(self):
        if self.tau < 1 or self.horizon_T < 1:
            raise ConfigError("tau and horizon_T must be positive")
        if self.horizon_T % self.tau:
            raise ConfigError(f"horizon T={self.horizon_T} is not divisible by tau={self.tau}")
        if self.s_interval is not None:
            if self.s_interval < 1 or self.s_interval % self.tau:
                raise ConfigError(f"snapshot interval S={self.s_interval} must be a positive multiple of tau={self.tau}")

    @property
    def rounds(self) -> int:
        return self.horizon_T // self.tau


def _largest_divisor_at_most(T: int, cap: int) -> int:
    for tau in range(max(1, cap), 0, -1):
        if T % tau == 0:
            return tau
    return 1


def schedule_from_theorem(theorem_id: str, n: int, T: int, L_f: float, kappa: float = 1.0):
    """Step and sync schedules from the rate-optimal parameter choices.

    ``T1`` (Local SGDA): ``eta_y = sqrt(n/(L_f T))``, ``eta_x = eta_y/(8 kappa^2)``,
    ``tau ~ T^{1/4}/n^{3/4}``.

    ``T2`` (Momentum Local SGDA): ``alpha = sqrt(n/T)``, ``beta = 3`` (capped at
    ``1/alpha``), and step sizes ``eta = eta^{T1}/alpha`` so that the effective
    per-step move ``alpha * eta`` matches ``T1``.

    ``T3`` (Local SGDA+): ``eta_x = n^{1/4}/T^{3/4}``, ``eta_y = n^{3/4}/T^{1/4}``
    capped at ``1/(8 L_f tau)``, ``tau ~ T^{1/8}/n^{7/8}``, ``S = ceil(sqrt(T/n))``
    rounded up to a multiple of ``tau``.

    ``tau`` is always the largest divisor of ``T`` not above the formula value.
    Returns ``(StepSchedule, SyncSchedule)``.
    """
    if n < 1 or T < 1:
        raise ConfigError("n and T must be positive")
    if L_f <= 0:
        raise ConfigError("L_f must be positive")
    if kappa < 1:
        raise ConfigError("kappa must be >= 1")
    theorem_id = theorem_id.upper()
    if theorem_id in ("T1", "T2"):
        if T < n:
            raise ConfigError("T must be at least n")
        if T < n ** 3:
            logger.warning("T=%d is below the asymptotic regime T >= n^3 = %d", T, n ** 3)
        eta_y1 = math.sqrt(n / (L_f * T))
        tau = _largest_divisor_at_most(T, int(math.floor(T ** 0.25 / n ** 0.75)))
        if theorem_id == "T1":
            while tau > 1 and eta_y1 > 1.0 / (8 * L_f * tau):
                tau = _largest_divisor_at_most(T, tau - 1)
            if eta_y1 > 1.0 / (8 * L_f * tau):
                raise ConfigError(
                    f"eta_y={eta_y1:.4g} violates eta_y <= 1/(8 L_f tau) for every tau; increase T"
                )
            step = StepSchedule(eta_x=eta_y1 / (8 * kappa ** 2), eta_y=eta_y1)
        else:
            alpha = min(1.0, math.sqrt(n / T))
            beta = min(3.0, 1.0 / alpha)
            eta_y = eta_y1 / alpha
            if alpha * eta_y > 1.0 / (8 * L_f * tau):
                logger.warning("effective step alpha*eta_y exceeds 1/(8 L_f tau)")
            step = StepSchedule(
                eta_x=eta_y / (8 * kappa ** 2), eta_y=eta_y, alpha=alpha, beta_x=beta, beta_y=beta
            )
        return step, SyncSchedule(tau=tau, horizon_T=T)
    if theorem_id == "T3":
        if T < n ** 7:
            logger.warning("T=%d is below the asymptotic regime T >= n^7", T)
        tau = _largest_divisor_at_most(T, int(math.floor(T ** 0.125 / n ** 0.875)))
        cap = 1.0 / (8 * L_f * tau)
        eta_x = min(n ** 0.25 / T ** 0.75, cap)
        eta_y = min(n ** 0.75 / T ** 0.25, cap)
        s = math.ceil(math.sqrt(T / n))
        s = tau * math.ceil(s / tau)
        return StepSchedule(eta_x=eta_x, eta_y=eta_y), SyncSchedule(tau=tau, horizon_T=T, s_interval=s)
    raise ConfigError(f"unknown theorem id {theorem_id!r}")
