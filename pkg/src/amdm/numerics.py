"""Numerical primitives for streaming monitoring.

Rolling window statistics, EWMA smoothing, the chi-square quantile and an
online shrinkage covariance estimator whose inverse is maintained by
rank-one (Sherman-Morrison) updates.

The covariance kernels are numba-compiled so the detector loops can call
them directly; :class:`OnlineCovariance` is the Python-facing wrapper.
"""

from __future__ import annotations

import math
from collections import deque

import numpy as np
from numba import njit

__all__ = [
    "NotReadyError",
    "RollingWindow",
    "EwmaState",
    "OnlineCovariance",
    "sigma_floor",
    "rolling_update",
    "zscore",
    "ewma_update",
    "regularized_gamma_p",
    "chi_square_cdf",
    "chi_square_quantile",
    "cov_update",
    "mahalanobis_sq",
]

SIGMA_FLOOR_REL = 1e-6
SM_DENOM_MIN = 1e-12


class NotReadyError(RuntimeError):
    """Raised when a statistic is requested before its warm-up completes."""


def sigma_floor(mean: float, rel: float = SIGMA_FLOOR_REL) -> float:
    """Smallest standard deviation used as a z-score divisor."""
    return rel * (1.0 + abs(mean))


class RollingWindow:
    """Fixed-capacity window with running mean and population std.

    Sums are kept relative to a shift value and recomputed exactly every
    ``capacity`` pushes, which bounds floating-point drift.
    """

    def __init__(self, capacity: int) -> None:
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        self.capacity = int(capacity)
        self.values: deque[float] = deque(maxlen=self.capacity)
        self._shift = 0.0
        self._sum = 0.0
        self._sumsq = 0.0
        self._since_refresh = 0

    def __len__(self) -> int:
        return len(self.values)

    @property
    def full(self) -> bool:
        return len(self.values) == self.capacity

    @property
    def running_sum(self) -> float:
        return self._shift * len(self.values) + self._sum

    def push(self, x: float) -> tuple[float, float]:
        if not math.isfinite(x):
            raise ValueError(f"non-finite value {x!r}")
        if not self.values:
            self._shift = x
        if len(self.values) == self.capacity:
            old = self.values[0] - self._shift
            self._sum -= old
            self._sumsq -= old * old
        self.values.append(x)
        d = x - self._shift
        self._sum += d
        self._sumsq += d * d
        self._since_refresh += 1
        if self._since_refresh >= self.capacity:
            self._refresh()
        return self.mean, self.std

    def _refresh(self) -> None:
        self._shift = self.mean
        self._sum = math.fsum(v - self._shift for v in self.values)
        self._sumsq = math.fsum((v - self._shift) ** 2 for v in self.values)
        self._since_refresh = 0

    @property
    def mean(self) -> float:
        n = len(self.values)
        if n == 0:
            raise NotReadyError("empty window has no mean")
        return self._shift + self._sum / n

    @property
    def std(self) -> float:
        n = len(self.values)
        if n == 0:
            raise NotReadyError("empty window has no std")
        m = self._sum / n
        return math.sqrt(max(self._sumsq / n - m * m, 0.0))


def rolling_update(
    window: RollingWindow, x: float, *, metric: str | None = None, step: int | None = None
) -> tuple[float, float]:
    """Push ``x`` and return the (mean, population std) of the window."""
    if not math.isfinite(x):
        raise ValueError(f"non-finite value {x!r} for metric {metric!r} at step {step}")
    return window.push(x)


def zscore(x: float, mean: float, std: float, floor: float | None = None) -> float:
    """Standardise ``x``; the divisor never drops below ``floor``.

    When ``floor`` is omitted the scale-aware default ``sigma_floor(mean)``
    is used.
    """
    if floor is None:
        floor = sigma_floor(mean)
    if not floor > 0:
        raise ValueError(f"floor must be > 0, got {floor}")
    return (x - mean) / max(std, floor)


class EwmaState:
    """Exponentially weighted moving average, initialised to the first input."""

    def __init__(self, lam: float) -> None:
        if not (0.0 < lam <= 1.0):
            raise ValueError(f"lambda must lie in (0, 1], got {lam}")
        self.lam = float(lam)
        self._value = 0.0
        self.initialized = False

    @property
    def value(self) -> float:
        if not self.initialized:
            raise NotReadyError("EWMA read before first update")
        return self._value

    def update(self, s: float) -> float:
        if not math.isfinite(s):
            raise ValueError(f"non-finite value {s!r}")
        if not self.initialized:
            self._value = float(s)
            self.initialized = True
        else:
            self._value = self.lam * s + (1.0 - self.lam) * self._value
        return self._value


def ewma_update(state: EwmaState, s: float) -> float:
    return state.update(s)


# ---------------------------------------------------------------------------
# chi-square


def _gamma_series(a: float, x: float) -> float:
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(10_000):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * 1e-17:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_continued_fraction(a: float, x: float) -> float:
    # modified Lentz for the upper tail Q(a, x)
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, 10_000):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h


def regularized_gamma_p(a: float, x: float) -> float:
    """Regularised lower incomplete gamma P(a, x)."""
    if a <= 0:
        raise ValueError(f"a must be > 0, got {a}")
    if x < 0:
        raise ValueError(f"x must be >= 0, got {x}")
    if x == 0:
        return 0.0
    if x < a + 1.0:
        return min(_gamma_series(a, x), 1.0)
    return max(1.0 - _gamma_continued_fraction(a, x), 0.0)


def chi_square_cdf(x: float, dof: int) -> float:
    if x <= 0:
        return 0.0
    return regularized_gamma_p(dof / 2.0, x / 2.0)


def chi_square_quantile(dof: int, p: float) -> float:
    """Inverse chi-square CDF by bisection on the incomplete gamma."""
    if int(dof) != dof or dof < 1:
        raise ValueError(f"dof must be a positive integer, got {dof}")
    if not (0.0 < p < 1.0):
        raise ValueError(f"p must lie in (0, 1), got {p}")
    lo, hi = 0.0, max(1.0, float(dof))
    while chi_square_cdf(hi, dof) < p:
        lo, hi = hi, 2.0 * hi
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        if chi_square_cdf(mid, dof) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# online covariance (numba kernels shared with the detector loops)


@njit(cache=True, inline="always", fastmath={"contract", "arcp", "reassoc"})
def _shrink_into(raw, shrunk, gamma, eps, a):
    for i in range(a):
        for j in range(a):
            if i == j:
                shrunk[i, j] = raw[i, i] + eps
            else:
                shrunk[i, j] = (1.0 - gamma) * raw[i, j]


@njit(cache=True, inline="always", fastmath={"contract", "arcp", "reassoc"})
def _sm_update(inv, u, c, work, a, fa=1.0):
    """inv <- (fa B + c u u^T)^-1 given inv = B^-1. Returns the denominator
    of the equivalent update of B + (c / fa) u u^T.

    Reads and writes only the upper triangle of ``inv``; see
    :func:`_mirror_upper`.
    """
    c = c / fa
    for i in range(a):
        acc = 0.0
        for j in range(a):
            acc += (inv[i, j] if i <= j else inv[j, i]) * u[j]
        work[i] = acc
    quad = 0.0
    for i in range(a):
        quad += u[i] * work[i]
    denom = 1.0 + c * quad
    if abs(denom) < 1e-12:
        return denom
    f = c / denom
    g = 1.0 / fa
    for i in range(a):
        fi = f * work[i]
        for j in range(i, a):
            inv[i, j] = (inv[i, j] - fi * work[j]) * g
    return denom


@njit(cache=True, inline="always", fastmath={"contract", "arcp", "reassoc"})
def _sm_diag_update(inv, i0, c, col, a):
    """inv <- (B + c e_i e_i^T)^-1 given inv = B^-1; ``col`` is scratch.

    Upper triangle only, like :func:`_sm_update`.
    """
    denom = 1.0 + c * inv[i0, i0]
    if abs(denom) < 1e-12:
        return denom
    f = c / denom
    for i in range(a):
        col[i] = inv[i, i0] if i <= i0 else inv[i0, i]
    for i in range(a):
        fi = f * col[i]
        for j in range(i, a):
            inv[i, j] -= fi * col[j]
    return denom


@njit(cache=True, inline="always")
def _mirror_upper(m, a):
    for i in range(a):
        for j in range(i + 1, a):
            m[j, i] = m[i, j]


@njit(cache=True, inline="always", fastmath={"contract", "arcp", "reassoc"})
def _symmetrize(m, a):
    for i in range(a):
        for j in range(i + 1, a):
            v = 0.5 * (m[i, j] + m[j, i])
            m[i, j] = v
            m[j, i] = v


@njit(cache=True, inline="always", fastmath={"contract", "arcp", "reassoc"})
def _cov_push(mean, raw, shrunk, inv, count, s, beta, gamma, eps, warmup, work, a):
    """Fold ``s`` into the joint state; returns the new count.

    Sample ``n`` gets weight ``max(1/n, beta)``: count-weighted (sample)
    moments at first, exponentially weighted once ``1/n`` falls below
    ``beta``. The shrunk covariance is
    (1 - gamma) * raw + gamma * diag(raw) + eps * I; its inverse is built by
    direct inversion at the end of warm-up and afterwards maintained by
    rank-one updates, falling back to re-inversion on a vanishing
    denominator. ``work`` is a ``(3, a)`` scratch array. ``a`` is the
    dimension; a compile-time constant there lets the small loops unroll.
    """
    n = count + 1
    d = work[0]
    for i in range(a):
        d[i] = s[i] - mean[i]
    if n <= warmup:
        for i in range(a):
            mean[i] += d[i] / n
        fa = (n - 1.0) / n
        fb = (n - 1.0) / (n * n)
        for i in range(a):
            for j in range(a):
                raw[i, j] = fa * raw[i, j] + fb * d[i] * d[j]
        _shrink_into(raw, shrunk, gamma, eps, a)
        if n == warmup:
            inv[:, :] = np.linalg.inv(shrunk)
            _symmetrize(inv, a)
        return n

    b = 1.0 / n if 1.0 / n > beta else beta
    fa = 1.0 - b
    fb = b * (1.0 - b)
    for i in range(a):
        v = mean[i] + b * d[i]
        mean[i] = v if abs(v) > 1e-280 else 0.0
    keep = 1.0 - gamma
    for i in range(a):
        for j in range(i, a):
            v = fa * raw[i, j] + fb * d[i] * d[j]
            # flush values headed for the subnormal range (constant streams)
            v = v if abs(v) > 1e-280 else 0.0
            raw[i, j] = v
            raw[j, i] = v
            if i == j:
                shrunk[i, i] = v + eps
            else:
                shrunk[i, j] = keep * v
                shrunk[j, i] = keep * v

    # shrunk_new = fa*shrunk_old + fb(1-gamma) d d^T + diag(fb*gamma*d^2 + b*eps)
    ok = True
    if fb * (1.0 - gamma) > 0.0:
        den = _sm_update(inv, d, fb * (1.0 - gamma), work[1], a, fa)
        if abs(den) < 1e-12:
            ok = False
    else:
        scale = 1.0 / fa
        for i in range(a):
            for j in range(a):
                inv[i, j] *= scale
    if ok:
        for i in range(a):
            c = fb * gamma * d[i] * d[i] + b * eps
            if c != 0.0:
                den = _sm_diag_update(inv, i, c, work[2], a)
                if abs(den) < 1e-12:
                    ok = False
                    break
    _mirror_upper(inv, a)
    if ok:
        # a positive definite inverse has |inv_ij| <= sqrt(inv_ii inv_jj), so
        # finite positive diagonal entries bound every entry
        for i in range(a):
            if not (0.0 < inv[i, i] < np.inf):
                ok = False
    if not ok:
        inv[:, :] = np.linalg.inv(shrunk)
        _symmetrize(inv, a)
    return n


@njit(cache=True, inline="always", fastmath={"contract", "arcp", "reassoc"})
def _mahalanobis(mean, inv, s, contrib, r, a):
    """D^2 of ``s``; per-axis terms r_i (inv r)_i are written to ``contrib``,
    ``r`` is scratch."""
    for i in range(a):
        r[i] = s[i] - mean[i]
    total = 0.0
    for i in range(a):
        acc = 0.0
        for j in range(a):
            acc += inv[i, j] * r[j]
        contrib[i] = r[i] * acc
        total += contrib[i]
    return max(total, 0.0)


class OnlineCovariance:
    """Running mean, shrunk covariance and maintained inverse.

    Attributes:
        dimension: Vector length.
        forgetting: Exponential weight of each new sample once the
            count-weighted weight ``1/n`` has dropped below it.
        shrinkage: Weight of the diagonal target in the shrunk covariance.
        epsilon: Ridge added to the diagonal; lower bound on eigenvalues.
        warmup: Number of count-weighted samples before the state is ready.
        refresh_every: If positive, re-invert directly every this many
            post-warm-up updates. Zero relies on rank-one updates alone.
    """

    def __init__(
        self,
        dimension: int,
        *,
        forgetting: float = 0.005,
        shrinkage: float = 0.1,
        epsilon: float = 1e-6,
        warmup: int | None = None,
        refresh_every: int = 0,
    ) -> None:
        if dimension < 1:
            raise ValueError(f"dimension must be >= 1, got {dimension}")
        if not (0.0 < forgetting < 1.0):
            raise ValueError(f"forgetting must lie in (0, 1), got {forgetting}")
        if not (0.0 <= shrinkage <= 1.0):
            raise ValueError(f"shrinkage must lie in [0, 1], got {shrinkage}")
        if not epsilon > 0:
            raise ValueError(f"epsilon must be > 0, got {epsilon}")
        if warmup is None:
            warmup = max(2 * dimension, 25)
        if warmup < dimension + 1:
            raise ValueError(f"warmup must be >= dimension + 1, got {warmup}")
        self.dimension = int(dimension)
        self.forgetting = float(forgetting)
        self.shrinkage = float(shrinkage)
        self.epsilon = float(epsilon)
        self.warmup = int(warmup)
        self.refresh_every = int(refresh_every)
        self.count = 0
        self.mean = np.zeros(dimension)
        self.raw = np.zeros((dimension, dimension))
        self.covariance = np.zeros((dimension, dimension))
        self.inverse = np.zeros((dimension, dimension))
        self._work = np.zeros((3, dimension))

    @classmethod
    def from_moments(
        cls, mean: np.ndarray, covariance: np.ndarray, count: int | None = None, **kwargs
    ) -> OnlineCovariance:
        """State primed with a given mean and raw covariance, already ready.

        ``count`` defaults to the point where exponential weighting has
        taken over, so the primed moments are treated as mature.
        """
        mean = np.asarray(mean, dtype=float)
        state = cls(mean.shape[0], **kwargs)
        state.mean[:] = mean
        state.raw[:] = np.asarray(covariance, dtype=float)
        _shrink_into(state.raw, state.covariance, state.shrinkage, state.epsilon,
                     state.dimension)
        state.inverse[:] = np.linalg.inv(state.covariance)
        if count is None:
            count = max(state.warmup, math.ceil(1.0 / state.forgetting))
        if count < state.warmup:
            raise ValueError(f"count must be >= warmup ({state.warmup}), got {count}")
        state.count = int(count)
        return state

    @property
    def ready(self) -> bool:
        return self.count >= self.warmup

    def update(self, s) -> None:
        s = np.asarray(s, dtype=float)
        if s.shape != (self.dimension,):
            raise ValueError(f"expected vector of length {self.dimension}, got shape {s.shape}")
        if not np.all(np.isfinite(s)):
            raise ValueError("non-finite entry in update vector")
        self.count = _cov_push(
            self.mean, self.raw, self.covariance, self.inverse, self.count, s,
            self.forgetting, self.shrinkage, self.epsilon, self.warmup, self._work,
            self.dimension,
        )
        if (
            self.refresh_every > 0
            and self.count > self.warmup
            and (self.count - self.warmup) % self.refresh_every == 0
        ):
            self.inverse[:] = np.linalg.inv(self.covariance)

    def mahalanobis_sq(self, s) -> float:
        return max(float(self._terms(s).sum()), 0.0)

    def contributions(self, s) -> np.ndarray:
        """Unclamped per-coordinate terms r_i (inv r)_i; they sum to D^2."""
        return self._terms(s)

    def _terms(self, s) -> np.ndarray:
        if not self.ready:
            raise NotReadyError(
                f"joint state has {self.count} of {self.warmup} warm-up updates"
            )
        s = np.asarray(s, dtype=float)
        if s.shape != (self.dimension,):
            raise ValueError(f"expected vector of length {self.dimension}, got shape {s.shape}")
        contrib = np.empty(self.dimension)
        _mahalanobis(self.mean, self.inverse, s, contrib, np.empty(self.dimension),
                     self.dimension)
        return contrib

    def identity_deviation(self) -> float:
        """Frobenius norm of inverse @ covariance - I."""
        eye = np.eye(self.dimension)
        return float(np.linalg.norm(self.inverse @ self.covariance - eye))


def cov_update(state: OnlineCovariance, s) -> None:
    state.update(s)


def mahalanobis_sq(state: OnlineCovariance, s) -> float:
    return state.mahalanobis_sq(s)
