"""Compiled streaming loops for the detectors.

Each kernel consumes a block of rows sequentially and carries all state in
caller-owned arrays, so a block of one row is a single streaming step and
a block of many rows is the same computation without per-row dispatch.
State and outputs are packed into a handful of arrays to keep the
per-call dispatch cost low.
"""

import numpy as np
from numba import njit

from .numerics import _cov_push, _mahalanobis

# joint dimension (one per axis); a compile-time constant so the small
# joint loops unroll
JOINT_DIM = 5

# counters
N_SEEN = 0  # samples consumed so far
N_JOINT = 1  # samples folded into the joint state

# float parameters
P_LAM, P_K, P_THRESHOLD, P_BETA, P_GAMMA, P_EPS, P_FLOOR = range(7)
# integer parameters
P_WINDOW, P_WARMUP, P_USE_JOINT = range(3)

# rows of the window statistics arrays
W_SHIFT, W_SUM, W_SQ, W_THETA = range(4)
# joint matrices
J_RAW, J_SHRUNK, J_INV = range(3)


def out_columns(a):
    """Column slices of the packed output matrix for ``a`` axes."""
    return {
        "axis_scores": slice(0, a),
        "thresholds": slice(a, 2 * a),
        "score_std": slice(2 * a, 3 * a),
        "axis_flags": slice(3 * a, 4 * a),
        "contributions": slice(4 * a, 5 * a),
        "d_squared": 5 * a,
        "alarm": 5 * a + 1,
        "score": 5 * a + 2,
    }


def out_width(a):
    return 5 * a + 3


@njit(cache=True, fastmath={"contract", "arcp", "reassoc"})
def _recenter(buf, stat, count):
    # buf is (window, rows): one contiguous row of values per step
    rows = buf.shape[1]
    for i in range(rows):
        acc = 0.0
        for j in range(count):
            acc += buf[j, i]
        m = acc / count
        s1 = 0.0
        s2 = 0.0
        for j in range(count):
            d = buf[j, i] - m
            s1 += d
            s2 += d * d
        stat[W_SHIFT, i] = m
        stat[W_SUM, i] = s1
        stat[W_SQ, i] = s2


@njit(cache=True, inline="always", fastmath={"contract", "arcp", "reassoc"})
def _window_push(buf, stat, row, x, pos, evict):
    shift = stat[W_SHIFT, row]
    s1 = stat[W_SUM, row]
    s2 = stat[W_SQ, row]
    if evict:
        old = buf[pos, row] - shift
        s1 -= old
        s2 -= old * old
    buf[pos, row] = x
    d = x - shift
    s1 += d
    s2 += d * d
    stat[W_SUM, row] = s1
    stat[W_SQ, row] = s2


@njit(cache=True, inline="always", fastmath={"contract", "arcp", "reassoc"})
def _window_stats(stat, row, inv_count):
    m = stat[W_SUM, row] * inv_count
    var = max(stat[W_SQ, row] * inv_count - m * m, 0.0)
    return stat[W_SHIFT, row] + m, np.sqrt(var)


@njit(cache=True, fastmath={"contract", "arcp", "reassoc"})
def _reset_row(out, t, a):
    for c in range(5 * a):
        out[t, c] = np.nan
    for c in range(3 * a, 4 * a):
        out[t, c] = 0.0
    out[t, 5 * a] = np.nan
    out[t, 5 * a + 1] = 0.0
    out[t, 5 * a + 2] = 0.0


@njit(cache=True, inline="always", fastmath={"contract", "arcp", "reassoc"})
def _joint_step(s, pf, pi, jmean, jmats, counters, out, t, contrib, work):
    # D^2 is measured against the state before s is folded in
    a = JOINT_DIM
    if counters[N_JOINT] >= pi[P_WARMUP]:
        d2 = _mahalanobis(jmean, jmats[J_INV], s, contrib, work[0], a)
        out[t, 5 * a] = d2
        out[t, 5 * a + 2] = d2
        for j in range(a):
            out[t, 4 * a + j] = contrib[j]
        if d2 > pf[P_THRESHOLD]:
            out[t, 5 * a + 1] = 1.0
    counters[N_JOINT] = _cov_push(
        jmean, jmats[J_RAW], jmats[J_SHRUNK], jmats[J_INV], counters[N_JOINT], s,
        pf[P_BETA], pf[P_GAMMA], pf[P_EPS], pi[P_WARMUP], work, a,
    )


@njit(cache=True, fastmath={"contract", "arcp", "reassoc"})
def amdm_block(X, axis_of, coef, pf, pi, mbuf, mstat, sbuf, sstat, jmean, jmats, counters, out):
    """Rolling z-scores, per-axis EWMA thresholds and the joint test.

    Axis state (EWMA, score window) and the joint state are fed only once
    the metric windows are full; axis flags additionally wait for the score
    window to fill and joint flags for the joint warm-up.

    The score column holds D^2 when available, otherwise the largest axis
    deviation ratio |S - theta| / sigma_S. Without the joint path the alarm
    is "any axis flagged".
    """
    rows, m = X.shape
    a = JOINT_DIM
    window = pi[P_WINDOW]
    use_joint = pi[P_USE_JOINT] != 0
    lam = pf[P_LAM]
    k = pf[P_K]
    floor_rel = pf[P_FLOOR]
    s = np.empty(a)
    z = np.empty(m)
    contrib = np.empty(a)
    work = np.empty((3, a))
    # ring positions are advanced incrementally; modulo is slow per step
    pos = counters[N_SEEN] % window
    for t in range(rows):
        _reset_row(out, t, a)
        n = counters[N_SEEN]
        nxt = pos + 1 if pos + 1 < window else 0
        evict = n >= window
        if n == 0:
            for i in range(m):
                mstat[W_SHIFT, i] = X[t, i]
        if evict:
            for i in range(m):
                _window_push(mbuf, mstat, i, X[t, i], pos, True)
        else:
            for i in range(m):
                _window_push(mbuf, mstat, i, X[t, i], pos, False)
        inv_cnt = 1.0 / (n + 1 if n + 1 < window else window)
        # kept free of the axis scatter so it vectorises
        for i in range(m):
            mu, sd = _window_stats(mstat, i, inv_cnt)
            sd = max(sd, floor_rel * (1.0 + abs(mu)))
            z[i] = coef[i] * (X[t, i] - mu) / sd
        for j in range(a):
            s[j] = 0.0
        for i in range(m):
            s[axis_of[i]] += z[i]
        if nxt == 0:
            _recenter(mbuf, mstat, window)
        counters[N_SEEN] = n + 1
        pos = nxt
        for j in range(a):
            out[t, j] = s[j]
        if n + 1 < window:
            continue

        # axis path
        q = n + 1 - window  # scores already fed
        if q == 0:
            for j in range(a):
                sstat[W_SHIFT, j] = s[j]
                sstat[W_THETA, j] = s[j]
        else:
            for j in range(a):
                v = lam * s[j] + (1.0 - lam) * sstat[W_THETA, j]
                # flush values headed for the subnormal range (constant streams)
                sstat[W_THETA, j] = v if abs(v) > 1e-280 else 0.0
        # q = n + 1 - window, so q % window is the next metric position
        for j in range(a):
            _window_push(sbuf, sstat, j, s[j], nxt, q >= window)
        inv_scnt = 1.0 / (q + 1 if q + 1 < window else window)
        ratio = 0.0
        for j in range(a):
            _, sd = _window_stats(sstat, j, inv_scnt)
            theta = sstat[W_THETA, j]
            out[t, a + j] = theta
            out[t, 2 * a + j] = sd
            dev = abs(s[j] - theta)
            if sd > 0.0 and dev / sd > ratio:
                ratio = dev / sd
            if q + 1 >= window and dev > k * sd:
                out[t, 3 * a + j] = 1.0
                if not use_joint:
                    out[t, 5 * a + 1] = 1.0
        out[t, 5 * a + 2] = ratio
        if nxt + 1 == window:
            _recenter(sbuf, sstat, window)

        if use_joint:
            _joint_step(s, pf, pi, jmean, jmats, counters, out, t, contrib, work)


@njit(cache=True, fastmath={"contract", "arcp", "reassoc"})
def frozen_joint_block(X, axis_of, coef, center, scale, pf, pi, jmean, jmats, counters, out):
    """Joint test on axis scores built from fixed per-metric normalisation."""
    rows, m = X.shape
    a = jmean.shape[0]
    s = np.empty(a)
    contrib = np.empty(a)
    work = np.empty((3, a))
    for t in range(rows):
        _reset_row(out, t, a)
        for j in range(a):
            s[j] = 0.0
        for i in range(m):
            s[axis_of[i]] += coef[i] * (X[t, i] - center[i]) / scale[i]
        for j in range(a):
            out[t, j] = s[j]
        counters[N_SEEN] += 1
        _joint_step(s, pf, pi, jmean, jmats, counters, out, t, contrib, work)
