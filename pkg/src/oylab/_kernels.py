"""Compiled inner loops: Gaussian conversion, anchored sums and log-domain DPs.

All log-sum-exp accumulation is streaming: a running maximum ``m`` and a
scaled sum ``s`` so that the accumulated value is ``m + log(s)``.
"""

from __future__ import annotations

import ctypes
import math

import numba
import numpy as np
from numba.extending import get_cython_function_address

_ndtri_addr = get_cython_function_address("scipy.special.cython_special", "ndtri")
_ndtri = ctypes.CFUNCTYPE(ctypes.c_double, ctypes.c_double)(_ndtri_addr)

NEG_INF = -np.inf
_U53 = 2.0**-53


# ctypes pointers cannot be cached to disk
@numba.njit
def raw_to_normal(raw, scale, out):
    """Map 64-bit words to N(0, scale^2) through the inverse normal CDF."""
    sh = np.uint64(11)
    for j in range(raw.size):
        u = (float(raw[j] >> sh) + 0.5) * _U53
        out[j] = scale * _ndtri(u)


@numba.njit(cache=True)
def raw_to_sign(raw, scale, out):
    sh = np.uint64(63)
    for j in range(raw.size):
        out[j] = scale if (raw[j] >> sh) == 0 else -scale


@numba.njit(cache=True)
def anchored_cumsum(inc, anchor, out):
    """Compensated partial sums of ``inc`` with ``out[anchor] = 0``."""
    n = inc.size
    out[anchor] = 0.0
    s = 0.0
    c = 0.0
    for j in range(anchor, n):
        y = inc[j] - c
        t = s + y
        c = (t - s) - y
        s = t
        out[j + 1] = s
    s = 0.0
    c = 0.0
    for j in range(anchor - 1, -1, -1):
        y = -inc[j] - c
        t = s + y
        c = (t - s) - y
        s = t
        out[j] = s


@numba.njit(cache=True, inline="always")
def _corridor_ok(w, k, cor):
    # cor = (enabled, ad0, h0, slope, width)
    if cor[0] == 0.0:
        return True
    h = 0.5 * (k + w)
    ad = 0.5 * (k - w)
    return abs(ad - (cor[1] + cor[3] * (h - cor[2]))) <= cor[4]


@numba.njit(cache=True)
def forward(B, init, lo, hi, log_dt, times, level0, cor, store):
    """Forward DP over levels ``level0 .. level0 + B.shape[0] - 1``.

    ``B`` holds the Brownian paths of those levels on the full grid and
    ``init`` the log-weights of the first level on columns ``lo..hi``.
    Level ``k`` is obtained from level ``k - 1`` by

        L_k[j] = B_k[j] + log_dt + LSE_{lo <= i < j} (L_{k-1}[i] - B_k[i]),

    i.e. the jump from ``k - 1`` to ``k`` happens at a grid time strictly
    before ``j``.  With ``store`` the full table is returned, otherwise only
    the last row (shape ``(1, width)``).
    """
    K = B.shape[0]
    W = hi - lo + 1
    rows = K if store else 1
    out = np.full((rows, W), NEG_INF)
    prev = np.empty(W)
    cur = np.empty(W)
    for j in range(W):
        v = init[j]
        if not _corridor_ok(times[lo + j], level0, cor):
            v = NEG_INF
        prev[j] = v
    if store:
        out[0, :] = prev
    for r in range(1, K):
        k = level0 + r
        m = NEG_INF
        s = 0.0
        for j in range(W):
            col = lo + j
            ok = _corridor_ok(times[col], k, cor)
            if s > 0.0 and ok:
                cur[j] = B[r, col] + log_dt + m + math.log(s)
            else:
                cur[j] = NEG_INF
            x = prev[j] - B[r, col]
            if x > NEG_INF and ok:
                if x > m:
                    s = s * math.exp(m - x) + 1.0
                    m = x
                else:
                    s += math.exp(x - m)
        prev, cur = cur, prev
        if store:
            out[r, :] = prev
    if not store:
        out[0, :] = prev
    return out


@numba.njit(cache=True)
def prefix_lse(x):
    """out[j] = log sum_{i<j} exp(x[i]), length x.size + 1."""
    out = np.empty(x.size + 1)
    out[0] = NEG_INF
    m = NEG_INF
    s = 0.0
    for j in range(x.size):
        v = x[j]
        if v > NEG_INF:
            if v > m:
                s = s * math.exp(m - v) + 1.0
                m = v
            else:
                s += math.exp(v - m)
        out[j + 1] = m + math.log(s) if s > 0.0 else NEG_INF
    return out


@numba.njit(cache=True)
def backward(B, lo, hi, log_dt, final_col):
    """Backward DP towards the point (time of column ``final_col``, top level).

    Rows of ``B`` are levels ``k .. n`` (last row is the top level).  Returns
    ``(open_, closed)`` tables over columns ``lo..hi`` where, for a path
    that is at row ``r`` from time ``u`` on,

      closed[r, u] : log weight with the next jump at a time ``>= u``,
      open_[r, u]  : log weight with the next jump at a time ``> u``.

    On the top row both equal ``B_n(t) - B_n(u)`` for ``u <= t``.
    """
    K = B.shape[0]
    W = hi - lo + 1
    open_ = np.full((K, W), NEG_INF)
    closed = np.full((K, W), NEG_INF)
    top = K - 1
    for j in range(W):
        col = lo + j
        if col <= final_col:
            v = B[top, final_col] - B[top, col]
            open_[top, j] = v
            closed[top, j] = v
    for r in range(top - 1, -1, -1):
        m = NEG_INF
        s = 0.0
        for j in range(W - 1, -1, -1):
            col = lo + j
            if s > 0.0:
                open_[r, j] = -B[r, col] + log_dt + m + math.log(s)
            # jump from row r to r + 1 at this time; must be before the end
            if col < final_col:
                x = B[r, col] + open_[r + 1, j]
                if x > NEG_INF:
                    if x > m:
                        s = s * math.exp(m - x) + 1.0
                        m = x
                    else:
                        s += math.exp(x - m)
            if s > 0.0:
                closed[r, j] = -B[r, col] + log_dt + m + math.log(s)
    return open_, closed
