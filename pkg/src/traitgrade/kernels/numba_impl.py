"""Numba-compiled kernels, same contracts as :mod:`numpy_impl`.

Loops are written out explicitly; @njit turns them into machine code and
caches the result on disk, so only the first process ever pays compilation.
"""

import numpy as np
from numba import njit

BACKEND_NAME = "numba"


@njit(cache=True)
def conv1d_forward(x, w, b, window):
    T, D = x.shape
    F = w.shape[1]
    pad_lo = (window - 1) // 2
    cols = np.zeros((T, window * D), dtype=x.dtype)
    for t in range(T):
        for k in range(window):
            src = t + k - pad_lo
            if 0 <= src < T:
                for d in range(D):
                    cols[t, k * D + d] = x[src, d]
    y = np.dot(cols, w)
    for t in range(T):
        for f in range(F):
            y[t, f] += b[f]
    return y, cols


@njit(cache=True)
def conv1d_backward(gy, cols, w, window):
    T = gy.shape[0]
    D = w.shape[0] // window
    dw = np.dot(cols.T, gy)
    db = gy.sum(axis=0)
    dcols = np.dot(gy, w.T)
    pad_lo = (window - 1) // 2
    dx = np.zeros((T, D), dtype=gy.dtype)
    for t in range(T):
        for k in range(window):
            src = t + k - pad_lo
            if 0 <= src < T:
                for d in range(D):
                    dx[src, d] += dcols[t, k * D + d]
    return dx, dw, db


@njit(cache=True)
def embedding_grad(ids, gy, rows, pad_id=-1):
    D = gy.shape[1]
    dt = np.zeros((rows, D), dtype=gy.dtype)
    for t in range(ids.shape[0]):
        r = ids[t]
        if r == pad_id:
            continue
        for d in range(D):
            dt[r, d] += gy[t, d]
    return dt


@njit(cache=True)
def lstm_forward(x, wx, wh, b, mask, reverse):
    T = x.shape[0]
    H = wh.shape[0]
    pre = np.dot(x, wx)
    for t in range(T):
        for j in range(4 * H):
            pre[t, j] += b[j]
    h = np.zeros((T, H), dtype=x.dtype)
    c = np.zeros((T, H), dtype=x.dtype)
    gates = np.zeros((T, 4 * H), dtype=x.dtype)
    hprev = np.zeros(H, dtype=x.dtype)
    cprev = np.zeros(H, dtype=x.dtype)
    for step in range(T):
        t = T - 1 - step if reverse else step
        if mask[t]:
            z = pre[t] + np.dot(hprev, wh)
            for j in range(H):
                zi = z[j]
                zf = z[H + j]
                zg = z[2 * H + j]
                zo = z[3 * H + j]
                gi = 1.0 / (1.0 + np.exp(-zi)) if zi >= 0 else np.exp(zi) / (1.0 + np.exp(zi))
                gf = 1.0 / (1.0 + np.exp(-zf)) if zf >= 0 else np.exp(zf) / (1.0 + np.exp(zf))
                gg = np.tanh(zg)
                go = 1.0 / (1.0 + np.exp(-zo)) if zo >= 0 else np.exp(zo) / (1.0 + np.exp(zo))
                cn = gf * cprev[j] + gi * gg
                gates[t, j] = gi
                gates[t, H + j] = gf
                gates[t, 2 * H + j] = gg
                gates[t, 3 * H + j] = go
                c[t, j] = cn
                h[t, j] = go * np.tanh(cn)
        else:
            for j in range(H):
                h[t, j] = hprev[j]
                c[t, j] = cprev[j]
        hprev = h[t]
        cprev = c[t]
    return h, c, gates


@njit(cache=True)
def lstm_backward(gh, x, wx, wh, mask, reverse, h, c, gates):
    T, D = x.shape
    H = wh.shape[0]
    dz_all = np.zeros((T, 4 * H), dtype=x.dtype)
    hprev_all = np.zeros((T, H), dtype=x.dtype)
    dh_next = np.zeros(H, dtype=x.dtype)
    dc_next = np.zeros(H, dtype=x.dtype)
    wh_T = wh.T.copy()
    zero = np.zeros(H, dtype=x.dtype)
    for step in range(T):
        t = step if reverse else T - 1 - step
        if not mask[t]:
            dh_next = dh_next + gh[t]
            continue
        if reverse:
            hp = h[t + 1] if t + 1 < T else zero
            cp = c[t + 1] if t + 1 < T else zero
        else:
            hp = h[t - 1] if t > 0 else zero
            cp = c[t - 1] if t > 0 else zero
        for j in range(H):
            hprev_all[t, j] = hp[j]
        dc_here = np.zeros(H, dtype=x.dtype)
        for j in range(H):
            gi = gates[t, j]
            gf = gates[t, H + j]
            gg = gates[t, 2 * H + j]
            go = gates[t, 3 * H + j]
            tc = np.tanh(c[t, j])
            dh = gh[t, j] + dh_next[j]
            dc = dc_next[j] + dh * go * (1.0 - tc * tc)
            dz_all[t, j] = dc * gg * gi * (1.0 - gi)
            dz_all[t, H + j] = dc * cp[j] * gf * (1.0 - gf)
            dz_all[t, 2 * H + j] = dc * gi * (1.0 - gg * gg)
            dz_all[t, 3 * H + j] = dh * tc * go * (1.0 - go)
            dc_here[j] = dc * gf
        dh_next = np.dot(dz_all[t], wh_T)
        dc_next = dc_here
    dwh = np.dot(hprev_all.T, dz_all)
    dx = np.dot(dz_all, wx.T)
    dwx = np.dot(x.T, dz_all)
    db = dz_all.sum(axis=0)
    return dx, dwx, dwh, db
