"""Pure-numpy reference kernels.

These are the fallback bodies for the hot inner loops (LSTM recurrence,
same-padded 1-d convolution, embedding scatter). The numba backend mirrors
each function signature exactly; parity between the two is pinned by tests.

Shape conventions:
    conv:  x (T, D), w (window*D, F), b (F,)         -> y (T, F)
    lstm:  x (T, D), wx (D, 4H), wh (H, 4H), b (4H,) -> h (T, H)
Gate columns are packed [input | forget | candidate | output]. A zero mask
entry carries the LSTM state through unchanged, which is what makes padded
and unpadded forwards agree exactly.
"""

import numpy as np

BACKEND_NAME = "numpy"


def conv1d_forward(x, w, b, window):
    T, D = x.shape
    pad_lo = (window - 1) // 2
    xp = np.zeros((T + window - 1, D), dtype=x.dtype)
    xp[pad_lo:pad_lo + T] = x
    cols = np.empty((T, window * D), dtype=x.dtype)
    for k in range(window):
        cols[:, k * D:(k + 1) * D] = xp[k:k + T]
    y = cols @ w + b
    return y, cols


def conv1d_backward(gy, cols, w, window):
    T = gy.shape[0]
    D = w.shape[0] // window
    pad_lo = (window - 1) // 2
    dw = cols.T @ gy
    db = gy.sum(axis=0)
    dcols = gy @ w.T
    dxp = np.zeros((T + window - 1, D), dtype=gy.dtype)
    for k in range(window):
        dxp[k:k + T] += dcols[:, k * D:(k + 1) * D]
    dx = dxp[pad_lo:pad_lo + T]
    return np.ascontiguousarray(dx), dw, db


def embedding_grad(ids, gy, rows, pad_id=-1):
    dt = np.zeros((rows, gy.shape[1]), dtype=gy.dtype)
    np.add.at(dt, ids, gy)
    if 0 <= pad_id < rows:
        dt[pad_id] = 0.0
    return dt


def _sigmoid(z):
    return np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))),
                    np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))


def lstm_forward(x, wx, wh, b, mask, reverse):
    T = x.shape[0]
    H = wh.shape[0]
    pre = x @ wx + b
    h = np.zeros((T, H), dtype=x.dtype)
    c = np.zeros((T, H), dtype=x.dtype)
    gates = np.zeros((T, 4 * H), dtype=x.dtype)
    hprev = np.zeros(H, dtype=x.dtype)
    cprev = np.zeros(H, dtype=x.dtype)
    steps = range(T - 1, -1, -1) if reverse else range(T)
    for t in steps:
        if mask[t]:
            z = pre[t] + hprev @ wh
            gi = _sigmoid(z[:H])
            gf = _sigmoid(z[H:2 * H])
            gg = np.tanh(z[2 * H:3 * H])
            go = _sigmoid(z[3 * H:])
            cnew = gf * cprev + gi * gg
            hnew = go * np.tanh(cnew)
            gates[t, :H] = gi
            gates[t, H:2 * H] = gf
            gates[t, 2 * H:3 * H] = gg
            gates[t, 3 * H:] = go
            h[t] = hnew
            c[t] = cnew
            hprev, cprev = hnew, cnew
        else:
            h[t] = hprev
            c[t] = cprev
    return h, c, gates


def lstm_backward(gh, x, wx, wh, mask, reverse, h, c, gates):
    T, D = x.shape
    H = wh.shape[0]
    dz_all = np.zeros((T, 4 * H), dtype=x.dtype)
    hprev_all = np.zeros((T, H), dtype=x.dtype)
    dwh = np.zeros_like(wh)
    dh_next = np.zeros(H, dtype=x.dtype)
    dc_next = np.zeros(H, dtype=x.dtype)
    wh_T = wh.T.copy()
    steps = range(T) if reverse else range(T - 1, -1, -1)
    for t in steps:
        if not mask[t]:
            # carried state: the output slot at t is the previous state itself
            dh_next = dh_next + gh[t]
            continue
        if reverse:
            hp = h[t + 1] if t + 1 < T else np.zeros(H, dtype=x.dtype)
            cp = c[t + 1] if t + 1 < T else np.zeros(H, dtype=x.dtype)
        else:
            hp = h[t - 1] if t > 0 else np.zeros(H, dtype=x.dtype)
            cp = c[t - 1] if t > 0 else np.zeros(H, dtype=x.dtype)
        hprev_all[t] = hp
        gi = gates[t, :H]
        gf = gates[t, H:2 * H]
        gg = gates[t, 2 * H:3 * H]
        go = gates[t, 3 * H:]
        tc = np.tanh(c[t])
        dh = gh[t] + dh_next
        dc = dc_next + dh * go * (1.0 - tc * tc)
        dz = dz_all[t]
        dz[:H] = dc * gg * gi * (1.0 - gi)
        dz[H:2 * H] = dc * cp * gf * (1.0 - gf)
        dz[2 * H:3 * H] = dc * gi * (1.0 - gg * gg)
        dz[3 * H:] = dh * tc * go * (1.0 - go)
        dh_next = dz @ wh_T
        dc_next = dc * gf
    dwh = hprev_all.T @ dz_all
    dx = dz_all @ wx.T
    dwx = x.T @ dz_all
    db = dz_all.sum(axis=0)
    return dx, dwx, dwh, db
