"""The layer zoo: embedding lookup, word-level CNN, attention pooling,
LSTM/BiLSTM, dropout, the sigmoid scoring head and the MSE loss.

Layers are pure functions of (parameters, input, rng); they build onto the
autodiff tape from :mod:`traitgrade.tensor` and route their inner loops
through :mod:`traitgrade.kernels`. Masks are plain boolean numpy arrays, not
tensors: they carry no gradient. A masked-out position contributes exactly
zero to attention, and the LSTM carries its state through masked steps, so a
padded essay scores identically to the same essay unpadded.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .tensor import (
    ShapeError,
    Tensor,
    add,
    add_bias,
    concat,
    matmul,
    mean,
    mul,
    node,
    sigmoid,
    softmax,
    sub,
    tanh,
)


def embed(token_ids, table: Tensor, pad_id: int | None = None) -> Tensor:
    """Look up rows of ``table`` (V, d) for each id; gradients scatter back.

    ``pad_id`` names a row that is pinned: it receives no gradient, which
    keeps the padding row at its zero initialisation forever.
    """
    ids = np.asarray(token_ids, dtype=np.int64)
    if ids.ndim != 1 or ids.shape[0] == 0:
        raise ValueError(f"embed expects a non-empty 1-d id list, got shape {ids.shape}")
    V = table.data.shape[0]
    bad = (ids < 0) | (ids >= V)
    if bad.any():
        raise IndexError(f"embed: token id {ids[bad][0]} outside [0, {V})")
    out = table.data[ids]
    pin = -1 if pad_id is None else int(pad_id)
    return node(out, (table,),
                lambda g: (kernels.embedding_grad(ids, g, V, pin),))


def conv1d(x: Tensor, w: Tensor, b: Tensor, window: int) -> Tensor:
    """Same-padded 1-d convolution over token rows.

    x is (T, d_e), w is (window*d_e, filters) holding the flattened kernel,
    b is (filters,). Output row t sees the window of rows centred on t with
    zero padding past the edges. No activation here; the tanh lives in the
    attention scorer that follows.
    """
    T, D = x.data.shape
    if w.data.shape[0] != window * D:
        raise ShapeError(
            f"conv1d: kernel rows {w.data.shape[0]} != window*d ({window}*{D})")
    y, cols = kernels.conv1d_forward(x.data, w.data, b.data, window)

    def backward(g):
        dx, dw, db = kernels.conv1d_backward(g, cols, w.data, window)
        return dx, dw, db

    return node(y, (x, w, b), backward)


def attention_pool(h: Tensor, w: Tensor, b: Tensor, v: Tensor,
                   mask: np.ndarray | None = None) -> Tensor:
    """Score rows with v.tanh(W h_i + b), softmax, return the weighted sum.

    Output is always a convex combination of the input rows. Masked rows get
    weight exactly zero; if every row is masked the result is a zero vector
    (the caller guarantees such a row is itself masked downstream).
    """
    n, r = h.data.shape
    if n == 0:
        raise ValueError("attention_pool: empty input")
    if mask is not None and not np.asarray(mask, dtype=bool).any():
        return Tensor(np.zeros(r, dtype=h.data.dtype))
    scores = matmul(tanh(add_bias(matmul(h, w), b)), v)
    weights = softmax(scores, mask)
    return matmul(weights, h)


def lstm_layer(x: Tensor, wx: Tensor, wh: Tensor, b: Tensor,
               mask: np.ndarray | None = None, reverse: bool = False) -> Tensor:
    """Run the LSTM recurrence over the rows of x (T, D); returns (T, H).

    Gate columns of wx/wh/b are packed [input | forget | candidate | output].
    Initial hidden and cell states are zero. With ``reverse`` the rows are
    consumed last-to-first (the backward half of a BiLSTM). Masked steps
    carry state through unchanged.
    """
    T = x.data.shape[0]
    if T == 0:
        raise ValueError("lstm_layer: empty sequence")
    H = wh.data.shape[0]
    if wx.data.shape[1] != 4 * H or b.data.shape[0] != 4 * H:
        raise ShapeError(
            f"lstm_layer: gate dims disagree: wx {wx.data.shape}, wh {wh.data.shape}, "
            f"b {b.data.shape}")
    m = np.ones(T, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    h, c, gates = kernels.lstm_forward(x.data, wx.data, wh.data, b.data, m, reverse)

    def backward(g):
        return kernels.lstm_backward(
            g, x.data, wx.data, wh.data, m, reverse, h, c, gates)

    return node(h, (x, wx, wh, b), backward)


def bilstm_layer(x: Tensor, fwd, bwd, mask: np.ndarray | None = None) -> Tensor:
    """Forward and reversed LSTM passes concatenated per step: (T, 2H).

    ``fwd`` and ``bwd`` are (wx, wh, b) triples for the two directions.
    """
    h_f = lstm_layer(x, *fwd, mask=mask, reverse=False)
    h_b = lstm_layer(x, *bwd, mask=mask, reverse=True)
    return concat([h_f, h_b], axis=1)


def dense_sigmoid(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """The scoring head: sigmoid(w . x + b), a scalar strictly in (0, 1)."""
    return sigmoid(add(matmul(w, x), b))


def mse_loss(pred: Tensor, gold: Tensor) -> Tensor:
    """Mean squared error between two equal-length score vectors."""
    if pred.data.shape != gold.data.shape:
        raise ValueError(
            f"mse_loss: length mismatch: {pred.data.shape} vs {gold.data.shape}")
    if pred.data.ndim != 1 or pred.data.shape[0] == 0:
        raise ValueError("mse_loss: expected non-empty 1-d inputs")
    d = sub(pred, gold)
    return mean(mul(d, d))


def dropout(x: Tensor, rate: float, rng: np.random.Generator,
            train: bool) -> Tensor:
    """Inverted dropout: zero entries with probability ``rate`` and scale
    survivors by 1/(1-rate) so the expectation is unchanged. Identity in
    eval mode and at rate 0."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not train or rate == 0.0:
        return x
    keep = (rng.random(x.data.shape) >= rate)
    factor = (keep / (1.0 - rate)).astype(x.data.dtype)
    return node(x.data * factor, (x,), lambda g: (g * factor,))


# ---------------------------------------------------------------------------
# parameter initialisation and pretrained embeddings


def glorot_uniform(rng: np.random.Generator, shape, dtype) -> np.ndarray:
    fan_in = shape[0] if len(shape) > 1 else shape[0]
    fan_out = shape[1] if len(shape) > 1 else shape[0]
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def load_glove(path, dim: int) -> dict[str, np.ndarray]:
    """Read a GloVe text file: one token then ``dim`` decimals per line.

    Raises ValueError on the first line whose width disagrees with ``dim``.
    """
    vectors: dict[str, np.ndarray] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split(" ")
            if len(parts) < 2:
                continue
            token, values = parts[0], parts[1:]
            if len(values) != dim:
                raise ValueError(
                    f"{path}:{lineno}: expected {dim} dimensions, found {len(values)}")
            vectors[token] = np.array(values, dtype=np.float64)
    return vectors
