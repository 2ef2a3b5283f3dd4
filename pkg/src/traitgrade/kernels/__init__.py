"""Backend dispatch for the hot numeric kernels.

The environment variable ``TRAITGRADE_KERNELS`` picks the implementation:

    auto   (default) numba when importable, else pure numpy
    numba  require the JIT backend, fail loudly if numba is missing
    numpy  force the pure-numpy fallback

Both backends expose the same five functions and agree numerically; see
tests/test_kernels.py for the parity suite and benchmarks/bench_kernels.py
for a speed comparison.
"""

import os

_requested = os.environ.get("TRAITGRADE_KERNELS", "auto").lower()

if _requested not in ("auto", "numba", "numpy"):
    raise ValueError(
        f"TRAITGRADE_KERNELS={_requested!r}: expected auto, numba or numpy")

if _requested in ("auto", "numba"):
    try:
        from . import numba_impl as _impl
    except ImportError:
        if _requested == "numba":
            raise
        from . import numpy_impl as _impl
else:
    from . import numpy_impl as _impl

BACKEND = _impl.BACKEND_NAME

conv1d_forward = _impl.conv1d_forward
conv1d_backward = _impl.conv1d_backward
embedding_grad = _impl.embedding_grad
lstm_forward = _impl.lstm_forward
lstm_backward = _impl.lstm_backward
