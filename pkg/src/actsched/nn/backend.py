"""Kernel backend selection.

ACTSCHED_BACKEND=numpy forces the pure-numpy kernels; ACTSCHED_BACKEND=numba
requires numba and fails loudly without it. Unset, numba is used when
importable. Matrix products always go through numpy BLAS regardless.
"""

from __future__ import annotations

import os

from . import kernels_numpy

_requested = os.environ.get("ACTSCHED_BACKEND", "").strip().lower()

if _requested == "numpy":
    _impl = kernels_numpy
elif _requested == "numba":
    from . import kernels_numba as _impl
elif _requested == "":
    try:
        from . import kernels_numba as _impl
    except ImportError:
        _impl = kernels_numpy
else:
    raise RuntimeError(f"unknown ACTSCHED_BACKEND {_requested!r} (use numpy or numba)")

BACKEND = _impl.NAME
lstm_gates_forward = _impl.lstm_gates_forward
lstm_gates_backward = _impl.lstm_gates_backward
adam_update = _impl.adam_update
