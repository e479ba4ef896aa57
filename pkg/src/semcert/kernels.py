"""Backend selection for the hot kernels.

The compiled extension is preferred. Set ``SEMCERT_BACKEND=python`` to force
the numpy fallback (used by the parity tests and the benchmark).
"""

import importlib
import os

import numpy as np

from . import _kernels_py

__all__ = ["BACKEND", "sq_dists", "assign", "adc_table", "adc_scan", "load_backend"]


def load_backend(name=None):
    """Return the kernel module for ``name`` ("compiled", "python" or None for auto)."""
    name = name or os.environ.get("SEMCERT_BACKEND", "auto")
    if name == "python":
        return _kernels_py
    try:
        return importlib.import_module("semcert._kernels")
    except ImportError:
        if name == "compiled":
            raise
        return _kernels_py


_impl = load_backend()
BACKEND = "python" if _impl is _kernels_py else "compiled"


def sq_dists(X, q):
    return _impl.sq_dists(np.ascontiguousarray(X, dtype=np.float64),
                          np.ascontiguousarray(q, dtype=np.float64))


def assign(X, C):
    return _impl.assign(np.ascontiguousarray(X, dtype=np.float64),
                        np.ascontiguousarray(C, dtype=np.float64))


def adc_table(q, centroids):
    return _impl.adc_table(np.ascontiguousarray(q, dtype=np.float64),
                           np.ascontiguousarray(centroids, dtype=np.float64))


def adc_scan(codes, table):
    return _impl.adc_scan(np.ascontiguousarray(codes, dtype=np.int32),
                          np.ascontiguousarray(table, dtype=np.float64))
