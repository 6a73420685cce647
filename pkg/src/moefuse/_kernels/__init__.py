"""Hot-kernel backend selection.

The compiled Cython module is preferred; the pure-numpy fallback has
identical contracts. ``MOEFUSE_KERNELS=python|cython`` forces a backend at
import time. Results agree across backends to floating-point rounding; runs
within one backend are bit-deterministic.
"""

import os

import numpy as np

from . import _pykernels

try:
    from . import _ckernels
except ImportError:
    _ckernels = None

_BACKENDS = {"python": _pykernels}
if _ckernels is not None:
    _BACKENDS["cython"] = _ckernels

_forced = os.environ.get("MOEFUSE_KERNELS", "").strip().lower()
if _forced:
    if _forced not in _BACKENDS:
        raise ImportError(
            f"MOEFUSE_KERNELS={_forced!r} is not available; "
            f"choices: {sorted(_BACKENDS)}"
        )
    _active = _BACKENDS[_forced]
else:
    _active = _BACKENDS.get("cython", _pykernels)


def available_backends():
    return sorted(_BACKENDS)


def active_backend():
    return "cython" if _active is _ckernels else "python"


def set_backend(name):
    """Switch the active backend (used by the kernel benchmark and tests)."""
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"unknown kernel backend {name!r}; choices: {sorted(_BACKENDS)}")
    _active = _BACKENDS[name]


def get_backend(name):
    """Return the raw backend module for side-by-side comparisons."""
    if name not in _BACKENDS:
        raise ValueError(f"unknown kernel backend {name!r}; choices: {sorted(_BACKENDS)}")
    return _BACKENDS[name]


def _c2d(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def topk_mask(logits, k):
    return _active.topk_mask(_c2d(logits), int(k))


def masked_softmax_fwd(logits, mask):
    return _active.masked_softmax_fwd(_c2d(logits), np.ascontiguousarray(mask, dtype=np.uint8))


def masked_softmax_bwd(probs, mask, grad_out):
    return _active.masked_softmax_bwd(
        _c2d(probs), np.ascontiguousarray(mask, dtype=np.uint8), _c2d(grad_out)
    )


def gather_rows(src, rows):
    return _active.gather_rows(_c2d(src), np.ascontiguousarray(rows, dtype=np.intp))


def scatter_add_rows(dst, rows, src):
    _active.scatter_add_rows(dst, np.ascontiguousarray(rows, dtype=np.intp), _c2d(src))
