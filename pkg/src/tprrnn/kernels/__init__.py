"""Batched TPR kernels with a compiled core and a numpy fallback.

The compiled extension is used when it was built and imports cleanly.
Set ``TPRRNN_PURE_PYTHON=1`` to force the numpy implementation.
"""
import os

from . import _reference

reference = _reference

try:
    if os.environ.get("TPRRNN_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("pure-python backend requested")
    from . import _ckernels as compiled
except ImportError:
    compiled = None

_active = compiled if compiled is not None else _reference

BACKEND = _active.BACKEND
unbind3 = _active.unbind3
outer3 = _active.outer3
unbind3_backward = _active.unbind3_backward
tpr_step = _active.tpr_step
tpr_step_backward = _active.tpr_step_backward


def available_backends():
    """Modules implementing the kernel contract, keyed by backend name."""
    out = {"numpy": _reference}
    if compiled is not None:
        out["cython"] = compiled
    return out


__all__ = [
    "BACKEND", "unbind3", "outer3", "unbind3_backward", "tpr_step",
    "tpr_step_backward", "available_backends", "reference", "compiled",
]
