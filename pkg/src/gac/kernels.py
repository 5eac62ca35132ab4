"""Backend selection for the batched guide kernels.

The compiled extension is used when importable; set ``GAC_PURE_PYTHON=1``
to force the NumPy fallback.
"""
import os

from . import _kernels_py

try:
    if os.environ.get("GAC_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("pure-python backend requested")
    from . import _kernels as _compiled
except ImportError:
    _compiled = None

_impl = _compiled if _compiled is not None else _kernels_py
BACKEND = "compiled" if _compiled is not None else "python"

dual_eval = _impl.dual_eval
guide_moments = _impl.guide_moments
solve_dual = _impl.solve_dual
bias_relu = _impl.bias_relu
relu_mask = _impl.relu_mask


def backends() -> dict:
    """All importable backends by name."""
    out = {"python": _kernels_py}
    if _compiled is not None:
        out["compiled"] = _compiled
    return out
