"""Kernel backend selection.

The compiled extension is used when it imports; set ``PERTRL_PURE_PYTHON=1``
to force the numpy fallback.
"""

import os

from . import _pykernels

python_backend = _pykernels

if os.environ.get("PERTRL_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
    compiled_backend = None
else:
    try:
        from . import _ckernels as _impl
    except ImportError:  # extension not built
        _impl = _pykernels
        compiled_backend = None
    else:
        compiled_backend = _impl

BACKEND = _impl.BACKEND
horner = _impl.horner
power_sums = _impl.power_sums
weighted_power_sums = _impl.weighted_power_sums
cross_power_sums = _impl.cross_power_sums
closed_loop_costs = _impl.closed_loop_costs


def available_backends():
    out = {"python": _pykernels}
    if compiled_backend is not None:
        out["cython"] = compiled_backend
    return out
