"""Kernel backend selection.

The compiled extension is preferred when it imports; the numpy fallback is
bitwise identical, so the choice never changes results, only speed.  Set
``ADAHAAR_BACKEND=numpy`` or ``ADAHAAR_BACKEND=compiled`` to force one.
"""

import os

from adahaar._kernels import numpy_impl

_forced = os.environ.get("ADAHAAR_BACKEND", "").strip().lower()

if _forced == "numpy":
    _impl = numpy_impl
elif _forced == "compiled":
    from adahaar._kernels import _core as _impl
else:
    try:
        from adahaar._kernels import _core as _impl
    except ImportError:
        _impl = numpy_impl

BACKEND_NAME = _impl.BACKEND_NAME
pair_maxstat = _impl.pair_maxstat
select_levels = _impl.select_levels
t_stats = _impl.t_stats

__all__ = ["BACKEND_NAME", "pair_maxstat", "select_levels", "t_stats"]
