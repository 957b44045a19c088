"""Select the compiled kernel core when it is importable.

Set ``CAR_HEAVYTAIL_PURE=1`` to force the numpy fallback.
"""

from __future__ import annotations

import os

from . import _kernels_py

TRIWEIGHT = _kernels_py.TRIWEIGHT
GAUSSIAN = _kernels_py.GAUSSIAN

try:
    from . import _kernels as _compiled
except ImportError:
    _compiled = None

_force_pure = os.environ.get("CAR_HEAVYTAIL_PURE", "").lower() in ("1", "true", "yes")
_impl = _kernels_py if (_compiled is None or _force_pure) else _compiled
BACKEND = "python" if _impl is _kernels_py else "compiled"

kernel_sums = _impl.kernel_sums
efron_sequence = _impl.efron_sequence
minimization_sequence = _impl.minimization_sequence


def implementations():
    """Return ``{name: module}`` for every backend importable in this process."""
    out = {"python": _kernels_py}
    if _compiled is not None:
        out["compiled"] = _compiled
    return out
