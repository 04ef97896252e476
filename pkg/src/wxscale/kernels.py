"""Kernel backend selection.

Uses the compiled ``wxscale._kernels`` when it imports, the numpy fallback
otherwise. ``WXSCALE_PURE_PYTHON=1`` forces the fallback. Both backends
return identical bits, so the choice only affects speed.
"""

from __future__ import annotations

import os

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if not os.environ.get("WXSCALE_PURE_PYTHON"):
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # pragma: no cover - depends on the build
        _impl = _pykernels

exact_sum = _impl.exact_sum
weighted_sq_column_sums = _impl.weighted_sq_column_sums
crps_ensemble_rows = _impl.crps_ensemble_rows
crps_quadrature = _impl.crps_quadrature

__all__ = [
    "BACKEND",
    "exact_sum",
    "weighted_sq_column_sums",
    "crps_ensemble_rows",
    "crps_quadrature",
]
