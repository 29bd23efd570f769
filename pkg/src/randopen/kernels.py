"""Backend selection for the hot orbit kernels.

The compiled extension is used when importable; otherwise the numpy
fallback.  Set ``RANDOPEN_KERNELS=python`` to force the fallback.
"""

from __future__ import annotations

import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("RANDOPEN_KERNELS", "").lower() != "python":
    try:
        from . import _kernels as _compiled  # type: ignore[attr-defined]

        _impl = _compiled
        BACKEND = "cython"
    except ImportError:  # pragma: no cover - depends on build
        pass

positions = _impl.positions
prefix_sums = _impl.prefix_sums
