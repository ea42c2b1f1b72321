"""Hot-loop kernels: the compiled extension when available, numpy otherwise.

Set ``COSOD_KERNELS=python`` to force the numpy fallback.
"""

from __future__ import annotations

import os

from . import _fallback

BACKEND = "python"
if os.environ.get("COSOD_KERNELS", "").lower() != "python":
    try:
        from . import _kernels as _impl

        BACKEND = "compiled"
    except ImportError:
        _impl = _fallback
else:
    _impl = _fallback

build_lattice = _impl.build_lattice
lattice_filter = _impl.lattice_filter
label_components = _impl.label_components

__all__ = ["BACKEND", "build_lattice", "lattice_filter", "label_components"]
