"""Hot kernels for patch extraction/accumulation, with backend selection.

The convolution layers are built as gather -> GEMM -> scatter; the gather and
scatter steps dominate non-BLAS runtime, so they have a compiled
implementation (``_core``, Cython) and a pure-numpy fallback (``_pure``).
Both backends produce bit-identical results: the gather is an exact copy and
both scatters accumulate contributions in the same canonical order.

Set ``VSERVO_KERNELS=pure`` to force the fallback (used by the benchmark and
the cross-backend tests).
"""

import os

from vservo.kernels import _pure

if os.environ.get("VSERVO_KERNELS", "").lower() == "pure":
    _impl = _pure
    BACKEND = "pure"
else:
    try:
        from vservo.kernels import _core as _impl

        BACKEND = "compiled"
    except ImportError:
        _impl = _pure
        BACKEND = "pure"

extract_patches = _impl.extract_patches
scatter_patches = _impl.scatter_patches
patch_grid = _pure.patch_grid

__all__ = ["BACKEND", "extract_patches", "scatter_patches", "patch_grid"]
