"""Raster inner loops: compiled extension when available, Python fallback otherwise.

Both backends implement the same arithmetic in the same operation order, so
their outputs are bit-identical; which one is active never changes results,
only speed. Selection happens once at import:

- default: the compiled ``_ckernels`` extension if it built, else ``_pykernels``
- ``SPLITPROOF_KERNELS=c`` forces the extension (ImportError if missing)
- ``SPLITPROOF_KERNELS=py`` forces the Python fallback

``benchmarks/bench_kernels.py`` compares the two.
"""

import os

_forced = os.environ.get("SPLITPROOF_KERNELS", "").strip().lower()
if _forced not in ("", "c", "py"):
    raise RuntimeError(f"SPLITPROOF_KERNELS must be 'c' or 'py', got {_forced!r}")

if _forced == "py":
    from . import _pykernels as _impl

    BACKEND = "py"
else:
    try:
        from . import _ckernels as _impl  # type: ignore[attr-defined]

        BACKEND = "c"
    except ImportError:
        if _forced == "c":
            raise
        from . import _pykernels as _impl

        BACKEND = "py"

rotate_bilinear = _impl.rotate_bilinear
resize_bilinear = _impl.resize_bilinear
rasterize_polygon = _impl.rasterize_polygon


def active_backend() -> str:
    """Name of the kernel backend selected at import ('c' or 'py')."""
    return BACKEND
