"""Hot-kernel backend selection.

The compiled Cython core is used when importable; otherwise the numpy
reference implementation takes over.  Set SPARSEVIEW_KERNELS=python or
=compiled to force a backend (the latter raises if the extension is
missing).  Both backends implement the contract documented in
reference.py; `python -m sparseview.bench` compares their speed.
"""

import os

from . import reference

_forced = os.environ.get("SPARSEVIEW_KERNELS", "").strip().lower()

if _forced == "python":
    _impl = reference
    COMPILED = False
else:
    try:
        from . import _core as _impl  # type: ignore[attr-defined]

        COMPILED = True
    except ImportError:
        if _forced == "compiled":
            raise
        _impl = reference
        COMPILED = False

BACKEND = "compiled" if COMPILED else "python"

conv_out_size = reference.conv_out_size
im2col2d = _impl.im2col2d
im2col3d = _impl.im2col3d
bilinear_fwd = _impl.bilinear_fwd
bilinear_bwd = _impl.bilinear_bwd
trilinear_fwd = _impl.trilinear_fwd
trilinear_bwd = _impl.trilinear_bwd
