"""Backend selection for the in-batch kernels.

The compiled ``_kernels`` extension is used when it was built; otherwise (or
when ``CSC_RCL_PURE=1`` is set) the NumPy implementation is used.
"""

from __future__ import annotations

import os

from . import _kernels_py

if os.environ.get("CSC_RCL_PURE", "") not in ("", "0"):
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]
    except ImportError:
        _impl = _kernels_py

BACKEND: str = _impl.BACKEND
mine_masks = _impl.mine_masks
rcl_rows = _impl.rcl_rows


def available_backends() -> dict[str, object]:
    out: dict[str, object] = {"python": _kernels_py}
    try:
        from . import _kernels  # type: ignore[attr-defined]
    except ImportError:
        pass
    else:
        out["cython"] = _kernels
    return out
