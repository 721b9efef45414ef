"""Hot-kernel dispatch: compiled extension when available, numpy fallback otherwise.

Set CREAM_NO_EXT=1 to force the fallback (used by the kernel benchmark and the
cross-check tests). Both backends produce bit-identical results.
"""

import os

import numpy as np

from . import _fallback

try:
    from . import _native
except ImportError:
    _native = None

if os.environ.get("CREAM_NO_EXT") == "1" or _native is None:
    _impl = _fallback
    BACKEND = "python"
else:
    _impl = _native
    BACKEND = "native"


def _codes(s: str) -> np.ndarray:
    if not s:
        return np.empty(0, dtype=np.int32)
    return np.frombuffer(s.encode("utf-32-le"), dtype="<u4").astype(np.int32)


def levenshtein(a: str, b: str) -> int:
    """Edit distance between two strings (unit insert/delete/substitute costs)."""
    return int(_impl.levenshtein_codes(_codes(a), _codes(b)))


def bilinear_resize(src: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize a 2-D f64 array to (out_h, out_w) with bilinear interpolation."""
    src = np.ascontiguousarray(src, dtype=np.float64)
    if src.ndim != 2:
        raise ValueError(f"bilinear_resize expects a 2-D array, got shape {src.shape}")
    if out_h < 1 or out_w < 1:
        raise ValueError(f"bad output size ({out_h}, {out_w})")
    return _impl.bilinear_resize(src, out_h, out_w)
