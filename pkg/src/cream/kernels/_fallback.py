"""Pure numpy/Python fallback for the compiled kernels.

Kept bit-identical to `_native.pyx`: same DP recurrence, same factored
resize expression evaluated in f64.
"""

import numpy as np


def levenshtein_codes(a: np.ndarray, b: np.ndarray) -> int:
    la, lb = len(a), len(b)
    if la == 0:
        return lb
    if lb == 0:
        return la
    prev = list(range(lb + 1))
    al = a.tolist()
    bl = b.tolist()
    for i, ca in enumerate(al):
        cur = [i + 1] + [0] * lb
        for j, cb in enumerate(bl):
            sub = prev[j] + (0 if ca == cb else 1)
            best = cur[j] + 1
            if prev[j + 1] + 1 < best:
                best = prev[j + 1] + 1
            if sub < best:
                best = sub
            cur[j + 1] = best
        prev = cur
    return prev[lb]


def bilinear_resize(src: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    h, w = src.shape
    sy_scale = h / float(out_h)
    sx_scale = w / float(out_w)
    sy = np.clip((np.arange(out_h, dtype=np.float64) + 0.5) * sy_scale - 0.5, 0.0, h - 1)
    sx = np.clip((np.arange(out_w, dtype=np.float64) + 0.5) * sx_scale - 0.5, 0.0, w - 1)
    y0 = sy.astype(np.intp)
    x0 = sx.astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (sy - y0)[:, None]
    fx = (sx - x0)[None, :]
    top = (1.0 - fx) * src[np.ix_(y0, x0)] + fx * src[np.ix_(y0, x1)]
    bot = (1.0 - fx) * src[np.ix_(y1, x0)] + fx * src[np.ix_(y1, x1)]
    return (1.0 - fy) * top + fy * bot
