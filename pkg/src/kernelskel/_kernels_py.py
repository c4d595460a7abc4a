"""Pure-numpy fallback for the compiled kernel assembly in ``_kernels_ext``."""
import numpy as np

INV_DIST = 0
MULTIQUADRIC = 1

# rows per chunk; bounds the temporaries to a few tens of MB
_CHUNK = 4096


def assemble(kind, X, Y, out):
    """Fill ``out[i, j] = K(X[i], Y[j])`` and return ``(min_sq, i, j)``."""
    n, d = X.shape
    m = Y.shape[0]
    if Y.shape[1] != d or out.shape != (n, m):
        raise ValueError("shape mismatch")
    best, bi, bj = np.inf, -1, -1
    if n == 0 or m == 0:
        return best, bi, bj
    step = max(1, _CHUNK * 256 // max(m, 1))
    for lo in range(0, n, step):
        hi = min(n, lo + step)
        blk = out[lo:hi]
        t = X[lo:hi, 0, None] - Y[None, :, 0]
        np.multiply(t, t, out=blk)
        for k in range(1, d):
            t = X[lo:hi, k, None] - Y[None, :, k]
            blk += t * t
        flat = int(np.argmin(blk))
        s = blk.flat[flat]
        if s < best:
            best = float(s)
            bi, bj = lo + flat // m, flat % m
        if kind == INV_DIST:
            np.sqrt(blk, out=blk)
            np.divide(1.0, blk, out=blk)
        else:
            blk += 1.0
            np.sqrt(blk, out=blk)
    return best, bi, bj
