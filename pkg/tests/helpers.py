"""Matrix generators shared by the linear-algebra tests."""
import numpy as np


def kahan(n: int, c: float = 0.285, delta: float = 1e-10) -> np.ndarray:
    """Kahan's matrix; columns scaled by (1 - delta)^j so plain pivoting keeps the natural order."""
    s = np.sqrt(1.0 - c * c)
    K = -c * np.triu(np.ones((n, n)), 1) + np.eye(n)
    K = np.diag(s ** np.arange(n)) @ K
    return K * (1.0 - delta) ** np.arange(n)


def conditioned(m: int, n: int, cond: float, seed: int) -> np.ndarray:
    """Random m x n matrix with singular values log-spaced from 1 to 1/cond."""
    g = np.random.default_rng(seed)
    p = min(m, n)
    U, _ = np.linalg.qr(g.standard_normal((m, p)))
    V, _ = np.linalg.qr(g.standard_normal((n, p)))
    s = np.logspace(0, -np.log10(cond), p)
    return (U * s) @ V.T


def max_T(res) -> float:
    return float(np.abs(res.T).max()) if res.T.size else 0.0
