"""Dense complex linear algebra used across the package.

Matrices are plain ``numpy`` arrays of dtype ``complex128``. The helpers
here add the dimension and finiteness checks the rest of the code relies on,
an LU-based inverse with an explicit singularity threshold, and a power
iteration for the dominant singular pair.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "DimensionError",
    "SingularMatrixError",
    "ConvergenceError",
    "as_cmatrix",
    "as_cvector",
    "matmul",
    "hermitian",
    "lu_factor",
    "lu_solve",
    "inverse",
    "dominant_singular_pair",
    "frobenius_norm",
]

# relative pivot threshold below which a matrix is treated as singular
PIVOT_RTOL = 1e-12


class DimensionError(ValueError):
    """Operand shapes do not conform."""


class SingularMatrixError(ArithmeticError):
    """Matrix is singular to working precision."""


class ConvergenceError(ArithmeticError):
    """Iteration did not converge; ``last`` holds the final iterate."""

    def __init__(self, message, last=None):
        super().__init__(message)
        self.last = last


def as_cmatrix(a) -> np.ndarray:
    """Return ``a`` as a validated 2-D complex128 array."""
    m = np.asarray(a, dtype=np.complex128)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise DimensionError(f"expected a non-empty 2-D matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix has non-finite entries")
    return m


def as_cvector(v) -> np.ndarray:
    """Return ``v`` as a validated 1-D complex128 array."""
    x = np.asarray(v, dtype=np.complex128)
    if x.ndim != 1 or x.shape[0] < 1:
        raise DimensionError(f"expected a non-empty vector, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("vector has non-finite entries")
    return x


def matmul(a, b) -> np.ndarray:
    a = as_cmatrix(a)
    b = as_cmatrix(b)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def hermitian(a) -> np.ndarray:
    """Conjugate transpose."""
    return np.conj(as_cmatrix(a)).T.copy()


def frobenius_norm(a) -> float:
    a = np.asarray(a, dtype=np.complex128)
    return float(np.sqrt(np.sum(a.real**2 + a.imag**2)))


def lu_factor(a):
    """LU factorisation with partial pivoting.

    Returns
    -------
    lu : ndarray
        Packed factors: strictly lower part holds L (unit diagonal implied),
        upper part holds U.
    perm : ndarray of int
        Row permutation, ``a[perm] = L @ U``.

    Raises
    ------
    SingularMatrixError
        If a pivot falls below ``1e-12 * max|a_ij|``.
    """
    lu = as_cmatrix(a).copy()
    n, m = lu.shape
    if n != m:
        raise DimensionError(f"LU needs a square matrix, got {lu.shape}")
    scale = np.max(np.abs(lu))
    threshold = PIVOT_RTOL * scale
    perm = np.arange(n)
    for k in range(n):
        p = k + int(np.argmax(np.abs(lu[k:, k])))
        if scale == 0.0 or abs(lu[p, k]) < threshold:
            raise SingularMatrixError(f"matrix is singular to working precision (column {k})")
        if p != k:
            lu[[k, p]] = lu[[p, k]]
            perm[[k, p]] = perm[[p, k]]
        lu[k + 1:, k] /= lu[k, k]
        lu[k + 1:, k + 1:] -= np.outer(lu[k + 1:, k], lu[k, k + 1:])
    return lu, perm


def lu_solve(factors, b) -> np.ndarray:
    """Solve ``a x = b`` given ``lu_factor(a)``; ``b`` may be a vector or matrix."""
    lu, perm = factors
    n = lu.shape[0]
    x = np.array(b, dtype=np.complex128)
    if x.shape[0] != n:
        raise DimensionError(f"right-hand side has {x.shape[0]} rows, expected {n}")
    x = x[perm]
    for i in range(1, n):
        x[i] -= lu[i, :i] @ x[:i]
    for i in range(n - 1, -1, -1):
        x[i] = (x[i] - lu[i, i + 1:] @ x[i + 1:]) / lu[i, i]
    return x


def inverse(a) -> np.ndarray:
    a = as_cmatrix(a)
    factors = lu_factor(a)
    return lu_solve(factors, np.eye(a.shape[0], dtype=np.complex128))


def _fix_phase(u, v):
    # make the largest-modulus entry of v real nonnegative (first one on ties)
    i = int(np.argmax(np.abs(v)))
    if v[i] == 0:
        return u, v
    rot = np.conj(v[i]) / abs(v[i])
    u, v = u * rot, v * rot
    v[i] = abs(v[i])
    return u, v


def dominant_singular_pair(a, tol: float = 1e-10, max_iter: int = 10_000, seed: int = 0):
    """Dominant singular triplet by power iteration on ``a^H a``.

    Parameters
    ----------
    a : array_like
        Nonzero complex matrix.
    tol : float
        Convergence threshold on the relative Rayleigh residual
        ``||G v - lambda v|| <= tol * lambda`` with ``G = a^H a``.
    max_iter : int
        Iteration cap.
    seed : int
        Seed of the deterministic starting vector.

    Returns
    -------
    u, s, v
        Unit-norm left vector, largest singular value, unit-norm right vector,
        with ``a v = s u``. The global phase is fixed so that the
        largest-modulus entry of ``v`` is real and nonnegative.
    """
    a = as_cmatrix(a)
    gram = np.conj(a).T @ a
    lam_max_bound = float(np.max(np.sum(np.abs(gram), axis=1)))
    if lam_max_bound == 0.0:
        raise ValueError("dominant_singular_pair needs a nonzero matrix")

    rng = np.random.default_rng(seed)
    n = a.shape[1]
    v = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    v /= np.linalg.norm(v)
    for _ in range(max_iter):
        gv = gram @ v
        lam = float(np.real(np.vdot(v, gv)))
        resid = np.linalg.norm(gv - lam * v)
        if lam > 0 and resid <= tol * lam:
            break
        norm = np.linalg.norm(gv)
        if norm == 0.0:
            # start vector fell in the null space; restart off-axis
            v = rng.standard_normal(n) + 1j * rng.standard_normal(n)
            v /= np.linalg.norm(v)
            continue
        v = gv / norm
    else:
        raise ConvergenceError(f"power iteration did not converge in {max_iter} steps", last=v)

    av = a @ v
    s = float(np.linalg.norm(av))
    u = av / s
    u, v = _fix_phase(u, v)
    return u, s, v
