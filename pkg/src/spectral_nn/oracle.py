"""Dense reference linear algebra, independent of the reflector code.

These routines are the oracles the reflector kernels are checked against,
so they deliberately use nothing from :mod:`spectral_nn.householder`.
"""

from __future__ import annotations

import numpy as np

TOL = 1e-14
MAX_SWEEPS = 80


class ConvergenceError(ArithmeticError):
    pass


def complete_orthonormal(Q: np.ndarray) -> np.ndarray:
    """Extend orthonormal columns ``Q`` (m x p) to an m x m orthogonal matrix.

    Missing directions come from the standard basis, taking at each step the
    basis vector with the largest residual after two rounds of
    Gram-Schmidt.
    """
    Q = np.asarray(Q, dtype=float)
    m, p = Q.shape
    cols = [Q[:, j] for j in range(p)]
    while len(cols) < m:
        basis = np.array(cols).T if cols else np.zeros((m, 0))
        best, best_norm = None, -1.0
        for i in range(m):
            e = np.zeros(m)
            e[i] = 1.0
            for _ in range(2):
                e = e - basis @ (basis.T @ e)
            nrm = np.linalg.norm(e)
            if nrm > best_norm:
                best, best_norm = e, nrm
        cols.append(best / best_norm)
    return np.array(cols).T


def _one_sided_jacobi(A: np.ndarray, tol: float, max_sweeps: int):
    m, n = A.shape
    U = A.copy()
    V = np.eye(n)
    for _ in range(max_sweeps):
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                a = U[:, p] @ U[:, p]
                b = U[:, q] @ U[:, q]
                c = U[:, p] @ U[:, q]
                if c == 0.0 or abs(c) <= tol * np.sqrt(a * b):
                    continue
                rotated = True
                zeta = (b - a) / (2.0 * c)
                t = np.copysign(1.0, zeta) / (abs(zeta) + np.sqrt(1.0 + zeta * zeta))
                cs = 1.0 / np.sqrt(1.0 + t * t)
                sn = cs * t
                up = U[:, p].copy()
                U[:, p] = cs * up - sn * U[:, q]
                U[:, q] = sn * up + cs * U[:, q]
                vp = V[:, p].copy()
                V[:, p] = cs * vp - sn * V[:, q]
                V[:, q] = sn * vp + cs * V[:, q]
        if not rotated:
            return U, V
    raise ConvergenceError(f"Jacobi SVD did not converge in {max_sweeps} sweeps")


def jacobi_svd(A, tol: float = TOL, max_sweeps: int = MAX_SWEEPS):
    """Thin SVD ``A = U diag(s) V^T`` by one-sided (Hestenes) Jacobi.

    Returns ``U`` (m x p), ``s`` (p, descending) and ``V`` (n x p) with
    ``p = min(m, n)``. Columns of ``U`` belonging to numerically zero
    singular values are completed to an orthonormal set.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2:
        raise ValueError("jacobi_svd expects a 2-D array")
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix has non-finite entries")
    m, n = A.shape
    if m < n:
        V, s, U = jacobi_svd(A.T, tol, max_sweeps)
        return U, s, V

    W, V = _one_sided_jacobi(A, tol, max_sweeps)
    s = np.linalg.norm(W, axis=0)
    order = np.argsort(-s, kind="stable")
    s, W, V = s[order], W[:, order], V[:, order]

    cutoff = max(m, n) * np.finfo(float).eps * (s[0] if n else 0.0)
    good = s > cutoff
    U = np.zeros((m, n))
    U[:, good] = W[:, good] / s[good]
    if not np.all(good):
        full = complete_orthonormal(U[:, good])
        U[:, ~good] = full[:, good.sum():n]
    return U, s, V


def spectral_norm(A) -> float:
    A = np.asarray(A, dtype=float)
    if A.size == 0:
        return 0.0
    return float(jacobi_svd(A)[1][0])


def dense_reflector(u, n: int, dtype=float) -> np.ndarray:
    """Explicit n x n reflector ``I - 2 u_hat u_hat^T / (u_hat^T u_hat)``."""
    u = np.asarray(u, dtype=dtype)
    k = u.shape[0]
    H = np.eye(n, dtype=dtype)
    nu = u @ u
    if nu <= 1e-24:
        return H
    H[n - k:, n - k:] -= 2 * np.outer(u, u) / nu
    return H


def dense_spectral(m: int, n: int, u_vectors, v_vectors, sigma, dtype=float) -> np.ndarray:
    """``H_m(u_m)...H_k1(u_k1) Sigma_hat H_k2(v_k2)...H_n(v_n)`` by explicit products.

    ``u_vectors``/``v_vectors`` are listed by increasing reflector index.
    """
    U = np.eye(m, dtype=dtype)
    for u in reversed(list(u_vectors)):
        U = U @ dense_reflector(u, m, dtype)
    Vt = np.eye(n, dtype=dtype)
    for v in v_vectors:
        Vt = Vt @ dense_reflector(v, n, dtype)
    S = np.zeros((m, n), dtype=dtype)
    p = min(m, n)
    S[np.arange(p), np.arange(p)] = np.asarray(sigma, dtype=dtype)
    return U @ S @ Vt
