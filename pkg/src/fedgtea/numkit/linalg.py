"""Symmetric eigendecomposition via cyclic Jacobi rotations.

Adequate and robust for the small matrices this package meets (embedding
covariances, d <= 64); no attempt to compete with LAPACK beyond that.
"""

from __future__ import annotations

import numpy as np

from ..errors import NumericError, ShapeError

_SYM_TOL = 1e-9


def sym_eig(a: np.ndarray, max_sweeps: int = 50,
            rel_tol: float = 1e-13) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (ascending) and orthonormal eigenvectors of a symmetric matrix.

    The input is symmetrized as (A + A^T)/2 first; asymmetry beyond 1e-9
    (relative to the largest entry) is rejected.  Returns (w, V) with
    A ~= V @ diag(w) @ V.T.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"sym_eig needs a square matrix, got {a.shape}")
    scale = max(1.0, float(np.abs(a).max()) if a.size else 1.0)
    if float(np.abs(a - a.T).max() if a.size else 0.0) > _SYM_TOL * scale:
        raise ShapeError("sym_eig input is not symmetric within tolerance")

    n = a.shape[0]
    mat = 0.5 * (a + a.T)
    vecs = np.eye(n)
    if n == 1:
        return mat.diagonal().copy(), vecs

    fro = np.linalg.norm(mat)
    threshold = max(rel_tol * fro, np.finfo(np.float64).tiny)
    upper = np.triu_indices(n, k=1)
    for _ in range(max_sweeps):
        off = np.sqrt(2.0 * (mat[upper] ** 2).sum())
        if off <= threshold:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = mat[p, q]
                if abs(apq) <= 0.1 * threshold / n:
                    continue
                theta = 0.5 * (mat[q, q] - mat[p, p]) / apq
                t = np.sign(theta) / (abs(theta) + np.hypot(theta, 1.0))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / np.hypot(t, 1.0)
                s = t * c
                rot = np.array([[c, s], [-s, c]])
                mat[:, [p, q]] = mat[:, [p, q]] @ rot
                mat[[p, q], :] = rot.T @ mat[[p, q], :]
                vecs[:, [p, q]] = vecs[:, [p, q]] @ rot
    else:
        raise NumericError("Jacobi eigendecomposition did not converge")

    w = mat.diagonal().copy()
    order = np.argsort(w, kind="stable")
    return w[order], vecs[:, order]
