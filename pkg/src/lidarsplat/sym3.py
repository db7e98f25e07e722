"""Closed-form eigen-solvers for symmetric 3x3 matrices.

Eigenvalues come from the trigonometric solution of the characteristic
polynomial, vectorized over arbitrary leading batch dimensions; this is far
cheaper than a LAPACK call per point when scoring millions of covariance
matrices. Eigenvectors for the smallest eigenvalue use cross products of the
shifted matrix rows, with a cyclic Jacobi sweep as the fallback when the
spectrum is nearly degenerate.
"""

from __future__ import annotations

import numpy as np

_EYE3 = np.eye(3)


def eigvals_sym3(mats: np.ndarray) -> np.ndarray:
    """Eigenvalues of symmetric 3x3 matrices, ascending.

    Accepts shape (..., 3, 3) and returns shape (..., 3). Only the upper
    triangle is read; symmetry is the caller's contract.
    """
    m = np.asarray(mats, dtype=np.float64)
    a = m[..., 0, 0]
    b = m[..., 1, 1]
    c = m[..., 2, 2]
    d = m[..., 0, 1]
    e = m[..., 1, 2]
    f = m[..., 0, 2]

    q = (a + b + c) / 3.0
    p2 = (a - q) ** 2 + (b - q) ** 2 + (c - q) ** 2 + 2.0 * (d * d + e * e + f * f)
    p = np.sqrt(p2 / 6.0)

    # p == 0 means the matrix is exactly q*I; the trig path divides by p.
    safe_p = np.where(p > 0.0, p, 1.0)
    bm = (m - q[..., None, None] * _EYE3) / safe_p[..., None, None]
    det_b = (
        bm[..., 0, 0] * (bm[..., 1, 1] * bm[..., 2, 2] - bm[..., 1, 2] * bm[..., 2, 1])
        - bm[..., 0, 1] * (bm[..., 1, 0] * bm[..., 2, 2] - bm[..., 1, 2] * bm[..., 2, 0])
        + bm[..., 0, 2] * (bm[..., 1, 0] * bm[..., 2, 1] - bm[..., 1, 1] * bm[..., 2, 0])
    )
    r = np.clip(det_b / 2.0, -1.0, 1.0)
    phi = np.arccos(r) / 3.0

    lam_hi = q + 2.0 * p * np.cos(phi)
    lam_lo = q + 2.0 * p * np.cos(phi + 2.0 * np.pi / 3.0)
    lam_mid = 3.0 * q - lam_hi - lam_lo
    lam = np.sort(np.stack([lam_lo, lam_mid, lam_hi], axis=-1), axis=-1)

    isotropic = np.broadcast_to((p2 <= 0.0)[..., None], lam.shape)
    return np.where(isotropic, np.stack([q, q, q], axis=-1), lam)


def jacobi_eigh3(mat: np.ndarray, sweeps: int = 32) -> tuple[np.ndarray, np.ndarray]:
    """Full eigen-decomposition of one symmetric 3x3 matrix by cyclic Jacobi.

    Returns (eigenvalues ascending, eigenvectors as columns). Deterministic:
    fixed rotation order, fixed sweep cap.
    """
    a = np.array(mat, dtype=np.float64)
    v = np.eye(3)
    scale = max(np.max(np.abs(a)), np.finfo(np.float64).tiny)
    for _ in range(sweeps):
        off = a[0, 1] ** 2 + a[0, 2] ** 2 + a[1, 2] ** 2
        if off <= (1e-30 * scale) ** 2:
            break
        for p, q in ((0, 1), (0, 2), (1, 2)):
            apq = a[p, q]
            if apq == 0.0:
                continue
            theta = (a[q, q] - a[p, p]) / (2.0 * apq)
            t = np.sign(theta) / (np.abs(theta) + np.sqrt(theta * theta + 1.0))
            if theta == 0.0:
                t = 1.0
            cth = 1.0 / np.sqrt(t * t + 1.0)
            sth = t * cth
            rot = np.eye(3)
            rot[p, p] = cth
            rot[q, q] = cth
            rot[p, q] = sth
            rot[q, p] = -sth
            a = rot.T @ a @ rot
            v = v @ rot
    eig = np.diag(a).copy()
    order = np.argsort(eig, kind="stable")
    return eig[order], v[:, order]


def smallest_eigvec_sym3(mats: np.ndarray, gap_rtol: float = 1e-9) -> tuple[np.ndarray, np.ndarray]:
    """Unit eigenvector of the smallest eigenvalue per matrix.

    Returns (vectors (..., 3), degenerate (...,) bool). A matrix is flagged
    degenerate when its two smallest eigenvalues coincide within
    gap_rtol * largest; the returned vector is still a valid eigenvector
    (Jacobi fallback, axis-order tie-break) but its direction within the
    eigenspace is arbitrary.
    """
    m = np.asarray(mats, dtype=np.float64)
    single = m.ndim == 2
    if single:
        m = m[None]
    flat = m.reshape(-1, 3, 3)

    lam = eigvals_sym3(flat)
    shifted = flat - lam[:, 0, None, None] * _EYE3

    c01 = np.cross(shifted[:, 0, :], shifted[:, 1, :])
    c02 = np.cross(shifted[:, 0, :], shifted[:, 2, :])
    c12 = np.cross(shifted[:, 1, :], shifted[:, 2, :])
    cand = np.stack([c01, c02, c12], axis=1)
    norms = np.linalg.norm(cand, axis=2)
    best = np.argmax(norms, axis=1)
    rows = np.arange(len(flat))
    vec = cand[rows, best]
    vnorm = norms[rows, best]

    scale = np.maximum(np.abs(flat).reshape(len(flat), -1).max(axis=1), np.finfo(np.float64).tiny)
    bad = vnorm <= 1e-12 * scale * scale
    for i in np.flatnonzero(bad):
        _, vecs = jacobi_eigh3(flat[i])
        vec[i] = vecs[:, 0]
        vnorm[i] = 1.0
    vec = vec / np.maximum(vnorm, np.finfo(np.float64).tiny)[:, None]
    vec = vec / np.linalg.norm(vec, axis=1, keepdims=True)

    gap = lam[:, 1] - lam[:, 0]
    degenerate = gap <= gap_rtol * np.maximum(lam[:, 2], np.finfo(np.float64).tiny)

    out_shape = m.shape[:-2]
    vec = vec.reshape(out_shape + (3,))
    degenerate = degenerate.reshape(out_shape)
    if single:
        return vec[0], degenerate[0]
    return vec, degenerate
