"""Top-eigenvector extraction from the final block matrices.

Power iteration on ``W W^T`` / ``W^T W`` is the default; a gradient-ascent
variant on the quadratic reward ``<v, W W^T v>`` is available behind a flag.
After the final training phase the leading eigenvalue is near 1 and the rest
near 0, so both converge in a handful of iterations.
"""

from __future__ import annotations

import math
import warnings

import numpy as np


class PowerIterationError(RuntimeError):
    """Power iteration failed to converge (near-degenerate spectrum)."""


def _canonical_sign(v: np.ndarray) -> np.ndarray:
    nz = np.flatnonzero(v)
    if nz.size and v[nz[0]] < 0:
        return -v
    return v


def top_eigvec_power(
    m_mat: np.ndarray,
    tol: float = 1e-10,
    max_iter: int | None = None,
    seed: int = 0,
    fallback: bool = True,
) -> np.ndarray:
    """Dominant eigenvector of a symmetric PSD matrix, unit norm.

    Sign convention: first nonzero coordinate positive.  On non-convergence
    either raises or (default) falls back to a dense eigensolve with a warning.
    """
    m_mat = np.asarray(m_mat, dtype=float)
    d = m_mat.shape[0]
    if m_mat.shape != (d, d):
        raise ValueError("matrix must be square")
    if not np.allclose(m_mat, m_mat.T, rtol=0.0, atol=1e-10):
        raise ValueError("matrix is not symmetric within 1e-10")
    if max_iter is None:
        max_iter = int(10 * d * max(1.0, math.log(max(d, 2)))) + 200
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(d)
    v /= np.linalg.norm(v)
    for _ in range(max_iter):
        mv = m_mat @ v
        nrm = float(np.linalg.norm(mv))
        if nrm <= 0.0:
            # zero (or numerically nilpotent) matrix: every direction is dominant
            return _canonical_sign(v)
        v_next = mv / nrm
        ray = float(v_next @ m_mat @ v_next)
        resid = float(np.linalg.norm(m_mat @ v_next - ray * v_next))
        v = v_next
        if resid <= tol:
            return _canonical_sign(v)
    if not fallback:
        raise PowerIterationError(f"no convergence within {max_iter} iterations")
    warnings.warn("power iteration did not converge; falling back to dense eigensolve",
                  RuntimeWarning)
    _, vecs = np.linalg.eigh(m_mat)
    return _canonical_sign(vecs[:, -1])


def top_eigvec_ga(
    w_mat: np.ndarray,
    eta_schedule: float = 1.0,
    iters: int = 2000,
    seed: int = 0,
    tol: float = 1e-14,
) -> np.ndarray:
    """Gradient-ascent alternative on the reward <v, W W^T v>, renormalized per step."""
    w_mat = np.asarray(w_mat, dtype=float)
    if w_mat.ndim != 2:
        raise ValueError("expected a matrix")
    if not np.all(np.isfinite(w_mat)):
        raise ValueError("non-finite input matrix")
    gram = w_mat @ w_mat.T
    d = gram.shape[0]
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(d)
    v /= np.linalg.norm(v)
    eta = float(eta_schedule)
    for _ in range(iters):
        v_next = v + eta * (gram @ v)
        nrm = float(np.linalg.norm(v_next))
        if nrm <= 0.0 or not math.isfinite(nrm):
            raise PowerIterationError("gradient-ascent iterate collapsed")
        v_next /= nrm
        if float(np.linalg.norm(v_next - v)) <= tol:
            v = v_next
            break
        v = v_next
    return _canonical_sign(v)
