"""Oracle-access analytics: alignment functional, expansion terms, population drift.

These read the true spikes and are used by tests and instrumented runs only;
the estimation path never calls them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def alignment(v: np.ndarray, u: np.ndarray, w_mat: np.ndarray) -> float:
    """Normalized alignment <W, v u^T> / |W|_F; scale-invariant, in [-1, 1]."""
    nrm = float(np.linalg.norm(w_mat))
    if nrm <= 0:
        raise ValueError("alignment of a zero matrix is undefined")
    return float(v @ w_mat @ u) / nrm


def first_order_term(w_mat: np.ndarray, q_mat: np.ndarray,
                     v: np.ndarray, u: np.ndarray) -> float:
    """d/d(eta) of alignment(v, u, W + eta Q) at eta = 0."""
    nrm = float(np.linalg.norm(w_mat))
    if nrm <= 0:
        raise ValueError("zero matrix")
    vqu = float(v @ q_mat @ u)
    vwu = float(v @ w_mat @ u)
    wq = float(np.vdot(w_mat, q_mat))
    return vqu / nrm - vwu * wq / nrm**3


@dataclass
class ExpansionProbe:
    W: np.ndarray
    Q: np.ndarray
    v: np.ndarray
    u: np.ndarray
    eta: float
    eta_bar: float

    def __post_init__(self) -> None:
        if self.W.shape != self.Q.shape:
            raise ValueError("W and Q must share a shape")
        if not (0.0 <= self.eta_bar <= self.eta):
            raise ValueError("eta_bar must lie in [0, eta]")


def psi1_remainder(probe: ExpansionProbe) -> float:
    """Second-order remainder term of the alignment expansion, evaluated at eta_bar."""
    w, q, v, u, eb = probe.W, probe.Q, probe.v, probe.u, probe.eta_bar
    denom_mat = w + eb * q
    nrm = float(np.linalg.norm(denom_mat))
    if nrm <= 0:
        raise ValueError("collapsed denominator |W + eta_bar Q|")
    vqu = float(v @ q @ u)
    vwu = float(v @ w @ u)
    wq = float(np.vdot(w, q))
    qq = float(np.vdot(q, q))
    num = vwu + eb * vqu
    dot = wq + eb * qq
    term1 = -2.0 * vqu * dot / nrm**3
    term2 = -num * qq / nrm**3
    term3 = 3.0 * num * dot * dot / nrm**5
    return term1 + term2 + term3


def population_alpha_step(alpha: float, eta: float, lambda_eff: float) -> float:
    """Noiseless first-order drift of the alignment, clipped to [-1, 1]."""
    if not (-1.0 <= alpha <= 1.0):
        raise ValueError("alpha must lie in [-1, 1]")
    return float(np.clip(alpha + eta * lambda_eff * (1.0 - alpha * alpha), -1.0, 1.0))


def population_steps_to(alpha0: float, eta: float, lambda_eff: float,
                        threshold: float, max_steps: int = 10**7) -> int:
    """Steps the population recursion needs to reach ``threshold`` (ODE oracle)."""
    a = alpha0
    for t in range(max_steps):
        if a >= threshold:
            return t
        a = population_alpha_step(a, eta, lambda_eff)
    raise RuntimeError(f"threshold {threshold} not reached within {max_steps} steps")
