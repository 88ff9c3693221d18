"""Small convex quadratic programs with nonnegativity constraints.

Solves ``min 1/2 c^T H c + f^T c  s.t.  c >= 0`` with a primal active-set
method.  Problems here are tiny (K <= 20), so every working-set change does a
dense solve of the reduced system and the returned point carries an exact
KKT certificate.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)


class QpError(ValueError):
    pass


@dataclass
class QpProblem:
    H: np.ndarray
    f: np.ndarray

    def __post_init__(self):
        self.H = np.asarray(self.H, dtype=float)
        self.f = np.asarray(self.f, dtype=float).reshape(-1)
        K = self.f.shape[0]
        if self.H.shape != (K, K):
            raise QpError(f"H has shape {self.H.shape}, expected {(K, K)}")

    @property
    def K(self) -> int:
        return self.f.shape[0]

    def objective(self, c: np.ndarray) -> float:
        return float(0.5 * c @ self.H @ c + self.f @ c)

    def gradient(self, c: np.ndarray) -> np.ndarray:
        return self.H @ c + self.f


@dataclass
class QpSolution:
    c: np.ndarray
    kkt_residual: float
    iterations: int
    active_set: frozenset
    converged: bool = True
    objective_trace: list = field(default_factory=list)


def kkt_residual(prob: QpProblem, c: np.ndarray) -> float:
    """Natural residual ``max_i |min(c_i, g_i)|``; zero exactly at the optimum."""
    if c.size == 0:
        return 0.0
    return float(np.max(np.abs(np.minimum(c, prob.gradient(c)))))


def check_pd(H: np.ndarray) -> np.ndarray:
    # round-off asymmetry grows with the entries
    tol = 1e-10 * max(1.0, float(np.max(np.abs(H), initial=0.0)))
    if not np.allclose(H, H.T, atol=tol, rtol=0):
        raise QpError("H is not symmetric")
    H = 0.5 * (H + H.T)
    try:
        np.linalg.cholesky(H)
        return H
    except np.linalg.LinAlgError:
        pass
    logger.warning("near-singular H; adding 1e-12 diagonal jitter")
    Hj = H + 1e-12 * np.eye(H.shape[0])
    try:
        np.linalg.cholesky(Hj)
    except np.linalg.LinAlgError:
        raise QpError("H is not positive definite") from None
    return Hj


def _projected_gradient(H, f, c, tol, max_iter):
    L = float(np.linalg.eigvalsh(H)[-1])
    step = 1.0 / L
    prob = QpProblem(H, f)
    for it in range(max_iter):
        c = np.maximum(c - step * (H @ c + f), 0.0)
        if kkt_residual(prob, c) <= tol:
            return c, it + 1, True
    return c, max_iter, False


def solve_nonneg_qp(prob: QpProblem, tol: float = 1e-8, max_iter: int | None = None,
                    x0: np.ndarray | None = None, record: bool = False,
                    assume_pd: bool = False) -> QpSolution:
    """Minimize ``1/2 c^T H c + f^T c`` over ``c >= 0``.

    Parameters
    ----------
    prob : QpProblem
        ``H`` must be symmetric positive definite.
    tol : float
        KKT tolerance on the natural residual.
    max_iter : int, optional
        Active-set iterations; defaults to ``10 * K**2``.
    x0 : ndarray, optional
        Warm start, projected onto the feasible set.
    record : bool
        Keep the objective value after every iteration in ``objective_trace``.
    assume_pd : bool
        Skip the symmetry / definiteness check when the caller has done it.

    Returns
    -------
    QpSolution
        If the active-set loop runs out of iterations, projected gradient
        takes over from the current iterate; ``converged`` is False when that
        also fails.
    """
    if tol <= 0:
        raise QpError("tol must be positive")
    K = prob.K
    if K == 0:
        return QpSolution(np.zeros(0), 0.0, 0, frozenset())
    H = prob.H if assume_pd else check_pd(prob.H)
    f = prob.f
    if max_iter is None:
        max_iter = 10 * K * K
    work = QpProblem(H, f)

    c = np.zeros(K) if x0 is None else np.maximum(np.asarray(x0, dtype=float), 0.0)
    fixed = c <= 0.0
    c[fixed] = 0.0
    trace = [work.objective(c)] if record else []
    seen = set()
    converged = False
    it = 0
    while it < max_iter:
        it += 1
        free = ~fixed
        target = np.zeros(K)
        if free.any():
            target[free] = np.linalg.solve(H[np.ix_(free, free)], -f[free])
        p = target - c
        if np.max(np.abs(p)) <= 1e-14 * max(1.0, np.max(np.abs(c))):
            g = H @ c + f
            g_fixed = np.where(fixed, g, np.inf)
            j = int(np.argmin(g_fixed))
            if not fixed.any() or g_fixed[j] >= -tol:
                converged = True
                break
            key = fixed.tobytes()
            if key in seen:
                # cycling guard: give up on the active-set loop
                break
            seen.add(key)
            fixed[j] = False
        else:
            neg = free & (p < 0)
            alpha = 1.0
            block = -1
            if neg.any():
                ratios = np.full(K, np.inf)
                ratios[neg] = -c[neg] / p[neg]
                block = int(np.argmin(ratios))
                if ratios[block] < 1.0:
                    alpha = ratios[block]
                else:
                    block = -1
            c = c + alpha * p
            if block >= 0:
                c[block] = 0.0
                fixed[block] = True
            c[fixed] = 0.0
        if record:
            trace.append(work.objective(c))

    res = kkt_residual(work, c)
    if not converged or res > tol:
        c_pg, n_pg, ok = _projected_gradient(H, f, c, tol, max(1000, 100 * max_iter))
        if work.objective(c_pg) <= work.objective(c):
            c = c_pg
        it += n_pg
        converged = ok
        res = kkt_residual(work, c)
        if record:
            trace.append(work.objective(c))
        if not converged:
            logger.warning("nonnegative QP did not converge (KKT residual %.3g)", res)
    return QpSolution(c, res, it, frozenset(np.flatnonzero(c == 0.0).tolist()),
                      converged, trace)


def build_training_qp(n: int, B: np.ndarray, D: np.ndarray, Lam: np.ndarray,
                      w: np.ndarray, y_n: float, gamma: float, lambda2: float) -> QpProblem:
    """Per-subject coefficient subproblem of the augmented objective.

    ``H = diag(||b_k||^2) + 2 gamma w w^T + 2 lambda2 I`` and
    ``f = -diag(D_n^T B) - diag(Lambda_n^T B) - 2 gamma y_n w``.
    ``D`` and ``Lam`` are the matrices of subject ``n`` (M x K); ``n`` is
    only used in error messages.
    """
    M, K = B.shape
    if D.shape != (M, K) or Lam.shape != (M, K) or w.shape != (K,):
        raise QpError(f"shape mismatch building QP for subject {n}")
    H = np.diag(np.sum(B * B, axis=0)) + 2 * gamma * np.outer(w, w) + 2 * lambda2 * np.eye(K)
    f = -np.sum(D * B, axis=0) - np.sum(Lam * B, axis=0) - 2 * gamma * y_n * w
    return QpProblem(H, f)


def build_prediction_qp(B: np.ndarray, gamma_test: np.ndarray, lambda2: float) -> QpProblem:
    """Coefficients for an unseen matrix given a trained basis.

    Minimizes ``||Gamma - sum_k c_k b_k b_k^T||_F^2 + lambda2 ||c||^2``, i.e.
    ``H = 2 (B^T B)**2 + 2 lambda2 I`` (elementwise square) and
    ``f_k = -2 b_k^T Gamma b_k``.
    """
    M, K = B.shape
    if gamma_test.shape != (M, M):
        raise QpError(f"test matrix has shape {gamma_test.shape}, expected {(M, M)}")
    G = B.T @ B
    H = 2 * G * G + 2 * lambda2 * np.eye(K)
    f = -2 * np.einsum("ik,ij,jk->k", B, gamma_test, B)
    return QpProblem(H, f)
