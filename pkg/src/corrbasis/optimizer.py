"""Alternating minimization of the augmented objective.

Each outer iteration runs, in order:

1. a proximal-gradient (soft-thresholding) update of the basis ``B``;
2. one nonnegative QP per subject for the coefficients ``c_n``;
3. the closed-form ridge update of the regression weights ``w``;
4. the closed-form update of the copies ``D_n`` followed by dual ascent on
   the multipliers ``Lambda_n`` with a geometrically shrinking rate.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .model import (AugmentedState, CohortDataset, FactorModel, HyperParams,
                    constraint_gaps, constraint_residual, eval_augmented_objective,
                    eval_objective)
from .qp import QpProblem, build_training_qp, check_pd, solve_nonneg_qp

logger = logging.getLogger(__name__)

ETA_FLOOR = 1e-12
CONVERGENCE_WINDOW = 3
MAX_HALVINGS = 20


class DivergenceError(FloatingPointError):
    """Training produced a non-finite objective."""

    def __init__(self, iteration, last_good):
        super().__init__(f"non-finite objective at iteration {iteration}")
        self.iteration = iteration
        self.last_good = last_good


@dataclass
class TrainerConfig:
    hp: HyperParams = field(default_factory=HyperParams)
    prox_inner_iters: int = 1
    line_search: bool = False
    trace_every: int = 1
    standard_prox: bool = False

    def __post_init__(self):
        if self.prox_inner_iters < 1:
            raise ValueError("prox_inner_iters must be >= 1")
        if self.trace_every < 1:
            raise ValueError("trace_every must be >= 1")


@dataclass
class TraceRecord:
    iteration: int
    augmented: float
    objective: float
    residual: float
    l1_basis: float
    eta: float
    step1_increase: bool = False
    # augmented objective right after Steps 1, 2 and 3 (multipliers frozen)
    after_steps: tuple = ()


@dataclass
class TrainTrace:
    records: list = field(default_factory=list)
    converged: bool = False
    qp_failures: int = 0

    def __len__(self):
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])


def initialize(data: CohortDataset, hp: HyperParams,
               rng: np.random.Generator | None = None):
    """Random start with ``D_n = B diag(c_n)`` and zero multipliers."""
    if rng is None:
        rng = np.random.default_rng(hp.rng_seed)
    M, N, K = data.region_count, data.subject_count, hp.K
    B = rng.uniform(-1 / np.sqrt(M), 1 / np.sqrt(M), size=(M, K))
    C = rng.uniform(0.0, 1.0, size=(K, N))
    w = rng.uniform(-1 / np.sqrt(K), 1 / np.sqrt(K), size=K)
    model = FactorModel(B, C, w)
    D = B[None] * C.T[:, None, :]
    aug = AugmentedState(D, np.zeros_like(D), hp.eta0, 0)
    return model, aug


def grad_B(data: CohortDataset, model: FactorModel, aug: AugmentedState) -> np.ndarray:
    """Gradient of the smooth part of the augmented objective in ``B``.

    ``sum_n 2 (B D^T D - Gamma D) - D V + B V^2 - Lambda V`` with
    ``V = diag(c_n)``.
    """
    B, C = model.basis, model.coeffs
    D, Lam = aug.d_mats, aug.lambdas
    if D.shape != (data.subject_count, B.shape[0], B.shape[1]):
        raise ValueError(f"d_mats shape {D.shape} inconsistent with basis {B.shape}")
    DtD = np.einsum("nik,nil->kl", D, D)
    GD = np.einsum("nij,njk->ik", data.gammas, D)
    Ct = C.T
    DV = np.einsum("nik,nk->ik", D, Ct)
    LV = np.einsum("nik,nk->ik", Lam, Ct)
    V2 = np.sum(Ct ** 2, axis=0)
    return 2 * (B @ DtD - GD) - DV + B * V2 - LV


def soft_threshold(X: np.ndarray, thresh: float) -> np.ndarray:
    return np.sign(X) * np.maximum(np.abs(X) - thresh, 0.0)


def prox_step_B(model: FactorModel, grad: np.ndarray, hp: HyperParams,
                scale: float = 1.0, standard: bool = False) -> np.ndarray:
    """Soft-thresholded gradient step on the basis.

    The default takes ``X = B - (t / lambda1) grad`` and shrinks by ``t``.
    ``standard=True`` instead steps by ``t`` and shrinks by ``t * lambda1``.
    Both are proximal steps on ``lambda1 ||B||_1``, with step sizes
    ``t / lambda1`` and ``t`` respectively.  ``scale`` multiplies the step
    and the threshold together (used by backtracking).
    """
    if standard:
        step, thresh = hp.t, hp.t * hp.lambda1
    else:
        step, thresh = hp.t / hp.lambda1, hp.t
    X = model.basis - scale * step * grad
    return soft_threshold(X, scale * thresh)


def step1_update_B(data, model, aug, hp, inner_iters=1, line_search=False,
                   standard=False):
    """Run the basis update; returns ``(B, increased)``.

    ``increased`` reports whether the augmented objective went up, which
    can only happen without line search.
    """
    start = eval_augmented_objective(data, model, aug, hp)
    current = model.copy()
    value = start
    for _ in range(inner_iters):
        g = grad_B(data, current, aug)
        scale = 1.0
        for _ in range(MAX_HALVINGS + 1):
            trial = FactorModel(prox_step_B(current, g, hp, scale, standard),
                                current.coeffs, current.weights)
            trial_value = eval_augmented_objective(data, trial, aug, hp)
            if not line_search or trial_value <= value:
                break
            scale *= 0.5
        else:
            # no decrease found: keep the current basis
            trial, trial_value = current, value
        current, value = trial, trial_value
    return current.basis, bool(value > start)


def step2_update_C(data: CohortDataset, model: FactorModel, aug: AugmentedState,
                   hp: HyperParams, warm_start: bool = True):
    """Solve the N decoupled coefficient QPs; returns ``(C, failures)``.

    Every subject's QP shares the Hessian, so it is checked and factored
    once.  Subjects whose unconstrained minimizer is already nonnegative
    take it directly; the rest go through the active-set solver.
    """
    B, w = model.basis, model.weights
    K, N = model.coeffs.shape
    H = check_pd(build_training_qp(0, B, aug.d_mats[0], aug.lambdas[0], w,
                                   0.0, hp.gamma, hp.lambda2).H)
    F = (-np.einsum("nik,ik->nk", aug.d_mats + aug.lambdas, B)
         - 2 * hp.gamma * data.scores[:, None] * w[None, :])
    C = cho_solve(cho_factor(H), -F.T)
    failures = 0
    for n in np.flatnonzero((C < 0).any(axis=0)):
        x0 = model.coeffs[:, n] if warm_start else None
        sol = solve_nonneg_qp(QpProblem(H, F[n]), x0=x0, assume_pd=True)
        if not sol.converged:
            failures += 1
        C[:, n] = sol.c
    return C, failures


def step3_update_w(C: np.ndarray, y: np.ndarray, gamma: float, lambda3: float) -> np.ndarray:
    """Ridge solution ``(C C^T + (lambda3 / gamma) I)^{-1} C y``."""
    K = C.shape[0]
    A = C @ C.T + (lambda3 / gamma) * np.eye(K)
    return cho_solve(cho_factor(A), C @ y)


def step4_update_D(data: CohortDataset, model: FactorModel, aug: AugmentedState) -> np.ndarray:
    """Stationary point of the augmented objective in every ``D_n``.

    ``D_n = (B diag(c_n) + 2 Gamma_n B - Lambda_n)(I + 2 B^T B)^{-1}``, with
    one Cholesky factorization shared by all subjects.
    """
    B, C = model.basis, model.coeffs
    K = B.shape[1]
    A = np.eye(K) + 2 * B.T @ B
    rhs = B[None] * C.T[:, None, :] + 2 * np.einsum("nij,jk->nik", data.gammas, B) - aug.lambdas
    N, M, _ = rhs.shape
    # right-multiplication by A^{-1}, A symmetric: solve A X^T = rhs^T
    sol = cho_solve(cho_factor(A), rhs.reshape(N * M, K).T)
    return sol.T.reshape(N, M, K)


def step4_update_Lambda(model: FactorModel, aug: AugmentedState, eta_decay: float = 0.75):
    """Dual ascent ``Lambda_n += eta (D_n - B diag(c_n))``; returns ``(Lambdas, eta)``."""
    lambdas = aug.lambdas + aug.eta * constraint_gaps(model, aug)
    return lambdas, max(aug.eta * eta_decay, ETA_FLOOR)


def _record(data, model, aug, hp, it, increased, after_steps):
    return TraceRecord(
        iteration=it,
        augmented=eval_augmented_objective(data, model, aug, hp),
        objective=eval_objective(data, model, hp),
        residual=constraint_residual(model, aug),
        l1_basis=float(np.abs(model.basis).sum()),
        eta=aug.eta,
        step1_increase=increased,
        after_steps=after_steps,
    )


def fit(data: CohortDataset, cfg: TrainerConfig | None = None, init=None,
        return_state: bool = False):
    """Train a factor model on ``data``.

    Stops once the relative change of the augmented objective stays below
    ``tol_objective`` for three consecutive iterations while the constraint
    residual is below ``tol_constraint``, or after ``max_outer_iters``.

    Returns ``(model, trace)``, plus the final ``AugmentedState`` when
    ``return_state`` is set.
    """
    cfg = cfg or TrainerConfig()
    hp = cfg.hp
    model, aug = init if init is not None else initialize(data, hp)
    model, aug = model.copy(), aug.copy()
    trace = TrainTrace()
    small_changes = 0
    prev = eval_augmented_objective(data, model, aug, hp)
    last_good = (model.copy(), aug.copy())
    for it in range(1, hp.max_outer_iters + 1):
        traced = it % cfg.trace_every == 0
        after = []
        B, increased = step1_update_B(data, model, aug, hp, cfg.prox_inner_iters,
                                      cfg.line_search, cfg.standard_prox)
        if not np.all(np.isfinite(B)):
            raise DivergenceError(it, last_good)
        model = FactorModel(B, model.coeffs, model.weights)
        if traced:
            after.append(eval_augmented_objective(data, model, aug, hp))
        C, failures = step2_update_C(data, model, aug, hp)
        trace.qp_failures += failures
        if traced:
            after.append(eval_augmented_objective(data, FactorModel(B, C, model.weights), aug, hp))
        w = step3_update_w(C, data.scores, hp.gamma, hp.lambda3)
        model = FactorModel(B, C, w)
        if traced:
            after.append(eval_augmented_objective(data, model, aug, hp))
        D = step4_update_D(data, model, aug)
        aug = AugmentedState(D, aug.lambdas, aug.eta, it)
        lambdas, eta = step4_update_Lambda(model, aug, hp.eta_decay)
        aug = AugmentedState(D, lambdas, eta, it)

        value = eval_augmented_objective(data, model, aug, hp)
        if not np.isfinite(value):
            raise DivergenceError(it, last_good)
        last_good = (model.copy(), aug.copy())
        if traced:
            trace.records.append(_record(data, model, aug, hp, it, increased, tuple(after)))
        rel = abs(prev - value) / max(abs(prev), 1e-300)
        prev = value
        small_changes = small_changes + 1 if rel < hp.tol_objective else 0
        if small_changes >= CONVERGENCE_WINDOW and constraint_residual(model, aug) < hp.tol_constraint:
            trace.converged = True
            break
    if trace.qp_failures:
        logger.warning("%d coefficient QPs did not converge", trace.qp_failures)
    if return_state:
        return model, trace, aug
    return model, trace
