"""Domain types, objective evaluation and input preprocessing.

The factorization model writes every subject's correlation matrix as a
nonnegative combination of shared rank-one subnetworks,

    Gamma_n ~ B diag(c_n) B^T,

while the coefficients ``c_n`` also predict a scalar severity score through
``y_n ~ c_n^T w``.  All matrices are stored dense; ``gammas`` is kept as a
single ``(N, M, M)`` array so per-subject work can be vectorized.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

logger = logging.getLogger(__name__)

SYMMETRY_TOL = 1e-8


class DataError(ValueError):
    """Raised for malformed cohort data (shapes, symmetry, non-finite values)."""


@dataclass
class CohortDataset:
    """N symmetric M x M correlation matrices and N severity scores."""

    gammas: np.ndarray
    scores: np.ndarray
    subject_ids: list[str] | None = None

    @property
    def region_count(self) -> int:
        return self.gammas.shape[1]

    @property
    def subject_count(self) -> int:
        return self.gammas.shape[0]

    def subset(self, idx) -> "CohortDataset":
        idx = np.asarray(idx, dtype=int)
        ids = None if self.subject_ids is None else [self.subject_ids[i] for i in idx]
        return CohortDataset(self.gammas[idx], self.scores[idx], ids)


@dataclass
class FactorModel:
    """Basis ``B`` (M x K), coefficients ``C`` (K x N), weights ``w`` (K,)."""

    basis: np.ndarray
    coeffs: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        K = self.basis.shape[1]
        if self.coeffs.shape[0] != K or self.weights.shape != (K,):
            raise ValueError(
                f"inconsistent K: basis {self.basis.shape}, coeffs "
                f"{self.coeffs.shape}, weights {self.weights.shape}")

    @property
    def K(self) -> int:
        return self.basis.shape[1]

    def copy(self) -> "FactorModel":
        return FactorModel(self.basis.copy(), self.coeffs.copy(), self.weights.copy())


@dataclass
class AugmentedState:
    """Constraint copies ``D_n`` and multipliers ``Lambda_n``, both (N, M, K)."""

    d_mats: np.ndarray
    lambdas: np.ndarray
    eta: float
    iteration: int = 0

    def __post_init__(self):
        if self.d_mats.shape != self.lambdas.shape:
            raise ValueError("d_mats and lambdas must share a shape")
        if not self.eta > 0:
            raise ValueError("eta must be positive")

    def copy(self) -> "AugmentedState":
        return AugmentedState(self.d_mats.copy(), self.lambdas.copy(),
                              self.eta, self.iteration)


@dataclass(frozen=True)
class HyperParams:
    """Regularization weights, step sizes and stopping rules.

    Defaults follow the ADOS setting (gamma=1, lambda1=30, lambda2=0.2,
    lambda3=1, t=0.001, K=8) with the dual rate starting at 0.001 and
    shrinking by 0.75 per outer iteration.
    """

    gamma: float = 1.0
    lambda1: float = 30.0
    lambda2: float = 0.2
    lambda3: float = 1.0
    t: float = 0.001
    K: int = 8
    eta0: float = 0.001
    eta_decay: float = 0.75
    max_outer_iters: int = 200
    tol_objective: float = 1e-5
    tol_constraint: float = 1e-3
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("gamma", "lambda1", "lambda2", "lambda3", "t", "eta0"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if not 0 < self.eta_decay < 1:
            raise ValueError("eta_decay must lie in (0, 1)")
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.max_outer_iters < 0:
            raise ValueError("max_outer_iters must be >= 0")

    def replace(self, **changes) -> "HyperParams":
        return replace(self, **changes)


PRESETS = {
    "ados": HyperParams(gamma=1.0, lambda1=30.0, lambda2=0.2, lambda3=1.0, t=0.001, K=8),
    "srs": HyperParams(gamma=1.0, lambda1=40.0, lambda2=2.0, lambda3=1.0, t=0.001, K=8),
}


def validate_dataset(raw: CohortDataset) -> CohortDataset:
    """Check shapes and finiteness, and symmetrize small asymmetries.

    Matrices whose asymmetry is at most ``1e-8`` are replaced by
    ``(G + G^T) / 2``; anything larger is rejected.
    """
    gammas = np.asarray(raw.gammas, dtype=float)
    scores = np.asarray(raw.scores, dtype=float).reshape(-1)
    if gammas.ndim == 2:
        gammas = gammas[None]
    if gammas.ndim != 3:
        raise DataError(f"expected a stack of matrices, got shape {gammas.shape}")
    N, M, M2 = gammas.shape
    if M != M2:
        raise DataError(f"non-square matrix: {M}x{M2}")
    if N < 1:
        raise DataError("dataset needs at least one subject")
    if M < 2:
        raise DataError("matrices must be at least 2x2")
    if scores.shape[0] != N:
        raise DataError(f"{scores.shape[0]} scores for {N} matrices")
    if not np.all(np.isfinite(gammas)):
        raise DataError("non-finite entries in correlation matrices")
    if not np.all(np.isfinite(scores)):
        raise DataError("non-finite scores")
    asym = np.abs(gammas - gammas.transpose(0, 2, 1)).max(axis=(1, 2))
    bad = np.flatnonzero(asym > SYMMETRY_TOL)
    if bad.size:
        raise DataError(
            f"matrix {bad[0]} asymmetric beyond tolerance ({asym[bad[0]]:.3g})")
    gammas = 0.5 * (gammas + gammas.transpose(0, 2, 1))
    ids = None if raw.subject_ids is None else list(raw.subject_ids)
    if ids is not None and len(ids) != N:
        raise DataError(f"{len(ids)} subject ids for {N} matrices")
    return CohortDataset(gammas, scores, ids)


def deflate_first_eigenvector(gamma: np.ndarray) -> np.ndarray:
    """Remove the largest-eigenvalue rank-one component ``s1 v1 v1^T``.

    "Largest" is algebraic.  The result is symmetrized to remove round-off.
    """
    gamma = np.asarray(gamma, dtype=float)
    if not np.all(np.isfinite(gamma)):
        raise DataError("non-finite entries in matrix to deflate")
    evals, evecs = np.linalg.eigh(0.5 * (gamma + gamma.T))
    if evals.size > 1 and evals[-1] - evals[-2] <= 1e-12:
        logger.warning("top eigenvalue is degenerate; deflating one eigenvector")
    v = evecs[:, -1]
    out = gamma - evals[-1] * np.outer(v, v)
    return 0.5 * (out + out.T)


def _check_shapes(data: CohortDataset, model: FactorModel):
    N, M = data.subject_count, data.region_count
    if model.basis.shape[0] != M or model.coeffs.shape[1] != N:
        raise ValueError(
            f"model shapes basis {model.basis.shape}, coeffs {model.coeffs.shape} "
            f"do not match data with N={N}, M={M}")


def _regularizers(model: FactorModel, hp: HyperParams) -> float:
    return (hp.lambda1 * np.abs(model.basis).sum()
            + hp.lambda2 * np.sum(model.coeffs ** 2)
            + hp.lambda3 * np.sum(model.weights ** 2))


def regression_residual(data: CohortDataset, model: FactorModel) -> np.ndarray:
    return data.scores - model.coeffs.T @ model.weights


def reconstruct(basis: np.ndarray, coeffs: np.ndarray) -> np.ndarray:
    """Return the stack ``B diag(c_n) B^T`` for every column of ``coeffs``."""
    scaled = basis[None] * coeffs.T[:, None, :]
    return scaled @ basis.T


def fit_error(data: CohortDataset, model: FactorModel) -> float:
    """Factorization term ``sum_n ||Gamma_n - B diag(c_n) B^T||_F^2``."""
    return float(np.sum((data.gammas - reconstruct(model.basis, model.coeffs)) ** 2))


def eval_objective(data: CohortDataset, model: FactorModel, hp: HyperParams) -> float:
    """Joint objective: factorization error, regression error and penalties."""
    _check_shapes(data, model)
    r = regression_residual(data, model)
    return fit_error(data, model) + hp.gamma * float(r @ r) + _regularizers(model, hp)


def constraint_gaps(model: FactorModel, aug: AugmentedState) -> np.ndarray:
    """``D_n - B diag(c_n)`` for all subjects, shape (N, M, K)."""
    return aug.d_mats - model.basis[None] * model.coeffs.T[:, None, :]


def eval_augmented_objective(data: CohortDataset, model: FactorModel,
                             aug: AugmentedState, hp: HyperParams) -> float:
    """Augmented Lagrangian with the split ``D_n = B diag(c_n)``."""
    _check_shapes(data, model)
    if aug.d_mats.shape != (data.subject_count, data.region_count, model.K):
        raise ValueError(f"d_mats shape {aug.d_mats.shape} inconsistent with model")
    fit = data.gammas - aug.d_mats @ model.basis.T
    gap = constraint_gaps(model, aug)
    r = regression_residual(data, model)
    return float(np.sum(fit ** 2)
                 + np.sum(aug.lambdas * gap)
                 + 0.5 * np.sum(gap ** 2)
                 + hp.gamma * (r @ r)
                 + _regularizers(model, hp))


def constraint_residual(model: FactorModel, aug: AugmentedState) -> float:
    """Worst relative constraint violation over subjects.

    ``max_n ||D_n - B diag(c_n)||_F / max(1, ||B diag(c_n)||_F)``.
    """
    target = model.basis[None] * model.coeffs.T[:, None, :]
    num = np.linalg.norm((aug.d_mats - target).reshape(target.shape[0], -1), axis=1)
    den = np.maximum(1.0, np.linalg.norm(target.reshape(target.shape[0], -1), axis=1))
    return float(np.max(num / den)) if num.size else 0.0


__all__ = [
    "AugmentedState", "CohortDataset", "DataError", "FactorModel", "HyperParams",
    "PRESETS", "constraint_gaps", "constraint_residual", "deflate_first_eigenvector",
    "eval_augmented_objective", "eval_objective", "fit_error", "reconstruct",
    "regression_residual", "validate_dataset",
]
