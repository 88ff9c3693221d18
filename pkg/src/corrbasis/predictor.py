"""Severity prediction for unseen subjects, cross-validation and metrics."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .model import CohortDataset, HyperParams
from .qp import QpError, build_prediction_qp, solve_nonneg_qp

logger = logging.getLogger(__name__)


def rmse(true, pred) -> float:
    """Root *median* square error, ``sqrt(median((true - pred)**2))``."""
    true = np.asarray(true, dtype=float).reshape(-1)
    pred = np.asarray(pred, dtype=float).reshape(-1)
    if true.size == 0:
        raise ValueError("rmse of an empty vector")
    if true.shape != pred.shape:
        raise ValueError(f"length mismatch {true.size} vs {pred.size}")
    return float(np.sqrt(np.median((true - pred) ** 2)))


def r_squared(true, pred) -> float:
    """Coefficient of determination about the mean of ``true``."""
    true = np.asarray(true, dtype=float).reshape(-1)
    pred = np.asarray(pred, dtype=float).reshape(-1)
    if true.shape != pred.shape:
        raise ValueError(f"length mismatch {true.size} vs {pred.size}")
    if true.size < 2:
        raise ValueError("r_squared needs at least two values")
    ss_tot = np.sum((true - true.mean()) ** 2)
    if ss_tot == 0:
        raise ValueError("r_squared is undefined for a constant target")
    return float(1.0 - np.sum((true - pred) ** 2) / ss_tot)


def infer_coefficients(B_star: np.ndarray, gamma_test: np.ndarray, lambda2: float) -> np.ndarray:
    sol = solve_nonneg_qp(build_prediction_qp(B_star, gamma_test, lambda2))
    if not sol.converged:
        raise QpError(f"coefficient QP failed (KKT residual {sol.kkt_residual:.3g})")
    return sol.c


def predict_subject(B_star: np.ndarray, w_star: np.ndarray, gamma_test: np.ndarray,
                    hp: HyperParams) -> float:
    """Score estimate ``c^T w`` with ``c`` fit to ``gamma_test`` under ``c >= 0``.

    Returns NaN (and logs) when the coefficient QP fails.
    """
    try:
        c = infer_coefficients(B_star, np.asarray(gamma_test, dtype=float), hp.lambda2)
    except QpError as exc:
        logger.warning("prediction failed: %s", exc)
        return float("nan")
    return float(c @ w_star)


@dataclass
class FoldSplit:
    """Seeded shuffle, then round-robin assignment to ``fold_count`` folds."""

    assignments: np.ndarray
    fold_count: int = 10
    rng_seed: int = 0

    @classmethod
    def make(cls, n_subjects: int, fold_count: int = 10, rng_seed: int = 0) -> "FoldSplit":
        if fold_count < 1:
            raise ValueError("fold_count must be >= 1")
        if n_subjects < fold_count:
            raise ValueError(f"{n_subjects} subjects cannot fill {fold_count} folds")
        order = np.random.default_rng(rng_seed).permutation(n_subjects)
        assignments = np.empty(n_subjects, dtype=int)
        assignments[order] = np.arange(n_subjects) % fold_count
        return cls(assignments, fold_count, rng_seed)

    def folds(self):
        for k in range(self.fold_count):
            test = np.flatnonzero(self.assignments == k)
            if test.size < 1:
                raise ValueError(f"fold {k} is empty")
            yield k, np.flatnonzero(self.assignments != k), test


@dataclass
class SubjectRow:
    subject: str
    fold: int
    split: str  # "train" or "test"
    true: float
    pred: float


@dataclass
class PredictionReport:
    rows: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def _select(self, split):
        sel = [r for r in self.rows if r.split == split and np.isfinite(r.pred)]
        return (np.array([r.true for r in sel]), np.array([r.pred for r in sel]))

    @property
    def aggregates(self) -> dict:
        out = {}
        for split in ("train", "test"):
            t, p = self._select(split)
            out[f"rmse_{split}"] = rmse(t, p) if t.size else float("nan")
            try:
                out[f"r2_{split}"] = r_squared(t, p)
            except ValueError:
                out[f"r2_{split}"] = float("nan")
        return {k: out[k] for k in ("rmse_train", "rmse_test", "r2_train", "r2_test")}

    def test_rows(self):
        return [r for r in self.rows if r.split == "test"]


def _subject_name(data, i):
    return data.subject_ids[i] if data.subject_ids is not None else str(i)


def _cv_fold(args):
    from .optimizer import fit

    data, cfg, k, train, test, seed = args
    hp = cfg.hp.replace(rng_seed=seed)
    model, _ = fit(data.subset(train), replace(cfg, hp=hp))
    rows = []
    train_pred = model.coeffs.T @ model.weights
    for i, p in zip(train, train_pred):
        rows.append(SubjectRow(_subject_name(data, i), k, "train", float(data.scores[i]), float(p)))
    for i in test:
        p = predict_subject(model.basis, model.weights, data.gammas[i], hp)
        rows.append(SubjectRow(_subject_name(data, i), k, "test", float(data.scores[i]), p))
    return rows


def fold_seed(base_seed: int, fold: int) -> int:
    return int(np.random.SeedSequence([base_seed, fold]).generate_state(1)[0])


def run_cross_validation(data: CohortDataset, cfg, split: FoldSplit,
                         n_jobs: int = 1) -> PredictionReport:
    """K-fold evaluation of the joint model.

    Training rows use the coefficients learned during the fit; held-out rows
    are predicted from their matrices alone.  Aggregates pool every fold.
    """
    if data.subject_count < split.fold_count:
        raise ValueError("fewer subjects than folds")
    jobs = [(data, cfg, k, train, test, fold_seed(cfg.hp.rng_seed, k))
            for k, train, test in split.folds()]
    if n_jobs == 1:
        results = [_cv_fold(j) for j in jobs]
    else:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(_cv_fold, jobs))
    rows = [r for fold_rows in results for r in fold_rows]
    return PredictionReport(rows, {"method": "joint", "fold_count": split.fold_count,
                                   "split_seed": split.rng_seed})


def mean_predictor_report(data: CohortDataset, split: FoldSplit) -> PredictionReport:
    """Reference that predicts every subject by its training-fold mean score."""
    rows = []
    for k, train, test in split.folds():
        mu = float(data.scores[train].mean())
        for i in train:
            rows.append(SubjectRow(_subject_name(data, i), k, "train", float(data.scores[i]), mu))
        for i in test:
            rows.append(SubjectRow(_subject_name(data, i), k, "test", float(data.scores[i]), mu))
    return PredictionReport(rows, {"method": "mean", "fold_count": split.fold_count})
