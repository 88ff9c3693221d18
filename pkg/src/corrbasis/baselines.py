"""Comparison pipelines: (kernel) PCA on vectorized correlations + random forest.

Features are the strict upper triangle of each correlation matrix, row-major
(``i < j``, ``i`` outer).  Reducers and forests are fit on training folds
only; held-out rows are only ever passed to ``transform``/``predict``.
"""

from __future__ import annotations

import hashlib
import logging
import warnings
from dataclasses import dataclass

import numpy as np
from sklearn.decomposition import PCA, KernelPCA
from sklearn.ensemble import RandomForestRegressor

from .model import CohortDataset
from .predictor import FoldSplit, PredictionReport, SubjectRow

logger = logging.getLogger(__name__)

PCA_COMPONENTS = 15
KPCA_COMPONENTS = 10
KPCA_RBF_COEFF = 0.1


def vectorize_upper(gamma: np.ndarray) -> np.ndarray:
    """Upper triangle without the diagonal, ``(0,1), (0,2), ..., (M-2,M-1)``."""
    gamma = np.asarray(gamma)
    iu = np.triu_indices(gamma.shape[-1], k=1)
    return gamma[..., iu[0], iu[1]]


def devectorize_upper(row: np.ndarray, M: int) -> np.ndarray:
    """Symmetric matrix with zero diagonal whose upper triangle is ``row``."""
    out = np.zeros((M, M))
    iu = np.triu_indices(M, k=1)
    out[iu] = row
    return out + out.T


def feature_matrix(gammas: np.ndarray) -> np.ndarray:
    X = vectorize_upper(gammas)
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite correlation features")
    return X


class PcaReducer:
    """PCA with the training mean and basis stored for out-of-sample rows."""

    def __init__(self, components: int = PCA_COMPONENTS):
        self.components = components

    def fit_transform(self, X):
        n = min(X.shape)
        k = self.components
        if k > n:
            warnings.warn(f"reducing PCA components from {k} to {n}")
            k = n
        self.pca_ = PCA(n_components=k, svd_solver="full")
        return self.pca_.fit_transform(X)

    def transform(self, X):
        return self.pca_.transform(X)

    @property
    def basis(self):
        return self.pca_.components_.T

    @property
    def mean(self):
        return self.pca_.mean_


def pca_fit_transform(X: np.ndarray, components: int = PCA_COMPONENTS):
    """Returns ``(reducer, projected)``; the reducer keeps mean and basis."""
    red = PcaReducer(components)
    return red, red.fit_transform(X)


class KpcaReducer:
    """RBF kernel PCA, ``k(x, z) = exp(-rbf_coeff ||x - z||^2)``.

    Embeddings are projections onto the unit-norm eigenvectors of the
    double-centered Gram matrix, scaled by the square root of the
    eigenvalue; new rows use the centered kernel against training rows.
    """

    def __init__(self, components: int = KPCA_COMPONENTS, rbf_coeff: float = KPCA_RBF_COEFF):
        if not rbf_coeff > 0:
            raise ValueError("rbf_coeff must be > 0")
        self.components = components
        self.rbf_coeff = rbf_coeff

    def fit_transform(self, X):
        if X.shape[0] > 1 and np.all(X == X[0]):
            raise ValueError("degenerate Gram matrix: all rows identical")
        k = min(self.components, X.shape[0])
        self.kpca_ = KernelPCA(n_components=k, kernel="rbf", gamma=self.rbf_coeff,
                               eigen_solver="dense")
        return self.kpca_.fit_transform(X)

    def transform(self, X):
        return self.kpca_.transform(X)


def kpca_fit_transform(X: np.ndarray, components: int = KPCA_COMPONENTS,
                       rbf_coeff: float = KPCA_RBF_COEFF):
    red = KpcaReducer(components, rbf_coeff)
    return red, red.fit_transform(X)


@dataclass(frozen=True)
class ForestConfig:
    tree_count: int = 100
    max_depth: int | None = None
    min_leaf_size: int = 2
    feature_subsample: float = 1 / 3
    bootstrap: bool = True
    rng_seed: int = 0
    n_jobs: int = 1

    def __post_init__(self):
        if self.tree_count < 1:
            raise ValueError("tree_count must be >= 1")
        if not 0 < self.feature_subsample <= 1:
            raise ValueError("feature_subsample must lie in (0, 1]")


def forest_fit(X: np.ndarray, y: np.ndarray, cfg: ForestConfig = ForestConfig()):
    """Bagged variance-reduction regression trees; prediction is the tree mean."""
    if X.shape[0] < 2:
        raise ValueError("forest needs at least two training rows")
    forest = RandomForestRegressor(
        n_estimators=cfg.tree_count,
        max_depth=cfg.max_depth,
        min_samples_leaf=cfg.min_leaf_size,
        max_features=cfg.feature_subsample,
        bootstrap=cfg.bootstrap,
        random_state=cfg.rng_seed,
        n_jobs=cfg.n_jobs,
    )
    return forest.fit(X, y)


class IdentityReducer:
    """Pass-through reducer; useful for testing the pipeline plumbing."""

    def fit_transform(self, X):
        return np.asarray(X)

    def transform(self, X):
        return np.asarray(X)


def make_reducer(which: str, pca_components=PCA_COMPONENTS, kpca_components=KPCA_COMPONENTS,
                 rbf_coeff=KPCA_RBF_COEFF):
    if which == "pca":
        return PcaReducer(pca_components)
    if which == "kpca":
        return KpcaReducer(kpca_components, rbf_coeff)
    raise ValueError(f"unknown baseline {which!r}; expected 'pca' or 'kpca'")


def _digest(a: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(a).tobytes()).hexdigest()


def run_baseline(data: CohortDataset, which: str, split: FoldSplit,
                 forest_cfg: ForestConfig = ForestConfig(), reducer_factory=None,
                 **reducer_kw) -> PredictionReport:
    """Per fold: vectorize, fit reducer + forest on training rows, predict both.

    ``reducer_factory`` overrides ``which`` when given (a zero-argument
    callable returning an object with ``fit_transform``/``transform``).
    """
    X = feature_matrix(data.gammas)
    y = data.scores
    rows = []
    for k, train, test in split.folds():
        test_hash = _digest(X[test])
        reducer = reducer_factory() if reducer_factory else make_reducer(which, **reducer_kw)
        Z_train = reducer.fit_transform(X[train].copy())
        forest = forest_fit(Z_train, y[train], forest_cfg)
        Z_test = reducer.transform(X[test])
        if _digest(X[test]) != test_hash:
            raise RuntimeError("test rows were modified while fitting")
        for i, p in zip(train, forest.predict(Z_train)):
            rows.append(SubjectRow(_name(data, i), k, "train", float(y[i]), float(p)))
        for i, p in zip(test, forest.predict(Z_test)):
            rows.append(SubjectRow(_name(data, i), k, "test", float(y[i]), float(p)))
    return PredictionReport(rows, {"method": which, "fold_count": split.fold_count,
                                   "split_seed": split.rng_seed})


def _name(data, i):
    return data.subject_ids[i] if data.subject_ids is not None else str(i)
