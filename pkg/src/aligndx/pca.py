"""Deterministic power-iteration PCA for the 2-D embedding-space export."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .errors import NumericError

__all__ = ["PowerIterationPCA"]


class PowerIterationPCA(BaseEstimator, TransformerMixin):
    """Top-n principal components via power iteration with deflation.

    Deterministic: the start vector is seeded, convergence is checked up to
    sign, and iteration stops at ``tol`` or ``max_iter``.  Raises
    ``NumericError`` when the data carries no variance at all.
    """

    def __init__(self, n_components: int = 2, tol: float = 1e-8,
                 max_iter: int = 1000, seed: int = 0):
        self.n_components = n_components
        self.tol = tol
        self.max_iter = max_iter
        self.seed = seed

    def fit(self, X, y=None):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] < 2:
            raise ValueError("X must be (n_samples >= 2, n_features)")
        if self.n_components > X.shape[1]:
            raise ValueError("n_components exceeds the feature dimension")
        self.mean_ = X.mean(axis=0)
        centered = X - self.mean_
        cov = centered.T @ centered / (X.shape[0] - 1)
        total_var = float(np.trace(cov))
        if total_var <= 1e-18:
            raise NumericError("degenerate covariance: all points identical")

        rng = np.random.default_rng(self.seed)
        components = []
        eigenvalues = []
        work = cov.copy()
        for _ in range(self.n_components):
            v = rng.normal(size=cov.shape[0])
            v /= np.linalg.norm(v)
            eig = 0.0
            for _ in range(self.max_iter):
                Av = work @ v
                norm = float(np.linalg.norm(Av))
                if norm <= 1e-30:
                    # zero eigenvalue: keep any direction orthogonal to the
                    # found components (rank-deficient tail)
                    for c in components:
                        v -= (v @ c) * c
                    v /= np.linalg.norm(v)
                    eig = 0.0
                    break
                v_new = Av / norm
                eig = norm
                if min(np.linalg.norm(v_new - v), np.linalg.norm(v_new + v)) < self.tol:
                    v = v_new
                    break
                v = v_new
            components.append(v)
            eigenvalues.append(float(eig))
            work = work - eig * np.outer(v, v)
        self.components_ = np.stack(components)
        self.explained_variance_ = np.asarray(eigenvalues)
        self.total_variance_ = total_var
        return self

    def transform(self, X):
        if not hasattr(self, "components_"):
            raise ValueError("PCA is not fitted")
        X = np.asarray(X, dtype=np.float64)
        return (X - self.mean_) @ self.components_.T
