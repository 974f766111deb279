from __future__ import annotations

import numpy as np
import pytest

from aligndx.errors import NumericError
from aligndx.pca import PowerIterationPCA


class TestPowerIterationPCA:
    def test_two_d_centered_data_is_isometry(self):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(40, 2)) @ np.array([[2.0, 0.3], [0.3, 0.5]])
        X -= X.mean(axis=0)
        coords = PowerIterationPCA(n_components=2, seed=1).fit(X).transform(X)
        orig = np.linalg.norm(X[:, None, :] - X[None, :, :], axis=-1)
        new = np.linalg.norm(coords[:, None, :] - coords[None, :, :], axis=-1)
        assert np.allclose(orig, new, atol=1e-5)

    def test_duplicate_rows_give_duplicate_coordinates(self):
        rng = np.random.default_rng(1)
        X = rng.normal(size=(10, 5))
        X = np.vstack([X, X[3]])
        coords = PowerIterationPCA(n_components=2, seed=2).fit(X).transform(X)
        assert np.allclose(coords[3], coords[-1], atol=1e-12)

    def test_explained_variance_matches_dense_eigensolve(self):
        rng = np.random.default_rng(2)
        # anisotropic 5-D fixture
        scales = np.array([4.0, 2.5, 1.0, 0.4, 0.1])
        X = rng.normal(size=(200, 5)) * scales
        pca = PowerIterationPCA(n_components=2, seed=3).fit(X)
        centered = X - X.mean(axis=0)
        cov = centered.T @ centered / (X.shape[0] - 1)
        eigs = np.sort(np.linalg.eigvalsh(cov))[::-1]
        assert np.allclose(pca.explained_variance_, eigs[:2], rtol=1e-6)
        got_ratio = pca.explained_variance_.sum() / pca.total_variance_
        expected_ratio = eigs[:2].sum() / eigs.sum()
        assert got_ratio == pytest.approx(expected_ratio, rel=1e-6)

    def test_components_orthonormal(self):
        rng = np.random.default_rng(3)
        X = rng.normal(size=(50, 6))
        pca = PowerIterationPCA(n_components=2, seed=4).fit(X)
        gram = pca.components_ @ pca.components_.T
        assert np.allclose(gram, np.eye(2), atol=1e-6)

    def test_degenerate_covariance_rejected(self):
        X = np.ones((10, 3))
        with pytest.raises(NumericError, match="degenerate covariance"):
            PowerIterationPCA(n_components=2, seed=5).fit(X)

    def test_deterministic_under_seed(self):
        rng = np.random.default_rng(6)
        X = rng.normal(size=(30, 4))
        a = PowerIterationPCA(n_components=2, seed=7).fit(X).transform(X)
        b = PowerIterationPCA(n_components=2, seed=7).fit(X).transform(X)
        assert np.array_equal(a, b)

    def test_get_params_round_trip(self):
        pca = PowerIterationPCA(n_components=2, tol=1e-8, max_iter=500, seed=9)
        params = pca.get_params()
        clone = PowerIterationPCA(**params)
        assert clone.get_params() == params

    def test_unfitted_transform_rejected(self):
        with pytest.raises(ValueError, match="not fitted"):
            PowerIterationPCA().transform(np.zeros((3, 3)))
