"""scikit-learn style wrappers around the PCP and subspace routines.

The estimators follow the usual contract: hyperparameters in ``__init__``,
learned state in trailing-underscore attributes, ``fit`` returns ``self``.
"""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .rpca import PcpConfig, pcp
from .subspace import RANK_TOL, AttributeBasis, ProjectionSpec, null_project, region_basis


def _pcp_config(est):
    return PcpConfig(lam=est.lam, mu=est.mu, rel_tol=est.rel_tol, max_iter=est.max_iter)


class RobustPCA(TransformerMixin, BaseEstimator):
    """Low-rank plus sparse split of a single matrix.

    ``fit_transform(M)`` returns the low-rank part; the sparse part is kept in
    ``sparse_``.  There is no learned map: ``transform`` solves afresh.
    """

    def __init__(self, lam=None, mu="auto", rel_tol=1e-7, max_iter=1000):
        self.lam = lam
        self.mu = mu
        self.rel_tol = rel_tol
        self.max_iter = max_iter

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        sol = pcp(X, _pcp_config(self))
        self.low_rank_ = sol.l
        self.sparse_ = sol.s
        self.n_iter_ = sol.iterations
        self.residual_ = sol.final_residual
        self.converged_ = sol.converged
        self.lambda_ = sol.lam
        self.mu_ = sol.mu
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        """Low-rank part of ``X`` under the same solver settings."""
        check_is_fitted(self, "low_rank_")
        X = check_array(X, dtype=np.float64)
        return pcp(X, _pcp_config(self)).l

    def fit_transform(self, X, y=None):
        return self.fit(X).low_rank_.copy()


class AttributeSubspace(TransformerMixin, BaseEstimator):
    """Attribute directions of a region, learned from a generator Jacobian.

    ``fit(J)`` takes the ``d_x x d_z`` Jacobian; ``region`` selects its rows
    (all rows when ``None``).  ``transform(Z)`` gives latent codes'
    coordinates along the attribute directions.
    """

    def __init__(self, region=None, lam=None, mu="auto", rel_tol=1e-7, max_iter=1000, rank_tol=RANK_TOL):
        self.region = region
        self.lam = lam
        self.mu = mu
        self.rel_tol = rel_tol
        self.max_iter = max_iter
        self.rank_tol = rank_tol

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        region = np.arange(X.shape[0]) if self.region is None else self.region
        basis = region_basis(X, region, _pcp_config(self), self.rank_tol)
        self.basis_ = basis
        self.components_ = basis.attributes.T.copy()
        self.singular_values_ = basis.sigma[: basis.rank].copy()
        self.rank_ = basis.rank
        self.n_iter_ = basis.solution.iterations
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "basis_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError("expected %d latent coordinates, got %d" % (self.n_features_in_, X.shape[1]))
        return X @ self.components_.T


class NullSpaceProjector(TransformerMixin, BaseEstimator):
    """Projects unit directions off a region's attribute span.

    ``fit(J)`` learns region B's basis from the Jacobian rows in ``region``;
    ``transform(V)`` maps each row of ``V`` to its renormalized projection.
    A fitted :class:`~lorank.subspace.AttributeBasis` may be passed as
    ``basis`` to skip the solve.
    """

    def __init__(self, region=None, r_relax=0, basis=None, lam=None, mu="auto", rel_tol=1e-7, max_iter=1000, rank_tol=RANK_TOL):
        self.region = region
        self.r_relax = r_relax
        self.basis = basis
        self.lam = lam
        self.mu = mu
        self.rel_tol = rel_tol
        self.max_iter = max_iter
        self.rank_tol = rank_tol

    def fit(self, X=None, y=None):
        if self.basis is not None:
            if not isinstance(self.basis, AttributeBasis):
                raise TypeError("basis must be an AttributeBasis")
            basis = self.basis
        else:
            if X is None:
                raise ValueError("either a Jacobian or a fitted basis is required")
            X = check_array(X, dtype=np.float64)
            region = np.arange(X.shape[0]) if self.region is None else self.region
            basis = region_basis(X, region, _pcp_config(self), self.rank_tol)
        self.spec_ = ProjectionSpec(basis, min(int(self.r_relax), basis.rank))
        self.n_features_in_ = basis.v.shape[0]
        return self

    def transform(self, X):
        check_is_fitted(self, "spec_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError("expected %d latent coordinates, got %d" % (self.n_features_in_, X.shape[1]))
        return np.vstack([null_project(row, self.spec_) for row in X])
