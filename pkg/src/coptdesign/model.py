"""Model specification and per-model computational workspace.

A ``ModelSpec`` bundles a family/link, a mean model, a covariance
specification and the attenuation switch. A ``ModelWorkspace`` binds a
spec to a fixed observation list and precomputes everything the design
objective needs: the covariate matrix, linear predictors (attenuated when
requested; the attenuated value is used everywhere eta enters the GLM
weights), the diagonal weight corrections and a vectorized covariance
oracle for arbitrary index blocks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .covariance import CovarianceFunction, CovarianceSpec, EXPONENTIAL_SPATIAL
from .errors import ConfigError
from .families import FamilyLink, GAUSSIAN, IDENTITY, attenuate_from_variance, glm_weight


@dataclass(frozen=True)
class ModelSpec:
    family_link: FamilyLink
    mean: object
    covariance: CovarianceSpec
    attenuate: bool = False

    def __post_init__(self):
        if self.family_link.family == GAUSSIAN and self.covariance.resid_sd is None:
            raise ConfigError("gaussian models require covariance.resid_sd")

    @property
    def n_params(self) -> int:
        return self.mean.n_params

    def design_matrix(self, obs) -> np.ndarray:
        return np.array([self.mean.covariate_row(meta) for meta in obs], dtype=np.float64)

    def linear_predictor(self, obs) -> np.ndarray:
        """Raw linear predictors at the prior mean of the random effects."""
        if self.family_link.is_gaussian_identity:
            # Weights are constant for gaussian-identity; coefficients optional.
            return np.zeros(len(obs))
        return np.array([self.mean.linear_predictor(meta) for meta in obs], dtype=np.float64)


class ModelWorkspace:
    """A model spec bound to a fixed list of candidate observations."""

    def __init__(self, obs, spec: ModelSpec):
        self.spec = spec
        self.obs = list(obs)
        self.X = spec.design_matrix(self.obs)
        self.cov = CovarianceFunction(self.obs, spec.covariance)
        eta = spec.linear_predictor(self.obs)
        if spec.attenuate and spec.family_link.link != IDENTITY:
            all_ix = np.arange(len(self.obs))
            random_var = self.cov.block(all_ix, all_ix).diagonal()
            eta = attenuate_from_variance(eta, random_var, spec.family_link)
        self.eta = eta
        w = glm_weight(self.eta, spec.family_link, gaussian_resid_var=spec.covariance.resid_var)
        self.w_inv = 1.0 / np.atleast_1d(np.asarray(w, dtype=np.float64))
        if self.w_inv.shape == (1,) and len(self.obs) > 1:
            self.w_inv = np.full(len(self.obs), self.w_inv[0])

    @property
    def n_obs(self) -> int:
        return len(self.obs)

    @property
    def n_params(self) -> int:
        return self.X.shape[1]

    def sigma_block(self, ix_a, ix_b) -> np.ndarray:
        """Marginal covariance block; adds 1/W where the index sets coincide."""
        ix_a = np.asarray(ix_a, dtype=np.intp)
        ix_b = np.asarray(ix_b, dtype=np.intp)
        block = self.cov.block(ix_a, ix_b)
        same = ix_a[:, None] == ix_b[None, :]
        if same.any():
            block = block + np.where(same, self.w_inv[ix_a][:, None], 0.0)
        return block

    def sigma_diag(self, ix) -> np.ndarray:
        """Marginal variances of the given observations."""
        ix = np.asarray(ix, dtype=np.intp)
        return self.cov.block(ix, ix).diagonal() + self.w_inv[ix]

    def sigma(self, ix) -> np.ndarray:
        return self.sigma_block(ix, ix)

    def independence_components(self):
        """Groups of observations with no cross-covariance between groups.

        Spatial kernels couple everything; clustered kinds couple only
        within a cluster (cluster structure is ignored when all cluster
        variances are zero, leaving singleton groups).
        """
        n = len(self.obs)
        spec = self.spec.covariance
        if spec.kind == EXPONENTIAL_SPATIAL and spec.sigma1 > 0:
            return [np.arange(n)]
        if spec.kind != EXPONENTIAL_SPATIAL and (
            spec.sigma1 > 0 or spec.sigma2 > 0 or spec.cohort_sd > 0
        ):
            clusters = {}
            for i, meta in enumerate(self.obs):
                clusters.setdefault(meta.cluster, []).append(i)
            return [np.asarray(v, dtype=np.intp) for v in clusters.values()]
        return [np.asarray([i], dtype=np.intp) for i in range(n)]

    def full_information(self) -> np.ndarray:
        """Information matrix of the complete design space, assembled blockwise."""
        p = self.n_params
        M = np.zeros((p, p))
        for ix in self.independence_components():
            Xg = self.X[ix]
            M += Xg.T @ np.linalg.solve(self.sigma(ix), Xg)
        return M
