"""Response families, link functions, GLM weights and mean models.

Four family/link pairs are supported: gaussian-identity, binomial-logit,
binomial-log and poisson-log. The module provides the iterated GLM weight
``W = (dmu/deta)^2 / Var(y|u)`` whose reciprocal forms the diagonal
correction of the marginal covariance approximation, the linear-predictor
attenuation adjustments for the log and logit links, and the two mean
models used by the design generators (treatment/period indicators and an
exponential point-source surface with its derivative rows).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericalError

GAUSSIAN = "gaussian"
BINOMIAL = "binomial"
POISSON = "poisson"

IDENTITY = "identity"
LOGIT = "logit"
LOG = "log"

_ALLOWED_PAIRS = {
    (GAUSSIAN, IDENTITY),
    (BINOMIAL, LOGIT),
    (BINOMIAL, LOG),
    (POISSON, LOG),
}

#: Coefficient of the logit-link attenuation, 16*sqrt(3) / (15*pi).
LOGIT_ATTENUATION_COEF = 16.0 * math.sqrt(3.0) / (15.0 * math.pi)


@dataclass(frozen=True)
class FamilyLink:
    """A validated (family, link) pair."""

    family: str
    link: str

    def __post_init__(self):
        if (self.family, self.link) not in _ALLOWED_PAIRS:
            raise ConfigError(
                f"unsupported family/link combination: {self.family}-{self.link}; "
                f"supported: gaussian-identity, binomial-logit, binomial-log, poisson-log"
            )

    @property
    def is_gaussian_identity(self) -> bool:
        return self.family == GAUSSIAN

    def inverse_link(self, eta):
        """Mean mu = h^{-1}(eta)."""
        eta = np.asarray(eta, dtype=np.float64)
        if self.link == IDENTITY:
            return eta
        if self.link == LOGIT:
            return 1.0 / (1.0 + np.exp(-eta))
        return np.exp(eta)

    def mean_derivative(self, eta):
        """dmu/deta evaluated at eta."""
        eta = np.asarray(eta, dtype=np.float64)
        if self.link == IDENTITY:
            return np.ones_like(eta)
        if self.link == LOGIT:
            mu = self.inverse_link(eta)
            return mu * (1.0 - mu)
        return np.exp(eta)

    def conditional_variance(self, mu, gaussian_resid_var=None):
        """Var(y | u) as a function of the conditional mean."""
        mu = np.asarray(mu, dtype=np.float64)
        if self.family == GAUSSIAN:
            if gaussian_resid_var is None or gaussian_resid_var <= 0:
                raise ConfigError("gaussian family requires a positive residual variance")
            return np.full_like(mu, gaussian_resid_var)
        if self.family == BINOMIAL:
            return mu * (1.0 - mu)
        return mu


def glm_weight(eta, family_link: FamilyLink, gaussian_resid_var=None):
    """GLM iterated weight W = (dmu/deta)^2 / Var(y|u), elementwise.

    The reciprocal 1/W is the diagonal term added to the random-effect
    covariance when assembling the marginal covariance. For
    gaussian-identity this is exactly 1/sigma_e^2, which makes the marginal
    covariance assembly exact.
    """
    eta_arr = np.asarray(eta, dtype=np.float64)
    if not np.all(np.isfinite(eta_arr)):
        raise NumericalError("linear predictor must be finite")
    if family_link.family == BINOMIAL and family_link.link == LOG and np.any(eta_arr >= 0):
        raise NumericalError(
            "binomial-log requires eta < 0 (eta >= 0 puts the mean at or above 1)"
        )
    mu = family_link.inverse_link(eta_arr)
    d = family_link.mean_derivative(eta_arr)
    v = family_link.conditional_variance(mu, gaussian_resid_var)
    w = d * d / v
    if np.any(~np.isfinite(w)) or np.any(w <= 0):
        raise NumericalError("GLM weight is not positive and finite")
    if np.isscalar(eta) or np.ndim(eta) == 0:
        return float(w)
    return w


def attenuate_eta(x_beta: float, z_row, D, family_link: FamilyLink) -> float:
    """Attenuated linear predictor for one observation.

    log link:      x_beta + z D z^T / 2
    logit link:    x_beta * det(c * D z^T z + I)^{-1/2},  c = 16 sqrt(3)/(15 pi)
    identity link: x_beta unchanged

    ``z_row`` is the observation's random-effect design row and ``D`` the
    random-effect covariance (symmetric PSD). The logit determinant is
    evaluated as written; for PSD ``D`` it is >= 1, so the scaling is well
    defined.
    """
    z = np.atleast_1d(np.asarray(z_row, dtype=np.float64))
    Dm = np.atleast_2d(np.asarray(D, dtype=np.float64))
    if Dm.shape[0] != Dm.shape[1] or Dm.shape[0] != z.shape[0]:
        raise NumericalError("z_row length must match the dimension of D")
    if not np.allclose(Dm, Dm.T):
        raise NumericalError("random-effect covariance D must be symmetric")
    if Dm.shape[0] and np.linalg.eigvalsh(Dm).min() < -1e-10:
        raise NumericalError("random-effect covariance D must be positive semi-definite")
    if family_link.link == IDENTITY:
        return float(x_beta)
    if family_link.link == LOG:
        return float(x_beta + 0.5 * z @ Dm @ z)
    det = np.linalg.det(LOGIT_ATTENUATION_COEF * Dm @ np.outer(z, z) + np.eye(z.shape[0]))
    return float(x_beta * det ** -0.5)


def attenuate_from_variance(x_beta, random_var, family_link: FamilyLink):
    """Vectorized attenuation given the random part's variance z D z^T.

    Equivalent to :func:`attenuate_eta` because both link adjustments
    depend on (z, D) only through z D z^T: for the logit link
    det(c D z^T z + I) = 1 + c z D z^T by the matrix determinant lemma.
    """
    x_beta = np.asarray(x_beta, dtype=np.float64)
    v = np.asarray(random_var, dtype=np.float64)
    if np.any(v < -1e-12):
        raise NumericalError("random-effect variance must be non-negative")
    if family_link.link == IDENTITY:
        return x_beta
    if family_link.link == LOG:
        return x_beta + 0.5 * v
    return x_beta * (1.0 + LOGIT_ATTENUATION_COEF * v) ** -0.5


@dataclass(frozen=True)
class LinearIndicatorMean:
    """Treatment indicator plus period indicators, no intercept.

    The covariate row for an observation in period t with treatment status
    Delta is (Delta, 1{t=1}, ..., 1{t=T}), of length 1 + n_periods. The
    coefficients are optional: gaussian-identity designs do not need them.
    """

    n_periods: int
    treatment_effect: float | None = None
    period_effects: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.n_periods < 1:
            raise ConfigError("n_periods must be >= 1")
        if self.period_effects is not None and len(self.period_effects) != self.n_periods:
            raise ConfigError("period_effects must have one entry per period")

    @property
    def n_params(self) -> int:
        return 1 + self.n_periods

    def covariate_row(self, meta) -> np.ndarray:
        if meta.period is None:
            raise ValueError("linear indicator mean requires period metadata")
        row = np.zeros(self.n_params)
        row[0] = 1.0 if meta.treated else 0.0
        row[meta.period] = 1.0
        return row

    def linear_predictor(self, meta) -> float:
        if self.treatment_effect is None or self.period_effects is None:
            raise ConfigError("mean coefficients are required for non-gaussian families")
        eta = self.period_effects[meta.period - 1]
        if meta.treated:
            eta += self.treatment_effect
        return float(eta)


@dataclass(frozen=True)
class PointSourceMean:
    """Exponential decay response around a point source in the unit square.

    eta(a) = beta0 + beta1 * exp(-beta2 * |a - source|). The covariate row
    is the derivative of the mean in (beta0, beta1, beta2):

        (1, exp(-beta2 d), -beta1 d exp(-beta2 d)),  d = |a - source|.
    """

    beta0: float
    beta1: float
    beta2: float
    source: tuple[float, float]

    @property
    def n_params(self) -> int:
        return 3

    def _distance(self, meta) -> float:
        if meta.coord is None:
            raise ValueError("point source mean requires a spatial coordinate")
        return math.hypot(meta.coord[0] - self.source[0], meta.coord[1] - self.source[1])

    def covariate_row(self, meta) -> np.ndarray:
        d = self._distance(meta)
        decay = math.exp(-self.beta2 * d)
        return np.array([1.0, decay, -self.beta1 * d * decay])

    def linear_predictor(self, meta) -> float:
        return self.beta0 + self.beta1 * math.exp(-self.beta2 * self._distance(meta))


def derivative_row(mean_model, meta) -> np.ndarray:
    """Covariate/derivative row of the mean model for one observation."""
    return mean_model.covariate_row(meta)
