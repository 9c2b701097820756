"""Covariance functions over observation metadata and marginal covariance assembly.

Three covariance kinds are supported:

* ``exchangeable``: cluster and cluster-period random effects. Same cluster
  and period -> sigma1^2 + sigma2^2; same cluster, different period ->
  sigma1^2; different clusters -> 0.
* ``ar1``: autoregressive decay over periods within a cluster,
  sigma1^2 * decay^|t - t'|; different clusters -> 0.
* ``exponential_spatial``: sigma1^2 * exp(-decay * |a - a'|) over planar
  coordinates.

Cohort sampling adds ``cohort_sd^2`` whenever two observations come from
the same individual. All scale parameters are standard deviations and are
squared inside the formulas. The marginal covariance of a subset of
observations is the covariance-function matrix plus ``1/W`` on the
diagonal, where ``W`` is the GLM iterated weight (for gaussian-identity
this adds exactly the residual variance, making the assembly exact).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .families import FamilyLink, glm_weight

EXCHANGEABLE = "exchangeable"
AR1 = "ar1"
EXPONENTIAL_SPATIAL = "exponential_spatial"

_KINDS = (EXCHANGEABLE, AR1, EXPONENTIAL_SPATIAL)


@dataclass(frozen=True)
class ObservationMeta:
    """Metadata attached to one potential observation.

    Cluster-trial observations carry (cluster, period) and, for cohort
    designs, an individual id; spatial observations carry a coordinate in
    the unit square. Exactly one of the two styles must be populated.
    """

    cluster: int | None = None
    period: int | None = None
    individual: int | None = None
    coord: tuple[float, float] | None = None
    treated: bool = False

    def __post_init__(self):
        clustered = self.cluster is not None and self.period is not None
        spatial = self.coord is not None
        if clustered == spatial:
            raise ConfigError(
                "observation metadata must carry either (cluster, period) or coord"
            )
        if spatial and self.individual is not None:
            raise ConfigError("spatial observations cannot carry an individual id")


@dataclass(frozen=True)
class CovarianceSpec:
    """Parameters of one covariance function (scales given as SDs)."""

    kind: str
    sigma1: float
    sigma2: float = 0.0
    decay: float = 0.0
    cohort_sd: float = 0.0
    resid_sd: float | None = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ConfigError(f"unknown covariance kind {self.kind!r}")
        for name in ("sigma1", "sigma2", "cohort_sd"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.resid_sd is not None and self.resid_sd <= 0:
            raise ConfigError("resid_sd must be positive when given")
        if self.kind == AR1 and not (0.0 < self.decay <= 1.0):
            raise ConfigError("ar1 decay must lie in (0, 1]")
        if self.kind == EXPONENTIAL_SPATIAL:
            if self.decay <= 0:
                raise ConfigError("spatial decay must be positive")
            if self.cohort_sd:
                raise ConfigError("cohort effects are not defined for spatial covariance")

    @classmethod
    def exchangeable(cls, sigma1, sigma2, cohort_sd=0.0, resid_sd=None):
        return cls(EXCHANGEABLE, sigma1, sigma2=sigma2, cohort_sd=cohort_sd, resid_sd=resid_sd)

    @classmethod
    def ar1(cls, sigma1, decay, cohort_sd=0.0, resid_sd=None):
        return cls(AR1, sigma1, decay=decay, cohort_sd=cohort_sd, resid_sd=resid_sd)

    @classmethod
    def exponential_spatial(cls, sigma1, decay, resid_sd=None):
        return cls(EXPONENTIAL_SPATIAL, sigma1, decay=decay, resid_sd=resid_sd)

    @property
    def resid_var(self) -> float | None:
        return None if self.resid_sd is None else self.resid_sd**2


def cov_entry(a: ObservationMeta, b: ObservationMeta, spec: CovarianceSpec) -> float:
    """Covariance of the random parts of two observations."""
    if spec.kind == EXPONENTIAL_SPATIAL:
        if a.coord is None or b.coord is None:
            raise ConfigError("spatial covariance requires coordinate metadata")
        dist = float(np.hypot(a.coord[0] - b.coord[0], a.coord[1] - b.coord[1]))
        return spec.sigma1**2 * float(np.exp(-spec.decay * dist))
    if a.cluster is None or b.cluster is None:
        raise ConfigError("clustered covariance requires (cluster, period) metadata")
    out = 0.0
    if a.cluster == b.cluster:
        if spec.kind == EXCHANGEABLE:
            out = spec.sigma1**2
            if a.period == b.period:
                out += spec.sigma2**2
        else:
            out = spec.sigma1**2 * spec.decay ** abs(a.period - b.period)
    if spec.cohort_sd and a.individual is not None and a.individual == b.individual:
        out += spec.cohort_sd**2
    return out


def _meta_arrays(obs):
    cluster = np.array([-1 if o.cluster is None else o.cluster for o in obs])
    period = np.array([-1 if o.period is None else o.period for o in obs])
    individual = np.array([-1 if o.individual is None else o.individual for o in obs])
    coords = np.array([(np.nan, np.nan) if o.coord is None else o.coord for o in obs])
    return cluster, period, individual, coords


class CovarianceFunction:
    """Vectorized covariance-function evaluation over a fixed metadata list."""

    def __init__(self, obs, spec: CovarianceSpec):
        self.spec = spec
        self.obs = list(obs)
        self._cluster, self._period, self._individual, self._coords = _meta_arrays(self.obs)
        if spec.kind == EXPONENTIAL_SPATIAL:
            if np.isnan(self._coords).any():
                raise ConfigError("spatial covariance requires coordinate metadata")
        elif (self._cluster < 0).any() or (self._period < 0).any():
            raise ConfigError("clustered covariance requires (cluster, period) metadata")

    def block(self, ix_a, ix_b) -> np.ndarray:
        """Covariance-function matrix between two index sets (no weight term)."""
        spec = self.spec
        ix_a = np.asarray(ix_a, dtype=np.intp)
        ix_b = np.asarray(ix_b, dtype=np.intp)
        if spec.kind == EXPONENTIAL_SPATIAL:
            diff = self._coords[ix_a][:, None, :] - self._coords[ix_b][None, :, :]
            dist = np.sqrt((diff**2).sum(axis=2))
            out = spec.sigma1**2 * np.exp(-spec.decay * dist)
        else:
            same_cluster = self._cluster[ix_a][:, None] == self._cluster[ix_b][None, :]
            if spec.kind == EXCHANGEABLE:
                same_cell = same_cluster & (
                    self._period[ix_a][:, None] == self._period[ix_b][None, :]
                )
                out = spec.sigma1**2 * same_cluster + spec.sigma2**2 * same_cell
            else:
                lag = np.abs(self._period[ix_a][:, None] - self._period[ix_b][None, :])
                out = np.where(same_cluster, spec.sigma1**2 * spec.decay ** lag, 0.0)
            if spec.cohort_sd:
                ind_a = self._individual[ix_a]
                ind_b = self._individual[ix_b]
                same_ind = (ind_a[:, None] == ind_b[None, :]) & (ind_a[:, None] >= 0)
                out = out + spec.cohort_sd**2 * same_ind
        return np.asarray(out, dtype=np.float64)


def build_sigma(obs, spec: CovarianceSpec, etas, family_link: FamilyLink) -> np.ndarray:
    """Marginal covariance of a list of observations.

    Off-diagonal entries come from the covariance function; the diagonal
    additionally carries ``1/glm_weight`` evaluated at the supplied linear
    predictors (attenuated or not, per the caller).
    """
    obs = list(obs)
    if not obs:
        raise ValueError("at least one observation is required")
    etas = np.asarray(etas, dtype=np.float64)
    if etas.shape != (len(obs),):
        raise ValueError("etas must align with the observation list")
    fn = CovarianceFunction(obs, spec)
    ix = np.arange(len(obs))
    sigma = fn.block(ix, ix)
    w = glm_weight(etas, family_link, gaussian_resid_var=spec.resid_var)
    sigma[np.diag_indices_from(sigma)] += 1.0 / np.atleast_1d(w)
    if not np.all(np.isfinite(sigma)):
        raise ValueError("covariance matrix has non-finite entries")
    if np.any(np.diag(sigma) <= 0):
        raise ValueError("covariance matrix has a non-positive diagonal entry")
    return sigma


@dataclass(frozen=True)
class CovarianceRelevance:
    """Which metadata fields the covariance function can actually see."""

    cluster: bool
    period: bool
    individual: bool
    coord: bool


def covariance_relevance(spec: CovarianceSpec) -> CovarianceRelevance:
    """Relevance flags for duplicate detection.

    Fields that cannot influence any covariance value under ``spec`` (for
    example the cluster id when all cluster-level variances are zero) are
    flagged irrelevant, so that exchangeable copies collapse into one
    duplicate class. Mean-model relevance is handled separately via the
    covariate row.
    """
    if spec.kind == EXPONENTIAL_SPATIAL:
        return CovarianceRelevance(False, False, False, spec.sigma1 > 0)
    if spec.kind == EXCHANGEABLE:
        period_relevant = spec.sigma2 > 0
    else:
        period_relevant = spec.sigma1 > 0 and spec.decay < 1.0
    return CovarianceRelevance(
        cluster=spec.sigma1 > 0 or spec.sigma2 > 0,
        period=period_relevant,
        individual=spec.cohort_sd > 0,
        coord=False,
    )


def covariance_signature(meta: ObservationMeta, spec: CovarianceSpec) -> tuple:
    """Covariance-relevant part of one observation's metadata."""
    rel = covariance_relevance(spec)
    return (
        meta.cluster if rel.cluster else None,
        meta.period if rel.period else None,
        meta.individual if rel.individual else None,
        meta.coord if rel.coord else None,
    )
