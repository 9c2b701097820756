"""Independent verification oracles.

Everything here deliberately avoids the incremental machinery of the main
modules: covariance matrices are rebuilt from an explicit random-effects
representation (Z, D), information matrices come from enumerating the full
outcome space or from Monte Carlo draws, and scores are central finite
differences of the marginal log-likelihood. Slow, simple, and sharing no
code path with what it checks.

* :func:`brute_force_best` enumerates every feasible selection of m units
  (one representative per duplicate-class multiset) and returns the global
  optimum of the design objective.
* :func:`exact_info_small` computes the exact information matrix of a tiny
  binomial design by summing score outer products over all 2^n outcomes,
  with the random effects integrated out by Gauss-Hermite quadrature.
* :func:`mc_variance` estimates the same quantity by simulation, matching
  the enumeration machinery, and reports a delta-method standard error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import block_diag, cho_factor, cho_solve
from scipy.special import gammaln, logsumexp

from .covariance import AR1, EXCHANGEABLE, EXPONENTIAL_SPATIAL, CovarianceSpec
from .design import DesignProblem, INFEASIBLE, is_infeasible
from .errors import InfeasibleError, NumericalError
from .families import BINOMIAL, FamilyLink, GAUSSIAN, POISSON
from .model import ModelSpec

MAX_ENUM_OBS = 12
MAX_RANDOM_EFFECT_DIM = 2
FD_REL_STEP = 1e-5


def random_effects_design(obs_meta, spec: CovarianceSpec):
    """Explicit (Z, D) representation of a covariance specification.

    Returns an indicator (or identity) matrix Z and a PSD matrix D such
    that Z D Z^T reproduces the covariance function entry for entry. Used
    by the exactness checks and by the sampling/quadrature oracles; the
    main assembly path never builds these.
    """
    obs_meta = list(obs_meta)
    n = len(obs_meta)
    cols = []
    d_blocks = []
    if spec.kind == EXPONENTIAL_SPATIAL:
        coords = np.array([m.coord for m in obs_meta])
        diff = coords[:, None, :] - coords[None, :, :]
        dist = np.sqrt((diff**2).sum(axis=2))
        return np.eye(n), spec.sigma1**2 * np.exp(-spec.decay * dist)
    clusters = sorted({m.cluster for m in obs_meta})
    if spec.kind == EXCHANGEABLE:
        if spec.sigma1 > 0:
            for k in clusters:
                cols.append([1.0 if m.cluster == k else 0.0 for m in obs_meta])
                d_blocks.append(np.array([[spec.sigma1**2]]))
        if spec.sigma2 > 0:
            cells = sorted({(m.cluster, m.period) for m in obs_meta})
            for cell in cells:
                cols.append(
                    [1.0 if (m.cluster, m.period) == cell else 0.0 for m in obs_meta]
                )
                d_blocks.append(np.array([[spec.sigma2**2]]))
    elif spec.kind == AR1:
        if spec.sigma1 > 0:
            for k in clusters:
                periods = sorted({m.period for m in obs_meta if m.cluster == k})
                for t in periods:
                    cols.append(
                        [1.0 if (m.cluster, m.period) == (k, t) else 0.0 for m in obs_meta]
                    )
                lags = np.abs(np.subtract.outer(periods, periods))
                d_blocks.append(spec.sigma1**2 * spec.decay**lags)
    if spec.cohort_sd > 0:
        individuals = sorted({m.individual for m in obs_meta if m.individual is not None})
        for ind in individuals:
            cols.append([1.0 if m.individual == ind else 0.0 for m in obs_meta])
            d_blocks.append(np.array([[spec.cohort_sd**2]]))
    if not cols:
        return np.zeros((n, 0)), np.zeros((0, 0))
    Z = np.column_stack(cols)
    D = block_diag(*d_blocks)
    return Z, D


def gaussian_marginal_covariance(obs_meta, spec: CovarianceSpec) -> np.ndarray:
    """Z D Z^T + sigma_e^2 I, the exact gaussian-identity marginal covariance."""
    if spec.resid_sd is None:
        raise NumericalError("gaussian marginal covariance requires resid_sd")
    Z, D = random_effects_design(obs_meta, spec)
    n = len(list(obs_meta))
    return Z @ D @ Z.T + spec.resid_sd**2 * np.eye(n)


@dataclass
class OracleModel:
    """Standalone description of a fitted design for the oracles."""

    family_link: FamilyLink
    beta: np.ndarray
    Z: np.ndarray
    D: np.ndarray
    resid_sd: float | None
    eta_of_beta: object  # callable beta -> linear predictor vector

    @property
    def n_obs(self) -> int:
        return self.Z.shape[0]

    @property
    def n_params(self) -> int:
        return self.beta.shape[0]


def oracle_model(obs_meta, spec: ModelSpec, beta=None) -> OracleModel:
    """Build an :class:`OracleModel` for a list of observations."""
    obs_meta = list(obs_meta)
    Z, D = random_effects_design(obs_meta, spec.covariance)
    if beta is None:
        if spec.family_link.is_gaussian_identity:
            beta = np.zeros(spec.n_params)
        else:
            mean = spec.mean
            if hasattr(mean, "treatment_effect"):
                beta = np.array([mean.treatment_effect, *mean.period_effects], dtype=float)
            else:
                beta = np.array([mean.beta0, mean.beta1, mean.beta2], dtype=float)
    beta = np.asarray(beta, dtype=np.float64)

    if hasattr(spec.mean, "treatment_effect"):
        rows = np.array([spec.mean.covariate_row(m) for m in obs_meta])

        def eta_of_beta(b, rows=rows):
            return rows @ b

    else:
        dists = np.array([spec.mean._distance(m) for m in obs_meta])

        def eta_of_beta(b, dists=dists):
            return b[0] + b[1] * np.exp(-b[2] * dists)

    return OracleModel(
        family_link=spec.family_link,
        beta=beta,
        Z=Z,
        D=D,
        resid_sd=spec.covariance.resid_sd,
        eta_of_beta=eta_of_beta,
    )


def _psd_factor(D, tol: float = 1e-12):
    """Column factor L with D = L L^T, dropping zero-variance directions."""
    if D.size == 0:
        return np.zeros((0, 0))
    lam, V = np.linalg.eigh(D)
    if lam.min() < -1e-10 * max(1.0, lam.max()):
        raise NumericalError("random-effect covariance D is not positive semi-definite")
    keep = lam > tol * max(1.0, abs(lam.max()))
    return V[:, keep] * np.sqrt(lam[keep])


def _gh_grid(dim: int, order: int):
    """Standard-normal Gauss-Hermite grid: points (nodes, dim), log-weights."""
    x, w = np.polynomial.hermite.hermgauss(order)
    pts = math.sqrt(2.0) * x
    logw = np.log(w) - 0.5 * math.log(math.pi)
    if dim == 0:
        return np.zeros((1, 0)), np.zeros(1)
    if dim == 1:
        return pts[:, None], logw
    g0, g1 = np.meshgrid(pts, pts, indexing="ij")
    lw0, lw1 = np.meshgrid(logw, logw, indexing="ij")
    return np.column_stack([g0.ravel(), g1.ravel()]), (lw0 + lw1).ravel()


def _discrete_logliks(model: OracleModel, Y: np.ndarray, beta, nodes, logw):
    """Marginal log-likelihood of each outcome row via quadrature over u."""
    eta = model.eta_of_beta(beta)[None, :] + nodes  # (nodes, n)
    if model.family_link.family == BINOMIAL:
        if model.family_link.link == "logit":
            logp = -np.log1p(np.exp(-eta))
            log1mp = -np.log1p(np.exp(eta))
        else:
            if np.any(eta >= 0):
                raise NumericalError(
                    "binomial-log mean reaches 1 at a quadrature node; "
                    "the enumeration oracle is undefined for this model"
                )
            logp = eta
            log1mp = np.log1p(-np.exp(eta))
        A = Y @ logp.T + (1.0 - Y) @ log1mp.T  # (K, nodes)
    elif model.family_link.family == POISSON:
        log_mu = eta
        A = Y @ log_mu.T - np.exp(log_mu).sum(axis=1)[None, :]
        A = A - gammaln(Y + 1.0).sum(axis=1)[:, None]
    else:
        raise NumericalError("quadrature likelihood is for discrete families only")
    return logsumexp(A + logw[None, :], axis=1)


def _fd_scores(loglik_fn, beta, n_rows):
    """Central finite-difference scores of a marginal log-likelihood."""
    p = beta.shape[0]
    S = np.empty((n_rows, p))
    for j in range(p):
        step = FD_REL_STEP * max(1.0, abs(beta[j]))
        up = beta.copy()
        up[j] += step
        dn = beta.copy()
        dn[j] -= step
        S[:, j] = (loglik_fn(up) - loglik_fn(dn)) / (2.0 * step)
    return S


def _node_offsets(model: OracleModel, quad_order: int):
    L = _psd_factor(model.D)
    q_eff = L.shape[1]
    if q_eff > MAX_RANDOM_EFFECT_DIM:
        raise InfeasibleError(
            f"effective random-effect dimension {q_eff} exceeds the oracle cap "
            f"of {MAX_RANDOM_EFFECT_DIM}"
        )
    grid, logw = _gh_grid(q_eff, quad_order)
    return (grid @ L.T) @ model.Z.T, logw  # (nodes, n) offsets to eta


def exact_info_small(model: OracleModel, quad_order: int = 25) -> np.ndarray:
    """Exact information matrix of a small binomial design via enumeration.

    Sums score outer products over all 2^n binary outcome vectors, each
    weighted by its marginal probability; scores are finite differences of
    the quadrature marginal log-likelihood.
    """
    if model.family_link.family != BINOMIAL:
        raise InfeasibleError("exact enumeration is defined for binomial outcomes only")
    n = model.n_obs
    if n > MAX_ENUM_OBS:
        raise InfeasibleError(f"enumeration supports at most {MAX_ENUM_OBS} observations")
    offsets, logw = _node_offsets(model, quad_order)
    Y = ((np.arange(2**n)[:, None] >> np.arange(n)[None, :]) & 1).astype(np.float64)
    probs = np.exp(_discrete_logliks(model, Y, model.beta, offsets, logw))
    S = _fd_scores(
        lambda b: _discrete_logliks(model, Y, b, offsets, logw), model.beta, Y.shape[0]
    )
    M = (probs[:, None] * S).T @ S
    return (M + M.T) / 2.0


def _gaussian_logliks(model: OracleModel, Y, beta, cho):
    resid = Y - model.eta_of_beta(beta)[None, :]
    solved = cho_solve(cho, resid.T, check_finite=False).T
    return -0.5 * np.einsum("ij,ij->i", resid, solved)  # constants cancel in differences


def mc_variance(model: OracleModel, c, n_iter: int, seed: int, quad_order: int = 25):
    """Monte Carlo estimate of the contrast variance c^T M^{-1} c.

    Each iteration samples random effects u ~ N(0, D) and outcomes y | u,
    and accumulates the outer product of the marginal score at y. Returns
    the variance estimate and a delta-method standard error.
    """
    if n_iter < 1000:
        raise InfeasibleError("mc_variance requires n_iter >= 1000")
    c = np.asarray(c, dtype=np.float64)
    rng = np.random.default_rng(seed)
    L = _psd_factor(model.D)
    u = rng.standard_normal((n_iter, L.shape[1])) @ L.T
    eta = model.eta_of_beta(model.beta)[None, :] + u @ model.Z.T
    family = model.family_link.family

    if family == GAUSSIAN:
        if model.resid_sd is None:
            raise NumericalError("gaussian sampling requires resid_sd")
        Y = eta + model.resid_sd * rng.standard_normal(eta.shape)
        sigma = model.Z @ model.D @ model.Z.T + model.resid_sd**2 * np.eye(model.n_obs)
        cho = cho_factor(sigma, check_finite=False)
        S = _fd_scores(lambda b: _gaussian_logliks(model, Y, b, cho), model.beta, n_iter)
        weights = np.full(n_iter, 1.0 / n_iter)
    else:
        mu = model.family_link.inverse_link(eta)
        if family == BINOMIAL:
            Y = (rng.random(eta.shape) < mu).astype(np.float64)
        else:
            Y = rng.poisson(mu).astype(np.float64)
        uniq, counts = np.unique(Y, axis=0, return_counts=True)
        offsets, logw = _node_offsets(model, quad_order)
        S = _fd_scores(
            lambda b: _discrete_logliks(model, uniq, b, offsets, logw),
            model.beta,
            uniq.shape[0],
        )
        weights = counts / n_iter

    M = (weights[:, None] * S).T @ S
    try:
        a = np.linalg.solve(M, c)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"Monte Carlo information matrix is singular: {exc}") from exc
    variance = float(c @ a)
    q = (S @ a) ** 2
    var_q = float(np.sum(weights * (q - variance) ** 2))
    return variance, math.sqrt(var_q / n_iter)


def _count_selections(sizes, m) -> int:
    """Number of per-class count vectors with the given total."""
    counts = np.zeros(m + 1, dtype=np.float64)
    counts[0] = 1
    for k in sizes:
        new = np.zeros_like(counts)
        for total in range(m + 1):
            if counts[total]:
                for take in range(0, min(k, m - total) + 1):
                    new[total + take] += counts[total]
        counts = new
    return int(counts[m])


def brute_force_best(problem: DesignProblem, m: int, budget: int = 1_000_000):
    """Global optimum over all feasible m-unit selections.

    Enumerates one representative per duplicate-class count vector. Raises
    when the enumeration would exceed ``budget`` designs.
    """
    sizes = [len(ids) for ids in problem.classes]
    if m > sum(sizes):
        raise InfeasibleError(f"m={m} exceeds the number of available units")
    total = _count_selections(sizes, m)
    if total > budget:
        raise InfeasibleError(
            f"brute force would enumerate {total} designs (> {budget}); "
            "shrink the instance or raise the budget"
        )
    best_value = INFEASIBLE
    best_ids = None
    counts = [0] * len(sizes)

    def recurse(class_idx, remaining):
        nonlocal best_value, best_ids
        if class_idx == len(sizes):
            if remaining:
                return
            ids = []
            for k, cnt in enumerate(counts):
                ids.extend(problem.classes[k][:cnt])
            value = problem.value_of_ids(ids)
            if value < best_value:
                best_value = value
                best_ids = ids
            return
        max_take = min(sizes[class_idx], remaining)
        # Leave enough capacity in the remaining classes to reach m.
        tail = sum(sizes[class_idx + 1 :])
        for take in range(max(0, remaining - tail), max_take + 1):
            counts[class_idx] = take
            recurse(class_idx + 1, remaining - take)
        counts[class_idx] = 0

    recurse(0, m)
    if best_ids is None or is_infeasible(best_value):
        raise InfeasibleError("every feasible selection is degenerate")
    return sorted(best_ids), best_value
