"""Shared fixtures and random problem generators for the test suite."""

import numpy as np
import pytest

import coptdesign as cd
from coptdesign.errors import EstimabilityError


class InterceptMean:
    """Single-column mean model (intercept only), for iid textbook cases."""

    n_params = 1
    treatment_effect = 0.0
    period_effects = (0.0,)

    def covariate_row(self, meta):
        return np.array([1.0])

    def linear_predictor(self, meta):
        return 0.0


def iid_problem(n_units=8, resid_sd=1.0):
    """Independent unit-variance observations with X = [1] and c = (1)."""
    pattern = np.zeros((n_units, 1), dtype=int)
    space = cd.cluster_trial_space(n_units, 1, 1, pattern, unit="observation")
    spec = cd.ModelSpec(
        family_link=cd.FamilyLink("gaussian", "identity"),
        mean=InterceptMean(),
        covariance=cd.CovarianceSpec.exchangeable(0.0, 0.0, resid_sd=resid_sd),
    )
    return cd.DesignProblem(space, spec, np.array([1.0]))


def random_cluster_spec(rng, kind=None, family="gaussian", cohort=False, n_periods=2,
                        attenuate=False):
    kind = kind or ("exchangeable" if rng.random() < 0.5 else "ar1")
    cohort_sd = float(rng.uniform(0.2, 0.6)) if cohort else 0.0
    resid_sd = 1.0 if family == "gaussian" else None
    if kind == "exchangeable":
        cov = cd.CovarianceSpec.exchangeable(
            float(rng.uniform(0.1, 0.5)),
            float(rng.uniform(0.05, 0.3)),
            cohort_sd=cohort_sd,
            resid_sd=resid_sd,
        )
    else:
        cov = cd.CovarianceSpec.ar1(
            float(rng.uniform(0.1, 0.5)),
            float(rng.uniform(0.3, 0.9)),
            cohort_sd=cohort_sd,
            resid_sd=resid_sd,
        )
    if family == "gaussian":
        fl = cd.FamilyLink("gaussian", "identity")
        mean = cd.LinearIndicatorMean(n_periods=n_periods)
    else:
        fl = cd.FamilyLink("binomial", "logit")
        mean = cd.LinearIndicatorMean(
            n_periods=n_periods,
            treatment_effect=float(rng.uniform(-0.5, 0.5)),
            period_effects=tuple(float(x) for x in rng.uniform(-0.5, 0.5, size=n_periods)),
        )
    return cd.ModelSpec(family_link=fl, mean=mean, covariance=cov, attenuate=attenuate)


def random_cluster_problem(rng, n_clusters=5, n_periods=2, per_cell=1, unit="cell",
                           kind=None, family="gaussian", cohort=False, attenuate=False):
    """Random estimable cluster-trial problem with c targeting the treatment effect."""
    for _ in range(100):
        pattern = rng.integers(0, 2, size=(n_clusters, n_periods))
        if pattern.min() == pattern.max():
            continue
        spec = random_cluster_spec(
            rng, kind=kind, family=family, cohort=cohort, n_periods=n_periods,
            attenuate=attenuate,
        )
        space = cd.cluster_trial_space(
            n_clusters, n_periods, per_cell, pattern, cohort=cohort, unit=unit
        )
        c = np.zeros(1 + n_periods)
        c[0] = 1.0
        try:
            return cd.DesignProblem(space, spec, c)
        except EstimabilityError:
            continue
    raise RuntimeError("failed to draw an estimable random cluster problem")


def random_spatial_problem(rng, grid=(4, 4), family="poisson"):
    space = cd.spatial_lattice_space(grid)
    mean = cd.PointSourceMean(
        beta0=1.0, beta1=float(np.log(2.0)), beta2=4.0, source=(0.5, 0.5)
    )
    if family == "poisson":
        fl = cd.FamilyLink("poisson", "log")
        resid_sd = None
    else:
        fl = cd.FamilyLink("gaussian", "identity")
        resid_sd = 1.0
    cov = cd.CovarianceSpec.exponential_spatial(
        float(rng.uniform(0.1, 0.5)), float(rng.uniform(0.3, 2.0)), resid_sd=resid_sd
    )
    spec = cd.ModelSpec(family_link=fl, mean=mean, covariance=cov)
    return cd.DesignProblem(space, spec, np.array([0.0, 1.0, 0.1]))


def sample_feasible_ids(rng, problem, size, value_cap=1e6, attempts=200):
    """Random unit selection with a finite, moderate objective."""
    all_ids = np.array([u.id for u in problem.space.units])
    for _ in range(attempts):
        ids = sorted(int(i) for i in rng.choice(all_ids, size=size, replace=False))
        value = problem.value_of_ids(ids)
        if not cd.is_infeasible(value) and value < value_cap:
            return ids, value
    return None, None


def sample_nested_triple(rng, problem, attempts=200):
    """(d_small, d_big, extra_unit) with every relevant objective finite."""
    J = problem.n_units
    p = problem.n_params
    all_ids = [u.id for u in problem.space.units]
    for _ in range(attempts):
        size_big = int(rng.integers(min(p + 1, J - 1), J))
        big, g_big = sample_feasible_ids(rng, problem, size_big, attempts=20)
        if big is None:
            continue
        size_small = int(rng.integers(p, size_big))
        small = sorted(int(i) for i in rng.choice(big, size=size_small, replace=False))
        g_small = problem.value_of_ids(small)
        if cd.is_infeasible(g_small) or g_small > 1e6:
            continue
        outside = [i for i in all_ids if i not in big]
        extra = int(rng.choice(outside))
        g_big_e = problem.value_of_ids(big + [extra])
        g_small_e = problem.value_of_ids(small + [extra])
        if cd.is_infeasible(g_big_e) or cd.is_infeasible(g_small_e):
            continue
        return small, big, extra, (g_small, g_big, g_small_e, g_big_e)
    return None


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)
