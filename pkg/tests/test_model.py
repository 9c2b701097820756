"""Model specification and workspace assembly."""

import numpy as np
import pytest

from coptdesign.covariance import CovarianceSpec, ObservationMeta
from coptdesign.errors import ConfigError
from coptdesign.families import (
    LOGIT_ATTENUATION_COEF,
    FamilyLink,
    LinearIndicatorMean,
    PointSourceMean,
)
from coptdesign.model import ModelSpec, ModelWorkspace

from conftest import random_cluster_problem


def binomial_spec(attenuate=False, sigma1=0.3, sigma2=0.2):
    return ModelSpec(
        family_link=FamilyLink("binomial", "logit"),
        mean=LinearIndicatorMean(
            n_periods=2, treatment_effect=0.4, period_effects=(-0.2, 0.1)
        ),
        covariance=CovarianceSpec.exchangeable(sigma1, sigma2),
        attenuate=attenuate,
    )


def trial_metas():
    return [
        ObservationMeta(cluster=0, period=1, treated=False),
        ObservationMeta(cluster=0, period=2, treated=True),
        ObservationMeta(cluster=1, period=1, treated=True),
    ]


def test_gaussian_requires_residual_sd():
    with pytest.raises(ConfigError):
        ModelSpec(
            family_link=FamilyLink("gaussian", "identity"),
            mean=LinearIndicatorMean(n_periods=2),
            covariance=CovarianceSpec.exchangeable(0.2, 0.1),
        )


def test_design_matrix_rows():
    ws = ModelWorkspace(trial_metas(), binomial_spec())
    assert ws.X.shape == (3, 3)
    assert np.allclose(ws.X[0], [0, 1, 0])
    assert np.allclose(ws.X[1], [1, 0, 1])
    assert np.allclose(ws.X[2], [1, 1, 0])


def test_attenuation_scales_eta_and_weights():
    plain = ModelWorkspace(trial_metas(), binomial_spec(attenuate=False))
    att = ModelWorkspace(trial_metas(), binomial_spec(attenuate=True))
    v = 0.3**2 + 0.2**2  # random-effect variance of every observation
    factor = (1.0 + LOGIT_ATTENUATION_COEF * v) ** -0.5
    assert np.allclose(att.eta, plain.eta * factor)
    # the attenuated predictor feeds the weights
    mu = 1 / (1 + np.exp(-att.eta))
    assert np.allclose(att.w_inv, 1.0 / (mu * (1 - mu)))


def test_gaussian_weights_are_constant():
    spec = ModelSpec(
        family_link=FamilyLink("gaussian", "identity"),
        mean=LinearIndicatorMean(n_periods=2),
        covariance=CovarianceSpec.exchangeable(0.3, 0.2, resid_sd=2.0),
    )
    ws = ModelWorkspace(trial_metas(), spec)
    assert np.allclose(ws.w_inv, 4.0)


def test_sigma_block_consistency(rng):
    problem = random_cluster_problem(rng, per_cell=2, unit="cell")
    ws = problem.workspaces[0]
    n = ws.n_obs
    full = ws.sigma(range(n))
    assert np.allclose(full, full.T)
    ix_a = [0, 3, 5]
    ix_b = [1, 3]
    block = ws.sigma_block(ix_a, ix_b)
    for i, a in enumerate(ix_a):
        for j, b in enumerate(ix_b):
            assert block[i, j] == pytest.approx(full[a, b])
    assert np.allclose(ws.sigma_diag(range(n)), np.diag(full))


def test_full_information_matches_dense_solve(rng):
    for unit in ("observation", "cell"):
        problem = random_cluster_problem(rng, per_cell=2, unit=unit)
        ws = problem.workspaces[0]
        n = ws.n_obs
        ref = ws.X.T @ np.linalg.solve(ws.sigma(range(n)), ws.X)
        assert np.abs(ws.full_information() - ref).max() < 1e-9 * np.abs(ref).max()


def test_independence_components_split_by_cluster(rng):
    problem = random_cluster_problem(rng, n_clusters=4, per_cell=2, unit="cell")
    comps = problem.workspaces[0].independence_components()
    assert len(comps) == 4
    spec = ModelSpec(
        family_link=FamilyLink("gaussian", "identity"),
        mean=LinearIndicatorMean(n_periods=2),
        covariance=CovarianceSpec.exchangeable(0.0, 0.0, resid_sd=1.0),
    )
    ws = ModelWorkspace(trial_metas(), spec)
    assert len(ws.independence_components()) == 3  # iid: singletons
