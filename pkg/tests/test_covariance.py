"""Covariance functions and marginal covariance assembly."""

import numpy as np
import pytest

from coptdesign.covariance import (
    CovarianceFunction,
    CovarianceSpec,
    ObservationMeta,
    build_sigma,
    cov_entry,
)
from coptdesign.errors import ConfigError
from coptdesign.families import FamilyLink

GAUSS = FamilyLink("gaussian", "identity")


def random_cluster_metas(rng, n, n_clusters=4, n_periods=3, cohort=False):
    metas = []
    for _ in range(n):
        k = int(rng.integers(n_clusters))
        metas.append(
            ObservationMeta(
                cluster=k,
                period=int(rng.integers(1, n_periods + 1)),
                individual=int(k * 10 + rng.integers(3)) if cohort else None,
                treated=bool(rng.integers(2)),
            )
        )
    return metas


def test_meta_requires_exactly_one_style():
    with pytest.raises(ConfigError):
        ObservationMeta()
    with pytest.raises(ConfigError):
        ObservationMeta(cluster=1, period=2, coord=(0.5, 0.5))
    with pytest.raises(ConfigError):
        ObservationMeta(cluster=1)  # period missing
    ObservationMeta(cluster=1, period=1)
    ObservationMeta(coord=(0.1, 0.2))


def test_spec_validation():
    with pytest.raises(ConfigError):
        CovarianceSpec.exchangeable(-0.1, 0.1)
    with pytest.raises(ConfigError):
        CovarianceSpec.ar1(0.2, 0.0)
    with pytest.raises(ConfigError):
        CovarianceSpec.ar1(0.2, 1.2)
    with pytest.raises(ConfigError):
        CovarianceSpec.exponential_spatial(0.2, 0.0)
    with pytest.raises(ConfigError):
        CovarianceSpec("nugget", 0.1)


def test_exchangeable_same_cell():
    spec = CovarianceSpec.exchangeable(0.25, 0.1)
    a = ObservationMeta(cluster=1, period=2)
    b = ObservationMeta(cluster=1, period=2)
    assert cov_entry(a, b, spec) == pytest.approx(0.0725)
    c = ObservationMeta(cluster=1, period=3)
    assert cov_entry(a, c, spec) == pytest.approx(0.0625)


def test_different_clusters_are_independent():
    for spec in (CovarianceSpec.exchangeable(0.25, 0.1), CovarianceSpec.ar1(0.25, 0.6)):
        a = ObservationMeta(cluster=1, period=2)
        b = ObservationMeta(cluster=2, period=2)
        assert cov_entry(a, b, spec) == 0.0


def test_ar1_lag_one():
    spec = CovarianceSpec.ar1(0.25, 0.6)
    a = ObservationMeta(cluster=1, period=2)
    b = ObservationMeta(cluster=1, period=3)
    assert cov_entry(a, b, spec) == pytest.approx(0.0375)
    assert cov_entry(a, a, spec) == pytest.approx(0.0625)


def test_cohort_term_added_for_same_individual():
    spec = CovarianceSpec.exchangeable(0.25, 0.1, cohort_sd=0.5)
    a = ObservationMeta(cluster=1, period=1, individual=7)
    b = ObservationMeta(cluster=1, period=2, individual=7)
    other = ObservationMeta(cluster=1, period=2, individual=8)
    assert cov_entry(a, b, spec) == pytest.approx(0.0625 + 0.25)
    assert cov_entry(a, other, spec) == pytest.approx(0.0625)


def test_spatial_entry():
    spec = CovarianceSpec.exponential_spatial(0.25, 0.25)
    a = ObservationMeta(coord=(0.0, 0.0))
    b = ObservationMeta(coord=(0.3, 0.4))  # distance 0.5
    assert cov_entry(a, b, spec) == pytest.approx(0.0625 * np.exp(-0.125))


def test_cov_entry_symmetry(rng):
    spec = CovarianceSpec.exchangeable(0.3, 0.2, cohort_sd=0.4)
    metas = random_cluster_metas(rng, 20, cohort=True)
    for _ in range(50):
        i, j = rng.integers(len(metas), size=2)
        assert cov_entry(metas[i], metas[j], spec) == cov_entry(metas[j], metas[i], spec)


def test_mismatched_metadata_kind_raises():
    spec = CovarianceSpec.exponential_spatial(0.2, 0.5)
    a = ObservationMeta(cluster=0, period=1)
    with pytest.raises(ConfigError):
        cov_entry(a, a, spec)
    spec2 = CovarianceSpec.exchangeable(0.2, 0.1)
    b = ObservationMeta(coord=(0.5, 0.5))
    with pytest.raises(ConfigError):
        cov_entry(b, b, spec2)


def test_block_matches_scalar_entries(rng):
    for spec, cohort in [
        (CovarianceSpec.exchangeable(0.3, 0.15, cohort_sd=0.2), True),
        (CovarianceSpec.ar1(0.4, 0.7), False),
    ]:
        metas = random_cluster_metas(rng, 12, cohort=cohort)
        fn = CovarianceFunction(metas, spec)
        block = fn.block(np.arange(12), np.arange(12))
        for i in range(12):
            for j in range(12):
                assert block[i, j] == pytest.approx(cov_entry(metas[i], metas[j], spec))


def test_build_sigma_single_observation():
    spec = CovarianceSpec.exchangeable(0.25, 0.1, resid_sd=1.0)
    metas = [ObservationMeta(cluster=0, period=1)]
    sigma = build_sigma(metas, spec, np.zeros(1), GAUSS)
    assert sigma.shape == (1, 1)
    assert sigma[0, 0] == pytest.approx(1.0725)


def test_build_sigma_independent_is_identity():
    spec = CovarianceSpec.exchangeable(0.0, 0.0, resid_sd=1.0)
    metas = [ObservationMeta(cluster=k, period=1) for k in range(6)]
    sigma = build_sigma(metas, spec, np.zeros(6), GAUSS)
    assert np.allclose(sigma, np.eye(6))


def test_build_sigma_symmetric_and_psd(rng):
    fl_binomial = FamilyLink("binomial", "logit")
    for _ in range(200):
        kind = rng.choice(["exchangeable", "ar1", "spatial"])
        n = int(rng.integers(2, 15))
        if kind == "spatial":
            spec = CovarianceSpec.exponential_spatial(
                float(rng.uniform(0.05, 0.6)), float(rng.uniform(0.2, 3.0))
            )
            metas = [ObservationMeta(coord=tuple(rng.uniform(0, 1, 2))) for _ in range(n)]
            fl = fl_binomial
            etas = rng.uniform(-1, 1, size=n)
        else:
            cohort = bool(rng.integers(2))
            if kind == "exchangeable":
                spec = CovarianceSpec.exchangeable(
                    float(rng.uniform(0.05, 0.6)),
                    float(rng.uniform(0.0, 0.4)),
                    cohort_sd=float(rng.uniform(0.0, 0.6)) if cohort else 0.0,
                    resid_sd=float(rng.uniform(0.5, 1.5)),
                )
            else:
                spec = CovarianceSpec.ar1(
                    float(rng.uniform(0.05, 0.6)),
                    float(rng.uniform(0.2, 1.0)),
                    cohort_sd=float(rng.uniform(0.0, 0.6)) if cohort else 0.0,
                    resid_sd=float(rng.uniform(0.5, 1.5)),
                )
            metas = random_cluster_metas(rng, n, cohort=cohort)
            fl = GAUSS
            etas = np.zeros(n)
        sigma = build_sigma(metas, spec, etas, fl)
        assert np.array_equal(sigma, sigma.T)
        assert np.linalg.eigvalsh(sigma).min() >= -1e-10


def test_build_sigma_rejects_misaligned_etas():
    spec = CovarianceSpec.exchangeable(0.25, 0.1, resid_sd=1.0)
    metas = [ObservationMeta(cluster=0, period=1)]
    with pytest.raises(ValueError):
        build_sigma(metas, spec, np.zeros(2), GAUSS)
