"""Rank-1 inverse update kernels against direct inversion."""

import numpy as np
import pytest

from coptdesign.kernels import _pure

BACKENDS = {"pure": _pure}
try:
    from coptdesign.kernels import _fast

    BACKENDS["fast"] = _fast
except ImportError:
    pass


@pytest.fixture(params=sorted(BACKENDS), ids=sorted(BACKENDS))
def impl(request):
    return BACKENDS[request.param]


def random_spd(rng, n):
    a = rng.standard_normal((n, n))
    return a @ a.T + n * np.eye(n)


def test_downdate_identity(impl):
    for pos in (0, 1):
        out = impl.downdate_inverse(np.eye(2), pos)
        assert out.shape == (1, 1)
        assert out[0, 0] == pytest.approx(1.0)


def test_downdate_matches_direct_inverse(impl, rng):
    sigma = random_spd(rng, 5)
    sinv = np.linalg.inv(sigma)
    got = impl.downdate_inverse(sinv, 2)
    ref = np.linalg.inv(np.delete(np.delete(sigma, 2, axis=0), 2, axis=1))
    assert np.abs(got - ref).max() < 1e-10 * np.abs(ref).max()


def test_extend_uncorrelated_is_block_diagonal(impl, rng):
    sigma = random_spd(rng, 4)
    sinv = np.linalg.inv(sigma)
    out = impl.extend_inverse(sinv, np.zeros(4), 2.5)
    assert np.allclose(out[:4, :4], sinv)
    assert np.allclose(out[4, :4], 0.0)
    assert out[4, 4] == pytest.approx(1.0 / 2.5)


def test_extend_one_by_one(impl):
    out = impl.extend_inverse(np.array([[1.0]]), np.array([0.5]), 1.0)
    ref = np.linalg.inv(np.array([[1.0, 0.5], [0.5, 1.0]]))
    assert np.abs(out - ref).max() < 1e-12


def test_round_trip_recovers_inverse(impl, rng):
    sigma = random_spd(rng, 6)
    sinv = np.linalg.inv(sigma)
    f = sigma[:, 3].copy()
    f = np.delete(f, 3)
    h = sigma[3, 3]
    down = impl.downdate_inverse(sinv, 3)
    back = impl.extend_inverse(down, f, h)
    # The observation returns at the last position; permute the reference.
    perm = [0, 1, 2, 4, 5, 3]
    ref = sinv[np.ix_(perm, perm)]
    assert np.abs(back - ref).max() < 1e-8


def test_random_updates_match_direct_inversion(impl, rng):
    for _ in range(60):
        n = int(rng.integers(2, 30))
        sigma = random_spd(rng, n)
        sinv = np.linalg.inv(sigma)
        pos = int(rng.integers(n))
        got = impl.downdate_inverse(sinv, pos)
        ref = np.linalg.inv(np.delete(np.delete(sigma, pos, axis=0), pos, axis=1))
        assert np.abs(got - ref).max() <= 1e-8 * max(1.0, np.abs(ref).max())

        f = rng.standard_normal(n) * 0.3
        h = float(rng.uniform(0.5, 2.0)) + float(f @ sinv @ f)
        got2 = impl.extend_inverse(sinv, f, h)
        big = np.block([[sigma, f[:, None]], [f[None, :], np.array([[h]])]])
        ref2 = np.linalg.inv(big)
        assert np.abs(got2 - ref2).max() <= 1e-8 * max(1.0, np.abs(ref2).max())


def test_singular_pivot_raises(impl):
    sinv = np.array([[1.0, 0.0], [0.0, 0.0]])
    with pytest.raises(ValueError):
        impl.downdate_inverse(sinv, 1)


def test_extend_rejects_bad_variance(impl):
    with pytest.raises(ValueError):
        impl.extend_inverse(np.eye(2), np.zeros(2), 0.0)
    with pytest.raises(ValueError):
        impl.extend_inverse(np.eye(2), np.zeros(2), -1.0)


def test_extend_rejects_singular_schur(impl):
    # New observation perfectly predicted by the old one: s = h - f^2 = 0.
    with pytest.raises(ValueError):
        impl.extend_inverse(np.array([[1.0]]), np.array([1.0]), 1.0)


@pytest.mark.skipif(len(BACKENDS) < 2, reason="compiled backend not built")
def test_backends_agree(rng):
    for _ in range(20):
        n = int(rng.integers(2, 20))
        sigma = random_spd(rng, n)
        sinv = np.linalg.inv(sigma)
        pos = int(rng.integers(n))
        a = BACKENDS["pure"].downdate_inverse(sinv, pos)
        b = BACKENDS["fast"].downdate_inverse(sinv, pos)
        assert np.abs(a - b).max() < 1e-13
        f = rng.standard_normal(n) * 0.2
        h = 1.0 + float(f @ sinv @ f)
        a2 = BACKENDS["pure"].extend_inverse(sinv, f, h)
        b2 = BACKENDS["fast"].extend_inverse(sinv, f, h)
        assert np.abs(a2 - b2).max() < 1e-13
