import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from mfvi.base_dist import BaseDistribution, DomainError, gaussian, laplace, student_t
from mfvi.rng import child_rng, make_rng

# Frozen from 40-digit quadrature of the unit-variance t_8 density.
T8_ENTROPY = 1.4036572365991183


def test_gaussian_sample_moments():
    u = gaussian().sample(make_rng(1), 10**6)
    assert abs(u.mean()) <= 0.004
    assert 0.99 <= u.var() <= 1.01


def test_student_t_sample_variance():
    u = student_t(8).sample(make_rng(2), 10**6)
    assert 0.98 <= u.var() <= 1.02


def test_laplace_mean_abs():
    u = laplace().sample(make_rng(3), 10**6)
    assert abs(np.abs(u).mean() - 1 / math.sqrt(2)) <= 0.01 / math.sqrt(2)


def test_sample_moments_within_four_stderr(dist):
    u = dist.sample(make_rng(4), 10**6)
    for power, expected in [(1, 0.0), (2, 1.0), (3, 0.0), (4, dist.r4)]:
        x = u**power
        se = x.std(ddof=1) / math.sqrt(x.size)
        assert abs(x.mean() - expected) <= 4 * se, (power, x.mean(), expected)


@pytest.mark.parametrize(
    "d, r4",
    [(gaussian(), 3.0), (laplace(), 6.0), (student_t(8), 4.5), (student_t(10), 3 * 8 / 6)],
)
def test_kurtosis_values(d, r4):
    assert d.kurtosis() == pytest.approx(r4, rel=1e-12)


@given(st.floats(min_value=4.05, max_value=200))
def test_student_t_kurtosis_formula(nu):
    d = student_t(nu)
    assert d.r4 == pytest.approx(3 * (nu - 2) / (nu - 4), rel=1e-9)
    assert d.r4 >= 1


@pytest.mark.parametrize("nu", [4.0, 3.0, 2.5])
def test_student_t_rejects_small_nu(nu):
    with pytest.raises(DomainError, match="nu > 4"):
        student_t(nu)


def test_mgf_values():
    g = gaussian()
    assert g.mgf_usq(0.25) == pytest.approx(math.sqrt(2), rel=1e-14)
    assert g.mgf_usq(0.5) == math.inf
    assert student_t(8).mgf_usq(0.01) == math.inf
    assert laplace().mgf_usq(0.1) == math.inf
    with pytest.raises(DomainError):
        g.mgf_usq(0.0)


@given(st.floats(min_value=1e-6, max_value=0.499), st.floats(min_value=1e-6, max_value=0.499))
def test_gaussian_mgf_increasing(a, b):
    lo, hi = sorted((a, b))
    g = gaussian()
    assert 1.0 <= g.mgf_usq(lo) <= g.mgf_usq(hi)


def test_moment_values():
    g = gaussian()
    assert g.moment_usq(2) == 3.0
    assert g.moment_usq(3) == 15.0
    assert student_t(8).moment_usq(4) == math.inf
    assert student_t(8).moment_usq(3) < math.inf


@given(st.sampled_from([gaussian(), laplace(), student_t(9), student_t(30)]), st.integers(1, 6))
def test_moments_at_least_one(dist, k):
    m = dist.moment_usq(k)
    assert m >= 1.0 - 1e-12


def test_moments_against_quadrature(dist):
    for k in (1, 2, 3):
        m = dist.moment_usq(k)
        if math.isinf(m):
            continue
        val = 2 * integrate.quad(lambda x: x ** (2 * k) * dist.pdf(x), 0, np.inf, epsrel=1e-11)[0]
        assert m == pytest.approx(val, rel=1e-7)


def test_entropy_values():
    assert gaussian().entropy() == pytest.approx(1.418938533204673, rel=1e-14)
    assert laplace().entropy() == pytest.approx(1.3465735902799727, rel=1e-14)
    assert student_t(8).entropy() == pytest.approx(T8_ENTROPY, rel=1e-12)


def test_entropy_against_quadrature(dist):
    f = lambda x: -dist.pdf(x) * math.log(dist.pdf(x)) if dist.pdf(x) > 0 else 0.0
    val = 2 * integrate.quad(f, 0, 60, limit=400, epsrel=1e-11)[0]
    assert dist.entropy() == pytest.approx(val, rel=1e-8)


def test_survival_and_cos_mean_against_quadrature(dist):
    for s in (0.1, 1.0, 4.0):
        root = math.sqrt(s)
        val = 2 * integrate.quad(dist.pdf, root, np.inf)[0]
        assert dist.usq_survival(s) == pytest.approx(val, rel=1e-8)
    for c in (0.3, 1.0, 2.5):
        val = 2 * integrate.quad(lambda x: math.cos(c * x) * dist.pdf(x), 0, np.inf, limit=400)[0]
        assert dist.cos_mean(c) == pytest.approx(val, rel=1e-7, abs=1e-10)
        fd = (dist.cos_mean(c + 1e-5) - dist.cos_mean(c - 1e-5)) / 2e-5
        assert dist.cos_mean_deriv(c) == pytest.approx(fd, rel=1e-5, abs=1e-9)


@pytest.mark.parametrize("text", ["gaussian", "student-t:8", "laplace", "student-t:6.5"])
def test_parse_round_trip(text):
    assert str(BaseDistribution.parse(text)) == text


@pytest.mark.parametrize("text", ["cauchy", "student-t", "student-t:x", "student-t:3"])
def test_parse_rejects(text):
    with pytest.raises(ValueError):
        BaseDistribution.parse(text)


def test_streams_reproducible_and_distinct():
    a = make_rng(7, 1).standard_normal(5)
    b = make_rng(7, 1).standard_normal(5)
    c = make_rng(7, 2).standard_normal(5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    r1, r2 = make_rng(7), make_rng(7)
    assert np.array_equal(child_rng(r1).random(3), child_rng(r2).random(3))
