import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mfvi.base_dist import DomainError, gaussian
from mfvi.family import FullRankParams, MeanFieldParams
from mfvi.grad_estimator import analytic_grad_f, reparam_grad, reparam_grad_batch
from mfvi.rng import make_rng
from mfvi.targets import PERTURBED, QUADRATIC, make_target, quadratic


def test_hand_example():
    s = reparam_grad(quadratic([2.0]), MeanFieldParams([1.0], [0.5]), np.array([2.0]))
    assert s.g_m.tolist() == [4.0] and s.g_c.tolist() == [8.0]


def test_zero_noise():
    t = quadratic(np.array([2.0, 3.0]), np.array([1.0, 0.0]))
    p = MeanFieldParams([0.5, 2.0], [1.0, 1.0])
    s = reparam_grad(t, p, np.zeros(2))
    assert np.array_equal(s.g_m, t.grad(p.m)) and np.all(s.g_c == 0)


def test_full_rank_scale_gradient_is_lower_triangular():
    t = make_target(QUADRATIC, 4, kappa=5, hessian="rotated-logspace", seed=0)
    p = FullRankParams(np.ones(4), np.tril(np.ones((4, 4))))
    u = make_rng(0).standard_normal(4)
    s = reparam_grad(t, p, u)
    g = t.grad(p.c_lower @ u + p.m)
    assert np.array_equal(s.g_c, np.tril(np.outer(g, u)))


def test_shape_mismatch():
    with pytest.raises(DomainError):
        reparam_grad(quadratic(np.ones(2)), MeanFieldParams([0, 0], [1, 1]), np.zeros(3))


@given(st.integers(1, 6), st.integers(0, 2**31))
def test_jacobian_split_per_sample(d, seed):
    rng = make_rng(seed)
    t = make_target(PERTURBED, d, kappa=4, delta=0.3, seed=seed % 7)
    p = MeanFieldParams(rng.standard_normal(d), np.exp(rng.standard_normal(d)))
    u = rng.standard_normal(d)
    s = reparam_grad(t, p, u)
    g = t.grad(u * p.c + p.m)
    assert s.norm_sq() == pytest.approx(float(np.sum(g**2) + np.sum((u * g) ** 2)), rel=1e-13)


def test_common_random_numbers_are_bitwise_stable():
    t = make_target(QUADRATIC, 5, kappa=10, seed=1)
    p = MeanFieldParams(np.zeros(5), np.ones(5))
    a = reparam_grad_batch(t, p, gaussian(), 7, make_rng(3))
    b = reparam_grad_batch(t, p, gaussian(), 7, make_rng(3))
    assert np.array_equal(a.g_m, b.g_m) and np.array_equal(a.g_c, b.g_c) and np.array_equal(a.u_used, b.u_used)


def test_batch_one_matches_single_draw():
    t = make_target(QUADRATIC, 3, kappa=10, seed=1)
    p = MeanFieldParams(np.zeros(3), np.ones(3))
    a = reparam_grad_batch(t, p, gaussian(), 1, make_rng(4))
    u = gaussian().sample(make_rng(4), 3)
    b = reparam_grad(t, p, u)
    assert np.array_equal(a.g_m, b.g_m) and np.array_equal(a.u_used, u)


def test_batch_variance_scales_inverse():
    t = quadratic(np.array([2.0]), np.array([0.0]))
    p = MeanFieldParams([1.0], [1.0])
    batches = [1, 4, 16, 64]
    rng = make_rng(5)
    variances = []
    for M in batches:
        draws = np.array([reparam_grad_batch(t, p, gaussian(), M, rng).g_c[0] for _ in range(4000)])
        variances.append(draws.var(ddof=1))
    slope = np.polyfit(np.log(batches), np.log(variances), 1)[0]
    assert abs(slope + 1) <= 0.1


@pytest.mark.parametrize("case", range(3))
def test_unbiased_against_analytic(dist, case):
    rng = make_rng(6, case)
    d = int(rng.integers(1, 20))
    t = make_target(QUADRATIC, d, kappa=float(rng.uniform(1, 100)), seed=case)
    p = MeanFieldParams(rng.standard_normal(d), np.exp(0.5 * rng.standard_normal(d)))
    u = dist.sample(rng, (200_000, d))
    s = reparam_grad(t, p, u)
    exact = analytic_grad_f(t, p)
    for est, ref in ((s.g_m, exact.g_m), (s.g_c, exact.g_c)):
        se = est.std(axis=0, ddof=1) / math.sqrt(len(u))
        assert np.all(np.abs(est.mean(axis=0) - ref) <= 4 * se + 1e-12)


def test_unbiased_full_rank():
    rng = make_rng(7)
    t = make_target(QUADRATIC, 3, kappa=8, hessian="rotated-logspace", seed=2)
    L = np.tril(rng.standard_normal((3, 3)))
    np.fill_diagonal(L, np.abs(np.diag(L)) + 0.2)
    p = FullRankParams(rng.standard_normal(3), L)
    s = reparam_grad(t, p, gaussian().sample(rng, (200_000, 3)))
    exact = analytic_grad_f(t, p)
    se = s.g_c.std(axis=0, ddof=1) / math.sqrt(200_000)
    assert np.all(np.abs(s.g_c.mean(axis=0) - exact.g_c) <= 4 * se + 1e-12)
