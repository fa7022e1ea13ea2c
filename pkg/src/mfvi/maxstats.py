"""Bounds and Monte Carlo estimates for ``E max_{i<=d} u_i^2``."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .base_dist import GAUSSIAN, STUDENT_T, BaseDistribution, DomainError
from .mc import RunningMoments

#: MGF dual variable used for the Gaussian closed form; gives 1 - 2t = 1/e.
GAUSSIAN_MGF_T = 0.5 * (1.0 - math.exp(-1.0))

_MAX_MOMENT_ORDER = 40


@dataclass(frozen=True)
class EmaxReport:
    dist: str
    d: int
    empirical: float
    stderr: float
    bound_mgf: float | None = None
    bound_moment: float | None = None
    bound_gaussian_special: float | None = None

    def bounds(self) -> dict[str, float]:
        out = {
            "bound_mgf": self.bound_mgf,
            "bound_moment": self.bound_moment,
            "bound_gaussian_special": self.bound_gaussian_special,
        }
        return {k: v for k, v in out.items() if v is not None}


def default_mgf_t(dist: BaseDistribution) -> float:
    if dist.kind == GAUSSIAN:
        return GAUSSIAN_MGF_T
    raise DomainError(f"{dist} has no MGF of u^2 on any t > 0")


def emax_bound_mgf(dist: BaseDistribution, d: int, t: float | None = None) -> float:
    """``(log M(t) + log d) / t`` with ``M`` the MGF of ``u^2``."""
    _check_dim(d)
    if t is None:
        t = default_mgf_t(dist)
    mgf = dist.mgf_usq(t)
    if not math.isfinite(mgf):
        dom = dist.mgf_domain()
        where = f"valid t lies in {dom}" if dom else "no valid t exists"
        raise DomainError(f"MGF of u^2 diverges for {dist} at t={t}; {where}")
    return (math.log(mgf) + math.log(d)) / t


def emax_bound_gaussian(d: int) -> float:
    """Closed form ``4 (1/2 + log d)`` for a standard Gaussian base."""
    _check_dim(d)
    return 4.0 * (0.5 + math.log(d))


def moment_bound_prefactor(k: int) -> float:
    return (k / (k - 1.0)) ** ((k - 1.0) / k)


def emax_bound_moment(dist: BaseDistribution, d: int, k: int | None = None) -> float:
    """``d^(1/k) (k/(k-1))^((k-1)/k) E[u^(2k)]^(1/k)`` for ``k >= 2``."""
    _check_dim(d)
    if k is None:
        k = default_moment_order(dist, d)
    if k < 2:
        raise DomainError(f"moment bound needs k >= 2, got {k}")
    m_k = dist.moment_usq(k)
    if not math.isfinite(m_k):
        kmax = dist.max_finite_usq_moment()
        raise DomainError(
            f"E u^(2k) is infinite for {dist} at k={k}; largest admissible k is {kmax}"
        )
    return d ** (1.0 / k) * moment_bound_prefactor(k) * m_k ** (1.0 / k)


def default_moment_order(dist: BaseDistribution, d: int) -> int:
    """Student-t uses ``ceil(nu/2 - 1)``; light tails take the minimizing ``k``."""
    if dist.kind == STUDENT_T:
        return math.ceil(dist.nu / 2.0 - 1.0)
    best_k, best = 2, math.inf
    for k in range(2, _MAX_MOMENT_ORDER + 1):
        val = d ** (1.0 / k) * moment_bound_prefactor(k) * dist.moment_usq(k) ** (1.0 / k)
        if val < best:
            best_k, best = k, val
    return best_k


def emax_empirical(
    dist: BaseDistribution,
    d: int,
    n_trials: int,
    rng: np.random.Generator,
    *,
    power: int = 1,
    chunk_elems: int = 1 << 22,
) -> tuple[float, float]:
    """Monte Carlo mean and standard error of ``max_{i<=d} (u_i^2)^power``.

    ``d == 0`` returns ``(0, 0)``: the maximum over an empty set of
    non-negative terms is taken to be zero.
    """
    if d < 0:
        raise DomainError(f"d must be >= 0, got {d}")
    if n_trials < 2:
        raise DomainError("need at least two trials for a standard error")
    if d == 0:
        return 0.0, 0.0
    acc = RunningMoments()
    rows = max(1, chunk_elems // d)
    left = n_trials
    while left > 0:
        take = min(rows, left)
        u = dist.sample(rng, (take, d))
        vals = np.max(u * u, axis=1)
        if power != 1:
            vals = vals**power
        acc.add(vals)
        left -= take
    return acc.mean, acc.stderr


def emax_report(
    dist: BaseDistribution, d: int, n_trials: int, rng: np.random.Generator
) -> EmaxReport:
    """Empirical estimate together with every bound that applies to ``dist``."""
    est, se = emax_empirical(dist, d, n_trials, rng)
    mgf = moment = special = None
    if dist.mgf_domain() is not None:
        mgf = emax_bound_mgf(dist, d)
    moment = emax_bound_moment(dist, d)
    if dist.kind == GAUSSIAN:
        special = emax_bound_gaussian(d)
    return EmaxReport(str(dist), d, est, se, mgf, moment, special)


def _check_dim(d):
    if d < 1:
        raise DomainError(f"dimension must be >= 1, got {d}")
