"""Gradient-variance measurements and the closed-form bounds they are checked against.

Paired quantities always use common random numbers: one draw ``u`` feeds both
parameter points, which is the coupling under which the smoothness constant of
the estimator is defined.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import integrate
from scipy.sparse import linalg as sparse_linalg

from . import maxstats
from .base_dist import GAUSSIAN, BaseDistribution, DomainError
from .family import MEAN_FIELD, MeanFieldParams, Params, difference, reparametrize
from .grad_estimator import reparam_grad
from .mc import RunningMoments
from .targets import QUADRATIC, Target, WorstFieldConfig, worst_field_apply

EMAX_MODES = ("empirical", "mgf", "moment", "gaussian_special")
FIELD_LEVEL = "field-level"

_CHUNK_ELEMS = 1 << 21


def _chunks(n: int, per_row: int):
    rows = max(1, _CHUNK_ELEMS // max(1, per_row))
    left = n
    while left > 0:
        take = min(rows, left)
        yield take
        left -= take


@dataclass(frozen=True)
class VarianceReport:
    """Paired variance estimate with optional bounds.

    ``empirical`` is defined as ``v_loc + v_scale`` from the same draws.
    ``bound`` is the dimension-level bracket times ``dist_sq``;
    ``bound_refined`` uses the split of ``dist_sq`` into location and scale
    parts and the maximum over ``d - 1`` coordinates for the scale part.
    """

    d: int
    dist: str
    target: str
    delta: float
    H_norm: float
    dist_sq: float
    empirical: float
    stderr: float
    v_loc: float
    v_scale: float
    n: int
    bound: float | None = None
    bound_refined: float | None = None
    g_factor: float | None = None
    extra: dict = field(default_factory=dict)

    def row(self) -> dict:
        return {
            "d": self.d,
            "dist": self.dist,
            "delta": self.delta,
            "H_norm": self.H_norm,
            "dist_sq": self.dist_sq,
            "empirical": self.empirical,
            "stderr": self.stderr,
            "v_loc": self.v_loc,
            "v_scale": self.v_scale,
            "bound": self.bound,
            "g_factor": self.g_factor,
        }


def grad_pair_variance(
    target: Target,
    a: Params,
    b: Params,
    dist: BaseDistribution,
    n: int,
    rng: np.random.Generator,
) -> VarianceReport:
    """Estimate ``E ||g(a; u) - g(b; u)||^2`` with common draws, split by block."""
    if n < 2:
        raise DomainError("need n >= 2 draws")
    delta = difference(a, b)
    d = a.d
    loc_sum = scale_sum = 0.0
    tot = RunningMoments()
    for take in _chunks(n, d * (d if not isinstance(a, MeanFieldParams) else 1)):
        u = dist.sample(rng, (take, d))
        ga = reparam_grad(target, a, u)
        gb = reparam_grad(target, b, u)
        loc = np.sum((ga.g_m - gb.g_m) ** 2, axis=-1)
        scale = np.sum((ga.g_c - gb.g_c) ** 2, axis=tuple(range(1, ga.g_c.ndim)))
        loc_sum += float(np.sum(loc))
        scale_sum += float(np.sum(scale))
        tot.add(loc + scale)
    v_loc, v_scale = loc_sum / n, scale_sum / n
    return VarianceReport(
        d=d,
        dist=str(dist),
        target=target.describe(),
        delta=target.delta,
        H_norm=target.h_norm(),
        dist_sq=delta.norm_sq(),
        empirical=v_loc + v_scale,
        stderr=tot.stderr,
        v_loc=v_loc,
        v_scale=v_scale,
        n=n,
        extra={"dm_sq": float(np.sum(delta.dm**2)), "dc_sq": float(np.sum(delta.dc**2))},
    )


def grad_second_moment(
    target: Target, params: Params, dist: BaseDistribution, n: int, rng: np.random.Generator
) -> tuple[float, float]:
    """Mean and standard error of ``||g(lambda; u)||^2``; at the optimum this is the noise level."""
    acc = RunningMoments()
    for take in _chunks(n, params.d * (1 if isinstance(params, MeanFieldParams) else params.d)):
        s = reparam_grad(target, params, dist.sample(rng, (take, params.d)))
        acc.add(np.sum(s.g_m**2, axis=-1) + np.sum(s.g_c**2, axis=tuple(range(1, s.g_c.ndim))))
    return acc.mean, acc.stderr


# -- closed-form bounds -----------------------------------------------------


def variance_bracket(H_norm: float, delta: float, r4: float, emax: float) -> float:
    """``2 (1 + r4) ||H||^2 + 4 delta^2 (1/2 + r4 + E max u^2)``."""
    if min(H_norm, delta, r4, emax) < 0:
        raise DomainError("bracket inputs must be non-negative")
    return 2.0 * (1.0 + r4) * H_norm**2 + 4.0 * delta**2 * (0.5 + r4 + emax)


def variance_upper_bound(H_norm: float, delta: float, r4: float, emax: float, dist_sq: float) -> float:
    if dist_sq < 0:
        raise DomainError("dist_sq must be non-negative")
    return variance_bracket(H_norm, delta, r4, emax) * dist_sq


def variance_upper_bound_refined(
    H_norm: float, delta: float, r4: float, emax_d: float, emax_dm1: float, dm_sq: float, dc_sq: float
) -> float:
    """Pair-specific bound keeping the location/scale split of the proof.

    ``2 (1 + r4) ||H||^2 D + 2 delta^2 D + 4 delta^2 ((E max_{d-1} + r4) dc + E max_d dm)``
    with ``D = dm + dc``.  Never exceeds :func:`variance_upper_bound`.
    """
    D = dm_sq + dc_sq
    return (
        2.0 * (1.0 + r4) * H_norm**2 * D
        + 2.0 * delta**2 * D
        + 4.0 * delta**2 * ((emax_dm1 + r4) * dc_sq + emax_d * dm_sq)
    )


def emax_value(
    dist: BaseDistribution,
    d: int,
    mode: str,
    *,
    rng: np.random.Generator | None = None,
    n_trials: int = 20000,
    t: float | None = None,
    k: int | None = None,
) -> float:
    """``E max_{i<=d} u_i^2`` from the requested source."""
    if mode == "empirical":
        if rng is None:
            raise ValueError("empirical mode needs an rng")
        return maxstats.emax_empirical(dist, d, n_trials, rng)[0]
    if mode == "mgf":
        return maxstats.emax_bound_mgf(dist, d, t)
    if mode == "moment":
        return maxstats.emax_bound_moment(dist, d, k)
    if mode == "gaussian_special":
        if dist.kind != GAUSSIAN:
            raise DomainError(f"gaussian_special mode does not apply to {dist}")
        return maxstats.emax_bound_gaussian(d)
    raise ValueError(f"unknown emax mode {mode!r}; expected one of {EMAX_MODES}")


def g_factor(
    d: int,
    H_norm: float,
    delta: float,
    mu: float,
    dist: BaseDistribution,
    emax_mode: str = "gaussian_special",
    **emax_kw,
) -> float:
    """``2 (1 + r4) ||H||^2 / mu^2 + 4 delta^2 / mu^2 (1/2 + r4 + E max u^2)``."""
    if not mu > 0:
        raise DomainError(f"mu must be positive, got {mu}")
    emax = emax_value(dist, d, emax_mode, **emax_kw)
    return variance_bracket(H_norm, delta, dist.r4, emax) / mu**2


def g_gaussian_closed(d: int, H_norm: float, delta: float, mu: float) -> float:
    """``8 ||H||^2 / mu^2 + delta^2 / mu^2 (22 + 16 log d)``."""
    return 8.0 * H_norm**2 / mu**2 + delta**2 / mu**2 * (22.0 + 16.0 * math.log(d))


def g_student_t_delta_term(d: int, delta: float, mu: float, nu: float) -> float:
    """Closed-form ``delta^2 / mu^2 (16 + sqrt(2) nu^3 d^(2/(nu-2)))`` part of the Student-t bound."""
    return delta**2 / mu**2 * (16.0 + math.sqrt(2.0) * nu**3 * d ** (2.0 / (nu - 2.0)))


# -- exact identities -------------------------------------------------------


def _as_matrix(H) -> np.ndarray:
    H = np.atleast_1d(np.asarray(H, dtype=float))
    return np.diag(H) if H.ndim == 1 else H


def constant_hessian_exact(H, dm, dc, r4: float) -> float:
    """``E ||U H (dc * u + dm)||^2 = ||H dm||^2 + ||H C||_F^2 + (r4 - 1) ||diag(H C)||^2``, ``C = diag(dc)``."""
    Hm = _as_matrix(H)
    dm = np.asarray(dm, dtype=float)
    dc = np.asarray(dc, dtype=float)
    HC = Hm * dc[None, :]
    return float(np.sum((Hm @ dm) ** 2) + np.sum(HC**2) + (r4 - 1.0) * np.sum(np.diag(HC) ** 2))


def constant_hessian_mc(
    H, dm, dc, dist: BaseDistribution, n: int, rng: np.random.Generator
) -> tuple[float, float]:
    Hm = _as_matrix(H)
    dm = np.asarray(dm, dtype=float)
    dc = np.asarray(dc, dtype=float)
    acc = RunningMoments()
    for take in _chunks(n, dm.size):
        u = dist.sample(rng, (take, dm.size))
        v = u * ((dc * u + dm) @ Hm.T)
        acc.add(np.sum(v * v, axis=1))
    return acc.mean, acc.stderr


def sigma_star_sq(opt: MeanFieldParams, z_bar) -> float:
    """``||m* - zbar||^2 + ||C*||_F^2``."""
    z_bar = np.asarray(z_bar, dtype=float)
    if z_bar.shape != opt.m.shape:
        raise DomainError(f"z_bar shape {z_bar.shape} does not match d={opt.d}")
    return float(np.sum((opt.m - z_bar) ** 2) + np.sum(opt.scale_matrix() ** 2))


# -- lower bound ------------------------------------------------------------


def survival_integral(dist: BaseDistribution, t: float) -> float:
    """``c(t) = int_0^t P[u^2 > s] ds``, i.e. ``E min(u^2, t)``."""
    if not t > 0:
        raise DomainError(f"t must be positive, got {t}")
    if math.isinf(t):
        return 1.0
    val, _ = integrate.quad(dist.usq_survival, 0.0, t, epsrel=1e-8, epsabs=0.0, limit=200)
    return float(val)


@dataclass(frozen=True)
class LowerBoundResult:
    d: int
    dist: str
    mu: float
    L: float
    t: float
    lhs: float
    lhs_stderr: float
    rhs: float
    factor: float
    c_t: float
    emax4: float
    emax_dm1: float
    label: str = FIELD_LEVEL

    @property
    def vacuous(self) -> bool:
        return self.factor <= 0 or self.emax_dm1 - self.t <= 0

    def row(self) -> dict:
        return {
            "d": self.d,
            "dist": self.dist,
            "mu": self.mu,
            "L": self.L,
            "lhs": self.lhs,
            "lhs_stderr": self.lhs_stderr,
            "rhs": self.rhs,
            "t": self.t,
            "vacuous_flag": int(self.vacuous),
            "label": self.label,
        }


def worst_field_variance(
    cfg: WorstFieldConfig, d: int, dist: BaseDistribution, n: int, rng: np.random.Generator
) -> tuple[float, float]:
    """MC ``E ||U H_worst(u) u||^2`` (location zero, unit scale)."""
    acc = RunningMoments()
    for take in _chunks(n, d):
        u = dist.sample(rng, (take, d))
        v = u * worst_field_apply(cfg, u, u)
        acc.add(np.sum(v * v, axis=1))
    return acc.mean, acc.stderr


def lower_bound_experiment(
    mu: float,
    L: float,
    d: int,
    dist: BaseDistribution,
    t: float,
    n: int,
    rng: np.random.Generator,
    *,
    emax_trials: int | None = None,
) -> LowerBoundResult:
    """Field-level check of the variance lower bound under ``H_worst``.

    Uses ``m = zbar = 0`` and ``C = I`` so ``||C||_F^2 = d``; the ratio of the
    two sides does not depend on the scale of ``C``.  The expected maxima in
    the right-hand side are Monte Carlo estimates on independent streams.
    """
    if d < 2:
        raise DomainError("lower-bound experiment needs d >= 2")
    if not t > 0:
        raise DomainError(f"t must be positive, got {t}")
    cfg = WorstFieldConfig.from_mu_L(mu, L)
    r_lhs, r_e4, r_e2 = rng.spawn(3)
    lhs, se = worst_field_variance(cfg, d, dist, n, r_lhs)
    trials = emax_trials or n
    emax4, _ = maxstats.emax_empirical(dist, d, trials, r_e4, power=2)
    emax_dm1, _ = maxstats.emax_empirical(dist, d - 1, trials, r_e2)
    factor = (L - mu) ** 2 / 4.0 - 0.5 * L**2 * emax4 / d
    c_t = survival_integral(dist, t)
    rhs = factor * c_t * (emax_dm1 - t) * d
    return LowerBoundResult(d, str(dist), mu, L, t, lhs, se, rhs, factor, c_t, emax4, emax_dm1)


# -- pointwise and operator checks -----------------------------------------


@dataclass(frozen=True)
class WeightedNormCheck:
    n: int
    violations: int
    max_ratio: float


def weighted_norm_check(
    target: Target, a: Params, b: Params, dist: BaseDistribution, n: int, rng: np.random.Generator,
    rtol: float = 1e-12,
) -> WeightedNormCheck:
    """Count draws where ``||U (grad l(z) - grad l(z'))|| > ||U H (z - z')|| + delta ||U||_2 ||z - z'||``.

    ``z = T_a(u)``, ``z' = T_b(u)``.  ``rtol`` absorbs floating-point rounding
    in the right-hand side only.
    """
    H = target.h_matrix()
    viol = 0
    worst = 0.0
    for take in _chunks(n, a.d):
        u = dist.sample(rng, (take, a.d))
        z, zp = reparametrize(a, u), reparametrize(b, u)
        lhs = np.linalg.norm(u * (target.grad(z) - target.grad(zp)), axis=1)
        dz = z - zp
        rhs = np.linalg.norm(u * (dz @ H.T), axis=1) + target.delta * np.max(
            np.abs(u), axis=1
        ) * np.linalg.norm(dz, axis=1)
        viol += int(np.sum(lhs > rhs * (1.0 + rtol)))
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(rhs > 0, lhs / rhs, 0.0)
        worst = max(worst, float(np.max(ratio)))
    return WeightedNormCheck(n, viol, worst)


def smoothness_sq_mc(
    target: Target,
    like_params: Params,
    dist: BaseDistribution,
    n: int,
    rng: np.random.Generator,
    *,
    tol: float = 1e-10,
) -> float:
    """Largest eigenvalue of ``E[D(u)' D(u)]`` where ``D(u)`` maps a parameter
    difference to the estimator difference; this is the expected-smoothness
    constant ``L^2`` measured on ``n`` fixed draws.

    Quadratic targets only (``D`` is then independent of the base point).
    """
    if target.kind != QUADRATIC:
        raise DomainError("measured smoothness needs a quadratic target")
    d = like_params.d
    u = dist.sample(rng, (n, d))
    full = not isinstance(like_params, MeanFieldParams)
    rows, cols = np.tril_indices(d)
    nvar = d + (rows.size if full else d)

    def apply_DtD(v):
        dm, dc = v[:d], v[d:]
        if full:
            C = np.zeros((d, d))
            C[rows, cols] = dc
            z = u @ C.T + dm
        else:
            z = u * dc + dm
        g = target.h_apply(z)
        # adjoint: the location block returns g, the scale block returns tril(g u')
        # whose pullback to z-space is g * (u . u) restricted to j <= i
        if full:
            back = g * (1.0 + np.cumsum(u * u, axis=1))
        else:
            back = g * (1.0 + u * u)
        hb = target.h_apply(back)
        out_m = hb.mean(axis=0)
        if full:
            out_c = (hb.T @ u / n)[rows, cols]
        else:
            out_c = (u * hb).mean(axis=0)
        return np.concatenate([out_m, out_c])

    op = sparse_linalg.LinearOperator((nvar, nvar), matvec=apply_DtD, dtype=float)
    v0 = np.ones(nvar) / math.sqrt(nvar)
    if nvar <= 2:
        M = np.column_stack([apply_DtD(e) for e in np.eye(nvar)])
        return float(np.linalg.eigvalsh(0.5 * (M + M.T))[-1])
    return float(sparse_linalg.eigsh(op, k=1, which="LA", v0=v0, tol=tol)[0][0])


def smoothness_sq_diag(target: Target, dist: BaseDistribution, family: str = MEAN_FIELD) -> float:
    """Exact expected-smoothness constant for a diagonal quadratic.

    Mean-field: ``(1 + r4) max H_ii^2``.  Cholesky factor:
    ``max_i H_ii^2 (i + r4)`` with 1-based ``i``, since row ``i`` of the
    scale gradient collects ``i`` products ``g_i u_j``.
    """
    if target.kind != QUADRATIC or not target.is_diagonal:
        raise DomainError("closed form needs a diagonal quadratic target")
    h2 = np.asarray(target.h, dtype=float) ** 2
    if family == MEAN_FIELD:
        return float((1.0 + dist.r4) * h2.max())
    return float(np.max(h2 * (np.arange(1, target.d + 1) + dist.r4)))


def with_bounds(
    report: VarianceReport,
    dist: BaseDistribution,
    mu: float,
    emax_mode: str = "empirical",
    **emax_kw,
) -> VarianceReport:
    """Attach the dimension-level bound, the refined bound and ``g``."""
    emax = emax_value(dist, report.d, emax_mode, **emax_kw)
    if emax_mode == "empirical":
        emax_dm1 = maxstats.emax_empirical(dist, report.d - 1, emax_kw.get("n_trials", 20000), emax_kw["rng"])[0]
    else:
        emax_dm1 = emax
    bound = variance_upper_bound(report.H_norm, report.delta, dist.r4, emax, report.dist_sq)
    refined = variance_upper_bound_refined(
        report.H_norm, report.delta, dist.r4, emax, emax_dm1,
        report.extra["dm_sq"], report.extra["dc_sq"],
    )
    g = variance_bracket(report.H_norm, report.delta, dist.r4, emax) / mu**2
    return replace(report, bound=bound, bound_refined=refined, g_factor=g)

