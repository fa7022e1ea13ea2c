"""Stochastic proximal gradient descent with the entropy prox and a two-stage schedule.

The iteration is ``lambda' = prox_{gamma h}(lambda - gamma g)`` with ``g`` the
reparametrization gradient of the energy term.  The entropy only touches the
scale diagonal, where its prox has the closed form of a log-barrier prox.
Iterates are never projected; positivity comes from the prox alone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .base_dist import BaseDistribution, DomainError
from .family import (
    MEAN_FIELD,
    FullRankParams,
    MeanFieldParams,
    Params,
    entropy_h,
    like,
    sample_q,
)
from .grad_estimator import GradSample
from .rng import child_rng
from .targets import Target

DIVERGENCE_LIMIT = 1e12
ELBO_EVERY = 100
ELBO_SAMPLES = 64

TRACE_COLUMNS = ("t", "gamma_t", "dist_sq", "elbo_est", "m_norm", "c_min", "c_max", "seed")


def prox_entropy(c, gamma: float):
    """``1/2 (c + sqrt(c^2 + 4 gamma))``, evaluated without cancellation for ``c < 0``."""
    if not gamma > 0:
        raise DomainError(f"prox step must be positive, got gamma={gamma}")
    c = np.asarray(c, dtype=float)
    root = np.sqrt(c * c + 4.0 * gamma)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(c >= 0, 0.5 * (c + root), 2.0 * gamma / (root - c))
    return out if out.ndim else float(out)


# -- schedule ---------------------------------------------------------------


@dataclass(frozen=True)
class ScheduleConfig:
    """Constant ``gamma0`` through ``t_star``, then ``(2t + 1) / (mu (t + 1)^2)``."""

    gamma0: float
    t_star: int
    mu: float

    def __post_init__(self):
        if not self.gamma0 > 0:
            raise DomainError(f"gamma0 must be positive, got {self.gamma0}")
        if not self.mu > 0:
            raise DomainError(f"mu must be positive, got {self.mu}")
        if self.t_star < 0 or int(self.t_star) != self.t_star:
            raise DomainError(f"t_star must be a non-negative integer, got {self.t_star}")
        object.__setattr__(self, "gamma0", float(self.gamma0))
        object.__setattr__(self, "t_star", int(self.t_star))
        object.__setattr__(self, "mu", float(self.mu))

    @classmethod
    def from_constants(cls, gamma0: float, t_star: int, mu: float, L_hat: float) -> "ScheduleConfig":
        """Validated construction: ``gamma0 <= mu / (2 L^2)`` and ``t_star >= 4 L^2 / mu^2``."""
        cap = mu / (2.0 * L_hat**2)
        if gamma0 > cap * (1 + 1e-12):
            raise DomainError(f"gamma0={gamma0} exceeds mu/(2 L^2) = {cap}")
        floor = 4.0 * L_hat**2 / mu**2
        if t_star < floor * (1 - 1e-12):
            raise DomainError(f"t_star={t_star} is below 4 L^2/mu^2 = {floor}")
        return cls(gamma0, t_star, mu)

    def to_json(self) -> dict:
        return {"gamma0": self.gamma0, "t_star": self.t_star, "mu": self.mu}


def step_size(t: int, sched: ScheduleConfig) -> float:
    if t < 0:
        raise DomainError(f"iteration index must be >= 0, got {t}")
    if t <= sched.t_star:
        return sched.gamma0
    return (2.0 * t + 1.0) / (sched.mu * (t + 1.0) ** 2)


def step_sizes(T: int, sched: ScheduleConfig) -> np.ndarray:
    """``step_size(t)`` for ``t = 0..T``."""
    t = np.arange(T + 1, dtype=float)
    decay = (2.0 * t + 1.0) / (sched.mu * (t + 1.0) ** 2)
    return np.where(t <= sched.t_star, sched.gamma0, decay)


def suggested_schedule(
    L_hat: float, mu: float, sigma_sq: float, delta0_sq: float, T: int
) -> ScheduleConfig:
    """Step size ``mu / (2 L^2)`` and the switch time that balances bias against noise.

    ``t_star = ceil(log(mu D^2 / (2 gamma0 s^2)) / log(1/rho))`` with
    ``rho = 1 - gamma0 mu``, raised to ``ceil(4 L^2 / mu^2)`` so the decaying
    stage never exceeds ``gamma0``, and capped at ``T``.  Zero noise gives
    ``t_star = T``.
    """
    if not (L_hat > 0 and mu > 0 and T >= 1):
        raise DomainError("L_hat, mu and T must be positive")
    if sigma_sq < 0 or delta0_sq < 0:
        raise DomainError("sigma_sq and delta0_sq must be non-negative")
    if L_hat < mu:
        raise DomainError(f"expected smoothness constant {L_hat} cannot be below mu={mu}")
    gamma0 = mu / (2.0 * L_hat**2)
    if sigma_sq == 0:
        return ScheduleConfig(gamma0, T, mu)
    rho = 1.0 - gamma0 * mu
    t_star = 0
    if delta0_sq > 0 and rho > 0:
        ratio = mu * delta0_sq / (2.0 * gamma0 * sigma_sq)
        if ratio > 1:
            t_star = math.ceil(math.log(ratio) / -math.log(rho))
    t_star = max(t_star, math.ceil(4.0 * L_hat**2 / mu**2))
    return ScheduleConfig(gamma0, min(t_star, T), mu)


def stage1_bound(sched: ScheduleConfig, sigma_sq: float, delta0_sq: float) -> float:
    """``rho^t_star D^2 + 2 gamma0 s^2 / mu``: the error bound at the switch time."""
    rho = 1.0 - sched.gamma0 * sched.mu
    return rho**sched.t_star * delta0_sq + 2.0 * sched.gamma0 * sigma_sq / sched.mu


def convergence_bound(sched: ScheduleConfig, sigma_sq: float, delta0_sq: float, T: int) -> float:
    """Bound on ``E ||lambda_T - lambda*||^2`` for ``t_star < T`` under the two-stage schedule."""
    ts, mu, g0 = sched.t_star, sched.mu, sched.gamma0
    if ts >= T:
        return stage1_bound(ScheduleConfig(g0, T, mu), sigma_sq, delta0_sq)
    rho = 1.0 - g0 * mu
    return (
        delta0_sq * rho**ts * ts**2 / T**2
        + 2.0 * g0 * sigma_sq * ts**2 / (mu * T**2)
        + 8.0 * sigma_sq * (T - ts) / (mu**2 * T**2)
    )


# -- single step ------------------------------------------------------------


def spgd_step(params: Params, grad: GradSample, gamma: float) -> Params:
    """Gradient step on ``f`` followed by the entropy prox on the scale diagonal."""
    m = params.m - gamma * grad.g_m
    if isinstance(params, MeanFieldParams):
        return MeanFieldParams(m, prox_entropy(params.c - gamma * grad.g_c, gamma))
    s = params.c_lower - gamma * np.tril(grad.g_c)
    idx = np.diag_indices(params.d)
    s[idx] = prox_entropy(s[idx], gamma)
    return FullRankParams(m, s)


# -- runs -------------------------------------------------------------------


@dataclass
class RunTrace:
    """Per-iteration record of one SPGD run.

    Arrays have length ``T + 1`` unless the run diverged, in which case they
    stop at ``diverged_at``.  ``elbo_est`` is NaN except every
    ``ELBO_EVERY`` iterations and at the end; ``dist_sq`` is NaN without a
    reference optimum.
    """

    seed: int
    t: np.ndarray
    gamma_t: np.ndarray
    dist_sq: np.ndarray
    elbo_est: np.ndarray
    m_norm: np.ndarray
    c_min: np.ndarray
    c_max: np.ndarray
    final: Params
    target: str = ""
    family: str = MEAN_FIELD
    dist: str = ""
    schedule: dict = field(default_factory=dict)
    batch: int = 1
    reference_approximate: bool = False
    diverged_at: int | None = None

    @property
    def diverged(self) -> bool:
        return self.diverged_at is not None

    def __len__(self):
        return self.t.size

    def rows(self, every: int = 1):
        """Trace as dict rows keyed by :data:`TRACE_COLUMNS`; keeps the last row when thinning."""
        idx = np.arange(0, len(self), every)
        if len(self) and idx[-1] != len(self) - 1:
            idx = np.append(idx, len(self) - 1)
        for i in idx:
            yield {
                "t": int(self.t[i]),
                "gamma_t": float(self.gamma_t[i]),
                "dist_sq": _opt(self.dist_sq[i]),
                "elbo_est": _opt(self.elbo_est[i]),
                "m_norm": float(self.m_norm[i]),
                "c_min": float(self.c_min[i]),
                "c_max": float(self.c_max[i]),
                "seed": self.seed,
            }

    def metadata(self) -> dict:
        return {
            "seed": self.seed,
            "target": self.target,
            "family": self.family,
            "dist": self.dist,
            "schedule": self.schedule,
            "batch": self.batch,
            "reference_approximate": self.reference_approximate,
            "diverged_at": self.diverged_at,
        }


def _opt(x):
    return None if not np.isfinite(x) else float(x)


class _NoiseStream:
    """Per-seed base-law draws served one iteration at a time.

    Draws are buffered in chunks; since the generators fill arrays in order,
    the values do not depend on the chunk size.
    """

    def __init__(self, rngs, dist: BaseDistribution, shape: tuple, max_elems: int = 1 << 21):
        self.rngs = list(rngs)
        self.dist = dist
        self.shape = shape
        per_step = len(self.rngs) * int(np.prod(shape))
        self.chunk = max(1, min(256, max_elems // per_step))
        self.buf = None
        self.pos = self.chunk

    def next(self) -> np.ndarray:
        if self.pos == self.chunk:
            self.buf = np.stack([self.dist.sample(r, (self.chunk, *self.shape)) for r in self.rngs], axis=1)
            self.pos = 0
        out = self.buf[self.pos]
        self.pos += 1
        return out


class _Ensemble:
    """Stacked iterates for ``S`` independent seeds of one configuration."""

    def __init__(self, init: Params, S: int):
        self.full_rank = isinstance(init, FullRankParams)
        self.d = init.d
        self.m = np.tile(init.m, (S, 1))
        scale = init.c_lower if self.full_rank else init.c
        self.s = np.tile(scale, (S,) + (1,) * scale.ndim)

    def z(self, u):
        # u: (S, M, d)
        if self.full_rank:
            return np.einsum("sij,smj->smi", self.s, u) + self.m[:, None, :]
        return u * self.s[:, None, :] + self.m[:, None, :]

    def step(self, target: Target, u, gamma: float, active):
        g = target.grad(self.z(u))
        g_m = g.mean(axis=1)
        if self.full_rank:
            g_s = np.tril(np.einsum("smi,smj->sij", g, u) / u.shape[1])
        else:
            g_s = (u * g).mean(axis=1)
        m_new = self.m - gamma * g_m
        s_new = self.s - gamma * g_s
        if self.full_rank:
            idx = np.arange(self.d)
            s_new[:, idx, idx] = prox_entropy(s_new[:, idx, idx], gamma)
        else:
            s_new = prox_entropy(s_new, gamma)
        if active.all():
            self.m, self.s = m_new, s_new
        else:
            self.m[active] = m_new[active]
            self.s[active] = s_new[active]

    def diag(self):
        if self.full_rank:
            return np.diagonal(self.s, axis1=1, axis2=2)
        return self.s

    def dist_sq(self, ref: Params):
        ref_s = ref.c_lower if self.full_rank else ref.c
        ax = tuple(range(1, self.s.ndim))
        return np.sum((self.m - ref.m) ** 2, axis=1) + np.sum((self.s - ref_s) ** 2, axis=ax)

    def params(self, i: int) -> Params:
        if self.full_rank:
            return FullRankParams(self.m[i], self.s[i])
        return MeanFieldParams(self.m[i], self.s[i])


def run_seeds(
    target: Target,
    init: Params,
    dist: BaseDistribution,
    sched: ScheduleConfig,
    T: int,
    rngs,
    seeds=None,
    *,
    batch: int = 1,
    opt_reference: Params | None = None,
    reference_approximate: bool = False,
    elbo_every: int | None = ELBO_EVERY,
) -> list[RunTrace]:
    """Run SPGD for several seeds at once, vectorized across seeds.

    Seed ``k`` consumes only ``rngs[k]`` (ELBO estimates use a child stream),
    so each trace is bitwise identical to a single-seed run with that generator.
    """
    if T < 1:
        raise DomainError(f"horizon T must be >= 1, got {T}")
    if batch < 1:
        raise DomainError(f"batch must be >= 1, got {batch}")
    if init.d != target.d:
        raise DomainError(f"init has d={init.d}, target has d={target.d}")
    rngs = list(rngs)
    S = len(rngs)
    seeds = list(range(S)) if seeds is None else list(seeds)
    if len(seeds) != S:
        raise ValueError("need one seed label per generator")
    elbo_rngs = [child_rng(r) for r in rngs]
    noise = _NoiseStream(rngs, dist, (batch, target.d))
    ens = _Ensemble(init, S)
    gammas = step_sizes(T, sched)

    shape = (S, T + 1)
    dist_sq = np.full(shape, np.nan)
    elbo = np.full(shape, np.nan)
    m_norm = np.empty(shape)
    c_min = np.empty(shape)
    c_max = np.empty(shape)
    active = np.ones(S, dtype=bool)
    diverged_at = [None] * S

    def record(t):
        diag = ens.diag()
        m_norm[:, t] = np.linalg.norm(ens.m, axis=1)
        c_min[:, t] = diag.min(axis=1)
        c_max[:, t] = diag.max(axis=1)
        if opt_reference is not None:
            dist_sq[:, t] = ens.dist_sq(opt_reference)
        if elbo_every and (t % elbo_every == 0 or t == T):
            for k in np.flatnonzero(active):
                elbo[k, t] = elbo_estimate(target, ens.params(k), dist, elbo_rngs[k])
        bad = active & (
            ~np.isfinite(m_norm[:, t])
            | ~np.isfinite(c_max[:, t])
            | (m_norm[:, t] > DIVERGENCE_LIMIT)
            | (c_max[:, t] > DIVERGENCE_LIMIT)
        )
        for k in np.flatnonzero(bad):
            diverged_at[k] = t
        active[bad] = False

    record(0)
    for t in range(T):
        if not active.any():
            break
        ens.step(target, noise.next(), gammas[t], active)
        record(t + 1)

    traces = []
    for k in range(S):
        end = T + 1 if diverged_at[k] is None else diverged_at[k] + 1
        try:
            final = ens.params(k)
        except DomainError:
            final = init
        traces.append(
            RunTrace(
                seed=seeds[k],
                t=np.arange(end),
                gamma_t=gammas[:end].copy(),
                dist_sq=dist_sq[k, :end].copy(),
                elbo_est=elbo[k, :end].copy(),
                m_norm=m_norm[k, :end].copy(),
                c_min=c_min[k, :end].copy(),
                c_max=c_max[k, :end].copy(),
                final=final,
                target=target.describe(),
                family=init.family,
                dist=str(dist),
                schedule=sched.to_json(),
                batch=batch,
                reference_approximate=reference_approximate,
                diverged_at=diverged_at[k],
            )
        )
    return traces


def run(
    target: Target,
    init: Params,
    dist: BaseDistribution,
    sched: ScheduleConfig,
    T: int,
    rng: np.random.Generator,
    *,
    batch: int = 1,
    opt_reference: Params | None = None,
    seed: int = 0,
    reference_approximate: bool = False,
    elbo_every: int | None = ELBO_EVERY,
) -> RunTrace:
    """Run ``T`` SPGD steps from ``init``; ``seed`` only labels the trace."""
    return run_seeds(
        target,
        init,
        dist,
        sched,
        T,
        [rng],
        [seed],
        batch=batch,
        opt_reference=opt_reference,
        reference_approximate=reference_approximate,
        elbo_every=elbo_every,
    )[0]


def elbo_estimate(
    target: Target, params: Params, dist: BaseDistribution, rng: np.random.Generator,
    n: int = ELBO_SAMPLES,
) -> float:
    """Monte Carlo ``-(E l(z) + h(lambda))``, i.e. the ELBO up to the normalizer."""
    z = sample_q(params, dist, rng, n)
    return -(float(np.mean(target.value(z))) + entropy_h(params, dist))


def mean_dist_sq(traces) -> tuple[np.ndarray, np.ndarray]:
    """Seed mean and standard error of ``dist_sq`` over the common trace length."""
    n = min(len(tr) for tr in traces)
    arr = np.stack([tr.dist_sq[:n] for tr in traces])
    se = arr.std(axis=0, ddof=1) / math.sqrt(len(traces)) if len(traces) > 1 else np.zeros(n)
    return arr.mean(axis=0), se


def iterations_to_eps(traces, eps: float) -> int | None:
    """First ``t`` at which the seed-averaged ``dist_sq`` is at most ``eps``."""
    mean, _ = mean_dist_sq(traces)
    hit = np.flatnonzero(mean <= eps)
    return int(hit[0]) if hit.size else None


def hitting_time(
    target: Target,
    init: Params,
    dist: BaseDistribution,
    sched: ScheduleConfig,
    T_max: int,
    rngs,
    opt_reference: Params,
    eps: float,
    *,
    batch: int = 1,
) -> int | None:
    """First ``t`` where the seed-averaged squared distance is at most ``eps``.

    Consumes the generators exactly like :func:`run_seeds`, so the answer
    equals :func:`iterations_to_eps` on full traces, without storing them.
    Returns ``None`` if ``eps`` is not reached within ``T_max`` steps or an
    iterate diverges.
    """
    rngs = list(rngs)
    noise = _NoiseStream(rngs, dist, (batch, target.d))
    ens = _Ensemble(init, len(rngs))
    gammas = step_sizes(T_max, sched)
    active = np.ones(len(rngs), dtype=bool)
    for t in range(T_max + 1):
        dsq = ens.dist_sq(opt_reference)
        if not np.all(np.isfinite(dsq)) or dsq.max() > DIVERGENCE_LIMIT:
            return None
        if dsq.mean() <= eps:
            return t
        if t < T_max:
            ens.step(target, noise.next(), gammas[t], active)
    return None


def reference_optimum(
    target: Target,
    init: Params,
    dist: BaseDistribution,
    rng: np.random.Generator,
    *,
    T: int = 20000,
    batch: int = 256,
    tail: int = 2000,
) -> tuple[Params, float]:
    """Approximate optimum from a long high-batch constant-step run.

    Returns the iterate average over the last ``tail`` steps and the spread
    (mean squared distance of the tail iterates to that average).
    """
    gamma = 0.5 / target.L
    sched = ScheduleConfig(gamma, T, target.mu)
    ens = _Ensemble(init, 1)
    noise = _NoiseStream([rng], dist, (batch, target.d))
    tail_m, tail_s = [], []
    for t in range(T):
        ens.step(target, noise.next(), step_size(t, sched), np.ones(1, dtype=bool))
        if t >= T - tail:
            tail_m.append(ens.m[0].copy())
            tail_s.append(ens.s[0].copy())
    m_bar = np.mean(tail_m, axis=0)
    s_bar = np.mean(tail_s, axis=0)
    spread = float(
        np.mean([np.sum((a - m_bar) ** 2) + np.sum((b - s_bar) ** 2) for a, b in zip(tail_m, tail_s)])
    )
    return like(init, m_bar, s_bar), spread


# -- complexity -------------------------------------------------------------


@dataclass(frozen=True)
class ComplexityPrediction:
    """Sufficient iteration counts for both switch-time regimes and their max."""

    case_switch: float
    case_no_switch: float

    @property
    def value(self) -> float:
        return max(self.case_switch, self.case_no_switch)


def complexity_prediction(
    g_factor: float, sigma_star_sq: float, delta0_sq: float, eps: float
) -> ComplexityPrediction:
    """Iterations sufficient for ``E ||lambda_T - lambda*||^2 <= eps``.

    With ``L^2 = g mu^2`` and ``s^2 = L^2 sigma*^2`` the two regimes reduce to

    * switch before ``T``: ``g (8 sigma*^2 / eps + 4 sqrt(2) sigma* log(3 D^2 / sigma*^2) / sqrt(eps))``
    * no switch: ``2 g log(2 D^2 / eps) + 1``

    and ``mu`` cancels.
    """
    if not (g_factor > 0 and sigma_star_sq > 0 and delta0_sq > 0 and eps > 0):
        raise DomainError("all complexity inputs must be positive")
    s = math.sqrt(sigma_star_sq)
    switch = g_factor * (
        8.0 * sigma_star_sq / eps
        + 4.0 * math.sqrt(2.0) * s * math.log(3.0 * delta0_sq / sigma_star_sq) / math.sqrt(eps)
    )
    no_switch = 2.0 * g_factor * math.log(2.0 * delta0_sq / eps) + 1.0
    return ComplexityPrediction(switch, no_switch)

