"""Batch drivers behind the ``mfvi`` subcommands.

Every driver expands its grid into an ordered list of points, evaluates the
points (optionally in worker processes) and returns rows in point order.  All
randomness comes from ``make_rng(seed, point_index, ...)``, so results do not
depend on the number of workers.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import maxstats, spgd
from .base_dist import GAUSSIAN, BaseDistribution, DomainError
from .config import ConfigError, ExperimentConfig, TargetConfig
from .family import FULL_RANK, MEAN_FIELD, MeanFieldParams, Params, param_distance_sq, standard_init
from .rng import make_rng
from .targets import PERTURBED, QUADRATIC, Target, fr_optimum, make_target, mf_optimum
from .variance_lab import (
    grad_pair_variance,
    grad_second_moment,
    lower_bound_experiment,
    smoothness_sq_diag,
    smoothness_sq_mc,
    variance_bracket,
    variance_upper_bound,
    with_bounds,
)

HEADERS = {
    "fit": list(spgd.TRACE_COLUMNS),
    "maxstats": [
        "dist", "d", "empirical", "stderr", "bound_mgf", "bound_moment", "bound_gaussian_special",
        "n_seeds",
    ],
    "variance-sweep": [
        "d", "dist", "delta", "H_norm", "dist_sq", "empirical", "stderr", "v_loc", "v_scale",
        "bound", "g_factor", "kappa", "pair", "seed", "bound_refined",
    ],
    "lowerbound": [
        "d", "dist", "delta", "H_norm", "dist_sq", "empirical", "stderr", "v_loc", "v_scale",
        "bound", "g_factor", "lhs", "rhs", "t", "vacuous_flag", "lhs_stderr", "mu", "L",
        "factor", "c_t", "n_seeds", "label",
    ],
    "dim-sweep": [
        "d", "family", "kappa", "delta", "dist", "eps", "iterations_to_eps", "reached", "T_max",
        "n_seeds", "g_factor", "g_measured", "L_sq", "sigma_sq", "sigma_star_sq", "delta0_sq",
        "gamma0", "t_star", "prediction", "ratio_to_prediction", "reference_approximate",
        "skipped", "prediction_switch", "prediction_no_switch",
    ],
}

MIN_SWEEP_SEEDS = 32
_AUX = 10_000  # stream id for auxiliary estimates (noise level, reference runs)


# -- shared helpers ---------------------------------------------------------


def build_target(tcfg: TargetConfig, *, d=None, kappa=None, delta=None) -> Target:
    d = tcfg.d if d is None else d
    delta = tcfg.delta if delta is None else delta
    kind = tcfg.kind
    if delta > 0 and kind == QUADRATIC:
        kind = PERTURBED
    if delta == 0 and kind == PERTURBED:
        kind = QUADRATIC
    L, kap = tcfg.L, tcfg.kappa
    if kappa is not None:
        L, kap = None, kappa
    hessian = tcfg.hessian
    if isinstance(hessian, tuple):
        hessian = np.asarray(hessian)
    return make_target(kind, d, mu=tcfg.mu, L=L, kappa=kap, delta=delta, hessian=hessian, seed=tcfg.seed)


def default_emax_mode(dist: BaseDistribution) -> str:
    return "gaussian_special" if dist.kind == GAUSSIAN else "moment"


def theory_smoothness_sq(target: Target, dist: BaseDistribution) -> float:
    """Mean-field expected-smoothness bound from the variance bracket."""
    emax = (
        maxstats.emax_bound_gaussian(target.d)
        if dist.kind == GAUSSIAN
        else maxstats.emax_bound_moment(dist, target.d)
    )
    return variance_bracket(target.h_norm(), target.delta, dist.r4, emax)


def smoothness_sq(target: Target, dist: BaseDistribution, family: str, *, rng=None, n: int = 4000) -> float:
    """Expected-smoothness constant used by automatic schedules.

    Diagonal quadratic targets have exact values: ``(1 + r4) max H_ii^2`` for
    mean-field and ``max_i H_ii^2 (i + r4)`` (1-based ``i``) for the Cholesky
    factor.  Dense quadratics use power iteration on fixed draws.  Other
    mean-field targets fall back to the variance bracket.
    """
    if target.kind == QUADRATIC:
        if target.is_diagonal:
            return smoothness_sq_diag(target, dist, family)
        probe = standard_init(target.d, family)
        return smoothness_sq_mc(target, probe, dist, n, rng or make_rng(0, _AUX, 1))
    if family == MEAN_FIELD:
        return theory_smoothness_sq(target, dist)
    raise DomainError("no smoothness constant available for full-rank on non-quadratic targets")


def optimum_for(target: Target, family: str, dist: BaseDistribution, rng) -> tuple[Params, bool]:
    """Exact optimum when available, else a reference run flagged approximate."""
    if family == MEAN_FIELD:
        try:
            return mf_optimum(target, dist), False
        except (TypeError, ValueError):
            pass
    elif target.kind == QUADRATIC:
        return fr_optimum(target), False
    init = standard_init(target.d, family)
    ref, _ = spgd.reference_optimum(target, init, dist, rng)
    return ref, True


def sigma_star_sq_of(opt: Params, z_bar) -> float:
    return float(np.sum((opt.m - z_bar) ** 2) + np.sum(opt.scale_matrix() ** 2))


def _map(fn, tasks, workers: int):
    tasks = list(tasks)
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as pool:
        return list(pool.map(fn, tasks))


def _grid(values, fallback):
    return tuple(values) if values else (fallback,)


# -- fit --------------------------------------------------------------------


def prepare_fit(cfg: ExperimentConfig):
    dist = BaseDistribution.parse(cfg.dist)
    target = build_target(cfg.target)
    init = standard_init(target.d, cfg.family)
    aux = make_rng(cfg.target.seed or 0, _AUX)
    opt, approx = optimum_for(target, cfg.family, dist, aux)
    if cfg.schedule == "auto":
        lsq = smoothness_sq(target, dist, cfg.family)
        sigma_sq, _ = grad_second_moment(target, opt, dist, cfg.n_samples, aux)
        sched = spgd.suggested_schedule(math.sqrt(lsq), target.mu, sigma_sq, param_distance_sq(init, opt), cfg.T)
    else:
        sched = spgd.ScheduleConfig(cfg.schedule["gamma0"], cfg.schedule["t_star"], target.mu)
    return dist, target, init, opt, approx, sched


def _fit_chunk(args):
    cfg, seeds = args
    dist, target, init, opt, approx, sched = prepare_fit(cfg)
    return spgd.run_seeds(
        target, init, dist, sched, cfg.T, [make_rng(s) for s in seeds], seeds,
        batch=cfg.batch, opt_reference=opt, reference_approximate=approx,
    )


def run_fit(cfg: ExperimentConfig, workers: int = 1):
    """Returns ``(rows, traces, schedule)``."""
    seeds = list(cfg.seeds)
    k = max(1, min(workers, len(seeds)))
    chunks = [seeds[i::k] for i in range(k)]
    out = _map(_fit_chunk, [(cfg, c) for c in chunks], workers)
    by_seed = {tr.seed: tr for traces in out for tr in traces}
    traces = [by_seed[s] for s in seeds]
    rows = [row for tr in traces for row in tr.rows(cfg.trace_every)]
    sched = traces[0].schedule if traces else {}
    return rows, traces, sched


# -- maxstats ---------------------------------------------------------------


def _maxstats_point(args):
    idx, dist_s, d, cfg = args
    dist = BaseDistribution.parse(dist_s)
    # equal trial counts per seed, so the pooled mean is the plain average
    stats = [maxstats.emax_empirical(dist, d, cfg.emax_trials, make_rng(s, idx)) for s in cfg.seeds]
    k = len(stats)
    mean = sum(m for m, _ in stats) / k
    se = math.sqrt(sum(e * e for _, e in stats)) / k
    row = {"dist": str(dist), "d": d, "empirical": mean, "stderr": se, "n_seeds": k}
    if dist.mgf_domain() is not None:
        row["bound_mgf"] = maxstats.emax_bound_mgf(dist, d)
    row["bound_moment"] = maxstats.emax_bound_moment(dist, d)
    if dist.kind == GAUSSIAN:
        row["bound_gaussian_special"] = maxstats.emax_bound_gaussian(d)
    return row


def run_maxstats(cfg: ExperimentConfig, workers: int = 1):
    dists = _grid(cfg.grid.dist, cfg.dist)
    ds = _grid(cfg.grid.d, cfg.target.d)
    points = [(i, dist, d, cfg) for i, (dist, d) in enumerate(itertools.product(dists, ds))]
    return _map(_maxstats_point, points, workers)


# -- variance sweep ---------------------------------------------------------


def random_pair(target: Target, rng: np.random.Generator) -> tuple[MeanFieldParams, MeanFieldParams]:
    d = target.d
    a = MeanFieldParams(target.z_bar + rng.standard_normal(d), np.exp(0.5 * rng.standard_normal(d)))
    b = MeanFieldParams(target.z_bar + rng.standard_normal(d), np.exp(0.5 * rng.standard_normal(d)))
    return a, b


def _variance_point(args):
    idx, d, kappa, delta, dist_s, cfg = args
    dist = BaseDistribution.parse(dist_s)
    target = build_target(cfg.target, d=d, kappa=kappa, delta=delta)
    mode = default_emax_mode(dist) if cfg.emax_mode == "auto" else cfg.emax_mode
    rows = []
    for s in cfg.seeds:
        for p in range(cfg.n_pairs):
            rng = make_rng(s, idx, p)
            a, b = random_pair(target, rng)
            rep = grad_pair_variance(target, a, b, dist, cfg.n_samples, rng)
            kw = {"rng": rng, "n_trials": cfg.emax_trials} if mode == "empirical" else {}
            rep = with_bounds(rep, dist, target.mu, mode, **kw)
            row = rep.row()
            row.update(kappa=target.kappa, pair=p, seed=s, bound_refined=rep.bound_refined)
            rows.append(row)
    return rows


def variance_points(cfg: ExperimentConfig):
    ds = _grid(cfg.grid.d, cfg.target.d)
    kappas = _grid(cfg.grid.kappa, cfg.target.kappa or (cfg.target.L or cfg.target.mu) / cfg.target.mu)
    deltas = _grid(cfg.grid.delta, cfg.target.delta)
    dists = _grid(cfg.grid.dist, cfg.dist)
    combos = itertools.product(ds, kappas, deltas, dists)
    return [(i, d, k, dl, ds_, cfg) for i, (d, k, dl, ds_) in enumerate(combos)]


def run_variance_sweep(cfg: ExperimentConfig, workers: int = 1):
    return [row for rows in _map(_variance_point, variance_points(cfg), workers) for row in rows]


# -- lower bound ------------------------------------------------------------


def _lowerbound_point(args):
    idx, d, dist_s, cfg = args
    dist = BaseDistribution.parse(dist_s)
    mu, L = cfg.target.mu, cfg.L
    results = [
        lower_bound_experiment(mu, L, d, dist, cfg.t, cfg.n_samples, make_rng(s, idx), emax_trials=cfg.emax_trials)
        for s in cfg.seeds
    ]
    # pool seeds: equal sample sizes, so plain averages
    k = len(results)
    lhs = sum(r.lhs for r in results) / k
    lhs_se = math.sqrt(sum(r.lhs_stderr**2 for r in results)) / k
    emax4 = sum(r.emax4 for r in results) / k
    emax_dm1 = sum(r.emax_dm1 for r in results) / k
    factor = (L - mu) ** 2 / 4.0 - 0.5 * L**2 * emax4 / d
    c_t = results[0].c_t
    rhs = factor * c_t * (emax_dm1 - cfg.t) * d
    alpha, beta = 0.5 * (L + mu), 0.5 * (L - mu)
    emax_ub = (
        maxstats.emax_bound_gaussian(d) if dist.kind == GAUSSIAN else maxstats.emax_bound_moment(dist, d)
    )
    bound = variance_upper_bound(alpha, beta, dist.r4, emax_ub, float(d))
    return {
        "d": d,
        "dist": str(dist),
        "delta": beta,
        "H_norm": alpha,
        "dist_sq": float(d),
        "empirical": lhs,
        "stderr": lhs_se,
        "bound": bound,
        "g_factor": variance_bracket(alpha, beta, dist.r4, emax_ub) / mu**2,
        "lhs": lhs,
        "rhs": rhs,
        "t": cfg.t,
        "vacuous_flag": int(factor <= 0 or emax_dm1 - cfg.t <= 0),
        "lhs_stderr": lhs_se,
        "mu": mu,
        "L": L,
        "factor": factor,
        "c_t": c_t,
        "n_seeds": k,
        "label": "field-level",
    }


def run_lowerbound(cfg: ExperimentConfig, workers: int = 1):
    ds = _grid(cfg.grid.d, cfg.target.d)
    dists = _grid(cfg.grid.dist, cfg.dist)
    points = [(i, d, ds_, cfg) for i, (ds_, d) in enumerate(itertools.product(dists, ds))]
    return _map(_lowerbound_point, points, workers)


# -- dimension sweep --------------------------------------------------------


def _dim_point(args):
    idx, d, family, kappa, delta, dist_s, cfg = args
    dist = BaseDistribution.parse(dist_s)
    target = build_target(cfg.target, d=d, kappa=kappa, delta=delta)
    row = {
        "d": d, "family": family, "kappa": target.kappa, "delta": target.delta, "dist": str(dist),
        "T_max": cfg.T_max, "n_seeds": len(cfg.seeds), "skipped": 0,
    }
    if family == FULL_RANK and (d > cfg.full_rank_max_d or target.kind != QUADRATIC):
        row.update(skipped=1, reached=0)
        return row
    aux = make_rng(cfg.target.seed or 0, _AUX, idx)
    init = standard_init(d, family)
    opt, approx = optimum_for(target, family, dist, aux)
    lsq = smoothness_sq(target, dist, family, rng=aux)
    sigma_sq, _ = grad_second_moment(target, opt, dist, cfg.n_samples, aux)
    delta0_sq = param_distance_sq(init, opt)
    s_star = sigma_star_sq_of(opt, target.z_bar)
    eps = cfg.eps_rel * s_star
    sched = spgd.suggested_schedule(math.sqrt(lsq), target.mu, sigma_sq, delta0_sq, cfg.T_max)
    rngs = [make_rng(s, idx) for s in cfg.seeds]
    hit = spgd.hitting_time(target, init, dist, sched, cfg.T_max, rngs, opt, eps, batch=cfg.batch)
    g_measured = lsq / target.mu**2
    cp = spgd.complexity_prediction(g_measured, s_star, delta0_sq, eps)
    pred = cp.value
    try:
        g_theory = theory_smoothness_sq(target, dist) / target.mu**2 if family == MEAN_FIELD else None
    except DomainError:
        g_theory = None
    row.update(
        eps=eps,
        iterations_to_eps=hit,
        reached=int(hit is not None),
        g_factor=g_theory,
        g_measured=g_measured,
        L_sq=lsq,
        sigma_sq=sigma_sq,
        sigma_star_sq=s_star,
        delta0_sq=delta0_sq,
        gamma0=sched.gamma0,
        t_star=sched.t_star,
        prediction=pred,
        ratio_to_prediction=None if hit is None else hit / pred,
        prediction_switch=cp.case_switch,
        prediction_no_switch=cp.case_no_switch,
        reference_approximate=int(approx),
    )
    return row


def dim_points(cfg: ExperimentConfig):
    ds = _grid(cfg.grid.d, cfg.target.d)
    # the sweep exists to compare the two families, so it runs both unless told otherwise
    fams = tuple(cfg.grid.family) or (MEAN_FIELD, FULL_RANK)
    kappas = _grid(cfg.grid.kappa, cfg.target.kappa or (cfg.target.L or cfg.target.mu) / cfg.target.mu)
    deltas = _grid(cfg.grid.delta, cfg.target.delta)
    dists = _grid(cfg.grid.dist, cfg.dist)
    combos = itertools.product(fams, kappas, deltas, dists, ds)
    return [(i, d, f, k, dl, ds_, cfg) for i, (f, k, dl, ds_, d) in enumerate(combos)]


def run_dim_sweep(cfg: ExperimentConfig, workers: int = 1):
    if len(cfg.seeds) < MIN_SWEEP_SEEDS:
        raise ConfigError(f"dim-sweep averages over at least {MIN_SWEEP_SEEDS} seeds; got {len(cfg.seeds)}")
    return _map(_dim_point, dim_points(cfg), workers)


RUNNERS = {
    "fit": run_fit,
    "maxstats": run_maxstats,
    "variance-sweep": run_variance_sweep,
    "lowerbound": run_lowerbound,
    "dim-sweep": run_dim_sweep,
}
