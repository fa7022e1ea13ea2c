"""Reparametrization gradient of the energy term ``f(lambda) = E l(T_lambda(u))``.

Only ``f`` is differentiated here; the entropy is handled by the proximal step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .base_dist import BaseDistribution, DomainError
from .family import MeanFieldParams, Params, reparametrize
from .targets import Target


@dataclass(frozen=True, eq=False)
class GradSample:
    """One estimator draw.

    ``g_c`` has the shape of the scale parameter: ``(d,)`` for mean-field,
    ``(d, d)`` lower triangular for full-rank.  ``u_used`` keeps the noise so
    that a second parameter point can be evaluated on the same draw.
    """

    g_m: np.ndarray
    g_c: np.ndarray
    u_used: np.ndarray

    def norm_sq(self) -> float:
        return float(np.sum(self.g_m**2) + np.sum(self.g_c**2))


def _scale_grad(params: Params, u: np.ndarray, g: np.ndarray) -> np.ndarray:
    if isinstance(params, MeanFieldParams):
        return u * g
    # tril(g u'), batched over leading axes
    return np.tril(g[..., :, None] * u[..., None, :])


def reparam_grad(target: Target, params: Params, u) -> GradSample:
    """``g = grad l(C u + m)``; ``g_m = g`` and ``g_c = u * g`` (or ``tril(g u')``).

    ``u`` may have leading batch axes, in which case every field carries them.
    """
    u = np.asarray(u, dtype=float)
    if u.shape[-1:] != (params.d,) or target.d != params.d:
        raise DomainError(
            f"shape mismatch: u {u.shape}, params d={params.d}, target d={target.d}"
        )
    g = target.grad(reparametrize(params, u))
    return GradSample(g, _scale_grad(params, u, g), u)


def reparam_grad_batch(
    target: Target,
    params: Params,
    dist: BaseDistribution,
    batch: int,
    rng: np.random.Generator,
) -> GradSample:
    """Average of ``batch`` independent estimator draws; ``u_used`` is the last draw."""
    if batch < 1:
        raise DomainError(f"batch must be >= 1, got {batch}")
    if batch == 1:
        return reparam_grad(target, params, dist.sample(rng, params.d))
    u = dist.sample(rng, (batch, params.d))
    s = reparam_grad(target, params, u)
    return GradSample(s.g_m.mean(axis=0), s.g_c.mean(axis=0), u[-1])


def analytic_grad_f(target: Target, params: Params) -> GradSample:
    """Exact ``grad f`` for a quadratic target (any base law with unit variance).

    ``f = 1/2 (m - zbar)' H (m - zbar) + 1/2 tr(C' H C)``, so ``grad_m f = H (m - zbar)``
    and ``grad_C f = H C`` (lower part for the Cholesky factor, ``H_ii c_i`` for mean-field).
    """
    if target.kind != "quadratic":
        raise DomainError("analytic gradient is only available for quadratic targets")
    g_m = target.h_apply(params.m - target.z_bar)
    if isinstance(params, MeanFieldParams):
        g_c = target.h_diag() * params.c
    else:
        g_c = np.tril(target.h_matrix() @ params.c_lower)
    return GradSample(g_m, g_c, np.zeros(params.d))
