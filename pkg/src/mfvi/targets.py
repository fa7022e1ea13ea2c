"""Synthetic strongly convex targets with certified curvature constants.

Three kinds are provided:

* ``quadratic``: ``l(z) = 1/2 (z - zbar)' H (z - zbar)``.
* ``perturbed-quadratic``: the quadratic plus ``-delta * sum cos(z_i - zbar_i) + delta d``.
  Its Hessian is ``H + delta diag(cos(z - zbar))``, so it stays within ``delta``
  of ``H`` in operator norm.
* ``worst-case-field``: a matrix field used only by the lower-bound experiment.
  It has no known potential, so value and gradient are refused.

``H`` is stored as a 1-D diagonal by default, or as a dense symmetric matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .base_dist import BaseDistribution, DomainError
from .family import FullRankParams, MeanFieldParams
from .rng import make_rng

QUADRATIC = "quadratic"
PERTURBED = "perturbed-quadratic"
WORST_CASE = "worst-case-field"
KINDS = (QUADRATIC, PERTURBED, WORST_CASE)


class UnsupportedOperation(TypeError):
    """The operation is not defined for this target kind."""


@dataclass(frozen=True)
class WorstFieldConfig:
    alpha: float
    beta: float

    def __post_init__(self):
        if not self.alpha >= self.beta >= 0:
            raise DomainError(f"need alpha >= beta >= 0, got alpha={self.alpha}, beta={self.beta}")

    @classmethod
    def from_mu_L(cls, mu: float, L: float) -> "WorstFieldConfig":
        if not 0 < mu <= L:
            raise DomainError(f"need 0 < mu <= L, got mu={mu}, L={L}")
        return cls(0.5 * (L + mu), 0.5 * (L - mu))

    @property
    def mu(self) -> float:
        return self.alpha - self.beta

    @property
    def L(self) -> float:
        return self.alpha + self.beta


def argmax_abs(z) -> np.ndarray:
    """Index of the largest ``|z_i|`` along the last axis; ties go to the smallest index."""
    return np.argmax(np.abs(z), axis=-1)


def worst_field_apply(cfg: WorstFieldConfig, z, v) -> np.ndarray:
    """``H_worst(z) v`` with ``H_worst(z) = alpha I + beta/2 (e_i zhat' + zhat e_i')``.

    ``z`` and ``v`` may carry matching leading batch axes.
    """
    z = np.asarray(z, dtype=float)
    v = np.asarray(v, dtype=float)
    if z.shape != v.shape:
        raise DomainError(f"z and v shapes differ: {z.shape} vs {v.shape}")
    norm = np.linalg.norm(z, axis=-1, keepdims=True)
    if np.any(norm == 0):
        raise DomainError("H_worst(z) is undefined at z = 0")
    zhat = z / norm
    i_star = argmax_abs(z)[..., None]
    v_i = np.take_along_axis(v, i_star, axis=-1)
    proj = np.sum(zhat * v, axis=-1, keepdims=True)
    out = cfg.alpha * v + 0.5 * cfg.beta * zhat * v_i
    np.put_along_axis(out, i_star, np.take_along_axis(out, i_star, axis=-1) + 0.5 * cfg.beta * proj, axis=-1)
    return out


def worst_field_matrix(cfg: WorstFieldConfig, z) -> np.ndarray:
    """Materialize ``H_worst(z)`` for a single point."""
    z = np.asarray(z, dtype=float).reshape(-1)
    norm = np.linalg.norm(z)
    if norm == 0:
        raise DomainError("H_worst(z) is undefined at z = 0")
    zhat = z / norm
    e = np.zeros_like(z)
    e[argmax_abs(z)] = 1.0
    return cfg.alpha * np.eye(z.size) + 0.5 * cfg.beta * (np.outer(e, zhat) + np.outer(zhat, e))


@dataclass(frozen=True, eq=False)
class Target:
    """A target ``l`` with gradient oracle and curvature metadata.

    ``mu`` and ``L`` are the certified strong-convexity and smoothness
    constants: ``sigma_min(H) - delta`` and ``sigma_max(H) + delta``.
    """

    kind: str
    h: np.ndarray
    z_bar: np.ndarray
    delta: float = 0.0
    mu: float = field(init=False)
    L: float = field(init=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown target kind {self.kind!r}")
        h = np.array(self.h, dtype=float)
        z_bar = np.array(self.z_bar, dtype=float).reshape(-1)
        d = z_bar.size
        if d < 1:
            raise DomainError("target dimension must be >= 1")
        if h.ndim == 1:
            if h.shape != (d,):
                raise DomainError(f"diagonal H has shape {h.shape}, expected ({d},)")
            eig = h
        elif h.ndim == 2 and h.shape == (d, d):
            if not np.allclose(h, h.T, rtol=0, atol=1e-12 * max(1.0, np.abs(h).max())):
                raise DomainError("dense H must be symmetric")
            h = 0.5 * (h + h.T)
            eig = np.linalg.eigvalsh(h)
        else:
            raise DomainError(f"H must be ({d},) or ({d},{d}), got {h.shape}")
        delta = float(self.delta)
        if delta < 0:
            raise DomainError(f"delta must be >= 0, got {delta}")
        if self.kind == QUADRATIC and delta != 0:
            raise DomainError("quadratic targets have delta = 0")
        mu = float(np.min(eig)) - delta
        if not mu > 0:
            raise DomainError(
                f"sigma_min(H) - delta must be positive, got {np.min(eig)} - {delta}"
            )
        h.flags.writeable = False
        z_bar.flags.writeable = False
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "z_bar", z_bar)
        object.__setattr__(self, "delta", delta)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "L", float(np.max(eig)) + delta)

    @property
    def d(self) -> int:
        return self.z_bar.size

    @property
    def is_diagonal(self) -> bool:
        return self.h.ndim == 1

    @property
    def kappa(self) -> float:
        return self.L / self.mu

    def h_matrix(self) -> np.ndarray:
        return np.diag(self.h) if self.is_diagonal else self.h.copy()

    def h_diag(self) -> np.ndarray:
        return self.h.copy() if self.is_diagonal else np.diag(self.h).copy()

    def h_norm(self) -> float:
        """``||H||_2``."""
        if self.is_diagonal:
            return float(np.max(np.abs(self.h)))
        return float(np.max(np.abs(np.linalg.eigvalsh(self.h))))

    def h_apply(self, x) -> np.ndarray:
        """``H x`` along the last axis."""
        x = np.asarray(x, dtype=float)
        return x * self.h if self.is_diagonal else x @ self.h

    def field_config(self) -> WorstFieldConfig:
        if self.kind != WORST_CASE:
            raise UnsupportedOperation(f"{self.kind} target has no worst-case field")
        return WorstFieldConfig(float(self.h[0]), self.delta)

    def describe(self) -> str:
        return f"{self.kind}(d={self.d},mu={self.mu:.6g},L={self.L:.6g},delta={self.delta:.6g})"

    # -- oracle ------------------------------------------------------------

    def _refuse(self, what):
        if self.kind == WORST_CASE:
            raise UnsupportedOperation(
                f"worst-case field has no {what}; use worst_field_apply instead"
            )

    def value(self, z) -> np.ndarray | float:
        self._refuse("potential")
        r = np.asarray(z, dtype=float) - self.z_bar
        out = 0.5 * np.sum(r * self.h_apply(r), axis=-1)
        if self.kind == PERTURBED:
            out = out - self.delta * np.sum(np.cos(r), axis=-1) + self.delta * self.d
        return out if np.ndim(out) else float(out)

    def grad(self, z) -> np.ndarray:
        self._refuse("gradient")
        r = np.asarray(z, dtype=float) - self.z_bar
        if r.shape[-1:] != (self.d,):
            raise DomainError(f"z has trailing dimension {r.shape[-1:]}, expected ({self.d},)")
        g = self.h_apply(r)
        if self.kind == PERTURBED:
            g = g + self.delta * np.sin(r)
        return g

    def hessian(self, z) -> np.ndarray:
        self._refuse("Hessian")
        hm = self.h_matrix()
        if self.kind == PERTURBED:
            r = np.asarray(z, dtype=float) - self.z_bar
            hm = hm + self.delta * np.diag(np.cos(r))
        return hm

    def hessian_deviation(self) -> tuple[np.ndarray, float]:
        """The certified ``(H, delta)`` pair with ``||hess l(z) - H||_2 <= delta``."""
        return self.h_matrix(), self.delta


# -- constructors -----------------------------------------------------------


def quadratic(h, z_bar=None) -> Target:
    h = np.asarray(h, dtype=float)
    d = h.shape[0]
    return Target(QUADRATIC, h, np.zeros(d) if z_bar is None else z_bar)


def perturbed_quadratic(h, delta: float, z_bar=None) -> Target:
    h = np.asarray(h, dtype=float)
    d = h.shape[0]
    return Target(PERTURBED, h, np.zeros(d) if z_bar is None else z_bar, delta)


def worst_case_field(mu: float, L: float, d: int) -> Target:
    cfg = WorstFieldConfig.from_mu_L(mu, L)
    return Target(WORST_CASE, np.full(d, cfg.alpha), np.zeros(d), cfg.beta)


def fallback_for(mu: float, L: float, d: int = 1) -> tuple[np.ndarray, float]:
    """Generic ``(H, delta)`` valid for any ``mu``-convex ``L``-smooth target."""
    if not 0 < mu <= L:
        raise DomainError(f"need 0 < mu <= L, got mu={mu}, L={L}")
    return 0.5 * (L + mu) * np.eye(d), 0.5 * (L - mu)


def logspace_spectrum(d: int, lo: float, hi: float) -> np.ndarray:
    """``d`` values geometrically spaced from ``lo`` to ``hi`` (just ``lo`` when ``d == 1``)."""
    if d < 1:
        raise DomainError(f"dimension must be >= 1, got {d}")
    if not 0 < lo <= hi:
        raise DomainError(f"need 0 < lo <= hi, got {lo}, {hi}")
    return np.geomspace(lo, hi, d)


def random_rotation(d: int, rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))


def make_target(
    kind: str,
    d: int,
    *,
    mu: float = 1.0,
    L: float | None = None,
    kappa: float | None = None,
    delta: float = 0.0,
    hessian="logspace",
    seed: int | None = None,
) -> Target:
    """Build a target from the config-file description.

    The spectrum of ``H`` is placed on ``[mu + delta, L - delta]`` so the
    certified constants of the result are exactly ``mu`` and ``L``.  ``hessian``
    is ``"logspace"``, ``"identity"``, ``"rotated-logspace"`` (dense) or an
    explicit diagonal.  With a seed, ``zbar`` is a standard normal draw;
    otherwise it is zero.
    """
    if L is None:
        L = mu * (kappa if kappa is not None else 1.0)
    if kind == WORST_CASE:
        return worst_case_field(mu, L, d)
    lo, hi = mu + delta, L - delta
    if lo > hi:
        raise DomainError(f"L={L} is too small for mu={mu} and delta={delta}: need L >= mu + 2 delta")
    if isinstance(hessian, str):
        if hessian == "identity":
            h = np.full(d, lo)
        elif hessian in ("logspace", "rotated-logspace"):
            h = logspace_spectrum(d, lo, hi)
            if hessian == "rotated-logspace":
                q = random_rotation(d, make_rng(0 if seed is None else seed, 1))
                h = (q * h) @ q.T
        else:
            raise ValueError(f"unknown hessian setting {hessian!r}")
    else:
        h = np.asarray(hessian, dtype=float)
        if h.shape != (d,):
            raise DomainError(f"explicit diagonal has length {h.size}, expected {d}")
    z_bar = np.zeros(d) if seed is None else make_rng(seed, 0).standard_normal(d)
    return Target(kind, h, z_bar, delta)


# -- closed-form optima -----------------------------------------------------


def mf_optimum(target: Target, dist: BaseDistribution | None = None) -> MeanFieldParams:
    """Minimizer of the free energy over the mean-field family.

    Quadratic: ``m = zbar``, ``c_i = H_ii^(-1/2)``, for any base law.

    Perturbed quadratic with diagonal ``H``: coordinates decouple and
    ``m = zbar`` by symmetry; each ``c_i`` minimizes the strictly convex
    ``1/2 H_ii c^2 - delta E cos(c u) - log c``, whose stationarity condition
    is solved by bracketing.  Needs ``dist``.
    """
    if target.kind == QUADRATIC:
        return MeanFieldParams(target.z_bar, 1.0 / np.sqrt(target.h_diag()))
    if target.kind == PERTURBED and target.is_diagonal:
        if dist is None:
            raise ValueError("perturbed optimum depends on the base law; pass dist")
        c = np.array([_perturbed_scale(hi, target.delta, dist) for hi in target.h])
        return MeanFieldParams(target.z_bar, c)
    raise UnsupportedOperation(f"no closed-form mean-field optimum for {target.describe()}")


def _perturbed_scale(h_ii: float, delta: float, dist: BaseDistribution) -> float:
    def stationarity(c):
        return h_ii * c - delta * dist.cos_mean_deriv(c) - 1.0 / c

    # curvature is at least h_ii - delta > 0, so the root lies in this bracket
    lo = 0.5 / math.sqrt(h_ii + delta)
    hi = 2.0 / math.sqrt(h_ii - delta)
    return optimize.brentq(stationarity, lo, hi, xtol=1e-15, rtol=1e-14)


def fr_optimum(target: Target) -> FullRankParams:
    """Full-rank optimum for a quadratic target: ``C = chol(H^-1)``."""
    if target.kind != QUADRATIC:
        raise UnsupportedOperation(f"no closed-form full-rank optimum for {target.describe()}")
    cov = np.linalg.inv(target.h_matrix())
    return FullRankParams(target.z_bar, np.linalg.cholesky(0.5 * (cov + cov.T)))
