"""Location-scale variational families under the linear parametrization.

Parameters are ``lambda = (m, C)`` with ``C`` diagonal (mean-field) or lower
triangular (full-rank Cholesky factor).  The flat parameter vector is
``m`` followed by the scale entries row-major, so that Euclidean distances
between parameter vectors match the optimizer's iterate space.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .base_dist import BaseDistribution, DomainError

MEAN_FIELD = "mean-field"
FULL_RANK = "full-rank"


@dataclass(frozen=True, eq=False)
class MeanFieldParams:
    m: np.ndarray
    c: np.ndarray

    family = MEAN_FIELD

    def __post_init__(self):
        m = np.array(self.m, dtype=float).reshape(-1)
        c = np.array(self.c, dtype=float).reshape(-1)
        if m.size < 1 or m.shape != c.shape:
            raise DomainError(f"m and c must be non-empty and equal length, got {m.shape}, {c.shape}")
        if not np.all(c > 0):
            raise DomainError("mean-field scale entries must be strictly positive")
        m.flags.writeable = False
        c.flags.writeable = False
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "c", c)

    @property
    def d(self) -> int:
        return self.m.size

    @property
    def scale_diag(self) -> np.ndarray:
        return self.c

    def scale_matrix(self) -> np.ndarray:
        return np.diag(self.c)

    def flat(self) -> np.ndarray:
        return np.concatenate([self.m, self.c])

    def to_json(self) -> dict:
        return {"family": MEAN_FIELD, "d": self.d, "m": self.m.tolist(), "c": self.c.tolist()}

    def __eq__(self, other):
        return (
            isinstance(other, MeanFieldParams)
            and np.array_equal(self.m, other.m)
            and np.array_equal(self.c, other.c)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class FullRankParams:
    m: np.ndarray
    c_lower: np.ndarray

    family = FULL_RANK

    def __post_init__(self):
        m = np.array(self.m, dtype=float).reshape(-1)
        cl = np.array(self.c_lower, dtype=float)
        d = m.size
        if d < 1 or cl.shape != (d, d):
            raise DomainError(f"c_lower must be {d}x{d}, got {cl.shape}")
        if np.any(np.triu(cl, 1) != 0):
            raise DomainError("c_lower must be lower triangular")
        if not np.all(np.diag(cl) > 0):
            raise DomainError("Cholesky factor diagonal must be strictly positive")
        m.flags.writeable = False
        cl.flags.writeable = False
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "c_lower", cl)

    @property
    def d(self) -> int:
        return self.m.size

    @property
    def scale_diag(self) -> np.ndarray:
        return np.diag(self.c_lower).copy()

    def scale_matrix(self) -> np.ndarray:
        return self.c_lower.copy()

    def flat(self) -> np.ndarray:
        rows, cols = np.tril_indices(self.d)
        return np.concatenate([self.m, self.c_lower[rows, cols]])

    def to_json(self) -> dict:
        return {
            "family": FULL_RANK,
            "d": self.d,
            "m": self.m.tolist(),
            "c_lower": self.c_lower.tolist(),
        }

    def __eq__(self, other):
        return (
            isinstance(other, FullRankParams)
            and np.array_equal(self.m, other.m)
            and np.array_equal(self.c_lower, other.c_lower)
        )

    __hash__ = None


Params = MeanFieldParams | FullRankParams


@dataclass(frozen=True)
class ParamDelta:
    """Difference ``(m - m', C - C')`` between two parameter points."""

    dm: np.ndarray
    dc: np.ndarray

    def norm_sq(self) -> float:
        return float(np.sum(self.dm**2) + np.sum(self.dc**2))


def params_from_json(record: dict) -> Params:
    family = record.get("family")
    if family == MEAN_FIELD:
        return MeanFieldParams(record["m"], record["c"])
    if family == FULL_RANK:
        return FullRankParams(record["m"], record["c_lower"])
    raise ValueError(f"unknown family {family!r}")


def reparametrize(params: Params, u) -> np.ndarray:
    """``T_lambda(u) = C u + m``; ``u`` may carry leading batch axes."""
    u = np.asarray(u, dtype=float)
    if u.shape[-1:] != (params.d,):
        raise DomainError(f"u has trailing dimension {u.shape[-1:]}, expected ({params.d},)")
    if isinstance(params, MeanFieldParams):
        return u * params.c + params.m
    return u @ params.c_lower.T + params.m


def entropy_h(params: Params, dist: BaseDistribution) -> float:
    """Negative entropy ``h(lambda) = -sum log C_ii - d H(phi)``."""
    diag = params.scale_diag
    if not np.all(diag > 0):
        raise DomainError("scale diagonal must be positive")
    return float(-np.sum(np.log(diag)) - params.d * dist.entropy())


def difference(a: Params, b: Params) -> ParamDelta:
    if type(a) is not type(b) or a.d != b.d:
        raise DomainError("parameters must share family and dimension")
    if isinstance(a, MeanFieldParams):
        return ParamDelta(a.m - b.m, a.c - b.c)
    return ParamDelta(a.m - b.m, a.c_lower - b.c_lower)


def param_distance_sq(a: Params, b: Params) -> float:
    """``||m - m'||^2 + ||C - C'||_F^2``."""
    return difference(a, b).norm_sq()


def sample_q(params: Params, dist: BaseDistribution, rng: np.random.Generator, n: int | None = None):
    """Draw from ``q_lambda``; returns shape ``(d,)`` or ``(n, d)``."""
    shape = params.d if n is None else (n, params.d)
    return reparametrize(params, dist.sample(rng, shape))


def like(params: Params, m, scale) -> Params:
    """New parameters of the same family as ``params``."""
    if isinstance(params, MeanFieldParams):
        return MeanFieldParams(m, scale)
    return FullRankParams(m, scale)


def standard_init(d: int, family: str = MEAN_FIELD, m0: float = 0.0, c0: float = 1.0) -> Params:
    m = np.full(d, float(m0))
    if family == MEAN_FIELD:
        return MeanFieldParams(m, np.full(d, float(c0)))
    if family == FULL_RANK:
        return FullRankParams(m, float(c0) * np.eye(d))
    raise ValueError(f"unknown family {family!r}")
