"""Standardized symmetric base laws for location-scale families.

Every law here has zero mean, unit variance, zero skew and finite kurtosis.
Student-t draws are rescaled by ``sqrt((nu - 2) / nu)`` so that the variance
is exactly one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, special, stats

GAUSSIAN = "gaussian"
STUDENT_T = "student-t"
LAPLACE = "laplace"

_LAPLACE_SCALE = 1.0 / math.sqrt(2.0)


class DomainError(ValueError):
    """Argument lies outside the domain where a quantity is defined or finite."""


@dataclass(frozen=True)
class BaseDistribution:
    """Univariate base law ``phi``.

    Parameters
    ----------
    kind : str
        One of ``"gaussian"``, ``"student-t"``, ``"laplace"``.
    nu : float, optional
        Degrees of freedom, required for Student-t and must exceed 4.
    """

    kind: str
    nu: float | None = None
    variance_scale: float = field(init=False)

    def __post_init__(self):
        if self.kind == STUDENT_T:
            if self.nu is None or not self.nu > 4:
                raise DomainError(
                    f"student-t requires nu > 4 for finite kurtosis, got nu={self.nu}"
                )
            scale = math.sqrt((self.nu - 2.0) / self.nu)
        elif self.kind == GAUSSIAN:
            scale = 1.0
        elif self.kind == LAPLACE:
            scale = _LAPLACE_SCALE
        else:
            raise ValueError(f"unknown base distribution kind {self.kind!r}")
        if self.kind != STUDENT_T and self.nu is not None:
            raise ValueError(f"{self.kind} takes no degrees-of-freedom parameter")
        object.__setattr__(self, "variance_scale", scale)

    # -- construction / serialization -------------------------------------

    @classmethod
    def parse(cls, text: str) -> "BaseDistribution":
        """Build from the short form used in configs: ``gaussian``, ``student-t:8``, ``laplace``."""
        text = text.strip().lower()
        if text.startswith(STUDENT_T):
            _, sep, nu = text.partition(":")
            if not sep or not nu:
                raise ValueError("student-t needs degrees of freedom, e.g. 'student-t:8'")
            try:
                nu_val = float(nu)
            except ValueError:
                raise ValueError(f"bad degrees of freedom in {text!r}") from None
            return cls(STUDENT_T, nu_val)
        if text in (GAUSSIAN, LAPLACE):
            return cls(text)
        raise ValueError(f"unknown base distribution {text!r}")

    def __str__(self) -> str:
        if self.kind == STUDENT_T:
            nu = int(self.nu) if float(self.nu).is_integer() else self.nu
            return f"{STUDENT_T}:{nu}"
        return self.kind

    # -- sampling ----------------------------------------------------------

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        """Draw i.i.d. standardized variates with the given shape."""
        if self.kind == GAUSSIAN:
            return rng.standard_normal(size)
        if self.kind == STUDENT_T:
            return rng.standard_t(self.nu, size) * self.variance_scale
        return rng.laplace(0.0, _LAPLACE_SCALE, size)

    # -- moments -----------------------------------------------------------

    @property
    def r4(self) -> float:
        return self.kurtosis()

    def kurtosis(self) -> float:
        """Exact fourth moment ``E u^4``."""
        return self.moment_usq(2)

    def moment_usq(self, k: int) -> float:
        """``E u^(2k)``, or ``inf`` when the moment diverges."""
        if k < 0 or int(k) != k:
            raise DomainError(f"k must be a non-negative integer, got {k}")
        k = int(k)
        if self.kind == GAUSSIAN:
            # (2k - 1)!!
            return float(math.prod(range(1, 2 * k, 2)))
        if self.kind == LAPLACE:
            return float(math.factorial(2 * k)) * _LAPLACE_SCALE ** (2 * k)
        nu = self.nu
        if 2 * k >= nu:
            return math.inf
        # raw t_nu: nu^k Gamma(k + 1/2) Gamma(nu/2 - k) / (sqrt(pi) Gamma(nu/2))
        log_raw = (
            k * math.log(nu)
            + special.gammaln(k + 0.5)
            + special.gammaln(nu / 2.0 - k)
            - 0.5 * math.log(math.pi)
            - special.gammaln(nu / 2.0)
        )
        return float(math.exp(log_raw) * self.variance_scale ** (2 * k))

    def max_finite_usq_moment(self) -> float:
        """Largest ``k`` with ``E u^(2k)`` finite (``inf`` for light tails)."""
        if self.kind != STUDENT_T:
            return math.inf
        return math.ceil(self.nu / 2.0) - 1

    def mgf_domain(self) -> tuple[float, float] | None:
        """Open interval of ``t > 0`` on which the MGF of ``u^2`` is finite."""
        if self.kind == GAUSSIAN:
            return (0.0, 0.5)
        return None

    def mgf_usq(self, t: float) -> float:
        """MGF of ``u^2`` at ``t > 0``; ``inf`` outside its convergence region."""
        if not t > 0:
            raise DomainError(f"mgf_usq needs t > 0, got {t}")
        if self.kind == GAUSSIAN and t < 0.5:
            return (1.0 - 2.0 * t) ** -0.5
        return math.inf

    def entropy(self) -> float:
        """Differential entropy in nats."""
        if self.kind == GAUSSIAN:
            return 0.5 * math.log(2.0 * math.pi * math.e)
        if self.kind == LAPLACE:
            return 1.0 + math.log(2.0 * _LAPLACE_SCALE)
        nu = self.nu
        raw = 0.5 * (nu + 1.0) * (
            special.digamma(0.5 * (nu + 1.0)) - special.digamma(0.5 * nu)
        ) + math.log(math.sqrt(nu)) + special.betaln(0.5 * nu, 0.5)
        return float(raw + math.log(self.variance_scale))

    # -- tail / characteristic functions ----------------------------------

    def usq_survival(self, s):
        """``P[u^2 > s]`` for ``s >= 0``."""
        s = np.asarray(s, dtype=float)
        root = np.sqrt(np.maximum(s, 0.0))
        if self.kind == GAUSSIAN:
            out = special.erfc(root / math.sqrt(2.0))
        elif self.kind == LAPLACE:
            out = np.exp(-root / _LAPLACE_SCALE)
        else:
            out = 2.0 * stats.t.sf(root / self.variance_scale, self.nu)
        return out if out.ndim else float(out)

    def cos_mean(self, c):
        """Characteristic function ``E cos(c u)`` (real because the law is symmetric)."""
        c = np.abs(np.asarray(c, dtype=float))
        if self.kind == GAUSSIAN:
            out = np.exp(-0.5 * c**2)
        elif self.kind == LAPLACE:
            out = 1.0 / (1.0 + (_LAPLACE_SCALE * c) ** 2)
        else:
            half = 0.5 * self.nu
            x = math.sqrt(self.nu) * self.variance_scale * c
            with np.errstate(invalid="ignore"):
                val = x**half * special.kv(half, x) / (special.gamma(half) * 2.0 ** (half - 1.0))
            out = np.where(x == 0.0, 1.0, val)
        return out if out.ndim else float(out)

    def cos_mean_deriv(self, c):
        """Derivative of :meth:`cos_mean` in ``c``, i.e. ``-E[u sin(c u)]``."""
        c = float(c)
        if self.kind == GAUSSIAN:
            return -c * math.exp(-0.5 * c * c)
        if self.kind == LAPLACE:
            b2 = _LAPLACE_SCALE**2
            return -2.0 * b2 * c / (1.0 + b2 * c * c) ** 2
        if c == 0.0:
            return 0.0
        sign = 1.0 if c > 0 else -1.0
        val, _ = integrate.quad(
            lambda x: x * self.pdf(x), 0.0, np.inf, weight="sin", wvar=abs(c)
        )
        return -2.0 * sign * val

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == GAUSSIAN:
            return stats.norm.pdf(x)
        if self.kind == LAPLACE:
            return stats.laplace.pdf(x, scale=_LAPLACE_SCALE)
        return stats.t.pdf(x / self.variance_scale, self.nu) / self.variance_scale


def gaussian() -> BaseDistribution:
    return BaseDistribution(GAUSSIAN)


def student_t(nu: float) -> BaseDistribution:
    return BaseDistribution(STUDENT_T, float(nu))


def laplace() -> BaseDistribution:
    return BaseDistribution(LAPLACE)
