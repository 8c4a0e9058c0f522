"""Effect-function families for the vaccine log hazard ratio.

The log hazard ratio is ``f(t) = beta0 + beta1 * g(t)`` with ``g`` one of
``t``, ``ln t`` or ``sqrt t``; the ``constant`` family has no ``beta1`` term.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ValidationError

FAMILIES = ("constant", "linear", "log", "sqrt")

__all__ = ["EffectSpec", "FAMILIES", "basis", "n_params"]


def n_params(family):
    _check_family(family)
    return 1 if family == "constant" else 2


def _check_family(family):
    if family not in FAMILIES:
        raise ValidationError(f"unknown effect family {family!r}; expected one of {FAMILIES}")


def time_function(family, t):
    """Return ``g(t)`` for a time-varying family."""
    t = np.asarray(t, dtype=float)
    if family == "linear":
        return t
    if family == "log":
        if np.any(t <= 0):
            raise DomainError("log effect family is undefined at t <= 0")
        return np.log(t)
    if family == "sqrt":
        if np.any(t < 0):
            raise DomainError("sqrt effect family is undefined at t < 0")
        return np.sqrt(t)
    raise ValidationError(f"family {family!r} has no time function")


def basis(family, t):
    """Covariate vector of a vaccinated subject at times ``t``.

    Returns an array of shape ``(len(t), p)``: ``[1]`` for the constant
    family and ``[1, g(t)]`` otherwise.
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    _check_family(family)
    if family == "constant":
        return np.ones((t.size, 1))
    return np.column_stack([np.ones(t.size), time_function(family, t)])


@dataclass(frozen=True)
class EffectSpec:
    """Effect family with coefficients.

    Parameters
    ----------
    family : {'constant', 'linear', 'log', 'sqrt'}
    beta0 : float
        Log hazard ratio at ``g(t) = 0``.
    beta1 : float or None
        Slope on ``g(t)``; must be None for the constant family.
    """

    family: str
    beta0: float
    beta1: float | None = None

    def __post_init__(self):
        _check_family(self.family)
        if self.family == "constant":
            if self.beta1 not in (None, 0, 0.0):
                raise ValidationError("constant family takes no beta1")
            object.__setattr__(self, "beta1", None)
        elif self.beta1 is None:
            raise ValidationError(f"{self.family} family requires beta1")
        for v in (self.beta0, self.beta1):
            if v is not None and not np.isfinite(v):
                raise ValidationError("effect coefficients must be finite")

    @classmethod
    def from_coefficients(cls, family, coef):
        coef = [float(c) for c in coef]
        if len(coef) != n_params(family):
            raise ValidationError(f"{family} family needs {n_params(family)} coefficient(s)")
        return cls(family, coef[0], coef[1] if len(coef) > 1 else None)

    @property
    def coefficients(self):
        if self.family == "constant":
            return np.array([self.beta0])
        return np.array([self.beta0, self.beta1])

    @property
    def slope(self):
        return 0.0 if self.beta1 is None else self.beta1

    def log_hr(self, t):
        """``f(t)``; scalar in, scalar out."""
        if self.family == "constant":
            out = np.full(np.shape(t), self.beta0, dtype=float)
        else:
            out = self.beta0 + self.beta1 * time_function(self.family, t)
        return out if np.ndim(out) else float(out)

    def hr(self, t):
        return np.exp(self.log_hr(t))

    def to_dict(self):
        return {"family": self.family, "beta0": self.beta0, "beta1": self.beta1}

    @classmethod
    def from_dict(cls, d):
        return cls(d["family"], float(d["beta0"]), None if d.get("beta1") is None else float(d["beta1"]))
