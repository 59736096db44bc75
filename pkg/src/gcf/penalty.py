"""Penalty terms that push the support function away from the obstacle.

The unscaled profile ``beta`` is concave, non-decreasing, equals 0 on
``[1, inf)`` and equals ``-1 + 2x`` on ``(-inf, 0)``.  Two bridges on
``[0, 1)`` are provided:

``"c11"``
    ``-(1 - x)^2``; C^{1,1} with a jump of the second derivative at 0.
``"smooth"``
    ``-1 + 2x - 2x^3 + x^4``; matches value, slope and curvature at both
    ends so the profile is C^2 everywhere.

The scaled penalty is ``beta_delta(x) = C0 * beta(x / delta)``, which takes
values in ``[-C0, 0]`` whenever ``x >= 0``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameter

VARIANTS = ("c11", "smooth")


def beta(x, variant: str = "c11"):
    """Unscaled profile value and derivative, vectorised."""
    x = np.asarray(x, dtype=float)
    val = np.zeros_like(x)
    der = np.zeros_like(x)
    neg = x < 0
    mid = (x >= 0) & (x < 1)
    val[neg] = -1.0 + 2.0 * x[neg]
    der[neg] = 2.0
    xm = x[mid]
    if variant == "c11":
        val[mid] = -((1.0 - xm) ** 2)
        der[mid] = 2.0 * (1.0 - xm)
    elif variant == "smooth":
        val[mid] = -1.0 + 2.0 * xm - 2.0 * xm**3 + xm**4
        der[mid] = 2.0 * (1.0 - xm) ** 2 * (1.0 + 2.0 * xm)
    else:
        raise InvalidParameter(f"unknown penalty variant {variant!r}")
    return val, der


@dataclass(frozen=True)
class PenaltyFunction:
    """Scaled penalty ``x -> C0 * beta(x / delta)``.

    Parameters
    ----------
    delta : float
        Width of the transition layer, > 0.
    c0 : float
        Depth of the penalty, > 0.
    variant : {"c11", "smooth"}
    """

    delta: float
    c0: float
    variant: str = "c11"

    def eval(self, x):
        """Return ``(beta_delta(x), beta_delta'(x))``."""
        v, d = beta(np.asarray(x, dtype=float) / self.delta, self.variant)
        return self.c0 * v, (self.c0 / self.delta) * d

    def __call__(self, x):
        return self.eval(x)[0]

    @property
    def variant_code(self) -> int:
        return VARIANTS.index(self.variant)


def make_penalty(delta: float, c0: float, variant: str = "c11") -> PenaltyFunction:
    if not (np.isfinite(delta) and delta > 0):
        raise InvalidParameter(f"delta must be positive, got {delta}")
    if not (np.isfinite(c0) and c0 > 0):
        raise InvalidParameter(f"C0 must be positive, got {c0}")
    if variant not in VARIANTS:
        raise InvalidParameter(f"unknown penalty variant {variant!r}")
    return PenaltyFunction(float(delta), float(c0), variant)
