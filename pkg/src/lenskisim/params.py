"""Model parameters shared by the day kernels and the long-run engine."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional


class ParameterError(ValueError):
    """Raised when a parameter set violates a model precondition."""


@dataclass(frozen=True)
class ModelParams:
    """Population size, growth and mutation parameters.

    ``rho`` and ``mu`` are the per-mutation rate increment and the per-day
    mutation probability. They can be given explicitly or derived from the
    polynomial scalings ``rho = N**-b`` and ``mu = N**-a`` via
    :meth:`from_scalings`.

    ``u`` is the common growth time used when comparing the evolved and
    ancestral populations; ``None`` means one neutral day, ``log(gamma)/r0``.
    """

    N: int
    gamma: float
    r0: float = 1.0
    rho: float = 0.0
    mu: float = 0.0
    q: float = 0.0
    u: Optional[float] = None
    b: Optional[float] = field(default=None, compare=False)
    a: Optional[float] = field(default=None, compare=False)

    def __post_init__(self) -> None:
        if int(self.N) != self.N or self.N < 1:
            raise ParameterError(f"N must be a positive integer, got {self.N!r}")
        object.__setattr__(self, "N", int(self.N))
        if not self.gamma > 1.0:
            raise ParameterError(f"gamma must exceed 1, got {self.gamma!r}")
        if not self.r0 > 0.0:
            raise ParameterError(f"r0 must be positive, got {self.r0!r}")
        if self.rho < 0.0:
            raise ParameterError(f"rho must be nonnegative, got {self.rho!r}")
        if not 0.0 <= self.mu <= 1.0:
            raise ParameterError(f"mu must be a probability, got {self.mu!r}")
        if not self.q > -1.0:
            raise ParameterError(f"q must exceed -1, got {self.q!r}")
        if self.u is not None and not self.u > 0.0:
            raise ParameterError(f"u must be positive, got {self.u!r}")

    @classmethod
    def from_scalings(
        cls,
        N: int,
        gamma: float,
        b: float,
        a: float,
        r0: float = 1.0,
        q: float = 0.0,
        u: Optional[float] = None,
        enforce_assumption_a: bool = True,
    ) -> "ModelParams":
        """Build parameters with ``rho = N**-b`` and ``mu = N**-a``.

        With ``enforce_assumption_a`` the weak-mutation regime
        ``0 < b < 1/2`` and ``a > 3b`` is checked.
        """
        if enforce_assumption_a:
            if not 0.0 < b < 0.5:
                raise ParameterError(f"b must lie in (0, 1/2), got {b!r}")
            if not a > 3.0 * b:
                raise ParameterError(f"need a > 3b, got a={a!r}, b={b!r}")
        return cls(N=N, gamma=gamma, r0=r0, rho=float(N) ** (-b), mu=float(N) ** (-a),
                   q=q, u=u, b=b, a=a)

    @property
    def sigma0(self) -> float:
        """Neutral day length ``log(gamma)/r0``."""
        return math.log(self.gamma) / self.r0

    @property
    def measurement_time(self) -> float:
        return self.u if self.u is not None else self.sigma0

    def with_(self, **changes) -> "ModelParams":
        return replace(self, **changes)
