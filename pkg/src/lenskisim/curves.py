"""Deterministic limit curves and a small scalar ODE integrator."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp

from .params import ParameterError

ODE_RTOL = 1e-10
ODE_ATOL = 1e-12


class ODEError(RuntimeError):
    """The integrator could not advance (step-size underflow or invalid field)."""


def c_of_gamma(gamma: float) -> float:
    """C(gamma) = gamma log(gamma) / (gamma - 1)."""
    if not gamma > 1.0:
        raise ParameterError(f"gamma must exceed 1, got {gamma!r}")
    return gamma * math.log(gamma) / (gamma - 1.0)


@dataclass(frozen=True)
class LimitCurveParams:
    gamma: float
    r0: float = 1.0
    q: float = 0.0

    def __post_init__(self) -> None:
        if not self.gamma > 1.0:
            raise ParameterError("gamma must exceed 1")
        if not self.r0 > 0.0:
            raise ParameterError("r0 must be positive")
        if not self.q > -1.0:
            raise ParameterError("q must exceed -1")

    @property
    def C(self) -> float:
        return c_of_gamma(self.gamma)

    @property
    def poisson_rate(self) -> float:
        """Rate of successful mutations on the (rho mu)^-1 time scale, starting from fitness 1."""
        return self.C / self.r0

    def psi(self, x):
        return np.power(x, -self.q)


def _check_t(t) -> np.ndarray:
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0.0):
        raise ParameterError("t must be nonnegative")
    return t_arr


def _out(val):
    return float(val) if np.ndim(val) == 0 else val


def fitness_limit(t, params: LimitCurveParams):
    """f(t) = sqrt(1 + 2 C t / r0^2)."""
    t_arr = _check_t(t)
    return _out(np.sqrt(1.0 + 2.0 * params.C * t_arr / params.r0**2))


def epistatic_limit(t, params: LimitCurveParams):
    """h(t) = (1 + 2(1+q) C t / r0^2)^(1 / (2(1+q)))."""
    t_arr = _check_t(t)
    g = 1.0 + params.q
    return _out(np.power(1.0 + 2.0 * g * params.C * t_arr / params.r0**2, 1.0 / (2.0 * g)))


def epistatic_field(params: LimitCurveParams) -> Callable[[float], float]:
    """Right-hand side psi(h)^2 C / (r0^2 h) of the epistatic fitness ODE."""
    C, r0 = params.C, params.r0
    return lambda h: params.psi(h) ** 2 * C / (r0 * r0 * h)


def stage2_logistic(t, x0: float, r: float, gamma: float):
    """Logistic path with rate log(gamma)/r started at ``x0``."""
    if not 0.0 < x0 < 1.0:
        raise ParameterError("x0 must lie in (0, 1)")
    if not (r > 0.0 and gamma > 1.0):
        raise ParameterError("need r > 0 and gamma > 1")
    lam = math.log(gamma) / r
    t_arr = np.asarray(t, dtype=float)
    # x0 e^{lt} / (1 - x0 + x0 e^{lt}) written to avoid overflow for large t
    val = 1.0 / (1.0 + (1.0 - x0) / x0 * np.exp(-lam * t_arr))
    return _out(val)


def ode_solve(field: Callable[[float], float], x0: float, t_grid,
              rtol: float = ODE_RTOL, atol: float = ODE_ATOL) -> np.ndarray:
    """Integrate the autonomous scalar ODE x' = field(x) and report x on ``t_grid``.

    Args:
        field: Right-hand side as a function of the state only.
        x0: State at ``t_grid[0]``.
        t_grid: Increasing evaluation times.

    Returns:
        Array of states, one per grid point.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.ndim != 1 or t_grid.size == 0:
        raise ParameterError("t_grid must be a nonempty 1-d array")
    if t_grid.size > 1 and np.any(np.diff(t_grid) <= 0.0):
        raise ParameterError("t_grid must be strictly increasing")
    if t_grid.size == 1:
        return np.array([float(x0)])
    sol = solve_ivp(lambda _t, x: [field(x[0])], (t_grid[0], t_grid[-1]), [float(x0)],
                    method="RK45", t_eval=t_grid, rtol=rtol, atol=atol)
    if sol.status != 0:
        raise ODEError(sol.message)
    return sol.y[0]


def poisson_rate(params: LimitCurveParams) -> float:
    return params.poisson_rate
