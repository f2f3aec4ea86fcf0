"""Deterministic (large-K) limit: the competitive Lotka-Volterra system
with mutation flux,

    dx_i/dt = ((1-mu) b_i - d_i - sum_j c_ij x_j) x_i + mu sum_j m_ji b_j x_j,

integrated with an adaptive explicit embedded 5(4) Runge-Kutta pair.
The mutation matrix m follows the same boundary conventions as the
stochastic simulator (one-sided mass from the top trait is lost;
two-sided boundary mass reflects).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .model import FitnessLandscape, ModelParams, MutationKernel, derive_landscape

#: Negative values at most this deep are treated as integrator overshoot.
CLAMP_FLOOR = 1e-14


class IntegrationError(RuntimeError):
    pass


class StepSizeUnderflow(IntegrationError):
    """The step controller collapsed; the problem is stiffer than this
    explicit pair can handle."""


def mutation_matrix(L: int, kernel: MutationKernel) -> np.ndarray:
    """Row i = distribution of the mutant's trait for a parent of trait i.

    One-sided: everything to i+1; the top trait's row is zero (its mutant
    mass is lost, matching the jump process). Two-sided: half to each
    neighbour, with full reflection at the ends so each row sums to 1.
    """
    m = np.zeros((L + 1, L + 1))
    if kernel is MutationKernel.ONE_SIDED:
        for i in range(L):
            m[i, i + 1] = 1.0
    else:
        m[0, 1] = 1.0
        m[L, L - 1] = 1.0
        for i in range(1, L):
            m[i, i - 1] = 0.5
            m[i, i + 1] = 0.5
    return m


def rhs(x: np.ndarray, params: ModelParams) -> np.ndarray:
    """Right-hand side of the mutation-perturbed Lotka-Volterra system."""
    x = np.asarray(x, dtype=float)
    m = mutation_matrix(params.L, params.kernel)
    growth = ((1.0 - params.mu) * params.b - params.d - params.c @ x) * x
    return growth + params.mu * (m.T @ (params.b * x))


@dataclass
class OdePath:
    """Dense output on the requested grid plus integration diagnostics."""

    t: np.ndarray
    x: np.ndarray                 # shape (len(t), L+1), clamped nonnegative
    n_clamped: int                # samples clamped from within [-CLAMP_FLOOR, 0)
    n_clamped_large: int          # samples below -CLAMP_FLOOR (also clamped, flagged)
    worst_negative: float
    nfev: int

    def rescaled(self, mu: float) -> np.ndarray:
        """log x / log(1/mu); exact zeros map to -inf."""
        with np.errstate(divide="ignore"):
            return np.log(self.x) / np.log(1.0 / mu)

    def to_csv(self, path, rescaled_mu: float | None = None) -> None:
        import json as _json
        from pathlib import Path as _Path

        n = self.x.shape[1]
        lines = ["t," + ",".join(f"x{i}" for i in range(n))]
        for t, row in zip(self.t, self.x):
            lines.append(f"{t!r}," + ",".join(repr(v) for v in row))
        _Path(path).write_text("\n".join(lines) + "\n")
        if rescaled_mu is not None:
            lg = np.log(1.0 / rescaled_mu)
            resc = self.rescaled(rescaled_mu)
            rpath = _Path(path).with_suffix(".rescaled.csv")
            lines = ["tau," + ",".join(f"logx{i}_over_log1mu" for i in range(n))]
            for t, row in zip(self.t / lg, resc):
                lines.append(f"{t!r}," + ",".join(repr(v) for v in row))
            rpath.write_text("\n".join(lines) + "\n")


def integrate_field(
    field,
    x0,
    t_end: float,
    tol: float,
    t_eval=None,
    atol=None,
    t_start: float = 0.0,
) -> tuple[np.ndarray, np.ndarray, int]:
    """Generic RK45 drive used by `integrate` and the linear-cascade checks.

    Raises StepSizeUnderflow when scipy's controller gives up (status < 0),
    which for this explicit pair means the required step fell below the
    floating-point floor.
    """
    if not (1e-13 < tol < 1e-3):
        raise ValueError("tol must lie in (1e-13, 1e-3)")
    if atol is None:
        # near-zero floor: every component is controlled relatively, which
        # this positive system needs because components span hundreds of
        # orders of magnitude
        atol = 1e-290
    sol = solve_ivp(
        lambda t, y: field(y),
        (t_start, t_end),
        np.asarray(x0, dtype=float),
        method="RK45",
        rtol=tol,
        atol=atol,
        t_eval=t_eval,
        dense_output=t_eval is None,
    )
    if not sol.success:
        raise StepSizeUnderflow(
            f"integrator failed before t={t_end:.6g}: {sol.message} "
            "(stiffness alarm: step size collapsed)"
        )
    return sol.t, sol.y.T, sol.nfev


def integrate(
    params: ModelParams,
    x0,
    t_end: float,
    tol: float = 1e-8,
    t_eval=None,
) -> OdePath:
    """Integrate the system from densities x0 over [0, t_end].

    Error control is relative (`tol`) with a near-zero absolute floor:
    trait densities span hundreds of orders of magnitude and a scalar
    absolute floor anywhere above the smallest of them lets the step
    controller stop resolving the deep components, which then go unstable
    under the large steps the quasi-static residents allow. Tiny negative
    overshoot is clamped to 0 on the returned samples and counted in the
    diagnostics.
    """
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (params.L + 1,):
        raise ValueError(f"x0 must have shape ({params.L + 1},)")
    if np.any(x0 < 0):
        raise ValueError("x0 must be nonnegative")
    m = mutation_matrix(params.L, params.kernel)
    bmat = params.mu * (m.T * params.b[None, :])  # inflow operator
    growth0 = (1.0 - params.mu) * params.b - params.d
    c = params.c

    def field(x):
        return (growth0 - c @ x) * x + bmat @ x

    t, x, nfev = integrate_field(field, x0, t_end, tol, t_eval=t_eval)
    neg = x < 0.0
    worst = float(x.min(initial=0.0))
    n_clamp = int(np.count_nonzero(neg & (x >= -CLAMP_FLOOR)))
    n_large = int(np.count_nonzero(x < -CLAMP_FLOOR))
    x = np.maximum(x, 0.0)
    return OdePath(
        t=t, x=x, n_clamped=n_clamp, n_clamped_large=n_large,
        worst_negative=worst, nfev=nfev,
    )


@dataclass(frozen=True)
class FixedPoint:
    x0: float
    xL: float
    eigenvalues: tuple[float, float]
    stable: bool
    label: str


@dataclass(frozen=True)
class EquilibriumClassification:
    points: tuple[FixedPoint, ...]
    scenario: str   # "terminal_wins" | "resident_wins" | "coexistence" | "bistable"


def lv_equilibrium(params: ModelParams) -> EquilibriumClassification:
    """Boundary fixed points of the mu=0 two-species {0, L} subsystem.

    The three boundary equilibria are (0,0), (xbar_0, 0), (0, xbar_L);
    their stability follows from the 2x2 Jacobian, which is triangular at
    the boundary points, so the eigenvalues are read off directly:
    at (xbar_0, 0) they are (-c_00 xbar_0, f_L0), at (0, xbar_L) they are
    (f_0L, -c_LL xbar_L), at the origin (b_0-d_0, b_L-d_L).
    """
    land = derive_landscape(params)
    L = params.L
    x0bar, xLbar = land.xbar[0], land.xbar[L]
    if x0bar <= 0 or xLbar <= 0:
        raise ValueError("lv_equilibrium requires xbar_0 > 0 and xbar_L > 0")
    f0L = float(land.f[0, L])
    fL0 = float(land.f[L, 0])
    g0 = float(params.b[0] - params.d[0])
    gL = float(params.b[L] - params.d[L])

    def point(x0, xL, eigs, label):
        return FixedPoint(
            x0=x0, xL=xL, eigenvalues=(float(eigs[0]), float(eigs[1])),
            stable=all(e < 0 for e in eigs), label=label,
        )

    pts = (
        point(0.0, 0.0, (g0, gL), "origin"),
        point(x0bar, 0.0, (-params.c[0, 0] * x0bar, fL0), "resident"),
        point(0.0, xLbar, (f0L, -params.c[L, L] * xLbar), "terminal"),
    )
    if f0L < 0 < fL0:
        scenario = "terminal_wins"
    elif fL0 < 0 < f0L:
        scenario = "resident_wins"
    elif f0L > 0 and fL0 > 0:
        scenario = "coexistence"   # out of scope: interior equilibrium
    else:
        scenario = "bistable"
    return EquilibriumClassification(points=pts, scenario=scenario)
