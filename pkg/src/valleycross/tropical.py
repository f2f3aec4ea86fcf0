"""Small-mutation log-rescaled limits.

As mu -> 0, on the time scale t*log(1/mu), the rescaled log-densities
log(x_i)/log(1/mu) of the mutation-perturbed Lotka-Volterra system
converge to piecewise-linear paths. Two computational routes are
provided and cross-checked:

* the lower-bidiagonal linear cascade dy/dt = M y (diagonal f_i - b_i mu,
  subdiagonal (mu/zeta) b_{i-1}) solved in closed form through its
  explicit eigendecomposition (`cascade_exact`) and through the limiting
  exponent minimization (`cascade_exponent`);
* the full piecewise-linear limit paths of the valley-crossing dynamics
  (`limit_paths`), built exactly from breakpoints, for both mutation
  kernels.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .model import (
    FitnessLandscape,
    ModelParams,
    MutationKernel,
    derive_landscape,
    validate_valley,
)
from .ode import integrate, integrate_field

#: Fitness gaps below this trip the closed-form eigenbasis (it divides by them).
NEAR_DEGENERATE_GAP = 1e-9


class TropicalError(ValueError):
    pass


class NearDegenerate(TropicalError):
    """Some |f_i - f_j| is too small for the closed-form eigenvectors."""


class NoSource(TropicalError):
    pass


@dataclass(frozen=True)
class CascadeSpec:
    """Linear cascade data: growth rates f, hop rates b, initial masses
    y_i(0) = ell_i * mu^{p_i} (ell_i = 0 means absent), and the kernel
    factor zeta (1 one-sided, 2 two-sided)."""

    zeta: int
    f: np.ndarray
    b: np.ndarray
    ell: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        if self.zeta not in (1, 2):
            raise TropicalError("zeta must be 1 or 2")
        for name in ("f", "b", "ell", "p"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        n = len(self.f)
        if not (len(self.b) == len(self.ell) == len(self.p) == n):
            raise TropicalError("f, b, ell, p must share one length")
        if np.any(self.b < 0) or np.any(self.ell < 0):
            raise TropicalError("b and ell must be nonnegative")
        if np.any(self.p[self.ell != 0] < 0):
            raise TropicalError("p must be >= 0 wherever ell != 0")

    @property
    def L(self) -> int:
        return len(self.f) - 1

    def min_gap(self) -> float:
        diffs = np.abs(np.subtract.outer(self.f, self.f))
        np.fill_diagonal(diffs, np.inf)
        return float(diffs.min())

    def matrix(self, mu: float) -> np.ndarray:
        m = np.diag(self.f - self.b * mu)
        for i in range(1, self.L + 1):
            m[i, i - 1] = mu / self.zeta * self.b[i - 1]
        return m


def cascade_exponent(spec: CascadeSpec, t: float) -> np.ndarray:
    """Limiting exponents -m_i(t) of the cascade on the rescaled clock.

    m_i(t) = min over sources gamma <= i (ell_gamma != 0) and modes
    gamma <= alpha <= i of (i - gamma + p_gamma) - t*f_alpha. Components
    with no source at or below them have limit -inf (the "absent"
    distinguished value). O(L^2): for each (i, gamma) only the running
    maximum of f over [gamma, i] can attain the minimum; the winning
    candidate is re-evaluated with the same arithmetic expression a brute
    force would use, so results match exhaustive enumeration exactly.
    """
    t = float(t)
    if t < 0:
        raise TropicalError("t must be >= 0")
    L = spec.L
    out = np.empty(L + 1)
    f = spec.f
    for i in range(L + 1):
        best = np.inf
        fmax = -np.inf
        arg = -1
        for gamma in range(i, -1, -1):
            if f[gamma] > fmax:
                fmax = f[gamma]
                arg = gamma
            if spec.ell[gamma] == 0.0:
                continue
            cand = ((i - gamma) + spec.p[gamma]) - t * f[arg]
            if cand < best:
                best = cand
        out[i] = -best  # +inf best (no source) maps to -inf
    return out


def cascade_exact(spec: CascadeSpec, mu: float, t, *, fallback: bool = False) -> np.ndarray:
    """Closed-form solution y(t) of dy/dt = M y with y_i(0) = ell_i mu^{p_i}.

    Evaluates the eigendecomposition of the lower-bidiagonal matrix in
    its assembled per-term form

        y_i(t) = sum_{gamma<=i, ell!=0} sum_{alpha=gamma}^{i}
                 ell_g mu^{i-g+p_g} zeta^{g-i} (prod_{l=g}^{i-1} b_l)
                 e^{(f_a - b_a mu) t} / prod_{k in [g,i], k != a} g_ak,

    with gap terms g_ak = (f_a - f_k) + mu (b_k - b_a); no time stepping.
    Gaps below NEAR_DEGENERATE_GAP raise NearDegenerate unless
    fallback=True, which integrates the linear field numerically instead
    (with a warning). Accepts scalar or array t; returns shape (L+1,) or
    (len(t), L+1).
    """
    if not (0.0 < mu < 1.0):
        raise TropicalError("mu must lie in (0, 1)")
    if spec.min_gap() < NEAR_DEGENERATE_GAP:
        if not fallback:
            raise NearDegenerate(
                f"min |f_i - f_j| = {spec.min_gap():.3e} < {NEAR_DEGENERATE_GAP:.0e}"
            )
        warnings.warn(
            "near-degenerate growth rates: falling back to numeric integration",
            stacklevel=2,
        )
        m = spec.matrix(mu)
        y0 = spec.ell * mu**spec.p
        ts = np.atleast_1d(np.asarray(t, dtype=float))
        _, y, _ = integrate_field(lambda y: m @ y, y0, float(ts[-1]), 1e-10, t_eval=ts)
        return y[0] if np.isscalar(t) else y

    ts = np.atleast_1d(np.asarray(t, dtype=float))
    L = spec.L
    f, b, ell, p = spec.f, spec.b, spec.ell, spec.p
    lam = f - b * mu
    out = np.zeros((len(ts), L + 1))
    for i in range(L + 1):
        acc = np.zeros(len(ts))
        for g in range(i + 1):
            if ell[g] == 0.0:
                continue
            pref = ell[g] * mu ** ((i - g) + p[g]) * float(spec.zeta) ** (g - i)
            pref *= np.prod(b[g:i])
            for a in range(g, i + 1):
                den = 1.0
                for k in range(g, i + 1):
                    if k != a:
                        den *= (f[a] - f[k]) + mu * (b[k] - b[a])
                acc = acc + (pref / den) * np.exp(lam[a] * ts)
        out[:, i] = acc
    return out[0] if np.isscalar(t) else out


# -- piecewise-linear paths ------------------------------------------------


@dataclass(frozen=True)
class TropicalPath:
    """Continuous piecewise-linear function on [0, inf).

    knots are strictly increasing starting at 0; values[j] is the value at
    knots[j]; slopes[j] applies on [knots[j], knots[j+1]) and slopes[-1]
    beyond the last knot.
    """

    knots: np.ndarray
    values: np.ndarray
    slopes: np.ndarray

    def __post_init__(self):
        for name in ("knots", "values", "slopes"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if not (len(self.knots) == len(self.values) == len(self.slopes)):
            raise TropicalError("knots, values, slopes must share one length")
        if self.knots[0] != 0.0 or np.any(np.diff(self.knots) <= 0):
            raise TropicalError("knots must strictly increase from 0")
        # continuity across interior knots
        seg = self.values[:-1] + self.slopes[:-1] * np.diff(self.knots)
        if np.any(np.abs(seg - self.values[1:]) > 1e-9 * np.maximum(1.0, np.abs(seg))):
            raise TropicalError("piecewise data is discontinuous")

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        idx = np.clip(np.searchsorted(self.knots, t, side="right") - 1, 0, len(self.knots) - 1)
        return self.values[idx] + self.slopes[idx] * (t - self.knots[idx])

    @property
    def slope_set(self) -> np.ndarray:
        return np.unique(self.slopes)

    def to_dict(self, trait: int | None = None) -> dict:
        pieces = []
        for j in range(len(self.knots)):
            t1 = float(self.knots[j + 1]) if j + 1 < len(self.knots) else None
            pieces.append(
                {
                    "t0": float(self.knots[j]),
                    "t1": t1,
                    "value_at_t0": float(self.values[j]),
                    "slope": float(self.slopes[j]),
                }
            )
        doc = {"pieces": pieces}
        if trait is not None:
            doc["trait"] = trait
        return doc


def upper_envelope(lines, t0: float = 0.0) -> tuple[list, list, list]:
    """Upper envelope of lines value = a + m*(t - t0) on [t0, inf).

    Returns (knots, values, slopes) with knots[0] == t0. Breakpoints are
    computed by solving the pairwise linear equalities, not by sampling.
    """
    # deduplicate by slope, keeping the highest intercept
    by_slope: dict[float, float] = {}
    for a, m in lines:
        if m not in by_slope or a > by_slope[m]:
            by_slope[m] = a
    cand = sorted(((a, m) for m, a in by_slope.items()), key=lambda am: am[1])

    knots, values, slopes = [t0], [], []
    # active line at t0: highest value, ties broken by slope
    cur = max(cand, key=lambda am: (am[0], am[1]))
    values.append(cur[0])
    slopes.append(cur[1])
    s = t0
    while True:
        best_t = np.inf
        best = None
        for a, m in cand:
            if m <= cur[1]:
                continue
            # crossing of (a, m) with cur, measured from t0
            tc = t0 + (cur[0] - a) / (m - cur[1])
            if tc > s + 1e-15 and tc < best_t - 1e-15:
                best_t, best = tc, (a, m)
            elif best is not None and abs(tc - best_t) <= 1e-15 and m > best[1]:
                best = (a, m)
        if best is None:
            break
        s = best_t
        cur = best
        knots.append(s)
        values.append(cur[0] + cur[1] * (s - t0))
        slopes.append(cur[1])
    return knots, values, slopes


def fitness_records(f_terminal: np.ndarray) -> list[int]:
    """Left-to-right records of the terminal-fitness column f_0L..f_{L-1,L}.

    i_1 = 0; each next record is the first index whose fitness exceeds the
    previous record's (equivalently: the next slower decayer). Under the
    neighbour-floor rule these are exactly the traits whose decay slopes
    propagate sideways at unit cost per trait. Indices increase
    automatically. Ties in the column are rejected by callers upfront.
    """
    recs = [0]
    while True:
        above = [i for i in range(len(f_terminal)) if f_terminal[i] > f_terminal[recs[-1]]]
        if not above:
            return recs
        recs.append(min(above))


def _require_valley(landscape: FitnessLandscape) -> None:
    report = landscape.validity or validate_valley(landscape)
    if not report.valid:
        raise TropicalError(
            f"landscape violates the valley conditions: {', '.join(report.violated)}"
        )


def limit_paths(landscape: FitnessLandscape, kernel: MutationKernel) -> list[TropicalPath]:
    """Exact piecewise-linear limit of log x_i / log(1/mu) per trait.

    Both kernels share the swap time T = L/f_L0 at which the terminal
    trait's exponent reaches 0. One-sided: trait i sits at -i until T and
    then decays with slope -min_{k<=i}|f_kL|; trait L rises from -L with
    slope f_L0 and stays at 0. Two-sided: before T each trait is the max
    of its forward level -i and the terminal trait's back-mutation cascade
    -2L+i+f_L0*t; after T it is the upper envelope of the neighbour floor
    -(L-i), its own decay lines -i-|f_kL|(t-T) for k<=i, and the record
    lines -i_k-|i-i_k|-|f_{i_k L}|(t-T).
    """
    _require_valley(landscape)
    L = landscape.L
    fL0 = landscape.f_terminal_vs_resident
    fcol = landscape.f[:L, L]   # f_iL for i < L
    T = L / fL0
    paths = []
    if kernel is MutationKernel.ONE_SIDED:
        for i in range(L):
            slope = -float(np.min(np.abs(fcol[: i + 1])))
            paths.append(
                TropicalPath(knots=[0.0, T], values=[-i, -i], slopes=[0.0, slope])
            )
        paths.append(
            TropicalPath(knots=[0.0, T], values=[-L, 0.0], slopes=[fL0, 0.0])
        )
        return paths

    recs = fitness_records(fcol)
    for i in range(L + 1):
        # pre-swap: max(-i, -2L+i+fL0*t) on [0, T]
        pre_k, pre_v, pre_s = upper_envelope([(-float(i), 0.0), (float(i - 2 * L), fL0)])
        pre_k, pre_v, pre_s = list(pre_k), list(pre_v), list(pre_s)
        while pre_k and pre_k[-1] >= T - 1e-12:
            pre_k.pop(), pre_v.pop(), pre_s.pop()
        # post-swap: envelope in s = t - T
        lines = [(-float(L - i), 0.0)]
        for k in range(min(i, L - 1) + 1):
            lines.append((-float(i), -abs(float(fcol[k]))))
        for ik in recs:
            lines.append((-float(ik) - abs(i - ik), -abs(float(fcol[ik]))))
        if i == L:
            lines = [(0.0, 0.0)]  # terminal trait pins at 0 after the swap
        post_k, post_v, post_s = upper_envelope(lines)

        # continuity at the swap is a theorem; a gap means a misreading
        pre_at_T = pre_v[-1] + pre_s[-1] * (T - pre_k[-1])
        if abs(pre_at_T - post_v[0]) > 1e-9:
            raise TropicalError(
                f"pre/post-swap branches disagree at T for trait {i}: "
                f"{pre_at_T:.12g} vs {post_v[0]:.12g}"
            )
        knots = pre_k + [T + k for k in post_k]
        values = pre_v + list(post_v)
        slopes = pre_s + list(post_s)
        # drop a zero-length or slope-duplicate seam piece
        cleaned = [(knots[0], values[0], slopes[0])]
        for j in range(1, len(knots)):
            pk, pv, ps = cleaned[-1]
            if abs(knots[j] - pk) < 1e-12:
                cleaned[-1] = (pk, pv, slopes[j])
            elif slopes[j] == ps:
                continue
            else:
                cleaned.append((knots[j], values[j], slopes[j]))
        knots, values, slopes = zip(*cleaned)
        paths.append(TropicalPath(knots=knots, values=values, slopes=slopes))
    return paths


# -- ODE comparison ---------------------------------------------------------


@dataclass
class ConvergenceReport:
    """Sup distances between rescaled ODE paths and the limit paths."""

    mu_list: tuple[float, ...]
    grid: np.ndarray
    per_trait: np.ndarray       # shape (n_mu, L+1)
    rescaled: list              # per mu: array (len(grid), L+1)
    paths: list                 # TropicalPath per trait

    @property
    def overall(self) -> np.ndarray:
        return self.per_trait.max(axis=1)

    @property
    def monotone(self) -> bool:
        o = self.overall
        return bool(np.all(np.diff(o) < 0))

    def to_dict(self) -> dict:
        return {
            "mu_list": list(self.mu_list),
            "overall_sup": [float(v) for v in self.overall],
            "per_trait_sup": self.per_trait.tolist(),
            "monotone_decreasing": self.monotone,
        }


def compare_rescaled(rescaled: np.ndarray, paths, grid) -> np.ndarray:
    """Per-trait sup |rescaled - limit path| over the grid."""
    grid = np.asarray(grid, dtype=float)
    lim = np.stack([p(grid) for p in paths], axis=1)
    return np.max(np.abs(rescaled - lim), axis=0)


def verify_against_ode(
    params: ModelParams,
    mu_list,
    grid,
    tol: float = 1e-9,
) -> ConvergenceReport:
    """Integrate the full system for each mu, rescale, compare to the limit.

    grid is in rescaled time (the ODE runs to grid[-1]*log(1/mu)); the
    initial condition is the resident equilibrium (xbar_0, 0, ..., 0).
    grid[0] must be > 0: at t = 0 the rescaled log of an empty trait is
    -inf while the limit path starts at its cascade level, so the uniform
    comparison only makes sense after the initial o(1) stabilization.
    Distances are expected to decrease as mu drops.
    """
    mu_list = tuple(float(m) for m in mu_list)
    if any(not 0 < m < 1 for m in mu_list):
        raise TropicalError("mu values must lie in (0, 1)")
    grid = np.asarray(grid, dtype=float)
    if grid[0] <= 0:
        raise TropicalError("grid must start after 0 (rescaled clock)")
    landscape = derive_landscape(params)
    paths = limit_paths(landscape, params.kernel)
    x0 = np.zeros(params.L + 1)
    x0[0] = landscape.xbar[0]
    per_trait = np.empty((len(mu_list), params.L + 1))
    rescaled_all = []
    for row, mu in enumerate(mu_list):
        lg = np.log(1.0 / mu)
        path = integrate(params.with_mu(mu), x0, grid[-1] * lg, tol=tol, t_eval=grid * lg)
        resc = path.rescaled(mu)
        rescaled_all.append(resc)
        per_trait[row] = compare_rescaled(resc, paths, grid)
    return ConvergenceReport(
        mu_list=mu_list,
        grid=grid,
        per_trait=per_trait,
        rescaled=rescaled_all,
        paths=paths,
    )
