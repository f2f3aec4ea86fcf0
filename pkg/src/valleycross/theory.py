"""Closed-form predictors for valley-crossing and extinction time scales.

The crossing of an L-step fitness valley happens in one of three regimes
depending on how the mutation probability mu scales against the carrying
capacity K (summarized by alpha = ln K / ln(1/mu)):

* frequent mutation (alpha > L): the terminal trait is seeded immediately
  and sweeps deterministically; everything resolves on the log K clock
  with constants from `logk_breakdown`.
* rare mutation (alpha < L or K*mu < 1): the wait for the first successful
  terminal mutant dominates; the normalized time T*K*mu^L is asymptotically
  exponential with the rate from `crossing_rate`.
* vanishing mutation: the resident dies out before any terminal mutant is
  born; the boundary is set by the resident's extinction rate
  `monomorphic_extinction_rate`.

The subcritical-excursion formulas (`excursion_pmf`, `excursion_mean`,
`ruin_probability`, `extinction_cdf`) double as ground truth for the
stochastic simulator and vice versa.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from .model import FitnessLandscape, ModelParams, MutationKernel, derive_landscape, validate_valley

#: Series terms are added until below this fraction of the partial sum.
SERIES_RTOL = 1e-15
SERIES_MAX_TERMS = 10**6
#: Warn when alpha is this close to an integer in (1, L) or to L itself.
ALPHA_BLUR = 0.1
#: "Much smaller" margin for the extinction-first boundary tests.
REGIME_BLUR_FACTOR = 10.0


class TheoryError(ValueError):
    pass


class SeriesDivergence(TheoryError):
    pass


class Regime(enum.Enum):
    LARGE_MUTATION = "large_mutation"          # alpha > L: log K clock
    SMALL_MUTATION_POWER = "small_mutation_power"  # 1 < alpha < L: K mu^L clock
    TINY_MUTATION = "tiny_mutation"            # K mu < 1 but >> extinction rate
    EXTINCTION_FIRST = "extinction_first"      # resident dies before crossing


# -- excursion statistics ---------------------------------------------------


def excursion_pmf(b: float, d: float, k) -> np.ndarray | float:
    """P(total births in a subcritical excursion = k).

    p(k) = Catalan(k) * (b/(b+d))^k * (d/(b+d))^{k+1} with
    Catalan(k) = (2k)!/(k!(k+1)!), evaluated in log space.
    """
    if not (0 < b < d):
        raise TheoryError("excursion_pmf requires 0 < b < d (subcritical)")
    karr = np.asarray(k)
    if np.any(karr < 0) or not np.issubdtype(karr.dtype, np.integer):
        raise TheoryError("k must be a nonnegative integer")
    kf = karr.astype(float)
    log_cat = gammaln(2 * kf + 1) - gammaln(kf + 1) - gammaln(kf + 2)
    logp = log_cat + kf * math.log(b / (b + d)) + (kf + 1) * math.log(d / (b + d))
    out = np.exp(logp)
    return float(out) if np.isscalar(k) else out


def _birth_count_series(rho: float) -> float:
    """sum_{k>=1} k * Catalan(k) * rho^k (1-rho)^{k+1}, summed in blocks."""
    if not (0.0 < rho < 0.5):
        raise TheoryError("series requires 0 < rho < 1/2 (mean diverges at 1/2)")
    log_rho = math.log(rho)
    log_q = math.log1p(-rho)
    total = 0.0
    block = 512
    k0 = 1
    while k0 <= SERIES_MAX_TERMS:
        k = np.arange(k0, k0 + block, dtype=float)
        log_t = (
            gammaln(2 * k + 1) - gammaln(k) - gammaln(k + 2)
            + k * log_rho + (k + 1) * log_q
        )
        terms = np.exp(log_t)
        total += float(terms.sum())
        if terms[-1] < SERIES_RTOL * max(total, 1e-300):
            return total
        k0 += block
    raise SeriesDivergence(f"series did not converge within {SERIES_MAX_TERMS} terms (rho={rho})")


def excursion_mean_ratio(rho: float) -> float:
    """Expected births per excursion as a function of rho = b/(b+d).

    The k = 0 term vanishes (1/(-1)! = 0); terms decay geometrically like
    (4 rho (1-rho))^k k^{-1/2}, so the block summation terminates well
    before the hard cap for rho <= 0.49.
    """
    return _birth_count_series(rho)


def excursion_mean(b: float, d: float) -> float:
    """Expected total births during a subcritical excursion, E[Z]."""
    if not (0 <= b < d):
        raise TheoryError("excursion_mean requires 0 <= b < d")
    if b == 0.0:
        return 0.0
    return _birth_count_series(b / (b + d))


# -- hitting and extinction laws --------------------------------------------


def extinction_cdf(b: float, d: float, i: int, t) -> np.ndarray | float:
    """P_i(T_0 <= t) for a linear birth-death process started at i.

    Closed form (d(1-e^{(d-b)t})/(b-d e^{(d-b)t}))^i, evaluated in the
    e^{-(d-b)t} form when the exponent is large so both branches stay
    finite. Requires b != d.
    """
    if b < 0 or d < 0 or b == d:
        raise TheoryError("extinction_cdf requires nonnegative rates with b != d")
    if i < 0 or not float(i).is_integer():
        raise TheoryError("i must be a nonnegative integer")
    tarr = np.asarray(t, dtype=float)
    if np.any(tarr < 0):
        raise TheoryError("t must be >= 0")
    lam = d - b
    x = lam * tarr
    with np.errstate(over="ignore"):
        base = np.where(
            x > 30.0,
            d * (1.0 - np.exp(-x)) / (b * np.exp(-x) - d) * -1.0,
            np.divide(
                d * (1.0 - np.exp(x)),
                b - d * np.exp(np.minimum(x, 700.0)),
                out=np.zeros_like(x),
                where=np.abs(b - d * np.exp(np.minimum(x, 700.0))) > 0,
            ),
        )
    out = base ** i
    return float(out) if np.isscalar(t) else out


def ruin_probability(b: float, d: float, i: int, j: int, k: int) -> float:
    """P_j(hit k before i) for the embedded birth-death walk, 0 < b < d.

    ((d/b)^{j-i} - 1)/((d/b)^{k-i} - 1); the closures j = i -> 0 and
    j = k -> 1 are included.
    """
    if not (0 < b < d):
        raise TheoryError("ruin_probability requires 0 < b < d")
    if not (i <= j <= k and i < k):
        raise TheoryError("need i <= j <= k with i < k")
    r = d / b
    return float((r ** (j - i) - 1.0) / (r ** (k - i) - 1.0))


def monomorphic_extinction_rate(K: int, b0: float, d0: float) -> float:
    """Inverse mean extinction time of a resident at carrying capacity K:
    sqrt(K) * exp(-K (b0 - d0 + d0 ln(d0/b0))).

    Requires b0 > d0 >= 0; at d0 = 0 the d0*ln(d0/b0) term has continuous
    limit 0, so the exponent is -K*b0.
    """
    if not (b0 > d0 >= 0):
        raise TheoryError("requires b0 > d0 >= 0")
    ent = b0 - d0 if d0 == 0.0 else b0 - d0 + d0 * math.log(d0 / b0)
    return math.sqrt(K) * math.exp(-K * ent)


# -- crossing-time constants -------------------------------------------------


@dataclass(frozen=True)
class LogKBreakdown:
    """Constants of the log K clock in the frequent-mutation regime."""

    invasion_constant: float          # (L/alpha)/f_L0
    decay_constants: tuple            # (1 - i/alpha)/|f_iL| for i < L
    bottleneck_trait: int             # arg max of the decay constants
    total: float                      # invasion + max decay

    def to_dict(self) -> dict:
        return {
            "invasion_constant": self.invasion_constant,
            "decay_constants": list(self.decay_constants),
            "bottleneck_trait": self.bottleneck_trait,
            "total": self.total,
        }


def logk_breakdown(landscape: FitnessLandscape, alpha: float) -> LogKBreakdown:
    """Eradication time constant t(L, alpha) and its two ingredients.

    Invasion takes (L/alpha)/f_L0 log K; afterwards each leftover trait i
    decays from order K*mu^i = K^{1-i/alpha} at rate |f_iL|, so the last
    to die contributes sup_i (1 - i/alpha)/|f_iL| log K.
    """
    if not alpha > landscape.L:
        raise TheoryError("the log K constants require alpha > L")
    L = landscape.L
    fL0 = landscape.f_terminal_vs_resident
    decay = tuple(
        (1.0 - i / alpha) / abs(float(landscape.f[i, L])) for i in range(L)
    )
    bottleneck = int(np.argmax(decay))
    return LogKBreakdown(
        invasion_constant=(L / alpha) / fL0,
        decay_constants=decay,
        bottleneck_trait=bottleneck,
        total=(L / alpha) / fL0 + decay[bottleneck],
    )


def crossing_time_constant(landscape: FitnessLandscape, alpha: float) -> tuple[float, int]:
    """t(L, alpha) and the bottleneck (slowest-decaying) trait index."""
    br = logk_breakdown(landscape, alpha)
    return br.total, br.bottleneck_trait


def valley_rhos(params: ModelParams, landscape: FitnessLandscape | None = None) -> np.ndarray:
    """rho_i = b_i/(b_i + d_i + c_i0 xbar_0) for every trait."""
    land = landscape or derive_landscape(params)
    denom = params.b + params.d + params.c[:, 0] * land.xbar[0]
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(denom > 0, params.b / denom, 0.0)


@dataclass(frozen=True)
class CrossingRate:
    """Exponential rate of the normalized crossing time T * K * mu^L."""

    rate: float
    clock: str                       # "K*mu^L"
    regime: Regime
    floor_alpha: int                 # 0 in the tiny-mutation regime
    rho: tuple                       # rho_i on the lambda product range
    lambdas: tuple
    mean_time: float                 # raw-clock mean, 1/(rate * K mu^L)

    def to_dict(self) -> dict:
        return {
            "rate": self.rate,
            "clock": self.clock,
            "regime": self.regime.value,
            "floor_alpha": self.floor_alpha,
            "rho": list(self.rho),
            "lambda": list(self.lambdas),
            "mean_time": self.mean_time,
        }


def crossing_rate(
    params: ModelParams,
    regime: Regime,
    alpha: float | None = None,
) -> CrossingRate:
    """Midpoint exponential rate on the K*mu^L clock for the rare regimes.

    The rate is the first-principles founding chain: the deepest
    macroscopic trait fa = floor(alpha) (0 in the tiny regime) sits at
    quasi-stationary level K mu^fa xbar_0 prod b_l/|f_l0| and founds
    excursions at per-capita rate mu b_fa; each interior excursion spawns
    mu lambda(rho_i) mutants one step up; each terminal mutant survives
    with probability f_L0/b_L:

        rate = xbar_0 * (b_0..b_fa)/(|f_10|..|f_fa0|) * (f_L0/b_L)
               * prod_{i=fa+1}^{L-1} lambda(rho_i).

    Empty products are 1. The b-product runs through b_fa inclusive (the
    founding trait's birth rate carries the 1/time unit; with unit birth
    rates this is invisible). The asymptotic statement carries unknowable
    1 +- c*eps slack; this midpoint sets eps = 0 and consumers apply wide
    tolerances instead.
    """
    if regime not in (Regime.SMALL_MUTATION_POWER, Regime.TINY_MUTATION):
        raise TheoryError("crossing_rate applies to the rare-mutation regimes")
    land = derive_landscape(params)
    L = params.L
    fL0 = land.f_terminal_vs_resident
    if fL0 <= 0:
        raise TheoryError("crossing requires f_L0 > 0")
    if regime is Regime.TINY_MUTATION:
        fa = 0
    else:
        if alpha is None:
            alpha = mutation_exponent(params.K, params.mu)
        fa = int(math.floor(alpha))
        if fa >= L:
            raise TheoryError("floor(alpha) must be < L in the power regime")
        if fa < 1:
            raise TheoryError("the power regime needs alpha >= 1")
    rate = float(land.xbar[0]) * fL0 / float(params.b[L]) * float(params.b[fa])
    for i in range(1, fa + 1):
        fi0 = float(land.f[i, 0])
        if fi0 >= 0:
            raise TheoryError(f"f_{i}0 must be negative on the macroscopic range")
        rate *= float(params.b[i - 1]) / abs(fi0)
    rhos = valley_rhos(params, land)
    rho_used, lam_used = [], []
    for i in range(fa + 1, L):
        rho_i = float(rhos[i])
        lam_i = excursion_mean_ratio(rho_i)   # raises for rho >= 1/2
        rho_used.append(rho_i)
        lam_used.append(lam_i)
        rate *= lam_i
    clock = float(params.K) * params.mu ** L
    return CrossingRate(
        rate=rate,
        clock="K*mu^L",
        regime=regime,
        floor_alpha=fa,
        rho=tuple(rho_used),
        lambdas=tuple(lam_used),
        mean_time=math.inf if clock == 0 or rate == 0 else 1.0 / (rate * clock),
    )


# -- regime classification ----------------------------------------------------


def mutation_exponent(K: int, mu: float) -> float:
    """Finite-size alpha := ln K / ln(1/mu) (+inf when mu = 1, 0 when mu = 0)."""
    if mu <= 0.0:
        return 0.0
    if mu >= 1.0:
        return math.inf
    return math.log(K) / math.log(1.0 / mu)


def interior_subcritical(params: ModelParams) -> bool:
    """b_i < d_i for every interior trait (the extinction-first
    threshold then compares K*mu^L, not K*mu, to the resident rate)."""
    if params.L < 2:
        return True
    sl = slice(1, params.L)
    return bool(np.all(params.b[sl] < params.d[sl]))


@dataclass
class RegimePrediction:
    regime: Regime
    alpha: float
    K: int
    mu: float
    rho0K: float
    valley_valid: bool
    t_L_alpha: float | None = None
    logk: LogKBreakdown | None = None
    crossing: CrossingRate | None = None
    rho: tuple = ()
    warnings: list = field(default_factory=list)
    formulas: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "regime": self.regime.value,
            "alpha": None if math.isinf(self.alpha) else self.alpha,
            "K": self.K,
            "mu": self.mu,
            "resident_extinction_rate": self.rho0K,
            "valley_valid": self.valley_valid,
            "t_L_alpha": self.t_L_alpha,
            "logk": self.logk.to_dict() if self.logk else None,
            "crossing": self.crossing.to_dict() if self.crossing else None,
            "rho": list(self.rho),
            "warnings": list(self.warnings),
            "formulas": list(self.formulas),
        }


def classify_regime(params: ModelParams) -> RegimePrediction:
    """Map concrete (K, mu, landscape) to the governing asymptotic regime.

    The asymptotic statements are families mu = f(K) K^{-1/alpha}; at a
    single (K, mu) we use the finite-size surrogate alpha = ln K/ln(1/mu)
    and flag blurred boundaries (alpha near an integer or near L, or the
    extinction threshold within a factor of REGIME_BLUR_FACTOR).
    """
    land = derive_landscape(params)
    report = validate_valley(land)
    warnings_: list[str] = []
    formulas: list[str] = ["alpha = ln K / ln(1/mu)"]
    K, mu, L = params.K, params.mu, params.L
    alpha = mutation_exponent(K, mu)

    if params.b[0] > params.d[0]:
        rho0K = monomorphic_extinction_rate(K, float(params.b[0]), float(params.d[0]))
        formulas.append("rho0(K) = sqrt(K) exp(-K(b0-d0+d0 ln(d0/b0)))")
    else:
        rho0K = math.inf
        warnings_.append("resident is not supercritical (b0 <= d0): no metastable resident")

    if not report.valid:
        warnings_.append(
            "landscape violates the valley conditions: " + ", ".join(report.violated)
        )
    if params.kernel is MutationKernel.TWO_SIDED:
        warnings_.append("stochastic regime laws are stated for the one-sided kernel")

    pred = RegimePrediction(
        regime=Regime.EXTINCTION_FIRST,
        alpha=alpha,
        K=K,
        mu=mu,
        rho0K=rho0K,
        valley_valid=report.valid,
        warnings=warnings_,
        formulas=formulas,
    )
    pred.rho = tuple(float(r) for r in valley_rhos(params, land)[1:L])

    # extinction-first boundary
    if interior_subcritical(params):
        threshold_quantity = K * mu ** L
        formulas.append("extinction-first when K mu^L << rho0(K) (subcritical interior)")
    else:
        threshold_quantity = K * mu
        formulas.append("extinction-first when K mu << rho0(K)")
    if mu == 0.0 or threshold_quantity < rho0K:
        pred.regime = Regime.EXTINCTION_FIRST
        if mu > 0 and threshold_quantity > rho0K / REGIME_BLUR_FACTOR:
            pred.warnings.append("extinction-first margin below blur factor")
        return pred
    if threshold_quantity < rho0K * REGIME_BLUR_FACTOR:
        pred.warnings.append("crossing margin over the extinction threshold is thin")

    if alpha >= L:
        pred.regime = Regime.LARGE_MUTATION
        if alpha - L < ALPHA_BLUR:
            pred.warnings.append(f"alpha = {alpha:.4g} within {ALPHA_BLUR} of L = {L}")
        if math.isfinite(alpha) and alpha > L:
            pred.logk = logk_breakdown(land, alpha) if report.valid else None
            if pred.logk:
                pred.t_L_alpha = pred.logk.total
                pred.formulas.append("t(L,alpha) = (L/alpha)/f_L0 + sup_i (1-i/alpha)/|f_iL|")
        return pred

    if alpha > 1.0:
        pred.regime = Regime.SMALL_MUTATION_POWER
        near = abs(alpha - round(alpha))
        if round(alpha) in range(2, L) and near < ALPHA_BLUR:
            pred.warnings.append(
                f"alpha = {alpha:.4g} within {ALPHA_BLUR} of an integer: the "
                "exponential law is only stated for non-integer alpha"
            )
        if L - alpha < ALPHA_BLUR:
            pred.warnings.append(f"alpha = {alpha:.4g} within {ALPHA_BLUR} of L = {L}")
    else:
        pred.regime = Regime.TINY_MUTATION

    if report.valid:
        try:
            pred.crossing = crossing_rate(params, pred.regime, alpha)
            pred.formulas.append(
                "rate = xbar_0 (b_0..b_fa/|f_10..f_fa0|) (f_L0/b_L) "
                "prod lambda(rho_i) on the K mu^L clock"
            )
        except TheoryError as exc:
            pred.warnings.append(f"crossing rate unavailable: {exc}")
    return pred
