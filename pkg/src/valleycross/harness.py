"""Experiment orchestration: (K, mu) sweeps, crossing/extinction census,
limit-law diagnostics, and deterministic report emission.

Every statistical verdict is computed from normalized times on the
regime's clock (T/log K in the frequent-mutation regime, T*K*mu^L in the
rare ones), carries its replica count and a bootstrap 95% interval, and a
report body is a deterministic function of (plan, master seed): replicas
are keyed by index, bootstrap generators are seeded from the master seed,
and wall-clock fields live outside the body.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats as sps
from scipy.special import kolmogi

from . import __version__ as TOOL_VERSION
from .gillespie import EnsembleSummary, monomorphic_state, run_ensemble
from .model import ModelParams, derive_landscape
from .theory import Regime, classify_regime
from .tropical import limit_paths, verify_against_ode

MIN_REPLICAS_FOR_VERDICT = 30
BOOTSTRAP_RESAMPLES = 10_000
KS_SIGNIFICANCE = 0.01
CV_BAND = (0.8, 1.2)
DEFAULT_FIXATION_EPSILON = 0.1
DEFAULT_HORIZON_MULTIPLE = 20.0


class PlanError(ValueError):
    pass


# -- statistics helpers -------------------------------------------------------


def ks_exponential(normalized: np.ndarray) -> dict:
    """One-sample KS of rate-normalized times against the unit exponential.

    The null is fully specified (the rate comes from theory, not from the
    sample), so the classical critical value applies; we use the
    asymptotic kolmogi(alpha)/sqrt(n) at alpha = 1%.
    """
    n = len(normalized)
    d, p = sps.kstest(normalized, "expon")
    crit = float(kolmogi(KS_SIGNIFICANCE)) / math.sqrt(n)
    return {
        "n": int(n),
        "statistic": float(d),
        "pvalue": float(p),
        "critical_1pct": crit,
        "pass": bool(d < crit),
    }


def coefficient_of_variation(x: np.ndarray) -> float:
    x = np.asarray(x, dtype=float)
    return float(np.std(x, ddof=1) / np.mean(x))


def bootstrap_ci(x: np.ndarray, statistic, rng: np.random.Generator,
                 n_resamples: int = BOOTSTRAP_RESAMPLES) -> tuple[float, float]:
    """Percentile bootstrap 95% interval, deterministic given rng."""
    x = np.asarray(x, dtype=float)
    idx = rng.integers(0, len(x), size=(n_resamples, len(x)))
    vals = statistic(x[idx], axis=1)
    lo, hi = np.percentile(vals, [2.5, 97.5])
    return float(lo), float(hi)


def wilson_interval(successes: int, n: int, z: float = 1.96) -> tuple[float, float]:
    if n == 0:
        return 0.0, 1.0
    phat = successes / n
    denom = 1 + z * z / n
    center = (phat + z * z / (2 * n)) / denom
    half = z * math.sqrt(phat * (1 - phat) / n + z * z / (4 * n * n)) / denom
    return max(0.0, center - half), min(1.0, center + half)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return None if math.isnan(v) else v
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


# -- plan ---------------------------------------------------------------------


@dataclass
class ExperimentPlan:
    """Declarative description of a sweep experiment.

    sweep entries are dicts with K plus either mu or alpha (mu is then
    K**(-1/alpha)); the tropical experiment instead uses mu_list/grid.
    horizon_policy "scale" multiplies the predicted time scale; "absolute"
    is a raw time. Statistical verdicts need >= 30 resolved replicas;
    smaller counts mark the point inconclusive rather than failing.
    """

    experiment: str                      # "crossing" | "extinction" | "tropical"
    model: ModelParams
    sweep: list = field(default_factory=list)
    n_replicas: int = 100
    horizon_policy: str = "scale"
    horizon_value: float = DEFAULT_HORIZON_MULTIPLE
    epsilon: float = DEFAULT_FIXATION_EPSILON
    master_seed: int = 0
    threads: int = 1
    mu_list: list = field(default_factory=list)      # tropical
    grid_start: float = 0.5                          # tropical, rescaled clock
    grid_stop: float = 10.0
    grid_points: int = 96
    swap_window: float = 1.0                         # excluded around the swap time

    def __post_init__(self):
        if self.experiment not in ("crossing", "extinction", "tropical"):
            raise PlanError(f"unknown experiment {self.experiment!r}")
        if self.horizon_policy not in ("scale", "absolute"):
            raise PlanError("horizon_policy must be 'scale' or 'absolute'")
        if self.experiment != "tropical":
            if not self.sweep:
                raise PlanError("sweep must not be empty")
            if self.n_replicas < 1:
                raise PlanError("n_replicas must be >= 1")
            if not (0 < self.epsilon < 1):
                raise PlanError("epsilon must lie in (0, 1)")
        else:
            if not self.mu_list:
                raise PlanError("tropical experiment needs mu_list")

    def point_params(self, entry: dict) -> ModelParams:
        K = int(entry.get("K", self.model.K))
        if "mu" in entry:
            mu = float(entry["mu"])
        elif "alpha" in entry:
            mu = K ** (-1.0 / float(entry["alpha"]))
        else:
            mu = self.model.mu
        return self.model.with_K(K).with_mu(mu)

    def to_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            "model": self.model.to_dict(),
            "sweep": self.sweep,
            "n_replicas": self.n_replicas,
            "horizon": {"policy": self.horizon_policy, "value": self.horizon_value},
            "epsilon": self.epsilon,
            "master_seed": self.master_seed,
            "threads": self.threads,
            "mu_list": self.mu_list,
            "grid": {
                "start": self.grid_start,
                "stop": self.grid_stop,
                "points": self.grid_points,
                "swap_window": self.swap_window,
            },
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentPlan":
        try:
            grid = doc.get("grid", {})
            horizon = doc.get("horizon", {})
            return cls(
                experiment=doc["experiment"],
                model=ModelParams.from_dict(doc["model"]),
                sweep=list(doc.get("sweep", [])),
                n_replicas=int(doc.get("n_replicas", 100)),
                horizon_policy=horizon.get("policy", "scale"),
                horizon_value=float(horizon.get("value", DEFAULT_HORIZON_MULTIPLE)),
                epsilon=float(doc.get("epsilon", DEFAULT_FIXATION_EPSILON)),
                master_seed=int(doc.get("master_seed", 0)),
                threads=int(doc.get("threads", 1)),
                mu_list=list(doc.get("mu_list", [])),
                grid_start=float(grid.get("start", 0.5)),
                grid_stop=float(grid.get("stop", 10.0)),
                grid_points=int(grid.get("points", 96)),
                swap_window=float(grid.get("swap_window", 1.0)),
            )
        except KeyError as exc:
            raise PlanError(f"plan document missing key {exc}") from None


def load_plan(path: str | Path) -> ExperimentPlan:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise PlanError(f"invalid JSON in {path}: {exc}") from None
    return ExperimentPlan.from_dict(doc)


# -- report -------------------------------------------------------------------


@dataclass
class Report:
    """meta (timestamps, wall time) + deterministic body."""

    body: dict
    meta: dict
    plotdata: dict = field(default_factory=dict)   # name -> CSV text
    ensembles: dict = field(default_factory=dict)  # name -> EnsembleSummary

    def body_bytes(self) -> bytes:
        return json.dumps(_jsonable(self.body), sort_keys=True).encode()

    def body_hash(self) -> str:
        return hashlib.sha256(self.body_bytes()).hexdigest()[:16]

    def write(self, out_dir: str | Path, formats=("json", "csv")) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        written = []
        if "json" in formats:
            path = out / "report.json"
            doc = {"meta": _jsonable({**self.meta, "body_sha256_16": self.body_hash()}),
                   "body": _jsonable(self.body)}
            path.write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")
            written.append(path)
        if "csv" in formats and self.body.get("points"):
            path = out / "summary.csv"
            rows = self.body["points"]
            cols = sorted({k for row in rows for k in row if np.isscalar(row[k]) or row[k] is None})
            lines = [",".join(cols)]
            for row in rows:
                lines.append(",".join("" if row.get(c) is None else str(row.get(c, "")) for c in cols))
            path.write_text("\n".join(lines) + "\n")
            written.append(path)
        if self.plotdata:
            pdir = out / "plotdata"
            pdir.mkdir(exist_ok=True)
            for name, text in sorted(self.plotdata.items()):
                p = pdir / f"{name}.csv"
                p.write_text(text)
                written.append(p)
        for name, ens in sorted(self.ensembles.items()):
            p = out / f"{name}.jsonl"
            ens.to_jsonl(p)
            written.append(p)
        return written


def load_report(path: str | Path) -> dict:
    return json.loads(Path(path).read_text())


def emit_report(report: Report, out_dir: str | Path, formats=("json", "csv")) -> list[Path]:
    try:
        return report.write(out_dir, formats)
    except OSError as exc:
        raise RuntimeError(f"failed writing report under {out_dir}: {exc}") from exc


def _meta(plan: ExperimentPlan, t_start: float) -> dict:
    return {
        "tool_version": TOOL_VERSION,
        "model_digest": plan.model.digest(),
        "master_seed": plan.master_seed,
        "timestamp_unix": time.time(),
        "wall_s": time.perf_counter() - t_start,
    }


# -- crossing experiment ------------------------------------------------------


def _crossing_point(plan: ExperimentPlan, index: int, entry: dict) -> tuple[dict, EnsembleSummary, np.ndarray]:
    params = plan.point_params(entry)
    land = derive_landscape(params)
    pred = classify_regime(params)
    K, mu, L = params.K, params.mu, params.L

    if pred.regime is Regime.LARGE_MUTATION and pred.logk is not None:
        scale = pred.logk.total * math.log(K)
        clock = 1.0 / math.log(K)          # normalized time = T / log K
        rate = None
        predicted_norm = pred.logk.total   # compare median against this
    elif pred.crossing is not None:
        scale = pred.crossing.mean_time
        clock = float(K) * mu ** L         # normalized time = T * K mu^L
        rate = pred.crossing.rate
        predicted_norm = 1.0 / rate
    else:
        scale = None
        clock = 1.0
        rate = None
        predicted_norm = None

    horizon_fallback = False
    if plan.horizon_policy == "absolute":
        horizon = plan.horizon_value
    elif scale is not None and math.isfinite(scale):
        horizon = plan.horizon_value * scale
    else:
        horizon = plan.horizon_value
        horizon_fallback = True

    fix_density = float(land.xbar[L]) - plan.epsilon
    if fix_density <= 0:
        raise PlanError("fixation level xbar_L - epsilon must be positive")
    ens = run_ensemble(
        params,
        monomorphic_state(params),
        horizon,
        watches=[(L, fix_density)],
        n_replicas=plan.n_replicas,
        master_seed=plan.master_seed + index,
        threads=plan.threads,
        stop_on_watches="all",
        stop_on_sigma0=True,
    )
    cols = ens.stopping_arrays()
    t_fix = cols[f"{L}:{fix_density}"]
    t_sig = cols["t_sigma0"]
    t_cross = np.maximum(t_fix, t_sig)          # NaN when either is unset
    resolved = np.isfinite(t_cross)
    extinct_first = np.isfinite(cols["t_0"]) & ~np.isfinite(t_fix)
    n_res = int(resolved.sum())

    point = {
        "point": index,
        "K": K,
        "mu": mu,
        "alpha": None if math.isinf(pred.alpha) else pred.alpha,
        "regime": pred.regime.value,
        "horizon": horizon,
        "horizon_fallback": horizon_fallback,
        "fixation_level": int(math.floor(fix_density * K)),
        "n_replicas": plan.n_replicas,
        "n_resolved": n_res,
        "fraction_extinct_first": float(np.mean(extinct_first)),
        "predicted_normalized": predicted_norm,
        "rate": rate,
        "verdict": "ok",
    }
    norm = np.array([])
    if n_res < MIN_REPLICAS_FOR_VERDICT:
        point["verdict"] = "inconclusive"
        point["insufficient_events"] = True
        return point, ens, norm

    times = t_cross[resolved]
    norm = times * clock
    rng = np.random.default_rng(np.random.SeedSequence([plan.master_seed, index, 0xB007]))
    qs = np.percentile(norm, [10, 25, 50, 75, 90])
    point.update(
        {
            "mean_norm": float(np.mean(norm)),
            "median_norm": float(np.median(norm)),
            "q10": float(qs[0]), "q25": float(qs[1]), "q50": float(qs[2]),
            "q75": float(qs[3]), "q90": float(qs[4]),
            "mean_ci_lo": None, "mean_ci_hi": None,
        }
    )
    lo, hi = bootstrap_ci(norm, np.mean, rng)
    point["mean_ci_lo"], point["mean_ci_hi"] = lo, hi
    mlo, mhi = bootstrap_ci(norm, np.median, rng)
    point["median_ci_lo"], point["median_ci_hi"] = mlo, mhi

    if rate is not None:
        unit = norm * rate                    # should be ~ Exp(1)
        point["ks"] = ks_exponential(unit)
        point["cv"] = coefficient_of_variation(unit)
        point["cv_pass"] = bool(CV_BAND[0] <= point["cv"] <= CV_BAND[1])
        point["mean_over_predicted"] = float(np.mean(unit))
    elif predicted_norm is not None:
        point["median_over_predicted"] = float(np.median(norm) / predicted_norm)
    return point, ens, norm


def run_crossing_experiment(plan: ExperimentPlan) -> Report:
    if plan.experiment != "crossing":
        raise PlanError("plan.experiment must be 'crossing'")
    t0 = time.perf_counter()
    points, ensembles, plotdata = [], {}, {}
    for idx, entry in enumerate(plan.sweep):
        point, ens, norm = _crossing_point(plan, idx, entry)
        points.append(point)
        ensembles[f"ensemble_point{idx}"] = ens
        if norm.size:
            lines = ["normalized_time"] + [repr(v) for v in np.sort(norm)]
            plotdata[f"crossing_norm_point{idx}"] = "\n".join(lines) + "\n"
    body = {"experiment": "crossing", "plan": plan.to_dict(), "points": points}
    return Report(body=body, meta=_meta(plan, t0), plotdata=plotdata, ensembles=ensembles)


# -- extinction experiment ----------------------------------------------------


def run_extinction_experiment(plan: ExperimentPlan) -> Report:
    """Estimate P(total extinction before the first terminal mutant)."""
    if plan.experiment != "extinction":
        raise PlanError("plan.experiment must be 'extinction'")
    t0 = time.perf_counter()
    points, ensembles = [], {}
    for idx, entry in enumerate(plan.sweep):
        params = plan.point_params(entry)
        pred = classify_regime(params)
        if plan.horizon_policy == "absolute":
            horizon = plan.horizon_value
        else:
            # predicted scale: mean resident extinction time 1/rho0(K)
            horizon = (
                plan.horizon_value / pred.rho0K
                if pred.rho0K > 0 and math.isfinite(pred.rho0K)
                else plan.horizon_value
            )
        ens = run_ensemble(
            params,
            monomorphic_state(params),
            horizon,
            n_replicas=plan.n_replicas,
            master_seed=plan.master_seed + idx,
            threads=plan.threads,
        )
        cols = ens.stopping_arrays()
        extinct = np.isfinite(cols["t_0"])
        born_L = np.isfinite(cols["b_l"])
        died_first = extinct & ~born_L
        n_resolved = int(np.sum(extinct | born_L))
        n = len(extinct)
        p_hat = float(np.mean(died_first))
        lo, hi = wilson_interval(int(died_first.sum()), n)
        points.append(
            {
                "point": idx,
                "K": params.K,
                "mu": params.mu,
                "regime": pred.regime.value,
                "horizon": horizon,
                "n_replicas": n,
                "n_resolved": n_resolved,
                "p_extinct_before_terminal": p_hat,
                "p_ci_lo": lo,
                "p_ci_hi": hi,
                "mean_extinction_time": float(np.nanmean(cols["t_0"]))
                if np.any(extinct) else None,
                "predicted_mean_extinction_time": 1.0 / pred.rho0K
                if math.isfinite(pred.rho0K) and pred.rho0K > 0 else None,
                "verdict": "ok" if n_resolved >= MIN_REPLICAS_FOR_VERDICT else "inconclusive",
            }
        )
        ensembles[f"ensemble_point{idx}"] = ens
    # monotonicity of p in decreasing mu at fixed K
    by_K: dict[int, list] = {}
    for pt in points:
        by_K.setdefault(pt["K"], []).append(pt)
    monotone = {}
    for K, pts in by_K.items():
        pts = sorted(pts, key=lambda p: -p["mu"])
        ps = [p["p_extinct_before_terminal"] for p in pts]
        monotone[str(K)] = bool(all(a <= b + 1e-12 for a, b in zip(ps, ps[1:])))
    body = {
        "experiment": "extinction",
        "plan": plan.to_dict(),
        "points": points,
        "monotone_in_decreasing_mu": monotone,
    }
    return Report(body=body, meta=_meta(plan, t0), ensembles=ensembles)


# -- tropical experiment ------------------------------------------------------


def tropical_grid(plan: ExperimentPlan, swap_time: float) -> np.ndarray:
    """Rescaled-time grid excluding the swap neighbourhood.

    At any finite mu the swap is an O(1)-natural-time transition, a
    vanishing neighbourhood on the rescaled clock but not at fixed mu, so
    the uniform comparison excludes |t - T| <= swap_window (and starts
    after 0, where empty traits have log 0 = -inf).
    """
    grid = np.linspace(plan.grid_start, plan.grid_stop, plan.grid_points)
    keep = np.abs(grid - swap_time) > plan.swap_window
    return grid[keep]


def run_tropical_experiment(plan: ExperimentPlan) -> Report:
    if plan.experiment != "tropical":
        raise PlanError("plan.experiment must be 'tropical'")
    t0 = time.perf_counter()
    params = plan.model
    land = derive_landscape(params)
    swap_time = params.L / land.f_terminal_vs_resident
    grid = tropical_grid(plan, swap_time)
    mus = sorted(plan.mu_list, reverse=True)
    report = verify_against_ode(params, mus, grid)
    plotdata = {}
    header = "t," + ",".join(f"x{i}" for i in range(params.L + 1))
    for mu, resc in zip(report.mu_list, report.rescaled):
        lines = [header]
        for t, row in zip(grid, resc):
            lines.append(f"{t!r}," + ",".join(repr(v) for v in row))
        plotdata[f"rescaled_mu{mu:.0e}"] = "\n".join(lines) + "\n"
    dense = np.linspace(plan.grid_start, plan.grid_stop, 400)
    lines = [header]
    lim = np.stack([p(dense) for p in report.paths], axis=1)
    for t, row in zip(dense, lim):
        lines.append(f"{t!r}," + ",".join(repr(v) for v in row))
    plotdata["limit_paths"] = "\n".join(lines) + "\n"
    body = {
        "experiment": "tropical",
        "plan": plan.to_dict(),
        "swap_time": swap_time,
        "grid": [float(v) for v in grid],
        "convergence": report.to_dict(),
        "paths": [p.to_dict(trait=i) for i, p in enumerate(report.paths)],
        "verdict": "ok" if report.monotone else "not_monotone",
    }
    return Report(body=body, meta=_meta(plan, t0), plotdata=plotdata)


def run_experiment(plan: ExperimentPlan) -> Report:
    return {
        "crossing": run_crossing_experiment,
        "extinction": run_extinction_experiment,
        "tropical": run_tropical_experiment,
    }[plan.experiment](plan)
