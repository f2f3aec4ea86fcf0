"""Exact continuous-time simulation of the multi-trait birth-death process.

`run` advances one trajectory with the direct-method SSA; every jump
changes exactly one trait count by +-1, so hitting times of integer
levels are exact event times. `run_ensemble` fans replicas out over
threads with splittable per-replica RNG streams and aggregates
order-independently, so a summary is a deterministic function of
(model, master_seed, n_replicas) alone.

RNG contract: xoshiro256++ inside the kernels; replica r's state is
numpy.random.SeedSequence(master_seed).spawn(...)[r].generate_state(4).
The algorithm name and master seed are embedded in every output artifact.
"""

from __future__ import annotations

import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernel
from ._kernel import (
    STATUS_EXTINCT,
    STATUS_HORIZON,
    STATUS_MAXEVENTS,
    STATUS_RUNAWAY,
    STATUS_TERMINAL,
    TERMINAL_ALL,
    TERMINAL_ANY,
    TERMINAL_NONE,
)
from .model import ModelParams, MutationKernel, derive_landscape

RNG_ALGORITHM = "xoshiro256++/SeedSequence-spawn"

TERMINAL_NAMES = {
    STATUS_HORIZON: "horizon",
    STATUS_EXTINCT: "extinct",
    STATUS_TERMINAL: "terminal",
    STATUS_RUNAWAY: "runaway",
    STATUS_MAXEVENTS: "max_events",
}

MAX_TRAJECTORY_POINTS = 100_000


class SimulationError(RuntimeError):
    pass


class Absorbed(SimulationError):
    """The population is empty: total event rate is zero."""


class RunawayPopulation(SimulationError):
    """Total count exceeded the hard cap; the model looks mis-parameterized."""


@dataclass
class PopulationState:
    """Integer trait counts at a point in process time."""

    counts: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.ndim != 1:
            raise ValueError("counts must be a vector")
        if np.any(self.counts < 0):
            raise ValueError("counts must be nonnegative")
        self.time = float(self.time)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def copy(self) -> "PopulationState":
        return PopulationState(self.counts.copy(), self.time)


def monomorphic_state(params: ModelParams, trait: int = 0) -> PopulationState:
    """Resident equilibrium state: floor(xbar_trait * K) individuals at `trait`."""
    xbar = derive_landscape(params).xbar
    counts = np.zeros(params.L + 1, dtype=np.int64)
    counts[trait] = int(math.floor(xbar[trait] * params.K))
    return PopulationState(counts)


@dataclass(frozen=True)
class Event:
    kind: str          # "birth_clonal" | "birth_mutant" | "death"
    trait: int         # trait whose count changed
    parent: int        # trait of the reproducing/dying individual
    dt: float          # waiting time before the event


def step(state: PopulationState, params: ModelParams, rng: np.random.Generator):
    """Advance by a single event (readable reference path, used in tests).

    Exponential waiting time at the total rate; one channel chosen with
    probability proportional to its rate; exactly one coordinate moves by
    +-1. Raises Absorbed when the population is empty.
    """
    counts = state.counts
    L = params.L
    one_sided = params.kernel is MutationKernel.ONE_SIDED
    channels = []  # (rate, kind, trait, parent)
    for i in range(L + 1):
        xi = int(counts[i])
        if xi == 0:
            continue
        bi = params.b[i]
        channels.append(((1.0 - params.mu) * bi * xi, "birth_clonal", i, i))
        if not (one_sided and i == L):
            bm = params.mu * bi * xi
            if bm > 0.0:
                if one_sided:
                    channels.append((bm, "birth_mutant", i + 1, i))
                elif i == 0:
                    channels.append((bm, "birth_mutant", 1, 0))
                elif i == L:
                    channels.append((bm, "birth_mutant", L - 1, L))
                else:
                    channels.append((bm / 2.0, "birth_mutant", i - 1, i))
                    channels.append((bm / 2.0, "birth_mutant", i + 1, i))
        s_i = float(params.c[i] @ counts)
        channels.append(((params.d[i] + s_i / params.K) * xi, "death", i, i))
    total_rate = sum(ch[0] for ch in channels)
    if total_rate <= 0.0:
        raise Absorbed("empty population: no event possible")
    dt = rng.exponential(1.0 / total_rate)
    u = rng.uniform(0.0, total_rate)
    acc = 0.0
    chosen = channels[-1]
    for ch in channels:
        acc += ch[0]
        if u < acc:
            chosen = ch
            break
    _, kind, trait, parent = chosen
    new_counts = counts.copy()
    new_counts[trait] += 1 if kind.startswith("birth") else -1
    return (
        PopulationState(new_counts, state.time + dt),
        Event(kind=kind, trait=trait, parent=parent, dt=dt),
    )


@dataclass
class Trajectory:
    """Recorded path: either strided events or exact values on a time grid."""

    times: np.ndarray
    counts: np.ndarray          # shape (n_points, L+1)
    events: int
    terminal: str
    mode: str                   # "events" | "grid"
    t_end: float
    final_counts: np.ndarray = field(default=None)

    def to_csv(self, path: str | Path, meta: dict | None = None) -> None:
        lines = []
        if meta:
            lines.append("# " + json.dumps(meta, sort_keys=True))
        header = "t," + ",".join(f"x{i}" for i in range(self.counts.shape[1]))
        lines.append(header)
        for t, row in zip(self.times, self.counts):
            lines.append(f"{t!r}," + ",".join(str(int(v)) for v in row))
        Path(path).write_text("\n".join(lines) + "\n")


@dataclass
class StoppingTimes:
    """First-hitting instants; None when not reached before the run ended.

    t_hit is keyed by the (trait, level) pairs passed as watches, with the
    level echoed as given (density v or integer count). t_sigma0 is the
    first time all traits below L are simultaneously empty, b_l the first
    time trait L is populated, t_0 total extinction.
    """

    t_hit: dict
    t_sigma0: float | None
    b_l: float | None
    t_0: float | None

    def to_dict(self) -> dict:
        return {
            "t_hit": {f"{tr}:{lv}": v for (tr, lv), v in self.t_hit.items()},
            "t_sigma0": self.t_sigma0,
            "b_l": self.b_l,
            "t_0": self.t_0,
        }


def _watch_level_count(level, K: int) -> int:
    """Integer watch level: ints are taken verbatim, floats as floor(v*K)."""
    if isinstance(level, (int, np.integer)):
        return int(level)
    return int(math.floor(float(level) * K))


def default_hard_cap(params: ModelParams) -> int:
    """100 * K * max_i xbar_i, floored at 100 * K for all-subcritical models."""
    xbar_max = float(np.max(derive_landscape(params).xbar))
    return int(math.ceil(100.0 * params.K * max(xbar_max, 1.0)))


def replica_states(master_seed: int, n_replicas: int) -> np.ndarray:
    """Per-replica xoshiro256++ states from a SeedSequence spawn tree."""
    children = np.random.SeedSequence(master_seed).spawn(n_replicas)
    states = np.empty((n_replicas, 4), dtype=np.uint64)
    for r, child in enumerate(children):
        st = child.generate_state(4, np.uint64)
        if not st.any():  # all-zero state is invalid for xoshiro
            st = np.array(
                [0x9E3779B97F4A7C15, 0xBF58476D1CE4E5B9, 0x94D049BB133111EB, 0x1], dtype=np.uint64
            )
        states[r] = st
    return states


def _nan_to_none(x: float) -> float | None:
    return None if math.isnan(x) else float(x)


def run(
    params: ModelParams,
    init: PopulationState,
    horizon: float,
    watches=(),
    seed: int | np.ndarray = 0,
    *,
    stop_on_watches: str | None = None,   # None | "all" | "any"
    stop_on_sigma0: bool = False,
    sample_times=None,
    record_events: bool = True,
    max_points: int = MAX_TRAJECTORY_POINTS,
    hard_cap: int | None = None,
    max_events: int = 0,
):
    """Simulate one trajectory until horizon, extinction, or a stop rule.

    watches: sequence of (trait, level); levels may be densities (float,
    converted to floor(v*K)) or exact integer counts. Stopping times are
    recorded at exact event times. With stop_on_watches="all" the run ends
    once every watch has fired (AND sigma0, if stop_on_sigma0); "any" ends
    at the first watch. sample_times (sorted, within [init.time, horizon])
    yields exact state values on a grid in Trajectory(mode="grid");
    otherwise an event-strided trajectory capped at max_points is kept.

    Returns (Trajectory, StoppingTimes). Raises RunawayPopulation when the
    total count exceeds hard_cap (default: see default_hard_cap).
    """
    if horizon <= init.time:
        raise ValueError("horizon must exceed the initial time")
    n = params.L + 1
    if init.counts.shape[0] != n:
        raise ValueError(f"init has {init.counts.shape[0]} traits, model has {n}")

    watch_list = list(watches)
    watch_traits = np.array([int(tr) for tr, _ in watch_list], dtype=np.int64)
    watch_levels = np.array(
        [_watch_level_count(lv, params.K) for _, lv in watch_list], dtype=np.int64
    )
    if np.any(watch_traits < 0) or np.any(watch_traits > params.L):
        raise ValueError("watch trait out of range")

    terminal_mode = TERMINAL_NONE
    if stop_on_watches == "all" or (stop_on_watches is None and stop_on_sigma0):
        terminal_mode = TERMINAL_ALL
    elif stop_on_watches == "any":
        terminal_mode = TERMINAL_ANY
    elif stop_on_watches not in (None, "all", "any"):
        raise ValueError("stop_on_watches must be None, 'all' or 'any'")

    if sample_times is not None:
        sample_times = np.asarray(sample_times, dtype=float)
        if np.any(np.diff(sample_times) < 0):
            raise ValueError("sample_times must be sorted")
        record_events = False
    else:
        sample_times = np.empty(0)
    sample_out = np.zeros((len(sample_times), n), dtype=np.int64)

    evt_cap = int(max_points) if record_events else 0
    evt_t = np.empty(max(evt_cap, 1))
    evt_x = np.empty((max(evt_cap, 1), n), dtype=np.int64)

    if isinstance(seed, np.ndarray):
        state = seed.astype(np.uint64, copy=True)
    else:
        state = replica_states(int(seed), 1)[0].copy()

    watch_times = np.full(len(watch_list), np.nan)
    builtin_times = np.full(3, np.nan)
    counts = init.counts.copy()

    status, t_end, events, n_samp, n_evt, _stride = _kernel.ssa_run(
        counts,
        float(init.time),
        float(horizon),
        params.b,
        params.d,
        params.c,
        float(params.K),
        float(params.mu),
        0 if params.kernel is MutationKernel.ONE_SIDED else 1,
        watch_traits,
        watch_levels,
        terminal_mode,
        bool(stop_on_sigma0),
        sample_times,
        sample_out,
        evt_cap,
        evt_t,
        evt_x,
        int(hard_cap if hard_cap is not None else default_hard_cap(params)),
        int(max_events),
        state,
        watch_times,
        builtin_times,
    )

    stopping = StoppingTimes(
        t_hit={
            (tr, lv): _nan_to_none(watch_times[w])
            for w, (tr, lv) in enumerate(watch_list)
        },
        t_sigma0=_nan_to_none(builtin_times[0]),
        b_l=_nan_to_none(builtin_times[1]),
        t_0=_nan_to_none(builtin_times[2]),
    )

    if record_events:
        times = np.concatenate(([init.time], evt_t[:n_evt]))
        path = np.concatenate((init.counts[None, :], evt_x[:n_evt]))
        mode = "events"
    else:
        times = sample_times[:n_samp]
        path = sample_out[:n_samp]
        mode = "grid"
    traj = Trajectory(
        times=times,
        counts=path,
        events=int(events),
        terminal=TERMINAL_NAMES[status],
        mode=mode,
        t_end=float(t_end),
        final_counts=counts,
    )
    if status == STATUS_RUNAWAY:
        exc = RunawayPopulation(
            f"total population exceeded hard cap at t={t_end:.6g} (events={events})"
        )
        exc.trajectory = traj
        exc.stopping = stopping
        raise exc
    return traj, stopping


@dataclass
class ReplicaRecord:
    replica: int
    seed_path: str
    stopping: StoppingTimes | None
    terminal: str
    events: int
    t_end: float
    final_counts: list | None
    wall_ms: float
    error: str | None = None

    def body_dict(self) -> dict:
        """Deterministic portion (wall-clock excluded)."""
        return {
            "replica": self.replica,
            "seed": self.seed_path,
            "stopping_times": self.stopping.to_dict() if self.stopping else None,
            "terminal": self.terminal,
            "events": self.events,
            "t_end": self.t_end,
            "final_counts": self.final_counts,
            "error": self.error,
        }

    def to_record(self) -> dict:
        doc = self.body_dict()
        doc["wall_ms"] = round(self.wall_ms, 3)
        return doc


@dataclass
class EnsembleSummary:
    params_digest: str
    master_seed: int
    n_replicas: int
    rng_algorithm: str
    records: list  # ReplicaRecord, sorted by replica index

    def body_dict(self) -> dict:
        return {
            "model": self.params_digest,
            "master_seed": self.master_seed,
            "n_replicas": self.n_replicas,
            "rng": self.rng_algorithm,
            "replicas": [r.body_dict() for r in self.records],
        }

    def to_jsonl(self, path: str | Path) -> None:
        preamble = {
            "model": self.params_digest,
            "master_seed": self.master_seed,
            "n_replicas": self.n_replicas,
            "rng": self.rng_algorithm,
        }
        with open(path, "w") as fh:
            fh.write(json.dumps(preamble, sort_keys=True) + "\n")
            for rec in self.records:
                fh.write(json.dumps(rec.to_record(), sort_keys=True) + "\n")

    def stopping_arrays(self) -> dict:
        """Column view over replicas: dict of name -> float array (NaN unset)."""
        cols: dict[str, list] = {}
        for rec in self.records:
            st = rec.stopping.to_dict() if rec.stopping else {}
            flat = dict(st.get("t_hit", {}))
            for key in ("t_sigma0", "b_l", "t_0"):
                flat[key] = st.get(key)
            for key, val in flat.items():
                cols.setdefault(key, []).append(np.nan if val is None else val)
        return {k: np.asarray(v, dtype=float) for k, v in cols.items()}


def run_ensemble(
    params: ModelParams,
    init: PopulationState,
    horizon: float,
    watches=(),
    n_replicas: int = 1,
    master_seed: int = 0,
    threads: int = 1,
    **run_kwargs,
) -> EnsembleSummary:
    """Independent replicas on splittable streams; aggregate is thread-count
    invariant (records sorted by replica index, wall times excluded from
    the deterministic body). Per-replica failures become tagged records.
    """
    if n_replicas < 1:
        raise ValueError("n_replicas must be >= 1")
    states = replica_states(master_seed, n_replicas)

    def one(r: int) -> ReplicaRecord:
        t_start = time.perf_counter()
        try:
            traj, stopping = run(
                params, init.copy(), horizon, watches,
                seed=states[r], record_events=False, **run_kwargs,
            )
            return ReplicaRecord(
                replica=r,
                seed_path=f"{master_seed}/{r}",
                stopping=stopping,
                terminal=traj.terminal,
                events=traj.events,
                t_end=traj.t_end,
                final_counts=[int(v) for v in traj.final_counts],
                wall_ms=(time.perf_counter() - t_start) * 1e3,
            )
        except SimulationError as exc:
            return ReplicaRecord(
                replica=r,
                seed_path=f"{master_seed}/{r}",
                stopping=None,
                terminal="error",
                events=0,
                t_end=float("nan"),
                final_counts=None,
                wall_ms=(time.perf_counter() - t_start) * 1e3,
                error=f"{type(exc).__name__}: {exc}",
            )

    if threads <= 1:
        records = [one(r) for r in range(n_replicas)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            records = list(pool.map(one, range(n_replicas)))
    records.sort(key=lambda rec: rec.replica)
    return EnsembleSummary(
        params_digest=params.digest(),
        master_seed=int(master_seed),
        n_replicas=int(n_replicas),
        rng_algorithm=RNG_ALGORITHM,
        records=records,
    )
