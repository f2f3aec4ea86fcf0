"""Brute-force oracles backing the closed-form results.

These are deliberately independent code paths (embedded jump chains and
exhaustive minimization rather than the production formulas/kernels) so
the test suite can cross-validate both directions. The CLI exposes them
under `valleycross oracle ...` so reported reference values are
reproducible outside the test suite.
"""

from __future__ import annotations

import numpy as np

from . import _kernel
from .gillespie import replica_states
from .tropical import CascadeSpec


def mc_excursion_births(b: float, d: float, n: int, seed: int = 0) -> np.ndarray:
    """Sample total births over n subcritical excursions started from one
    individual (constant per-capita rates, no competition).

    The birth count is a function of the embedded jump chain alone, so
    the chain is simulated directly: each event is a birth with
    probability b/(b+d).
    """
    if not (0 < b < d):
        raise ValueError("requires 0 < b < d")
    if n < 1:
        raise ValueError("n must be >= 1")
    state = replica_states(seed, 1)[0].copy()
    out = np.empty(n, dtype=np.int64)
    _kernel.excursion_births(float(b), float(d), int(n), state, out)
    return out


def mc_ruin(b: float, d: float, i: int, j: int, k: int, n: int, seed: int = 0) -> float:
    """Monte-Carlo estimate of P_j(hit k before i) for the birth-death walk."""
    if not (0 < b < d):
        raise ValueError("requires 0 < b < d")
    if not (i <= j <= k and i < k):
        raise ValueError("need i <= j <= k with i < k")
    if j == i:
        return 0.0
    if j == k:
        return 1.0
    state = replica_states(seed, 1)[0].copy()
    hits = _kernel.ruin_trials(float(b), float(d), int(j), int(i), int(k), int(n), state)
    return hits / n


def mc_logistic_final_counts(
    b: float, d: float, comp: float, K: int, n0: int, t_end: float,
    n_replicas: int, master_seed: int = 0,
) -> np.ndarray:
    """X(t_end) samples from an independent single-type logistic simulator.

    Serves as the distributional oracle for the multi-trait simulator's
    trait-0 marginal at mu = 0.
    """
    states = replica_states(master_seed, n_replicas)
    out = np.empty(n_replicas, dtype=np.int64)
    _kernel.logistic_one_type(
        float(b), float(d), float(comp), float(K), int(n0), float(t_end),
        int(n_replicas), states, out,
    )
    return out


def cascade_exponent_bruteforce(spec: CascadeSpec, t: float) -> np.ndarray:
    """Exhaustive enumeration of the cascade exponent minimization.

    Loops every admissible (gamma, alpha) pair per component with the same
    arithmetic expression as the production routine, so agreement must be
    exact, not approximate.
    """
    t = float(t)
    L = spec.L
    out = np.empty(L + 1)
    for i in range(L + 1):
        best = np.inf
        for gamma in range(i + 1):
            if spec.ell[gamma] == 0.0:
                continue
            for alpha in range(gamma, i + 1):
                cand = ((i - gamma) + spec.p[gamma]) - t * spec.f[alpha]
                if cand < best:
                    best = cand
        out[i] = -best
    return out
