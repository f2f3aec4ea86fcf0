"""Numba-jitted simulation kernels.

All kernels draw randomness from an explicit xoshiro256++ state (four
uint64 words) owned by the caller, so replicas are deterministic
regardless of thread scheduling. States are seeded from
numpy.random.SeedSequence spawns (see gillespie.replica_states).

The main SSA kernel is the exact direct method: after every event the
per-trait channel table (clonal birth, mutant birth, death) is rebuilt
from the current counts; the competition sums S_i = sum_j c_ij X_j are
maintained incrementally and refreshed from scratch every 2^20 events to
keep float drift below statistical relevance.
"""

from __future__ import annotations

import numpy as np
from numba import njit, uint64

# status codes returned by ssa_run
STATUS_HORIZON = 0
STATUS_EXTINCT = 1
STATUS_TERMINAL = 2
STATUS_RUNAWAY = 3
STATUS_MAXEVENTS = 4

# terminal_mode values
TERMINAL_NONE = 0
TERMINAL_ALL = 1   # all watches (and sigma0 if required) must have fired
TERMINAL_ANY = 2   # any single watch suffices

_S_REFRESH = 1 << 20  # events between from-scratch competition-sum rebuilds


@njit(inline="always")
def _rotl(x, k):
    return (x << k) | (x >> (uint64(64) - k))


@njit(inline="always")
def _next_u64(s):
    result = _rotl(s[0] + s[3], uint64(23)) + s[0]
    t = s[1] << uint64(17)
    s[2] ^= s[0]
    s[3] ^= s[1]
    s[1] ^= s[2]
    s[0] ^= s[3]
    s[2] ^= t
    s[3] = _rotl(s[3], uint64(45))
    return result


@njit(inline="always")
def _u01(s):
    # uniform in [0, 1), 53-bit resolution
    return (_next_u64(s) >> uint64(11)) * 1.1102230246251565e-16


@njit(inline="always")
def _exp1(s):
    # standard exponential; 1 - u01 lies in (0, 1]
    return -np.log(1.0 - _u01(s))


@njit(cache=True, nogil=True)
def ssa_run(
    counts,          # int64[L+1], mutated in place
    t0,
    horizon,
    b, d, c,         # float64[L+1], float64[L+1], float64[L+1, L+1]
    K,               # float64
    mu,
    kernel_code,     # 0 one-sided, 1 two-sided
    watch_traits,    # int64[nw]
    watch_levels,    # int64[nw]
    terminal_mode,   # TERMINAL_*
    require_sigma0,  # bool, AND-ed into TERMINAL_ALL
    sample_times,    # float64[ns], sorted, all in [t0, horizon]
    sample_out,      # int64[ns, L+1]
    evt_cap,         # 0 disables event-stride recording
    evt_t,           # float64[evt_cap]
    evt_x,           # int64[evt_cap, L+1]
    hard_cap,        # int64 total-population cap
    max_events,      # 0 = unlimited
    rng_state,       # uint64[4], mutated
    watch_times,     # float64[nw], NaN-initialized, mutated
    builtin_times,   # float64[3]: t_sigma0, t_BL, t_T0; NaN-initialized
):
    n = counts.shape[0]
    L = n - 1
    nw = watch_traits.shape[0]
    ns = sample_times.shape[0]

    S = np.zeros(n)
    for i in range(n):
        acc = 0.0
        for j in range(n):
            acc += c[i, j] * counts[j]
        S[i] = acc
    total = 0
    for i in range(n):
        total += counts[i]

    t = t0
    events = 0
    si = 0
    n_evt = 0
    stride = 1
    stride_phase = 0

    # bookkeeping at the initial state
    for w in range(nw):
        if counts[watch_traits[w]] == watch_levels[w]:
            watch_times[w] = t
    if total - counts[L] == 0:
        builtin_times[0] = t
    if counts[L] > 0:
        builtin_times[1] = t
    if total == 0:
        builtin_times[2] = t
        return (STATUS_EXTINCT, t, 0, si, n_evt, stride)

    if terminal_mode != TERMINAL_NONE and nw + (1 if require_sigma0 else 0) > 0:
        fired_all = True
        fired_any = False
        for w in range(nw):
            if np.isnan(watch_times[w]):
                fired_all = False
            else:
                fired_any = True
        if require_sigma0 and np.isnan(builtin_times[0]):
            fired_all = False
        if terminal_mode == TERMINAL_ALL and fired_all:
            return (STATUS_TERMINAL, t, 0, si, n_evt, stride)
        if terminal_mode == TERMINAL_ANY and fired_any:
            return (STATUS_TERMINAL, t, 0, si, n_evt, stride)

    status = STATUS_HORIZON
    while True:
        if max_events > 0 and events >= max_events:
            status = STATUS_MAXEVENTS
            break

        # channel table, rebuilt every event
        R = 0.0
        for i in range(n):
            xi = counts[i]
            if xi > 0:
                bm = mu * b[i] * xi
                if kernel_code == 0 and i == L:
                    bm = 0.0  # one-sided mutants from the top trait are lost
                R += (1.0 - mu) * b[i] * xi + bm + (d[i] + S[i] / K) * xi

        if R <= 0.0:
            # population alive but frozen (all rates zero): idle to horizon
            while si < ns:
                for jj in range(n):
                    sample_out[si, jj] = counts[jj]
                si += 1
            t = horizon
            status = STATUS_HORIZON
            break

        t_new = t + _exp1(rng_state) / R
        if t_new >= horizon:
            while si < ns:
                for jj in range(n):
                    sample_out[si, jj] = counts[jj]
                si += 1
            t = horizon
            status = STATUS_HORIZON
            break

        while si < ns and sample_times[si] < t_new:
            for jj in range(n):
                sample_out[si, jj] = counts[jj]
            si += 1
        t = t_new

        # channel selection by linear scan
        u2 = _u01(rng_state) * R
        acc = 0.0
        trait = -1
        delta = 0
        last_trait = -1
        last_delta = 0
        for i in range(n):
            xi = counts[i]
            if xi <= 0:
                continue
            bc = (1.0 - mu) * b[i] * xi
            if bc > 0.0:
                last_trait, last_delta = i, 1
                acc += bc
                if u2 < acc:
                    trait, delta = i, 1
                    break
            bm = mu * b[i] * xi
            if kernel_code == 0 and i == L:
                bm = 0.0
            if bm > 0.0:
                if kernel_code == 0:
                    tgt = i + 1
                elif i == 0:
                    tgt = 1
                elif i == L:
                    tgt = L - 1
                else:
                    tgt = -1  # interior two-sided: side drawn only if selected
                last_trait, last_delta = (tgt if tgt >= 0 else i), 1
                acc += bm
                if u2 < acc:
                    if tgt < 0:
                        tgt = i + 1 if _u01(rng_state) < 0.5 else i - 1
                    trait, delta = tgt, 1
                    break
            dr = (d[i] + S[i] / K) * xi
            if dr > 0.0:
                last_trait, last_delta = i, -1
                acc += dr
                if u2 < acc:
                    trait, delta = i, -1
                    break
        if trait < 0:
            # floating-point tail of the scan; reuse the last live channel
            trait, delta = last_trait, last_delta

        counts[trait] += delta
        total += delta
        events += 1
        if events % _S_REFRESH == 0:
            for i in range(n):
                acc2 = 0.0
                for j in range(n):
                    acc2 += c[i, j] * counts[j]
                S[i] = acc2
        else:
            dd = float(delta)
            for i in range(n):
                S[i] += c[i, trait] * dd

        if evt_cap > 0 and events % stride == stride_phase:
            if n_evt == evt_cap:
                # halve the retained history, double the stride
                keep = evt_cap // 2
                for r in range(keep):
                    evt_t[r] = evt_t[2 * r + 1]
                    for jj in range(n):
                        evt_x[r, jj] = evt_x[2 * r + 1, jj]
                n_evt = keep
                stride *= 2
                stride_phase = events % stride
            evt_t[n_evt] = t
            for jj in range(n):
                evt_x[n_evt, jj] = counts[jj]
            n_evt += 1

        for w in range(nw):
            if np.isnan(watch_times[w]) and counts[watch_traits[w]] == watch_levels[w]:
                watch_times[w] = t
        if np.isnan(builtin_times[0]) and total - counts[L] == 0:
            builtin_times[0] = t
        if np.isnan(builtin_times[1]) and counts[L] > 0:
            builtin_times[1] = t

        if total == 0:
            builtin_times[2] = t
            while si < ns:
                for jj in range(n):
                    sample_out[si, jj] = counts[jj]
                si += 1
            status = STATUS_EXTINCT
            break

        if terminal_mode != TERMINAL_NONE:
            fired_all = True
            fired_any = False
            for w in range(nw):
                if np.isnan(watch_times[w]):
                    fired_all = False
                else:
                    fired_any = True
            if require_sigma0 and np.isnan(builtin_times[0]):
                fired_all = False
            if terminal_mode == TERMINAL_ALL and fired_all and (nw > 0 or require_sigma0):
                status = STATUS_TERMINAL
                break
            if terminal_mode == TERMINAL_ANY and fired_any:
                status = STATUS_TERMINAL
                break

        if total > hard_cap:
            status = STATUS_RUNAWAY
            break

    return (status, t, events, si, n_evt, stride)


@njit(cache=True, nogil=True)
def competition_sums(counts, c):
    """From-scratch S_i = sum_j c_ij X_j (used by rate-exactness checks)."""
    n = counts.shape[0]
    S = np.zeros(n)
    for i in range(n):
        acc = 0.0
        for j in range(n):
            acc += c[i, j] * counts[j]
        S[i] = acc
    return S


@njit(cache=True, nogil=True)
def excursion_births(b, d, n_excursions, rng_state, out):
    """Total births per excursion of a linear birth-death process.

    Each excursion starts from one individual with per-capita rates (b, d)
    and runs to extinction. The birth count depends only on the embedded
    jump chain: every event is a birth with probability b/(b+d).
    """
    p_birth = b / (b + d)
    for r in range(n_excursions):
        pop = 1
        births = 0
        while pop > 0:
            if _u01(rng_state) < p_birth:
                pop += 1
                births += 1
            else:
                pop -= 1
        out[r] = births
    return 0


@njit(cache=True, nogil=True)
def ruin_trials(b, d, start, lo, hi, n_trials, rng_state):
    """Monte-Carlo gambler's ruin for a linear birth-death chain.

    Returns how many of n_trials, started at `start`, hit `hi` before `lo`.
    """
    p_birth = b / (b + d)
    hits = 0
    for r in range(n_trials):
        pop = start
        while True:
            if _u01(rng_state) < p_birth:
                pop += 1
                if pop == hi:
                    hits += 1
                    break
            else:
                pop -= 1
                if pop == lo:
                    break
    return hits


@njit(cache=True, nogil=True)
def logistic_one_type(b, d, comp, K, n0, t_end, n_replicas, states, out):
    """Independent single-type logistic birth-death simulator.

    Per-capita birth rate b, death rate d + comp*X/K. Returns X(t_end) per
    replica. Written as its own loop (not via ssa_run) so it can serve as
    a distribution oracle for the multi-trait simulator at mu = 0.
    """
    for r in range(n_replicas):
        s = states[r]
        x = n0
        t = 0.0
        while x > 0:
            rate_b = b * x
            rate_d = (d + comp * x / K) * x
            R = rate_b + rate_d
            t += _exp1(s) / R
            if t >= t_end:
                break
            if _u01(s) * R < rate_b:
                x += 1
            else:
                x -= 1
        out[r] = x
    return 0
