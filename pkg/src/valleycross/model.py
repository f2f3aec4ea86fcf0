"""Model parameterization for the multi-trait logistic birth-death process.

Traits live on the path graph 0..L. Each trait i carries a clonal birth
rate b_i, a natural death rate d_i, and competition pressures c_ij/K from
trait j. Births mutate with probability mu to a neighbouring trait,
either always upward (one-sided kernel) or to each side with equal
probability (two-sided kernel).

From the rates we derive the monomorphic equilibrium densities
xbar_i = (b_i - d_i)/c_ii clamped at 0, and the invasion fitness matrix
f_ij = b_i - d_i - c_ij * xbar_j: the initial per-capita growth rate of a
rare i-mutant inside a resident j-population at equilibrium.

A "fitness valley" landscape is one where every intermediate trait is
unfit against the resident 0 while the terminal trait L is fit, and every
trait is unfit against L. `validate_valley` reports these sign and
distinctness conditions clause by clause.
"""

from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

MODEL_SCHEMA_VERSION = 1

#: Relative tolerance below which two fitness values count as a tie.
DEFAULT_DISTINCTNESS_TOL = 1e-12


class ModelError(ValueError):
    """Invalid model parameterization or model document."""


class MutationKernel(enum.Enum):
    """Where a mutant birth lands relative to its parent trait."""

    ONE_SIDED = "one_sided"    # always parent+1; mutants from trait L are lost
    TWO_SIDED = "two_sided"    # each side with probability 1/2; reflecting at 0 and L

    @classmethod
    def parse(cls, value: "MutationKernel | str") -> "MutationKernel":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ModelError(
                f"unknown mutation kernel {value!r}; expected 'one_sided' or 'two_sided'"
            ) from None


def _as_vector(name: str, value, length: int) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.shape != (length,):
        raise ModelError(f"{name} must have shape ({length},), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ModelError(f"{name} must be finite")
    if np.any(arr < 0):
        raise ModelError(f"{name} must be nonnegative")
    return arr


@dataclass(frozen=True, eq=False)
class ModelParams:
    """Full parameterization of the L+1-trait process.

    b, d are per-capita rates; c is the competition kernel (pressure of
    column trait on row trait, applied as c_ij/K in the death rate); K is
    the carrying capacity and mu the mutation probability per birth.
    """

    L: int
    b: np.ndarray
    d: np.ndarray
    c: np.ndarray
    kernel: MutationKernel
    K: int
    mu: float

    def __eq__(self, other):
        if not isinstance(other, ModelParams):
            return NotImplemented
        return (
            self.L == other.L
            and self.kernel is other.kernel
            and self.K == other.K
            and self.mu == other.mu
            and np.array_equal(self.b, other.b)
            and np.array_equal(self.d, other.d)
            and np.array_equal(self.c, other.c)
        )

    __hash__ = None

    def __post_init__(self):
        if not isinstance(self.L, (int, np.integer)) or self.L < 1:
            raise ModelError(f"L must be a positive integer, got {self.L!r}")
        object.__setattr__(self, "L", int(self.L))
        n = self.L + 1
        object.__setattr__(self, "b", _as_vector("b", self.b, n))
        object.__setattr__(self, "d", _as_vector("d", self.d, n))
        c = np.asarray(self.c, dtype=float)
        if c.shape != (n, n):
            raise ModelError(f"c must have shape ({n}, {n}), got {c.shape}")
        if not np.all(np.isfinite(c)):
            raise ModelError("c must be finite")
        if np.any(c < 0):
            raise ModelError("c must be nonnegative")
        # standing conditions on the competition kernel
        if np.any(np.diag(c) <= 0):
            raise ModelError("competition kernel requires c_ii > 0 for every trait")
        if np.any(c[:, 0] <= 0):
            raise ModelError("competition kernel requires c_i0 > 0 for every trait")
        if np.any(c[:, self.L] <= 0):
            raise ModelError("competition kernel requires c_iL > 0 for every trait")
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "kernel", MutationKernel.parse(self.kernel))
        if not isinstance(self.K, (int, np.integer)) or self.K < 1:
            raise ModelError(f"K must be a positive integer, got {self.K!r}")
        object.__setattr__(self, "K", int(self.K))
        mu = float(self.mu)
        if not (0.0 <= mu <= 1.0) or not np.isfinite(mu):
            raise ModelError(f"mu must lie in [0, 1], got {self.mu!r}")
        object.__setattr__(self, "mu", mu)
        self.b.setflags(write=False)
        self.d.setflags(write=False)
        self.c.setflags(write=False)

    def with_mu(self, mu: float) -> "ModelParams":
        return replace(self, mu=mu)

    def with_K(self, K: int) -> "ModelParams":
        return replace(self, K=K)

    # -- serialization ---------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "v": MODEL_SCHEMA_VERSION,
            "L": self.L,
            "b": self.b.tolist(),
            "d": self.d.tolist(),
            "c": self.c.tolist(),   # row-major
            "kernel": self.kernel.value,
            "K": self.K,
            "mu": self.mu,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelParams":
        if not isinstance(doc, dict):
            raise ModelError(f"model document must be an object, got {type(doc).__name__}")
        if doc.get("v") != MODEL_SCHEMA_VERSION:
            raise ModelError(
                f"model document schema version must be 'v': {MODEL_SCHEMA_VERSION}, "
                f"got {doc.get('v')!r}"
            )
        missing = {"L", "b", "d", "c", "kernel", "K", "mu"} - doc.keys()
        if missing:
            raise ModelError(f"model document missing keys: {sorted(missing)}")
        return cls(
            L=doc["L"], b=doc["b"], d=doc["d"], c=doc["c"],
            kernel=doc["kernel"], K=doc["K"], mu=doc["mu"],
        )

    def digest(self) -> str:
        """Stable content hash of the model document (embedded in artifacts)."""
        payload = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()[:16]


def save_model(params: ModelParams, path: str | Path) -> None:
    Path(path).write_text(json.dumps(params.to_dict(), indent=2) + "\n")


def load_model(path: str | Path) -> ModelParams:
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        # exc carries line/column position of the corruption
        raise ModelError(f"invalid JSON in {path}: {exc}") from None
    return ModelParams.from_dict(doc)


# -- derived landscape ----------------------------------------------------


@dataclass(frozen=True)
class ClauseResult:
    name: str
    passed: bool
    detail: str = ""


@dataclass(frozen=True)
class ValleyReport:
    """Clause-by-clause verdict of the fitness-valley conditions."""

    clauses: tuple[ClauseResult, ...]

    @property
    def valid(self) -> bool:
        return all(cl.passed for cl in self.clauses)

    @property
    def violated(self) -> tuple[str, ...]:
        return tuple(cl.name for cl in self.clauses if not cl.passed)

    def to_dict(self) -> dict:
        return {
            "valid": self.valid,
            "clauses": [
                {"name": cl.name, "passed": cl.passed, "detail": cl.detail}
                for cl in self.clauses
            ],
        }


@dataclass
class FitnessLandscape:
    """Monomorphic equilibria and invasion fitnesses derived from a model.

    `validity` stays None until `validate_valley` has been run.
    """

    L: int
    xbar: np.ndarray
    f: np.ndarray
    validity: ValleyReport | None = field(default=None, compare=False)

    @property
    def f_terminal_vs_resident(self) -> float:
        """Growth rate of a rare terminal mutant in the resident equilibrium."""
        return float(self.f[self.L, 0])

    def f_col(self, j: int) -> np.ndarray:
        """Invasion fitnesses of all traits against a resident j-population."""
        return self.f[:, j]


def derive_landscape(params: ModelParams) -> FitnessLandscape:
    """Compute equilibrium densities and the invasion-fitness matrix.

    xbar_i = (b_i - d_i)/c_ii clamped at 0; f_ij = b_i - d_i - c_ij*xbar_j.
    The ModelParams invariants already reject c_ii = 0.
    """
    growth = params.b - params.d
    xbar = np.maximum(growth / np.diag(params.c), 0.0)
    f = growth[:, None] - params.c * xbar[None, :]
    return FitnessLandscape(L=params.L, xbar=xbar, f=f)


def _distinct(values: np.ndarray, tol: float) -> list[tuple[int, int]]:
    """Index pairs whose values tie up to relative tolerance `tol`."""
    ties = []
    n = len(values)
    for i in range(n):
        for j in range(i + 1, n):
            scale = max(abs(values[i]), abs(values[j]), 1.0)
            if abs(values[i] - values[j]) <= tol * scale:
                ties.append((i, j))
    return ties


def validate_valley(
    landscape: FitnessLandscape, tol: float = DEFAULT_DISTINCTNESS_TOL
) -> ValleyReport:
    """Check the fitness-valley conditions on a derived landscape.

    Clauses: resident viable (xbar_0 > 0); every interior trait unfit
    against the resident (f_i0 < 0 for 1 <= i <= L-1); terminal trait fit
    (f_L0 > 0); every trait unfit against the terminal one (f_iL < 0 for
    i <= L-1); and pairwise distinctness of the two fitness columns up to
    relative tolerance `tol`. Always returns a report, never raises.
    The report is also attached to `landscape.validity`.
    """
    L = landscape.L
    f = landscape.f
    clauses = [
        ClauseResult(
            "resident_viable",
            landscape.xbar[0] > 0.0,
            f"xbar_0 = {landscape.xbar[0]:.6g}",
        )
    ]

    bad = [i for i in range(1, L) if not f[i, 0] < 0.0]
    clauses.append(
        ClauseResult(
            "interior_unfit_vs_resident",
            not bad,
            "" if not bad else f"f_i0 >= 0 at traits {bad}",
        )
    )
    clauses.append(
        ClauseResult(
            "terminal_fit_vs_resident",
            f[L, 0] > 0.0,
            f"f_L0 = {f[L, 0]:.6g}",
        )
    )
    bad = [i for i in range(L) if not f[i, L] < 0.0]
    clauses.append(
        ClauseResult(
            "unfit_vs_terminal",
            not bad,
            "" if not bad else f"f_iL >= 0 at traits {bad}",
        )
    )
    ties = _distinct(f[:, 0], tol)
    clauses.append(
        ClauseResult(
            "distinct_resident_fitnesses",
            not ties,
            "" if not ties else f"f_i0 ties at pairs {ties}",
        )
    )
    ties = _distinct(f[:, L], tol)
    clauses.append(
        ClauseResult(
            "distinct_terminal_fitnesses",
            not ties,
            "" if not ties else f"f_iL ties at pairs {ties}",
        )
    )
    report = ValleyReport(clauses=tuple(clauses))
    landscape.validity = report
    return report


def params_from_fitness(
    f_col0,
    f_colL,
    *,
    kernel: MutationKernel | str = MutationKernel.ONE_SIDED,
    K: int = 1000,
    mu: float = 0.0,
) -> ModelParams:
    """Build a model realizing requested fitness columns with unit rates.

    All birth rates are 1 and death rates 0, so every monomorphic
    equilibrium is 1 and the competition entries follow directly from the
    requested fitnesses: c_i0 = 1 - f_i0 (i = 1..L, from `f_col0`) and
    c_iL = 1 - f_iL (i = 0..L-1, from `f_colL`). The rest of the matrix is
    completed symmetrically (c_0i = c_i0, c_Li = c_iL for interior i; the
    corner entries c_0L, c_L0 stay pinned by the targets) with 1 on the
    interior block. Requested fitnesses must be < 1, otherwise some
    competition rate would be <= 0.
    """
    f_col0 = np.asarray(f_col0, dtype=float)
    f_colL = np.asarray(f_colL, dtype=float)
    L = len(f_col0)
    if L < 1 or len(f_colL) != L:
        raise ModelError(
            "f_col0 (targets f_10..f_L0) and f_colL (targets f_0L..f_{L-1,L}) "
            f"must both have length L >= 1, got {len(f_col0)} and {len(f_colL)}"
        )
    if np.any(f_col0 >= 1.0) or np.any(f_colL >= 1.0):
        raise ModelError(
            "requested fitnesses must be < 1: competition rates 1 - f would "
            "not be positive"
        )
    n = L + 1
    c = np.ones((n, n))
    c[1:, 0] = 1.0 - f_col0
    c[:L, L] = 1.0 - f_colL
    for i in range(1, L):
        c[0, i] = c[i, 0]
        c[L, i] = c[i, L]
    return ModelParams(
        L=L,
        b=np.ones(n),
        d=np.zeros(n),
        c=c,
        kernel=kernel,
        K=K,
        mu=mu,
    )
