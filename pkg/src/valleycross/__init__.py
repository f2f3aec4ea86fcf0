"""valleycross: simulate and predict fitness-valley crossing in stochastic
logistic birth-death populations.

Subpackages: model (parameterization and invasion fitnesses), gillespie
(exact SSA), ode (deterministic limit), tropical (log-rescaled
piecewise-linear limits), theory (closed-form time scales and rates),
oracles (brute-force cross-checks), harness (experiments and reports),
cli (command-line entry point).
"""

__version__ = "0.1.0"

from .model import (  # noqa: F401
    FitnessLandscape,
    ModelParams,
    MutationKernel,
    ValleyReport,
    derive_landscape,
    load_model,
    params_from_fitness,
    save_model,
    validate_valley,
)
