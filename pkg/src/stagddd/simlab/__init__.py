"""Monte Carlo designs and the simulation harness."""

from .dgp import DgpSpec, generate, gen_staggered_cov, gen_staggered_nocov, gen_two_period, true_effects
from .montecarlo import McSummary, monte_carlo

__all__ = [
    "DgpSpec",
    "McSummary",
    "generate",
    "gen_staggered_cov",
    "gen_staggered_nocov",
    "gen_two_period",
    "monte_carlo",
    "true_effects",
]
