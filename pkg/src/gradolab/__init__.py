"""Chemostat chains: an explicit ODE reference, an implicit log-concentration
transport solver, and tools to compare them."""
from .model import (
    DAY,
    ConfigError,
    MonodKinetics,
    NetworkConfig,
    NetworkState,
    Reactor,
    Species,
    make_network,
    monod_rate,
    monod_rate_derivative,
    validate_network,
)
from .ode import IntegrationError, IntegratorOptions, find_steady_state, integrate, rhs
from .rtm import RtmOptions, rtm_advance, rtm_integrate, rtm_run_to_steady
from .stability import (
    break_even,
    classify_equilibrium,
    eigenvalues,
    jacobian_analytic,
    jacobian_fd,
    single_species_equilibria,
    two_species_equilibria,
)
from .sweeps import Outcome, competition_outcome, delta_indicator, scenario, sweep_cells, sweep_flow

__version__ = "0.1.0"
