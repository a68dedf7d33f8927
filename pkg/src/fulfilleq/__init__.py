"""Delay-aware fulfillment: minimum-delay equilibria, regional splits and greedy dynamics."""

from .assignment import Assignment, min_cost_assignment
from .core import (
    DEFAULT_SCALE,
    FulfillmentError,
    InfeasibleError,
    Instance,
    InstanceError,
    InternalInvariantError,
    Site,
    load_instance,
    save_instance,
)
from .equilibrium import EquilibriumSolution, equilibrium_delay_of, min_delay_equilibrium, verify_equilibrium
from .regionalize import Regionalization, solve_regionalized

__version__ = "0.1.0"

__all__ = [
    "Assignment",
    "DEFAULT_SCALE",
    "EquilibriumSolution",
    "FulfillmentError",
    "InfeasibleError",
    "Instance",
    "InstanceError",
    "InternalInvariantError",
    "Regionalization",
    "Site",
    "equilibrium_delay_of",
    "load_instance",
    "min_cost_assignment",
    "min_delay_equilibrium",
    "save_instance",
    "solve_regionalized",
    "verify_equilibrium",
]
