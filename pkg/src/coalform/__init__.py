"""Coalition formation under cost-sharing mechanisms.

Brute-force stability and price-of-anarchy analysis for small hedonic games,
a deferred-acceptance formation protocol, and an LP-backed energy-sharing
cost oracle.
"""
from .colnform import build_preferences, run, total_proposals
from .energy import (
    BatterySpec,
    EnergyScenario,
    HouseholdProfile,
    TariffSpec,
    as_cost_oracle,
    coalition_cost,
    standalone_costs,
)
from .errors import CoalformError
from .game import (
    INFEASIBLE,
    CostOracle,
    Instance,
    MechanismKind,
    MixedAssignment,
    MixedMechanism,
    PURE_MECHANISMS,
    additive_oracle,
    make_structure,
    nash_bargaining_verify,
    payment,
    table_oracle,
    truncate_cost,
    utility,
)
from .kernels import BACKEND
from .stability import (
    enumerate_stable_structures,
    enumerate_structures,
    find_blocking_coalition,
    find_cyclic_preference,
    social_optimum,
    spoa,
)

__version__ = "0.1.0"
