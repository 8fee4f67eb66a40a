"""Experiment instances: chance-constrained gas network and buffered-probability beam design."""

from .analytic import dc_toy_instance
from .buffered import (
    BEAM_GROUPS,
    AffineLimitStates,
    BeamSpec,
    BufferedBlock,
    GridResult,
    beam_limit_states,
    buffered_block,
    buffered_start,
    build_buffered_instance,
    build_cantilever_instance,
    empirical_avar,
    grid_search,
)
from .chance import (
    FOUR_NODE_TREE,
    GasBlock,
    GasTree,
    build_gas_instance,
    gas_start,
    pressure_drops,
    sigmoid,
    sigmoid_derivative,
)
from .scenarios import (
    Distribution,
    ScenarioParseError,
    ScenarioSet,
    load_scenarios,
    sample_scenarios,
    save_scenarios,
    standard_normals,
)
