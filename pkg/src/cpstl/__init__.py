"""Conformal prediction regions and distributed STL control for multi-agent systems."""

from .config import ConfigError, Scenario, load_scenario, scenario_from_dict
from .datasets import (
    DatasetError, DatasetSplit, DisturbanceDataset, ErrorTrajectorySet, build_error_set,
    export_csv, generate_gaussian, ingest,
)
from .mas import (
    AgentDynamics, CliqueSpec, FeedbackGains, aggregate, build_interaction_graph, build_stacked,
    closed_loop_states, error_trajectory, nominal_trajectory,
)
from .runtime import ClosedLoopTrace, RuntimeOptions, initial_plans, run_closed_loop, write_trace
from .stl import eval_robustness, parse_formula, smooth_robustness
from .synthesis import (
    CostWeights, SolverOptions, SynthesisInfeasible, SynthesisProblem, SynthesisResult,
    solve_agent_initial, solve_agent_step, solve_centralized, tighten,
)
from .uq import (
    CalibrationError, GainStructure, LPError, PredictionRegions, TrainingData, TrainingResult,
    calibrate_regions, conformal_quantile, coordinate_descent, empirical_cvar, empirical_var,
    pac_adjusted_level, solve_P_of_C, solve_P_of_Gamma, training_level,
)
from .verify import (
    coverage_experiment, monte_carlo_satisfaction, union_bound_baseline, wilson_interval,
)

__version__ = "0.1.0"
