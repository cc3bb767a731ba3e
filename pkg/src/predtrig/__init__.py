"""Distributed event-based state estimation with predictive and self triggers."""

from .errors import (ConfigurationError, ContractError, DimensionError, InvariantViolation, NumericalError,
                     SolverError, TriggerCapExceeded)
from .estimator import GaussianBelief, VarianceSchedule, kf_step, open_loop_variance, predict_m_steps
from .numerics import solve_lqr, spectral_radius, steady_state_posterior_variance
from .orchestrator import monte_carlo_sweep, run_simulation, simulate
from .plant import LinearModel, NoiseSource, build_platoon_model
from .scenarios import Scenario, TriggerConfig, emit_outputs, load_scenario, read_table

__version__ = "0.1.0"
