"""Local observability of discrete-time nonlinear systems via variational Gramians."""
from .errors import CombinatorialBudgetError, ConfigError, IntegrationError, NumericalError, VargramError
from .integrator import IrkConfig, Trajectory, irk_step, simulate
from .models import (
    LinearModel,
    Lorenz63,
    MassActionModel,
    MassActionNetwork,
    builtin_model,
    load_model,
    random_mass_action,
)
from .gramian import Gramian, empirical_gramian, linear_gramian, relative_distance, variational_gramian
from .lyapunov import LyapunovSpectrum, lyapunov_spectrum, lyapunov_spectrum_along, observability_verdict
from .selection import SensorSet, brute_force_select, greedy_select, per_sensor_gramians
from .estimation import EstimationProblem, EstimationResult, error_vs_budget, estimate_initial_state

__version__ = "0.1.0"
