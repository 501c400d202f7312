"""Goal-oriented a posteriori error estimation for IMEX discretizations of semilinear parabolic PDEs."""

from .linalg import SolverConfig, SolverError, cg_solve
from .mesh import FeFunction, FeSpace, Mesh, overlay, refine, space_for, uniform_mesh, uniform_refine
from .model import ALLEN_CAHN, HEAT, Problem, Qoi
from .primal import TimeGrid, Trajectory, solve_forward, solve_forward_enriched
from .dual import discretize_qoi, solve_backward
from .estimator import EstimateReport, estimate_all
from .adaptive import AdaptiveConfig, AdaptiveState, run_adaptive, solve_and_estimate
from .experiments import effectivity_problem, moving_source_problem, ring_problem

__version__ = "0.1.0"
