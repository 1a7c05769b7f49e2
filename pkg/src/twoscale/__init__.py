"""Two-scale physics-informed networks for singularly perturbed ODE systems."""

__version__ = "0.1.0"

from .jets import AdjointRecorder, DivergenceError, Jet2, lift_input, param_gradient  # noqa: E402
from .network import (ConfigError, NetworkParams, TwoScaleConfig, default_widths, forward,  # noqa: E402
                      init_xavier)
from .problems import (ProblemSpec, effective_epsilon, fitzhugh_nagumo, linear_bvp,  # noqa: E402
                       make_problem, michaelis_menten, robertson_reduced)
from .training import (CurriculumSchedule, RunReport, Stage, TrainConfig,  # noqa: E402
                       curriculum_train, lr_at, train_stage)
from .refsolve import GridSolution, SolverError, radau5_solve, reference_solution, rk4_solve  # noqa: E402
from .metrics import ErrorReport, error_report  # noqa: E402
from .experiments import ExperimentConfig, preset, run_experiment  # noqa: E402
