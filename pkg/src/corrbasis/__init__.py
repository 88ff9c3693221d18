"""Joint sparse network factorization of correlation matrices with score regression."""

from .model import (AugmentedState, CohortDataset, DataError, FactorModel, HyperParams,
                    PRESETS, deflate_first_eigenvector, eval_augmented_objective,
                    eval_objective, validate_dataset)
from .optimizer import DivergenceError, TrainerConfig, TrainTrace, fit, initialize
from .predictor import (FoldSplit, PredictionReport, predict_subject, r_squared, rmse,
                        run_cross_validation)
from .qp import QpError, QpProblem, solve_nonneg_qp
from .synthetic import (GeneratorConfig, generate_cohort, recovery_similarity,
                        robustness_sweep, synthetic_hyperparams, synthetic_trainer_config)

__version__ = "0.1.0"
