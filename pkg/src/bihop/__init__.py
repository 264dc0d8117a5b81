"""Selection of regularization hyperparameters for sparse linear models by
first-order bilevel optimization."""
from .bilevel import (BilevelTrace, CrossValObjective, MulticlassObjective,
                      OuterConfig, run_first_order, run_grid_search,
                      run_multiclass_first_order, run_random_search)
from .criteria import CvSpec, HoldoutCriterion, HoldoutSplit
from .data_io import Dataset, load_libsvm, parse_libsvm
from .datafit import Datafit, SparseDesign
from .estimators import (BilevelElasticNet, BilevelLasso, BilevelLinearSVC,
                         BilevelSparseLogisticRegression)
from .hypergrad import HypergradReport, compute, finite_diff_hypergrad
from .prox import Penalty, lambda_max
from .solvers import SolverConfig, solve

__version__ = "0.1.0"
