"""Group SLOPE solvers with doubly dynamic safe screening."""

from .data import (Dataset, GroupedProblem, GroupPartition, LambdaSequence, ParseError,
                   expand_groups, oscar_lambdas, parse_libsvm, sparsity_factor, standardize,
                   write_libsvm)
from .decouple import (DecoupledProblem, DecouplingError, GroupFactor, decouple, factor_group,
                       forward_map, group_slope_objective, recover_beta)
from .duality import (DualityError, DualState, GapCertificate, conjugate_value, dual_candidate,
                      duality_gap)
from .screening import (ActiveSet, SafenessViolation, ScreeningTrace, screen_fixpoint, screen_pass,
                        screening_rate)
from .solvers import (DivergenceError, SolverConfig, SolverRun, apgd_solve, lipschitz_estimate,
                      spgd_solve)
from .sorted_l1 import eval_sorted_l1, prox_group_slope, prox_sorted_l1

__version__ = "0.1.0"
