"""Optimization over continuous-knapsack sets.

Exact O(n) projection onto a box intersected with one linear equality or
bilateral inequality row, O(n) Householder null-space products for the
row, a nonmonotone spectral projected gradient, a reduced conjugate
gradient on active faces, a two-phase active-set driver combining them,
and a finite-volume topology-optimization application.
"""

__version__ = "0.1.0"

from .asa import (AsaConfig, AsaResult, PhaseRecord, asa_solve, kkt_residual,
                  solve_interval_by_three, undecided_set)
from .nullspace import (HouseholderNullSpace, OrthoProjector, apply_z, apply_zt,
                        build_householder, feasible_step_cap, ortho_project,
                        project_line_equality, project_line_interval)
from .problems import (EvaluationError, Objective, ProjectionObjective, QpProblem,
                       QuadraticObjective, StyblinskiTangObjective, check_gradient,
                       make_random_qp, projection_problem, random_knapsack_set,
                       rng_from_seed)
from .projection import (DEFAULT_EPS, EPS_MACHINE, BreakpointData, BreakpointSolverState,
                         FreezeTable, ProjectionResult, compute_breakpoints,
                         find_multiplier, freeze_components, h_eval, project,
                         project_equality, project_info, project_interval)
from .rcgd import (CgState, LinearState, RcgdConfig, RcgdResult, ReducedSpace,
                   cg_direction, lift, lift_direction, make_reduced_space,
                   rcgd_solve, reduce_gradient, step_cap_box, wolfe_linesearch)
from .sets import (Equality, IndexPartition, InfeasibleError, Interval, KnapsackSet,
                   expand, feasibility_equality, feasibility_interval, is_feasible_set,
                   linear_tolerance, partition, shrink)
from .spg import (LineSearchError, SolverIterate, SpgConfig, SpgResult, SpgTraceRow,
                  bb_stepsize, nonmonotone_linesearch, scaled_projected_gradient,
                  spg_solve)
from .topopt import (PcgError, TopoConfig, TopoObjective, TopoProblem, TopoRunResult,
                     TopoState, assemble_system, gradient, objective_value,
                     optimize_topology, pcg, solve_adjoint, solve_state,
                     topo_knapsack_set)
