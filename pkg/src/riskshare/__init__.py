"""Risk sharing on finite probability spaces.

Risk measures (convex or not), their numerical conjugates, weighted infimal
convolutions over finite agent populations, and the convexification that
replication brings.
"""
__version__ = "0.1.0"

from .conjugate import (ConjugateTable, DegeneracyVerdict, biconj, conj, conj_table,
                        detect_degeneracy, finiteness_certificate)
from .convexify import (DecayReport, ReplicationExperiment, convexity_violation, decay_fit,
                        minkowski_nonconvexity, replicated_value)
from .infconv import (UNWEIGHTED, WEIGHTED, AgentPopulation, AllocationResult, BudgetExceeded,
                      conditional_reduction, dual_lower_bound, group_convolve,
                      improperness_probe, solve, solve_exact, solve_heuristic)
from .markers import DIVERGED, MINUS_INF, PLUS_INF, SATURATED, Marker
from .ordering import (DominanceVerdict, consistency_spot_check, dilatation_monotone_check,
                       icx_dominates)
from .probspace import (FiniteProbSpace, PartitionAlgebra, cond_expectation, expectation,
                        partition_refines)
from .riskmeasures import (ES, VaR, Choquet, Distortion, Entropic, EssSup, ExpectationUnder,
                           MinOf, RiskMeasureSpec, Scaled, Shifted, acceptance_membership,
                           check_axioms, evaluate, spec_from_dict)
