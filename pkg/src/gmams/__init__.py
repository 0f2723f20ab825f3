"""Generalised multi-arm multi-stage trial designs.

Evaluation, search and simulation for K-arm group-sequential designs
that control the probability of a or more false rejections, target
rejecting b of c interesting arms, and stop the whole trial at the d-th
rejection.
"""
from .design import (Boundaries, DesignParams, EffectConfig, ValidationReport,
                     equal_cumulative_ratios, make_delta_config, null_config,
                     validate)
from .distribution import ZDistribution, build_information, build_z_distribution
from .errors import (CalibrationError, GmamsError, InfeasibilityError,
                     NumericError, ParameterError)
from .evaluation import (BatchEvaluator, OperatingChars, evaluate,
                         outcome_probabilities, outcome_probability)
from .mvn import QuadratureResult, Rectangle, mvn_probability
from .outcomes import (Outcome, WeightedOutcome, build_rectangle,
                       cardinality_xi, cardinality_xi_prime, enumerate_xi,
                       enumerate_xi_prime, interchangeable_blocks,
                       reduced_or_full)
from .search import (FixedDesign, SearchConfig, SearchResult, compute_n_fixed,
                     objective, optimise, resolve_integer_n,
                     single_stage_design)
from .simulate import SimulationReport, simulate_report, simulate_trial
from .triangular import (TriangularDesign, TriangularShape,
                         calibrate_triangular, triangular_shape)

__version__ = "0.1.0"
