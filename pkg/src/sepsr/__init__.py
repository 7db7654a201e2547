"""Separability-driven symbolic regression.

Detects additively or multiplicatively separable variable blocks of a
black-box target with paired correlation tests, fits each block's
sub-function independently with a matrix-genome GP, and recovers the full
model by regression.
"""

from .dac import DacConfig, RecoveredModel, dac_fit, direct_fit, fit_subfunction, recover
from .expr import EvalOutcome, evaluate, eval_batch, parse_infix, simplify, to_infix
from .gp import (FitnessMetrics, GPConfig, ParseMatrix, decode, evolve, fitness,
                 optimize_constants, search_space_size)
from .partition import DetectConfig, SeparabilityReport, detect_partition
from .sampling import DomainBox, SampleSet, anchor_points, grid_sample, lhs_sample
from .septest import (CorrelationResult, OperatorClass, SepTestConfig, SubsetVerdict,
                      correlation, infer_operator, subset_separability)
from .targets import BUILTIN_TARGETS, get_builtin

__version__ = "0.1.0"
