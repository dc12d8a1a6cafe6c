"""revfilt: reverse black-box image filters.

Given only a deterministic filter g and an observation b = g(x), estimate
the pre-image x by fixed-point or approximate-gradient iteration, with a
family of acceleration schemes and a benchmark harness on top.
"""

from .filters import (BlackBoxFilter, ExternalFilter, FilterError, FilterSpec,
                      adaptive_wiener, bilateral_filter, disk_blur,
                      extern_filter, gaussian_filter, guided_filter_self,
                      motion_blur, parse_filter_spec)
from .fixed_point import (AndersonState, ChebyshevSchedule, anderson_step,
                          chebyshev_omega, epsilon_step, irons_step,
                          mann_step, picard_step, run_fixed_point)
from .gradient import (AgdState, SgdrSchedule, agd_step, run_gradient_descent,
                       sgdr_lambda)
from .harness import (AccelSpec, ImprovementSummary, RunConfig,
                      aggregate_pmax, improvement_series, load_config,
                      parse_accel_spec, parse_method_tag, run_cell,
                      run_experiment)
from .image import (add, frobenius_norm, load_image, psnr, save_image, scale,
                    spectral_norm, sub)
from .methods import BoundProblem, MethodKind
from .trace import IterationTrace, RunOutcome, TraceRecord, read_trace_csv, write_trace_csv

__version__ = "0.1.0"

__all__ = [
    "AccelSpec", "AgdState", "AndersonState", "BlackBoxFilter",
    "BoundProblem", "ChebyshevSchedule", "ExternalFilter", "FilterError",
    "FilterSpec", "ImprovementSummary", "IterationTrace", "MethodKind",
    "RunConfig", "RunOutcome", "SgdrSchedule", "TraceRecord",
    "adaptive_wiener", "add", "agd_step", "aggregate_pmax", "anderson_step",
    "bilateral_filter", "chebyshev_omega", "disk_blur", "epsilon_step",
    "extern_filter", "frobenius_norm", "gaussian_filter",
    "guided_filter_self", "improvement_series", "irons_step", "load_config",
    "load_image", "mann_step", "motion_blur", "parse_accel_spec",
    "parse_filter_spec", "parse_method_tag", "picard_step", "psnr",
    "read_trace_csv", "run_cell", "run_experiment", "run_fixed_point",
    "run_gradient_descent", "save_image", "scale", "sgdr_lambda",
    "spectral_norm", "sub", "write_trace_csv",
]
