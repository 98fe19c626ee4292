"""Excursion-set percolation of planar stationary Gaussian fields.

Library layout:
  kernels      covariance kernels and spectral square-root tables
  lattice      clipped face-centered square lattice graphs
  sampler      field samplers (convolution, analytic series) + validation
  percolation  colorings, crossing/arm/circuit events, MC estimates
  influence    Gaussian influences, Russo derivative, KKL-type checks
  sprinkling   fold events and the coarse-to-fine sprinkled gap
  harness      sweeps, derived curves, persistence, resource caps
  report       figures + delimited summaries
  cli          the `gfperc` command
"""

from .errors import FactorizationError, PreconditionError, QuadratureError, ResourceCapError
from .kernels import (
    Kernel,
    SqrtKernel,
    bargmann_fock,
    build_sqrt_kernel,
    eval_kappa,
    eval_kappa_hat,
    kernel_from_name,
    op_norm_scan,
    rational,
)
from .lattice import Annulus, Rect, RegionGraph, build_region_graph, rotate_index, unrotate_index
from .percolation import (
    ColoredConfig,
    MCEstimate,
    arm_event,
    circuit_event,
    color_config,
    crossing,
    estimate_crossing,
    multicross_event,
    r_sequence,
)
from .sampler import (
    FieldSample,
    cross_validate_samplers,
    sample_hermite_series,
    sample_sqrt_convolution,
)

__all__ = [
    "Annulus",
    "ColoredConfig",
    "FactorizationError",
    "FieldSample",
    "Kernel",
    "MCEstimate",
    "PreconditionError",
    "QuadratureError",
    "Rect",
    "RegionGraph",
    "ResourceCapError",
    "SqrtKernel",
    "arm_event",
    "bargmann_fock",
    "build_region_graph",
    "build_sqrt_kernel",
    "circuit_event",
    "color_config",
    "cross_validate_samplers",
    "crossing",
    "estimate_crossing",
    "eval_kappa",
    "eval_kappa_hat",
    "kernel_from_name",
    "multicross_event",
    "op_norm_scan",
    "r_sequence",
    "rational",
    "rotate_index",
    "sample_hermite_series",
    "sample_sqrt_convolution",
    "unrotate_index",
]

__version__ = "0.1.0"
