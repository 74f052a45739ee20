"""Numerical tolerances and fixed limits shared across the package."""

SYMMETRY_TOL = 1e-12
INVERSE_RESIDUAL_TOL = 1e-10
TRACE_TOL = 1e-12
DET_TOL = 1e-10
XI_DET_REL_TOL = 1e-8
NORMALIZATION_TOL = 1e-12
POINTWISE_SUM_TOL = 1e-9

# Largest admissible 1-norm of sum_a A_a T^a before the exponential is refused.
EXPM_NORM_BOUND = 50.0

QUADRATURE_MAX_DIM = 3
QUADRATURE_MIN_NODES = 10
QUADRATURE_MAX_NODES = 200
PERTURBATIVE_MAX_ORDER = 16

# Draws per independently seeded chunk; fixes the stream layout for parallel runs.
CHUNK_SIZE = 1 << 16

SPEC_VERSION = 1
