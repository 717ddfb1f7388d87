
# Run-wide defaults. Every value here can be overridden from a run config.

OUTPUT_DIR = "./runs"
CONFIG_DIR = "./configs"
LOG_LEVEL = "INFO"  # Options: DEBUG, INFO, WARNING, ERROR, CRITICAL
THREADS_ENV = "OSCAR_THREADS"
VERSION = "0.1.0"


# Discretization
DEFAULT_N = 1024
DENSE_MAX_N = 2048
EXPM_MAX_N = 1024
ROOT_TOL = 1e-12
NEAR_SINGULAR_RCOND = 1e-14
PERIODIC_RESIDUAL_TOL = 1e-10
SOLVE_RESIDUAL_TOL = 1e-9
COLUMN_RESIDUAL_TOL = 1e-8
CROSSING_SNAP = 1e-10


# Structural constants
C_DAGGER = 10.0
SIGMA_SHARP = 0.02
SIGMA0 = 0.05
M_VISC = 4.0
KAPPA_MIN = 0.05
DELTA0_SAFETY = 0.96
GAMMA = 15 / 8


# Quadrature and synthesis
W_QUAD_TOL = 1e-10
LAMBDA_MARGIN = 10.0
TAIL_TOL = 1e-5
SUBTRACTION_ORDER = 3
EXPM_TOL = 1e-10


# Diagnostics
C_SPLIT = 0.25
T_MIN = 2.0
BOOTSTRAP = 200
PLATEAU_SPREAD = 0.30
