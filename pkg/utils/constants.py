# utils/constants.py

PROJECT = "cavity-recovery"
VERSION = "1.0.0"

# Exit codes
EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_CONFIG = 2

# CSV schemas
MEANFIELD_COLUMNS = ("rho", "alpha", "q", "chi_bar", "theta", "sigma_xi2", "converged", "iterations")
BOUNDARY_COLUMNS = ("rho", "alpha_c", "alpha_c_stability", "tol_alpha")
STAIRCASE_COLUMNS = ("seed", "node", "f", "u_a")
RESPONSE_COLUMNS = ("f", "avg_response")
FIT_COLUMNS = ("seed", "N", "M", "K", "mse_empirical", "fitted_chi", "n_fail")
SWEEP_COLUMNS = ("alpha", "mse_median", "mse_iqr", "q_meanfield", "n_fail")
SUSCEPTIBILITY_COLUMNS = (
    "seed", "N", "M", "diag_mean", "chi_bar_resummed", "offdiag_rms", "trace_lhs", "trace_rhs",
)
FDT_COLUMNS = ("beta", "q", "delta_Q", "beta_deltaQ", "chi_bar_ref", "rel_err")
