from .config import RunConfig, parse_config
from .experiments import fit_loglog_slope, oracle_check, run_convergence, run_solve
