# handlers/finitetemp.py

from engine.finitetemp import fdt_check
from engine.model import EnsembleParams, SignalPrior
from handlers import emit
from middlewares.errors import RunOutcome
from utils.constants import FDT_COLUMNS
from utils.schema import FiniteTempParams, RunConfig, parse_float_list

PARAMETER_FLAGS = (
    "rho", "alpha", "sigma2", "sigma_zeta2", "var0", "penalty", "lam", "epsilon", "beta_grid",
)


def register(subparsers):
    parser = subparsers.add_parser("finitetemp", help="finite-temperature cavity and the FDT check")
    parser.add_argument("--rho", type=float)
    parser.add_argument("--alpha", type=float)
    parser.add_argument("--sigma2", type=float)
    parser.add_argument("--sigma-zeta2", dest="sigma_zeta2", type=float)
    parser.add_argument("--var0", type=float)
    parser.add_argument("--penalty", choices=("l1", "smoothed_l1", "ridge"))
    parser.add_argument("--lam", type=float)
    parser.add_argument("--epsilon", type=float)
    parser.add_argument("--beta-grid", dest="beta_grid", type=parse_float_list,
                        help="increasing inverse temperatures")
    return parser


def run(run_config: RunConfig) -> RunOutcome:
    p: FiniteTempParams = run_config.parameters
    params = EnsembleParams(alpha=p.alpha, sigma2=p.sigma2, sigma_zeta2=p.sigma_zeta2)
    prior = SignalPrior(rho=p.rho, var0=p.var0)

    rows = fdt_check(params, p.penalty_model(), prior, p.beta_grid)
    path = emit(run_config, [row.as_row() for row in rows], FDT_COLUMNS,
                {"rel_err_at_max_beta": rows[-1].rel_err})
    return RunOutcome(outputs=[path])
