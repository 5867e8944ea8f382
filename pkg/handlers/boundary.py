# handlers/boundary.py

from engine.meanfield import boundary_for_rho, check_monotone
from handlers import emit
from middlewares.errors import RunOutcome
from services.runner import run_all
from utils.constants import BOUNDARY_COLUMNS
from utils.schema import BoundaryParams, RunConfig, parse_float_list

PARAMETER_FLAGS = ("rho_grid", "alpha_lo", "alpha_hi", "tol_alpha", "var0", "sigma_zeta2")


def register(subparsers):
    parser = subparsers.add_parser("boundary", help="phase boundary alpha_c(rho) in the basis-pursuit limit")
    parser.add_argument("--rho-grid", dest="rho_grid", type=parse_float_list,
                        help="rho values: a,b,c or start:stop:step")
    parser.add_argument("--alpha-lo", dest="alpha_lo", type=float)
    parser.add_argument("--alpha-hi", dest="alpha_hi", type=float)
    parser.add_argument("--tol-alpha", dest="tol_alpha", type=float)
    parser.add_argument("--var0", type=float)
    parser.add_argument("--sigma-zeta2", dest="sigma_zeta2", type=float)
    return parser


def run(run_config: RunConfig) -> RunOutcome:
    p: BoundaryParams = run_config.parameters
    bracket = (p.alpha_lo, p.alpha_hi)

    outcomes = run_all(
        lambda rho: boundary_for_rho(rho, bracket, p.tol_alpha, p.var0, p.sigma_zeta2),
        sorted(p.rho_grid),
    )

    points, failures = [], []
    for outcome in outcomes:
        if not outcome.ok:
            failures.append({"rho": outcome.item, "error": str(outcome.error)})
            continue
        points.append(outcome.value)
        if not outcome.value.ok:
            failures.append({"rho": outcome.item, "error": outcome.value.error})

    monotone = check_monotone(points)
    path = emit(run_config, [point.as_row() for point in points], BOUNDARY_COLUMNS, {"monotone": monotone})
    return RunOutcome(outputs=[path], failures=failures)
