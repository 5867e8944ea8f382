# handlers/meanfield.py

from typing import List

from loguru import logger

from engine.meanfield import phase_point, scan_alpha, solve_basis_pursuit_limit, solve_fixed_point
from engine.model import EnsembleParams, SignalPrior
from handlers import emit
from middlewares.errors import RunOutcome
from utils.constants import MEANFIELD_COLUMNS
from utils.schema import MeanFieldParams, RunConfig, parse_float_list

PARAMETER_FLAGS = (
    "rho", "alpha", "alpha_grid", "sigma2", "sigma_zeta2", "var0", "penalty", "lam", "epsilon",
    "bp_limit", "method", "damping",
)


def register(subparsers):
    parser = subparsers.add_parser("meanfield", help="solve the zero-temperature cavity fixed point")
    parser.add_argument("--rho", type=float, help="signal density")
    parser.add_argument("--alpha", type=float, help="measurement ratio M/N")
    parser.add_argument("--alpha-grid", dest="alpha_grid", type=parse_float_list,
                        help="scan over alpha: a,b,c or start:stop:step")
    parser.add_argument("--sigma2", type=float, help="data-term variance")
    parser.add_argument("--sigma-zeta2", dest="sigma_zeta2", type=float, help="measurement noise variance")
    parser.add_argument("--var0", type=float, help="variance of nonzero signal entries")
    parser.add_argument("--penalty", choices=("l1", "smoothed_l1", "ridge"))
    parser.add_argument("--lam", type=float, help="penalty strength")
    parser.add_argument("--epsilon", type=float, help="smoothing width for smoothed_l1")
    parser.add_argument("--bp-limit", dest="bp_limit", action="store_true", default=None,
                        help="basis-pursuit limit (sigma2 -> 0)")
    parser.add_argument("--method", choices=("auto", "quadrature", "closed_form"))
    parser.add_argument("--damping", type=float)
    return parser


def run(run_config: RunConfig) -> RunOutcome:
    p: MeanFieldParams = run_config.parameters
    prior = SignalPrior(rho=p.rho, var0=p.var0)
    penalty = None if p.bp_limit else p.penalty_model()

    if p.alpha_grid is not None:
        points = scan_alpha(p.alpha_grid, prior, p.sigma_zeta2, penalty=penalty, sigma2=p.sigma2,
                            damping=p.damping)
    elif p.bp_limit:
        report = solve_basis_pursuit_limit(p.alpha, prior, p.sigma_zeta2, damping=p.damping)
        points = [phase_point(p.alpha, prior, report)]
    else:
        params = EnsembleParams(alpha=p.alpha, sigma2=p.sigma2, sigma_zeta2=p.sigma_zeta2)
        report = solve_fixed_point(params, penalty, prior, damping=p.damping, method=p.method)
        points = [phase_point(p.alpha, prior, report)]

    failures: List[dict] = [
        {"alpha": point.alpha, "error": "fixed point did not converge"}
        for point in points if not point.converged
    ]
    for point in points:
        logger.info(f"alpha={point.alpha:.4f}: q={point.q:.6g}, chi_bar={point.chi_bar:.6g}, "
                    f"recovered={point.recovered}, converged={point.converged}")

    payload = {
        "points": [{**point.as_row(), "recovered": point.recovered, "chi_positive": point.chi_positive}
                   for point in points],
    }
    path = emit(run_config, [point.as_row() for point in points], MEANFIELD_COLUMNS, payload)
    return RunOutcome(outputs=[path], failures=failures)
