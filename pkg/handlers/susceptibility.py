# handlers/susceptibility.py

from engine.model import SignalPrior
from engine.suscept import verify_appendix_a
from handlers import emit
from middlewares.errors import RunOutcome
from utils.constants import SUSCEPTIBILITY_COLUMNS
from utils.schema import RunConfig, SusceptibilityParams

PARAMETER_FLAGS = ("n", "m", "penalty", "lam", "epsilon", "rho", "var0", "sigma2", "seeds")


def register(subparsers):
    parser = subparsers.add_parser("susceptibility", help="exact susceptibility matrix vs resummed formula")
    parser.add_argument("--n", type=int)
    parser.add_argument("--m", type=int)
    parser.add_argument("--penalty", choices=("smoothed_l1", "ridge"))
    parser.add_argument("--lam", type=float)
    parser.add_argument("--epsilon", type=float)
    parser.add_argument("--rho", type=float)
    parser.add_argument("--var0", type=float)
    parser.add_argument("--sigma2", type=float)
    parser.add_argument("--seeds", type=int, help="number of independent instances")
    return parser


def run(run_config: RunConfig) -> RunOutcome:
    p: SusceptibilityParams = run_config.parameters
    prior = SignalPrior(rho=p.rho, var0=p.var0)

    check = verify_appendix_a(p.n, p.m, p.penalty_model(), prior, p.seeds, p.sigma2,
                              base_seed=run_config.seed)
    summary = check.summary
    payload = {
        "summary": {
            **summary.as_row(),
            "self_energy": summary.self_energy,
            "diag_rel_err": summary.diag_rel_err,
            "trace_rel_err": summary.trace_rel_err,
        },
        "skipped_seeds": check.skipped,
    }
    path = emit(run_config, [r.as_row() for r in check.per_seed], SUSCEPTIBILITY_COLUMNS, payload)
    failures = [{"seed": seed, "error": "optimiser did not converge or chi singular"} for seed in check.skipped]
    return RunOutcome(outputs=[path], failures=failures)
