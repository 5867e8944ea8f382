# handlers/experiment.py

from typing import List

from loguru import logger

from engine.model import SignalPrior, draw_instance
from handlers import emit, emit_report, emit_sidecar
from middlewares.errors import RunOutcome
from services.experiment import (
    InsufficientDataError,
    estimate_empirical_chi,
    mse_sweep,
    pooled_fit_chi,
    run_response_experiment,
)
from utils.constants import FIT_COLUMNS, RESPONSE_COLUMNS, STAIRCASE_COLUMNS, SWEEP_COLUMNS
from utils.schema import ExperimentParams, RunConfig, parse_float_list
from utils.seeding import derive_seed

PARAMETER_FLAGS = (
    "n", "k", "rho", "alpha", "mse_alphas", "instances", "nodes", "f_grid", "fit_window", "var0",
)


def register(subparsers):
    parser = subparsers.add_parser("experiment", help="finite-size basis-pursuit response and MSE experiments")
    parser.add_argument("--n", type=int, help="signal dimension N")
    parser.add_argument("--k", type=int, help="expected number of nonzeros (sets rho = k/n)")
    parser.add_argument("--rho", type=float, help="signal density")
    parser.add_argument("--alpha", type=float, help="measurement ratio for the response experiment")
    parser.add_argument("--mse-alphas", dest="mse_alphas", type=parse_float_list,
                        help="alpha values for the MSE sweep")
    parser.add_argument("--instances", type=int, help="instances per point")
    parser.add_argument("--nodes", type=int, help="perturbed nodes sampled per instance")
    parser.add_argument("--f-grid", dest="f_grid", type=parse_float_list, help="field values, must include 0")
    parser.add_argument("--fit-window", dest="fit_window", type=float)
    parser.add_argument("--var0", type=float)
    return parser


def _response(run_config: RunConfig, p: ExperimentParams, failures: List[dict]):
    prior = SignalPrior(rho=p.signal_density, var0=p.var0)
    M = int(round(p.alpha * p.n))

    reports = []
    for i in range(p.instances):
        instance = draw_instance(p.n, M, prior, 0.0, derive_seed(run_config.seed, 0, i))
        try:
            report = run_response_experiment(
                instance, p.f_grid, p.nodes, seed=derive_seed(run_config.seed, 1, i), fit_window=p.fit_window,
            )
        except Exception as e:
            logger.warning(f"instance {i} (seed {instance.seed}) failed: {e}")
            failures.append({"instance": i, "seed": instance.seed, "error": str(e)})
            continue
        failures += [{"instance": i, "seed": report.seed, "node": c.node, "f": c.f, "error": c.message}
                     for c in report.failures]
        reports.append(report)

    if not reports:
        return None

    try:
        chi_mean, chi_stderr = estimate_empirical_chi(reports)
    except InsufficientDataError as e:
        logger.warning(f"no susceptibility estimate: {e}")
        chi_mean = chi_stderr = None
    pooled = pooled_fit_chi(reports)

    n = len(reports)
    avg = [sum(r.response.avg_response[j] for r in reports) / n for j in range(len(reports[0].response.f_grid))]
    response_rows = [{"f": f, "avg_response": a} for f, a in zip(reports[0].response.f_grid, avg)]

    logger.info(f"alpha={p.alpha}: chi_mean={chi_mean}, stderr={chi_stderr}, pooled={pooled}")
    return {
        "reports": reports,
        "response_rows": response_rows,
        "summary": {"chi_mean": chi_mean, "chi_stderr": chi_stderr, "pooled_chi": pooled, "instances": n},
    }


def run(run_config: RunConfig) -> RunOutcome:
    p: ExperimentParams = run_config.parameters
    failures: List[dict] = []
    outputs = []
    payload = {}

    response = _response(run_config, p, failures) if p.alpha is not None else None

    sweep = None
    if p.mse_alphas is not None:
        sweep = mse_sweep(p.mse_alphas, p.signal_density, p.n, p.instances, derive_seed(run_config.seed, 2),
                          var0=p.var0)
        failures += [{"alpha": point.alpha, "error": f"{point.n_fail} instances failed"}
                     for point in sweep if point.n_fail]
        payload["sweep"] = [point.as_row() for point in sweep]

    if response is not None:
        reports = response["reports"]
        payload["response"] = response["summary"]
        payload["instances"] = [r.to_dict() for r in reports]

        outputs.append(emit(run_config, response["response_rows"], RESPONSE_COLUMNS, payload))
        if run_config.format == "csv":
            outputs.append(emit_sidecar(run_config, "staircases",
                                        [row for r in reports for row in r.response.staircase_rows(r.seed)],
                                        STAIRCASE_COLUMNS))
            outputs.append(emit_sidecar(run_config, "instances", [r.summary_row() for r in reports], FIT_COLUMNS))
            if sweep is not None:
                outputs.append(emit_sidecar(run_config, "sweep", payload["sweep"], SWEEP_COLUMNS))
            outputs.append(emit_report(run_config, "report", payload))
    elif sweep is not None:
        outputs.append(emit(run_config, payload["sweep"], SWEEP_COLUMNS, payload))

    return RunOutcome(outputs=outputs, failures=failures)
