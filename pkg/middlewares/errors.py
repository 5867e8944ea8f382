# middlewares/errors.py

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List

from loguru import logger

from engine.exporter import ResultExporter, sidecar_path
from engine.model import CavityError, DomainError
from utils.constants import EXIT_CONFIG, EXIT_OK, EXIT_PARTIAL
from utils.schema import ConfigError, RunConfig


@dataclass
class RunOutcome:
    outputs: List[Path] = field(default_factory=list)
    failures: List[Dict[str, Any]] = field(default_factory=list)


def failure_manifest_path(output_path: Path) -> Path:
    return sidecar_path(output_path, "failures", ".json")


def _write_manifest(run_config: RunConfig, failures: List[Dict[str, Any]]) -> Path:
    path = failure_manifest_path(run_config.output_path)
    ResultExporter.write_json(
        path,
        {"command": run_config.command, "failures": failures},
        run_config.config_hash(),
        run_config.seed,
    )
    return path


def guard(handler: Callable[[RunConfig], RunOutcome], run_config: RunConfig) -> int:
    """
    Run one command handler and map what happens to an exit code.

    0 full success, 1 partial (manifest written next to the output),
    2 configuration or precondition error.
    """
    try:
        outcome = handler(run_config)

    except (ConfigError, DomainError) as e:
        logger.error(f"❌ {run_config.command}: {e}")
        return EXIT_CONFIG

    except CavityError as e:
        logger.exception(f"🔥 {run_config.command} failed: {e}")
        _write_manifest(run_config, [{"stage": "run", "error": str(e),
                                      "diagnostics": getattr(e, "diagnostics", {})}])
        return EXIT_PARTIAL

    except Exception as e:
        logger.exception(f"🔥 {run_config.command} crashed: {e}")
        _write_manifest(run_config, [{"stage": "run", "error": f"{type(e).__name__}: {e}"}])
        return EXIT_PARTIAL

    if outcome.failures:
        path = _write_manifest(run_config, outcome.failures)
        logger.warning(f"⚠️ {len(outcome.failures)} failures recorded in {path}")
        return EXIT_PARTIAL

    logger.info(f"✅ {run_config.command} finished: {', '.join(str(p) for p in outcome.outputs)}")
    return EXIT_OK
