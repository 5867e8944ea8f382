# handlers/__init__.py

from pathlib import Path
from typing import Any, Dict, Iterable, Mapping, Optional, Sequence

from engine.exporter import ResultExporter, sidecar_path
from utils.schema import RunConfig


def emit(run_config: RunConfig, rows: Iterable[Mapping[str, Any]], columns: Sequence[str],
         payload: Optional[Dict[str, Any]] = None) -> Path:
    """Primary output: the row table as CSV, or rows plus ``payload`` as JSON."""
    rows = list(rows)
    digest = run_config.config_hash()
    if run_config.format == "json":
        document = {"config": run_config.model_dump(mode="json"), "rows": rows, **(payload or {})}
        return ResultExporter.write_json(run_config.output_path, document, digest, run_config.seed)
    return ResultExporter.write_csv(run_config.output_path, rows, columns, digest, run_config.seed)


def emit_sidecar(run_config: RunConfig, suffix: str, rows: Iterable[Mapping[str, Any]],
                 columns: Sequence[str]) -> Path:
    return ResultExporter.write_csv(
        sidecar_path(run_config.output_path, suffix, ".csv"),
        rows, columns, run_config.config_hash(), run_config.seed,
    )


def emit_report(run_config: RunConfig, suffix: str, payload: Dict[str, Any]) -> Path:
    document = {"config": run_config.model_dump(mode="json"), **payload}
    return ResultExporter.write_json(
        sidecar_path(run_config.output_path, suffix, ".json"),
        document, run_config.config_hash(), run_config.seed,
    )
