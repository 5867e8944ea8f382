# engine/exporter.py

import csv
import io
import json
import math
import os
import tempfile
from pathlib import Path
from typing import Any, Dict, Iterable, Mapping, Optional, Sequence

from loguru import logger

from utils.constants import PROJECT, VERSION


def format_value(value: Any) -> str:
    """Shortest round-trip text for floats; empty for missing values."""
    if value is None:
        return ""
    if hasattr(value, "dtype"):
        return format_value(value.item())
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _json_safe(value: Any) -> Any:
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {k: _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    if hasattr(value, "tolist"):
        return _json_safe(value.tolist())
    return value


class ResultExporter:
    """
    Atomic CSV / JSON writer.

    ✔ Temp file in the target directory, then os.replace
    ✔ Header line carries project, version, config hash and seed
    ✔ Floats written with repr()
    ✔ No timestamps (reruns are byte-identical)
    """

    @staticmethod
    def header(config_hash: str, seed: int) -> str:
        return f"# {PROJECT} {VERSION} config_hash={config_hash} seed={seed}"

    # ---------------- ATOMIC WRITE ---------------- #

    @staticmethod
    def write_text(path: Path, text: str) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)

        fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=str(path.parent))
        try:
            with os.fdopen(fd, "w", newline="") as handle:
                handle.write(text)
            os.replace(tmp, path)
        except Exception:
            try:
                os.unlink(tmp)
            except OSError:
                pass
            logger.exception(f"Export failed: {path}")
            raise

        logger.info(f"✅ Wrote {path}")
        return path

    # ---------------- FORMATS ---------------- #

    @staticmethod
    def render_csv(rows: Iterable[Mapping[str, Any]], columns: Sequence[str],
                   config_hash: str, seed: int) -> str:
        buffer = io.StringIO()
        buffer.write(ResultExporter.header(config_hash, seed) + "\n")
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([format_value(row.get(column)) for column in columns])
        return buffer.getvalue()

    @staticmethod
    def render_json(payload: Dict[str, Any], config_hash: str, seed: int) -> str:
        document = {
            "meta": {"project": PROJECT, "version": VERSION, "config_hash": config_hash, "seed": seed},
            **payload,
        }
        return json.dumps(_json_safe(document), indent=2, sort_keys=True) + "\n"

    @staticmethod
    def write_csv(path: Path, rows: Iterable[Mapping[str, Any]], columns: Sequence[str],
                  config_hash: str, seed: int) -> Path:
        return ResultExporter.write_text(path, ResultExporter.render_csv(rows, columns, config_hash, seed))

    @staticmethod
    def write_json(path: Path, payload: Dict[str, Any], config_hash: str, seed: int) -> Path:
        return ResultExporter.write_text(path, ResultExporter.render_json(payload, config_hash, seed))


def sidecar_path(output_path: Path, suffix: str, extension: Optional[str] = None) -> Path:
    """``runs/out.csv`` + ``staircases`` → ``runs/out.staircases.csv``."""
    output_path = Path(output_path)
    extension = extension or output_path.suffix or ".csv"
    return output_path.with_name(f"{output_path.stem}.{suffix}{extension}")
