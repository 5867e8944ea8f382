# utils/schema.py

import hashlib
import json
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from engine.model import CavityError, PenaltyModel
from utils.constants import VERSION

PenaltyName = Literal["l1", "smoothed_l1", "ridge"]


class ConfigError(CavityError):
    """Run configuration failed to parse or validate."""

    def __init__(self, message: str, diagnostics: Optional[List[str]] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or []

    def __str__(self):
        if not self.diagnostics:
            return super().__str__()
        return super().__str__() + "\n  " + "\n  ".join(self.diagnostics)


class _Params(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class _PenaltyParams(_Params):
    penalty: PenaltyName = "l1"
    lam: float = Field(1.0, ge=0)
    epsilon: Optional[float] = Field(None, gt=0)

    @model_validator(mode="after")
    def _epsilon_for_smoothed(self):
        if self.penalty == "smoothed_l1" and self.epsilon is None:
            raise ValueError("smoothed_l1 needs epsilon")
        return self

    def penalty_model(self) -> PenaltyModel:
        if self.penalty == "l1":
            return PenaltyModel.l1(self.lam)
        if self.penalty == "ridge":
            return PenaltyModel.ridge(self.lam)
        return PenaltyModel.smoothed_l1(self.lam, self.epsilon)


class MeanFieldParams(_PenaltyParams):
    rho: float = Field(..., ge=0, le=1)
    alpha: Optional[float] = Field(None, gt=0)
    alpha_grid: Optional[List[float]] = None
    sigma2: float = Field(1.0, ge=0)
    sigma_zeta2: float = Field(0.0, ge=0)
    var0: float = Field(1.0, gt=0)
    bp_limit: bool = False
    method: Literal["auto", "quadrature", "closed_form"] = "auto"
    damping: float = Field(0.5, gt=0, le=1)

    @model_validator(mode="after")
    def _one_alpha_source(self):
        if (self.alpha is None) == (self.alpha_grid is None):
            raise ValueError("give exactly one of alpha or alpha_grid")
        if self.alpha_grid is not None and any(a <= 0 for a in self.alpha_grid):
            raise ValueError("alpha_grid entries must be > 0")
        return self


class BoundaryParams(_Params):
    rho_grid: List[float]
    alpha_lo: float = Field(0.05, gt=0, lt=1)
    alpha_hi: float = Field(0.99, gt=0, lt=1)
    tol_alpha: float = Field(1e-3, gt=0)
    var0: float = Field(1.0, gt=0)
    sigma_zeta2: float = Field(0.0, ge=0)

    @field_validator("rho_grid")
    @classmethod
    def _rho_in_unit_interval(cls, value):
        if not value:
            raise ValueError("rho_grid is empty")
        if any(not 0 < r < 1 for r in value):
            raise ValueError("rho_grid entries must lie in (0, 1)")
        return value


class ExperimentParams(_Params):
    n: int = Field(200, ge=2)
    k: Optional[int] = Field(None, ge=0)
    rho: Optional[float] = Field(None, ge=0, le=1)
    alpha: Optional[float] = Field(None, gt=0, le=1)
    mse_alphas: Optional[List[float]] = None
    instances: int = Field(10, ge=1)
    nodes: Optional[int] = Field(50, ge=1)
    f_grid: Optional[List[float]] = None
    fit_window: float = Field(3e-2, gt=0)
    var0: float = Field(1.0, gt=0)

    @model_validator(mode="after")
    def _consistent(self):
        if (self.k is None) == (self.rho is None):
            raise ValueError("give exactly one of k or rho")
        if self.k is not None and self.k > self.n:
            raise ValueError("k must not exceed n")
        if self.alpha is None and self.mse_alphas is None:
            raise ValueError("give alpha (response experiment) and/or mse_alphas (MSE sweep)")
        if self.f_grid is not None:
            if 0.0 not in self.f_grid:
                raise ValueError("f_grid must contain 0")
            if any(abs(f) >= 1 for f in self.f_grid):
                raise ValueError("f_grid entries must satisfy |f| < 1")
        return self

    @property
    def signal_density(self) -> float:
        return self.rho if self.rho is not None else self.k / self.n


class SusceptibilityParams(_PenaltyParams):
    penalty: Literal["smoothed_l1", "ridge"] = "ridge"
    n: int = Field(400, ge=2)
    m: int = Field(200, ge=1)
    rho: float = Field(0.2, ge=0, le=1)
    var0: float = Field(1.0, gt=0)
    sigma2: float = Field(1.0, gt=0)
    seeds: int = Field(20, ge=1)


class FiniteTempParams(_PenaltyParams):
    rho: float = Field(..., ge=0, le=1)
    alpha: float = Field(..., gt=0)
    sigma2: float = Field(1.0, gt=0)
    sigma_zeta2: float = Field(0.0, ge=0)
    var0: float = Field(1.0, gt=0)
    beta_grid: List[float] = Field(default_factory=lambda: [10.0, 100.0, 1000.0])


PARAMS_BY_COMMAND = {
    "meanfield": MeanFieldParams,
    "boundary": BoundaryParams,
    "experiment": ExperimentParams,
    "susceptibility": SusceptibilityParams,
    "finitetemp": FiniteTempParams,
}

Parameters = Union[MeanFieldParams, BoundaryParams, ExperimentParams, SusceptibilityParams, FiniteTempParams]


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    command: Literal["meanfield", "boundary", "experiment", "susceptibility", "finitetemp"]
    parameters: Parameters
    seed: int = Field(0, ge=0)
    output_path: Path
    format: Literal["csv", "json"] = "csv"

    @model_validator(mode="before")
    @classmethod
    def _parse_parameters(cls, data: Any):
        if isinstance(data, dict) and isinstance(data.get("parameters", {}), dict):
            model = PARAMS_BY_COMMAND.get(data.get("command"))
            if model is not None:
                data = {**data, "parameters": model.model_validate(data.get("parameters", {}))}
        return data

    def config_hash(self) -> str:
        """Stable digest of everything that determines the results."""
        payload = self.model_dump(mode="json", exclude={"output_path"})
        payload["version"] = VERSION
        blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _diagnostics(exc: ValidationError) -> List[str]:
    lines = []
    for error in exc.errors():
        location = ".".join(str(part) for part in error["loc"]) or "<root>"
        lines.append(f"{location}: {error['msg']}")
    return lines


def read_config_file(path: Path) -> Dict[str, Any]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON", [f"line {exc.lineno}, column {exc.colno}: {exc.msg}"]) from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return data


def build_run_config(command: str, flags: Dict[str, Any], config_file: Optional[Path] = None,
                     default_output: Optional[Path] = None) -> RunConfig:
    """
    Merge a JSON config file with command-line flags (flags win) and
    validate. ``flags`` maps top-level keys (seed, output_path, format)
    and parameter names; unset flags are None.
    """
    data: Dict[str, Any] = {"command": command, "parameters": {}}
    if config_file is not None:
        file_data = read_config_file(config_file)
        if file_data.get("command", command) != command:
            raise ConfigError(f"config file is for command {file_data['command']!r}, not {command!r}")
        data.update(file_data)
        data["parameters"] = dict(file_data.get("parameters", {}))

    for key, value in flags.items():
        if value is None:
            continue
        if key in {"seed", "output_path", "format"}:
            data[key] = value
        else:
            data["parameters"][key] = value

    if default_output is not None:
        data.setdefault("output_path", default_output)

    model = PARAMS_BY_COMMAND.get(command)
    if model is None:
        raise ConfigError(f"unknown command {command!r}")
    try:
        data["parameters"] = model.model_validate(data["parameters"])
    except ValidationError as exc:
        raise ConfigError(f"invalid parameters for {command!r}",
                          [f"parameters.{line}" for line in _diagnostics(exc)]) from exc

    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(f"invalid configuration for {command!r}", _diagnostics(exc)) from exc


def parse_float_list(text: str) -> List[float]:
    """``0.1,0.2,0.5`` or an inclusive range ``start:stop:step``."""
    text = text.strip()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ValueError(f"range must be start:stop:step, got {text!r}")
        start, stop, step = (float(p) for p in parts)
        if step <= 0 or stop < start:
            raise ValueError(f"bad range {text!r}")
        count = int(round((stop - start) / step)) + 1
        return [round(start + i * step, 12) for i in range(count)]
    return [float(p) for p in text.split(",") if p.strip()]
