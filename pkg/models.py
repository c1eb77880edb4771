"""
Run configuration models and the line-oriented `key = value` parser.
"""
from typing import List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from evolution import ModelParams, Variant
from spectral_core import make_grid

IC_PREFIX = "ic_"
THETA_IC_PREFIX = "theta_ic_"


class ConfigError(ValueError):
    """Raised for a rejected configuration; line is the 1-based source line when known."""

    def __init__(self, message: str, line: Optional[int] = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


def _split_list(v) -> list:
    if isinstance(v, (list, tuple)):
        return [x for x in v if not (isinstance(x, str) and not x.strip())]
    if isinstance(v, str):
        return [x.strip() for x in v.split(",") if x.strip()]
    return v


class InitialCondition(BaseModel):
    """One field's initial data: a built-in family or a snapshot file."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    family: Literal["gaussian", "dipole", "random", "snapshot", "zero"]
    amplitude: float = 1.0
    sigma: float = 1.0
    center: Tuple[float, float] = (0.0, 0.0)
    seed: int = 0
    k_cut: float = 1.0
    mean_zero: bool = False
    path: Optional[str] = None

    @field_validator("sigma", "k_cut")
    @classmethod
    def validate_positive(cls, v: float) -> float:
        if not v > 0:
            raise ValueError(f"must be positive, got {v}")
        return v

    @field_validator("center", mode="before")
    @classmethod
    def parse_center(cls, v):
        """Parse 'x1, x2' into a pair."""
        items = _split_list(v)
        if len(items) != 2:
            raise ValueError(f"center needs two coordinates, got {v!r}")
        return tuple(items)

    @model_validator(mode="after")
    def check_path(self) -> "InitialCondition":
        if self.family == "snapshot" and not self.path:
            raise ValueError("snapshot initial condition needs a path")
        return self


class RunConfig(BaseModel):
    """A fully validated experiment description."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    variant: Variant
    alpha: float
    beta: float = 1.0
    n: int
    box: float
    dt: float
    t_end: Optional[float] = None
    tau_end: Optional[float] = None
    ic: InitialCondition
    theta_ic: Optional[InitialCondition] = None
    cadence: float = 1.0
    profile_errors: bool = True
    profile_order: int = 2
    snapshot_times: List[float] = Field(default_factory=list)
    output_dir: Optional[str] = None
    label: str = "run"

    @field_validator("alpha")
    @classmethod
    def validate_alpha(cls, v: float) -> float:
        if not (1 < v <= 2):
            raise ValueError(f"alpha must lie in (1,2], got {v}")
        return v

    @field_validator("beta")
    @classmethod
    def validate_beta(cls, v: float) -> float:
        if not (0 <= v < 2):
            raise ValueError(f"beta must lie in [0,2), got {v}")
        return v

    @field_validator("n")
    @classmethod
    def validate_n(cls, v: int) -> int:
        if v % 2 != 0 or v < 8:
            raise ValueError(f"n must be an even integer >= 8, got {v}")
        return v

    @field_validator("box", "cadence")
    @classmethod
    def validate_positive(cls, v: float) -> float:
        if not (np.isfinite(v) and v > 0):
            raise ValueError(f"must be positive, got {v}")
        return v

    @field_validator("dt")
    @classmethod
    def validate_dt(cls, v: float) -> float:
        if not (0 < v <= 1.0):
            raise ValueError(f"dt must lie in (0,1], got {v}")
        return v

    @field_validator("profile_order")
    @classmethod
    def validate_profile_order(cls, v: int) -> int:
        if v not in (1, 2):
            raise ValueError(f"profile_order must be 1 or 2, got {v}")
        return v

    @field_validator("label")
    @classmethod
    def validate_label(cls, v: str) -> str:
        if not v or "/" in v or v.startswith("."):
            raise ValueError(f"label must be a plain directory name, got {v!r}")
        return v

    @field_validator("snapshot_times", mode="before")
    @classmethod
    def parse_snapshot_times(cls, v) -> list:
        """Parse comma-separated times."""
        return _split_list(v)

    @model_validator(mode="after")
    def check_consistency(self) -> "RunConfig":
        if (self.t_end is None) == (self.tau_end is None):
            raise ValueError("exactly one of t_end and tau_end is required")
        scaled = self.variant.endswith("scaled")
        if self.tau_end is not None and not scaled:
            raise ValueError(f"tau_end only applies to scaled variants, not {self.variant}")
        boussinesq = self.variant.startswith("boussinesq")
        if boussinesq and self.beta != 1.0:
            raise ValueError(f"boussinesq variants require beta = 1, got {self.beta}")
        if self.theta_ic is not None and not boussinesq:
            raise ValueError("theta_ic_* keys only apply to boussinesq variants")
        if self.end_time < 0:
            raise ValueError(f"end time must be nonnegative, got {self.end_time}")
        for t in self.snapshot_times:
            if not (0 <= t <= self.end_time):
                raise ValueError(f"snapshot time {t} lies outside [0, {self.end_time}]")
        return self

    @property
    def end_time(self) -> float:
        """Final time in the variant's own clock (tau for scaled variants)."""
        if self.tau_end is not None:
            return self.tau_end
        if self.variant.endswith("scaled"):
            return float(np.log1p(self.t_end))
        return self.t_end

    def model_params(self) -> ModelParams:
        return ModelParams(variant=self.variant, alpha=self.alpha, beta=self.beta,
                           grid=make_grid(self.n, self.box))


_TOP_KEYS = set(RunConfig.model_fields) - {"ic", "theta_ic"}
_IC_KEYS = set(InitialCondition.model_fields)


def _parse_lines(text: str):
    """Yield (line_number, key, value) for every assignment line."""
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", line=number)
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError("missing key before '='", line=number)
        yield number, key, value


def _error_key(loc: tuple) -> str:
    """Map a pydantic error location back to the flat config key."""
    if len(loc) >= 2 and loc[0] in ("ic", "theta_ic"):
        prefix = IC_PREFIX if loc[0] == "ic" else THETA_IC_PREFIX
        return prefix + str(loc[1])
    return str(loc[0]) if loc else ""


def parse_config(text: str) -> RunConfig:
    """
    Parse `key = value` text into a RunConfig.

    '#' starts a comment, lists are comma-separated, booleans are true/false.
    Keys prefixed ic_ / theta_ic_ describe the initial data. Unknown or
    repeated keys are rejected with their line number.

    Raises:
        ConfigError: for any rejection
    """
    top, ic, theta_ic = {}, {}, {}
    lines = {}
    for number, key, value in _parse_lines(text):
        if key in lines:
            raise ConfigError(f"duplicate key '{key}' (first set on line {lines[key]})", line=number)
        lines[key] = number
        if key.startswith(THETA_IC_PREFIX) and key[len(THETA_IC_PREFIX):] in _IC_KEYS:
            theta_ic[key[len(THETA_IC_PREFIX):]] = value
        elif key.startswith(IC_PREFIX) and key[len(IC_PREFIX):] in _IC_KEYS:
            ic[key[len(IC_PREFIX):]] = value
        elif key in _TOP_KEYS:
            top[key] = value
        else:
            raise ConfigError(f"unknown key '{key}'", line=number)

    data = dict(top)
    if ic:
        data["ic"] = ic
    if theta_ic:
        data["theta_ic"] = theta_ic
    try:
        return RunConfig(**data)
    except ValidationError as e:
        err = e.errors()[0]
        key = _error_key(err["loc"])
        message = err["msg"].removeprefix("Value error, ")
        if err["type"] == "missing":
            if key in ("ic", "theta_ic"):
                key += "_family"
            raise ConfigError(f"missing required key '{key}'") from e
        raise ConfigError(f"{key}: {message}" if key else message, line=lines.get(key)) from e


def config_to_text(cfg: RunConfig) -> str:
    """Flat `key = value` rendering; parse_config(config_to_text(c)) == c."""
    out = []
    for key, value in cfg.model_dump(exclude={"ic", "theta_ic"}).items():
        if value is None:
            continue
        out.append(f"{key} = {_render(value)}")
    for prefix, ic in ((IC_PREFIX, cfg.ic), (THETA_IC_PREFIX, cfg.theta_ic)):
        if ic is None:
            continue
        for key, value in ic.model_dump().items():
            if value is None:
                continue
            out.append(f"{prefix}{key} = {_render(value)}")
    return "\n".join(out) + "\n"


def _render(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ", ".join(_render(v) for v in value)
    return str(value)
