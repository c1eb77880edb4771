"""
Diagnostics layer - norms, asymptotic-profile residuals and decay fits.

Pure functions over immutable fields. Every integral is a grid sum times the
cell area; the L^inf norm is the raw grid maximum.
"""
import logging
from typing import Dict, Iterable, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy import stats

from profile_kernels import kernel_field
from spectral_core import GridSpec, ScalarField

logger = logging.getLogger(__name__)

CSV_COLUMNS = ("time", "mass", "l1", "l2", "linf", "weighted_l2_2",
               "profile_err_l1", "profile_err_l2", "u_max", "low_shell_frac")

Norm = Union[int, float, str]

_HOLDER_SLACK = 1e-12


class DecayFitError(ValueError):
    """Raised when a series cannot be fitted (too short, or nonpositive values)."""
    pass


class InconsistentRecordError(ValueError):
    """Raised when a record violates a norm inequality that must hold on the grid."""
    pass


def _norm_key(p: Norm) -> str:
    if p in ("inf", np.inf):
        return "inf"
    return str(int(p)) if float(p).is_integer() else str(p)


class DiagnosticRecord(BaseModel):
    """One row of series.csv."""

    model_config = ConfigDict(frozen=True)

    time: float
    mass: float
    lp_norms: Dict[str, float]
    weighted_l2_2: float
    profile_error: Dict[str, float] = Field(default_factory=dict)
    aux: Dict[str, float] = Field(default_factory=dict)

    @model_validator(mode="after")
    def check_entries(self) -> "DiagnosticRecord":
        if not np.isfinite(self.mass):
            raise ValueError(f"mass must be finite, got {self.mass}")
        norms = list(self.lp_norms.values()) + list(self.profile_error.values()) + [self.weighted_l2_2]
        for value in norms:
            if not (np.isfinite(value) and value >= 0):
                raise ValueError(f"norms must be finite and nonnegative, got {value}")
        return self

    def as_row(self) -> Dict[str, float]:
        """Values keyed by CSV column; missing entries are nan."""
        nan = float("nan")
        return {
            "time": self.time,
            "mass": self.mass,
            "l1": self.lp_norms.get("1", nan),
            "l2": self.lp_norms.get("2", nan),
            "linf": self.lp_norms.get("inf", nan),
            "weighted_l2_2": self.weighted_l2_2,
            "profile_err_l1": self.profile_error.get("1", nan),
            "profile_err_l2": self.profile_error.get("2", nan),
            "u_max": self.aux.get("u_max", nan),
            "low_shell_frac": self.aux.get("low_shell_frac", nan),
        }


class DecayFit(BaseModel):
    """Least-squares slope of log(value) against log(1+t) or tau."""

    model_config = ConfigDict(frozen=True)

    exponent: float
    intercept: float
    r_squared: float
    window: Tuple[float, float]
    mode: Literal["log1p_t", "tau"] = "log1p_t"
    samples: int = 0

    @field_validator("r_squared")
    @classmethod
    def validate_r_squared(cls, v: float) -> float:
        if not (0 <= v <= 1):
            raise ValueError(f"r_squared must lie in [0,1], got {v}")
        return v

    @field_validator("window")
    @classmethod
    def validate_window(cls, v: Tuple[float, float]) -> Tuple[float, float]:
        if not v[0] < v[1]:
            raise ValueError(f"fit window must be nondegenerate, got {v}")
        return v


# ---- norms ----

def lp_norm(f: ScalarField, p: Norm) -> float:
    """(sum |f|^p dA)^(1/p); p = inf is max |f|."""
    key = _norm_key(p)
    if key == "inf":
        return float(np.max(np.abs(f.values)))
    p = float(p)
    if p < 1:
        raise ValueError(f"p must be at least 1, got {p}")
    total = np.sum(np.abs(f.values) ** p) * f.grid.cell_area
    return float(total ** (1.0 / p))


def weighted_l2m_norm(f: ScalarField, m: int) -> float:
    """(int (1+|x|^2)^m |f|^2)^(1/2) with the weight centered at the box center."""
    if m not in (0, 1, 2):
        raise ValueError(f"m must be 0, 1 or 2, got {m}")
    if m == 0:
        return lp_norm(f, 2)
    x1, x2 = f.grid.coordinates()
    weight = (1.0 + x1 ** 2 + x2 ** 2) ** m
    return float(np.sqrt(np.sum(weight * f.values ** 2) * f.grid.cell_area))


def mass(f: ScalarField) -> float:
    return float(np.sum(f.values) * f.grid.cell_area)


def center_of_mass(f: ScalarField) -> Tuple[float, float]:
    """Mass-weighted mean position; the box center when the mass (nearly) vanishes."""
    m = mass(f)
    l1 = lp_norm(f, 1)
    if l1 == 0 or abs(m) < 1e-8 * l1:
        return (0.0, 0.0)
    x1, x2 = f.grid.coordinates()
    area = f.grid.cell_area
    return (float(np.sum(x1 * f.values) * area / m), float(np.sum(x2 * f.values) * area / m))


# ---- asymptotic profiles ----

def _warn_if_wide(grid: GridSpec, t_scale: float, alpha: float) -> None:
    width = t_scale ** (1.0 / alpha)
    if 6 * width > grid.box_length / 3:
        logger.warning("profile width %.3g exceeds a third of the box (L=%.3g); "
                       "truncation dominates the residual", width, grid.box_length)


def sqg_profile(grid: GridSpec, t: float, mass0: float, alpha: float,
                center: Tuple[float, float] = (0.0, 0.0)) -> ScalarField:
    """mass0 (1+t)^(-2/alpha) G(x / (1+t)^(1/alpha))."""
    if mass0 == 0:
        return ScalarField.zeros(grid)
    _warn_if_wide(grid, 1 + t, alpha)
    return kernel_field(grid, alpha, 1 + t, "G", center=center).scaled(mass0)


def boussinesq_profiles(grid: GridSpec, t: float, gamma1: float, gamma2: float, alpha: float,
                        center: Tuple[float, float] = (0.0, 0.0)) -> Tuple[ScalarField, ScalarField]:
    """
    Leading expansions of (w, theta):
        w     ~ gamma2 (1+t)^(1-3/alpha) d1G(.) + gamma1 (1+t)^(-2/alpha) G(.)
        theta ~ gamma2 (1+t)^(-2/alpha) G(.)
    """
    T = 1.0 + t
    w = ScalarField.zeros(grid)
    theta = ScalarField.zeros(grid)
    if gamma1 == 0 and gamma2 == 0:
        return w, theta
    _warn_if_wide(grid, T, alpha)
    G = kernel_field(grid, alpha, T, "G", center=center)
    if gamma2 != 0:
        dG = kernel_field(grid, alpha, T, "dG1", center=center)
        w = w + dG.scaled(gamma2 * T)
        theta = G.scaled(gamma2)
    if gamma1 != 0:
        w = w + G.scaled(gamma1)
    return w, theta


def profile_error_sqg(z: ScalarField, t: float, mass0: float, alpha: float, p: Norm,
                      center: Tuple[float, float] = (0.0, 0.0)) -> float:
    """|| z - mass0 (1+t)^(-2/alpha) G(./(1+t)^(1/alpha)) ||_p."""
    if t < 0:
        raise ValueError(f"t must be nonnegative, got {t}")
    return lp_norm(z - sqg_profile(z.grid, t, mass0, alpha, center), p)


def profile_error_boussinesq(w: ScalarField, theta: ScalarField, t: float, gamma1: float,
                             gamma2: float, alpha: float, p: Norm,
                             center: Tuple[float, float] = (0.0, 0.0)) -> Tuple[float, float]:
    """Residual L^p norms of w and theta after subtracting their leading expansions."""
    if t < 0:
        raise ValueError(f"t must be nonnegative, got {t}")
    w_prof, theta_prof = boussinesq_profiles(w.grid, t, gamma1, gamma2, alpha, center)
    return lp_norm(w - w_prof, p), lp_norm(theta - theta_prof, p)


# ---- records ----

def build_record(f: ScalarField, time: float, profile: Optional[ScalarField] = None,
                 aux: Optional[Dict[str, float]] = None) -> DiagnosticRecord:
    """Norms of f, plus profile residuals when a profile is given."""
    profile_error = {}
    if profile is not None:
        residual = f - profile
        profile_error = {"1": lp_norm(residual, 1), "2": lp_norm(residual, 2)}
    return DiagnosticRecord(
        time=time,
        mass=mass(f),
        lp_norms={"1": lp_norm(f, 1), "2": lp_norm(f, 2), "inf": lp_norm(f, "inf")},
        weighted_l2_2=weighted_l2m_norm(f, 2),
        profile_error=profile_error,
        aux=dict(aux or {}),
    )


def holder_holds(record: DiagnosticRecord) -> bool:
    """||f||_2^2 <= ||f||_1 ||f||_inf, which holds exactly for grid sums."""
    l1, l2, linf = (record.lp_norms.get(k) for k in ("1", "2", "inf"))
    if l1 is None or l2 is None or linf is None:
        return True
    return l2 ** 2 <= l1 * linf * (1 + _HOLDER_SLACK) + 1e-300


def embedding_constant(grid: GridSpec, p: Norm) -> float:
    """C with ||f||_p <= C ||f||_{L^2(2)} on this box, for p in {1, 2}."""
    key = _norm_key(p)
    if key == "2":
        return 1.0
    if key == "1":
        x1, x2 = grid.coordinates()
        return float(np.sqrt(np.sum((1.0 + x1 ** 2 + x2 ** 2) ** -2) * grid.cell_area))
    raise ValueError(f"embedding constant only for p in {{1, 2}}, got {p}")


def embedding_holds(f: ScalarField, p: Norm) -> bool:
    bound = embedding_constant(f.grid, p) * weighted_l2m_norm(f, 2)
    return lp_norm(f, p) <= bound * (1 + _HOLDER_SLACK)


def check_record(record: DiagnosticRecord) -> None:
    if not holder_holds(record):
        raise InconsistentRecordError(
            f"Hoelder inequality fails at time {record.time}: {record.lp_norms}"
        )
    l2, weighted = record.lp_norms.get("2"), record.weighted_l2_2
    if l2 is not None and l2 > weighted * (1 + _HOLDER_SLACK):
        raise InconsistentRecordError(
            f"L2 norm {l2} exceeds the weighted norm {weighted} at time {record.time}"
        )


# ---- fits ----

def default_window(times: Sequence[float]) -> Tuple[float, float]:
    """Last 60% of the samples with t >= 1 (all samples if none reach t = 1)."""
    t = np.sort(np.asarray(times, dtype=float))
    late = t[t >= 1.0]
    if late.size == 0:
        late = t
    start = late[int(np.floor(0.4 * late.size))]
    return float(start), float(t[-1])


def fit_decay_exponent(series: Iterable[Tuple[float, float]],
                       mode: Literal["log1p_t", "tau"] = "log1p_t",
                       window: Optional[Tuple[float, float]] = None) -> DecayFit:
    """
    Ordinary least squares of log(value) against log(1+t) (or against tau).

    Args:
        series: (time, value) pairs
        mode: abscissa; "tau" for scaled runs
        window: inclusive (t_min, t_max); default_window when omitted

    Raises:
        DecayFitError: fewer than 5 points in the window, or a nonpositive value
    """
    if mode not in ("log1p_t", "tau"):
        raise ValueError(f"mode must be 'log1p_t' or 'tau', got {mode!r}")
    data = np.asarray(list(series), dtype=float).reshape(-1, 2)
    if data.shape[0] < 5:
        raise DecayFitError(f"need at least 5 samples, got {data.shape[0]}")
    window = window or default_window(data[:, 0])
    keep = (data[:, 0] >= window[0]) & (data[:, 0] <= window[1])
    t, values = data[keep, 0], data[keep, 1]
    if t.size < 5:
        raise DecayFitError(f"need at least 5 samples in window {window}, got {t.size}")
    if not np.all(values > 0):
        raise DecayFitError("nonpositive values in fit window")

    x = np.log1p(t) if mode == "log1p_t" else t
    result = stats.linregress(x, np.log(values))
    r_squared = float(np.clip(result.rvalue ** 2, 0.0, 1.0))
    return DecayFit(exponent=float(result.slope), intercept=float(result.intercept),
                    r_squared=r_squared, window=(float(t[0]), float(t[-1])), mode=mode,
                    samples=int(t.size))


def theorem_exponents(alpha: float, beta: float, variant: str, quantity: str = "z") -> Dict[str, float]:
    """
    Predicted decay exponents keyed by CSV column.

    Physical variants give powers of (1+t); scaled variants give rates in tau.
    Columns without a prediction are nan.
    """
    nan = float("nan")

    def lp(p: float) -> float:
        return -2.0 * (1.0 - 1.0 / p) / alpha

    if variant in ("sqg_physical",) or (variant == "boussinesq_physical" and quantity == "theta"):
        return {
            "l1": 0.0, "l2": lp(2), "linf": lp(np.inf),
            "profile_err_l1": -(3.0 / alpha - 2.0 / alpha),
            "profile_err_l2": -(3.0 / alpha - 1.0 / alpha),
        }
    if variant == "boussinesq_physical":
        # w ~ (1+t) d1 G_{1+t}
        return {
            "l1": 1.0 - 1.0 / alpha, "l2": 1.0 - 2.0 / alpha, "linf": 1.0 - 3.0 / alpha,
            "profile_err_l1": nan, "profile_err_l2": nan,
        }
    if variant in ("sqg_scaled", "linear_scaled"):
        rate = 1.0 - (3.0 - beta) / alpha
        return {"mass": rate, "l1": rate, "l2": rate, "linf": rate, "weighted_l2_2": rate,
                "profile_err_l1": nan, "profile_err_l2": nan}
    if variant == "boussinesq_scaled":
        # the d1 G mode (rate 2 - 3/alpha) dominates every norm of W except its mass
        rate = 2.0 - 3.0 / alpha
        mass_rate = rate if quantity == "theta" else 1.0 - 2.0 / alpha
        return {"mass": mass_rate, "l1": rate, "l2": rate, "linf": rate, "weighted_l2_2": rate,
                "profile_err_l1": nan, "profile_err_l2": nan}
    raise ValueError(f"unknown variant {variant!r}")
