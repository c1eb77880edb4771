"""
Evolution layer - integrating-factor RK4 for the SQG and Boussinesq systems.

Physical variants use exp(-t|k|^alpha) as the integrating factor, scaled
variants the exact rescaled semigroup, so the drift (1/alpha) xi.grad never
appears as a grid operator. Only the advection (and, for Boussinesq, the
buoyancy term d1 theta) goes through the Runge-Kutta stages.
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from semigroup import SemigroupParams, apply_semigroup
from spectral_core import (
    GridSpec,
    ScalarField,
    SpectralField,
    band_limited_random_field,
    biot_savart_velocity,
    dealias,
    evaluate_dilated,
    forward_transform,
    inverse_transform,
    spectral_gradient,
)

logger = logging.getLogger(__name__)

Variant = Literal["sqg_physical", "sqg_scaled", "boussinesq_physical", "boussinesq_scaled",
                  "linear_scaled"]

# relative tolerance for landing on observation times and t_end
_TIME_SNAP = 1e-9


class SimulationError(RuntimeError):
    """Raised when a run cannot continue; carries the simulated time of failure."""

    def __init__(self, message: str, time: Optional[float] = None):
        super().__init__(message)
        self.time = time


class CFLViolationError(SimulationError):
    """Raised when the advective Courant number exceeds 0.5."""
    pass


class NumericalInstabilityError(SimulationError):
    """Raised when a field picks up NaN or Inf values."""
    pass


class ModelParams(BaseModel):
    """Which system is integrated, and with which alpha, beta and grid."""

    model_config = ConfigDict(frozen=True)

    variant: Variant
    alpha: float
    beta: float = 1.0
    grid: GridSpec

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

    @model_validator(mode="after")
    def check_regime(self) -> "ModelParams":
        if self.is_boussinesq:
            if self.beta != 1.0:
                raise ValueError(f"boussinesq variants require beta = 1, got {self.beta}")
            if not self.alpha < 1.5:
                logger.warning("alpha=%s is outside the Boussinesq decay regime (1, 3/2)", self.alpha)
        elif self.alpha + self.beta > 3:
            logger.warning("alpha+beta=%s exceeds 3; outside the SQG decay regime",
                           self.alpha + self.beta)
        return self

    @property
    def is_boussinesq(self) -> bool:
        return self.variant.startswith("boussinesq")

    @property
    def is_scaled(self) -> bool:
        return self.variant.endswith("scaled")

    @property
    def field_names(self) -> Tuple[str, ...]:
        return ("w", "theta") if self.is_boussinesq else ("z",)

    @property
    def transported(self) -> str:
        """Name of the field the velocity is computed from."""
        return self.field_names[0]

    def semigroup_params(self, name: str) -> SemigroupParams:
        if name == "theta":
            return SemigroupParams.for_theta(self.alpha)
        return SemigroupParams(alpha=self.alpha, beta=self.beta)


class SimState(BaseModel):
    """Spectral fields at one time (t for physical, tau for scaled variants)."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    time: float
    fields: Dict[str, SpectralField]
    step_count: int = 0

    @field_validator("time")
    @classmethod
    def validate_time(cls, v: float) -> float:
        if not v >= 0:
            raise ValueError(f"time must be nonnegative, got {v}")
        return v

    @property
    def grid(self) -> GridSpec:
        return next(iter(self.fields.values())).grid

    def real(self, name: str) -> ScalarField:
        return inverse_transform(self.fields[name])


def initial_state(params: ModelParams, fields: Dict[str, ScalarField], time: float = 0.0) -> SimState:
    """Wrap real-space initial data; missing Boussinesq fields start at zero."""
    unknown = set(fields) - set(params.field_names)
    if unknown:
        raise ValueError(f"unexpected fields {sorted(unknown)} for variant {params.variant}")
    spectral = {}
    for name in params.field_names:
        f = fields.get(name, ScalarField.zeros(params.grid))
        if f.grid != params.grid:
            raise ValueError(f"field {name} lives on {f.grid!r}, expected {params.grid!r}")
        spectral[name] = forward_transform(f)
    return SimState(time=time, fields=spectral)


# ---- initial-condition families ----

def gaussian_bump(grid: GridSpec, amplitude: float = 1.0, sigma: float = 1.0,
                  center: Tuple[float, float] = (0.0, 0.0)) -> ScalarField:
    """A exp(-|x - x0|^2 / (2 sigma^2))."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    x1, x2 = grid.coordinates()
    r2 = (x1 - center[0]) ** 2 + (x2 - center[1]) ** 2
    return ScalarField.from_array(grid, amplitude * np.exp(-r2 / (2 * sigma ** 2)))


def dipole(grid: GridSpec, amplitude: float = 1.0, sigma: float = 1.0,
           center: Tuple[float, float] = (0.0, 0.0)) -> ScalarField:
    """d1 of a Gaussian bump: mean zero, nonzero first moment."""
    bump = gaussian_bump(grid, amplitude, sigma, center)
    x1, _ = grid.coordinates()
    return ScalarField.from_array(grid, -(x1 - center[0]) / sigma ** 2 * bump.values)


def band_limited_random(grid: GridSpec, seed: int, amplitude: float = 1.0, k_cut: float = 1.0,
                        mean_zero: bool = False) -> ScalarField:
    return band_limited_random_field(grid, seed=seed, k_cut=k_cut, amplitude=amplitude,
                                     mean_zero=mean_zero)


# ---- right-hand side ----

def _velocity(F: SpectralField, beta: float) -> Tuple[np.ndarray, np.ndarray]:
    U1, U2 = biot_savart_velocity(dealias(F), beta)
    return inverse_transform(U1).values, inverse_transform(U2).values


def _flux_divergence(F: SpectralField, u1: np.ndarray, u2: np.ndarray) -> SpectralField:
    """-div(u f) from a dealiased product formed in physical space."""
    f = inverse_transform(dealias(F)).values
    flux1 = forward_transform(ScalarField.from_array(F.grid, u1 * f))
    flux2 = forward_transform(ScalarField.from_array(F.grid, u2 * f))
    div = spectral_gradient(flux1, 0) + spectral_gradient(flux2, 1)
    return dealias(div).scaled(-1.0)


def nonlinear_term(state: SimState, params: ModelParams) -> Dict[str, SpectralField]:
    """Non-stiff right-hand side in spectral space; zero for linear_scaled."""
    if params.variant == "linear_scaled":
        return {name: SpectralField.zeros(F.grid) for name, F in state.fields.items()}
    u1, u2 = _velocity(state.fields[params.transported], params.beta)
    out = {name: _flux_divergence(F, u1, u2) for name, F in state.fields.items()}
    if params.is_boussinesq:
        out["w"] = out["w"] + spectral_gradient(state.fields["theta"], 0)
    return out


def max_velocity(state: SimState, params: ModelParams) -> float:
    u1, u2 = _velocity(state.fields[params.transported], params.beta)
    return float(np.max(np.hypot(u1, u2)))


def lowest_shell_fraction(state: SimState, params: ModelParams) -> float:
    """Share of velocity energy in the first nonzero lattice shell (0 < |j| < 1.5)."""
    grid = state.grid
    U1, U2 = biot_savart_velocity(state.fields[params.transported], params.beta)
    energy = np.abs(U1.coeffs) ** 2 + np.abs(U2.coeffs) ** 2
    total = float(np.sum(energy))
    if total == 0:
        return 0.0
    shell = grid.wavenumber_magnitude() / grid.dk
    lowest = (shell > 0) & (shell < 1.5)
    return float(np.sum(energy[lowest]) / total)


# ---- time stepping ----

class _Propagator:
    """Exact linear flow over one step fraction, per field."""

    def __init__(self, params: ModelParams):
        self.params = params
        if params.is_scaled:
            self._sg = {name: params.semigroup_params(name) for name in params.field_names}

    def __call__(self, fields: Dict[str, SpectralField], h: float) -> Dict[str, SpectralField]:
        if self.params.is_scaled:
            return {name: apply_semigroup(F, h, self._sg[name]) for name, F in fields.items()}
        out = {}
        for name, F in fields.items():
            decay = np.exp(-h * F.grid.wavenumber_magnitude() ** self.params.alpha)
            out[name] = SpectralField.from_coeffs(F.grid, F.coeffs * decay)
        return out


def _axpy(a: Dict[str, SpectralField], b: Dict[str, SpectralField], factor: float) -> Dict[str, SpectralField]:
    """a + factor * b, field by field."""
    return {name: a[name] + b[name].scaled(factor) for name in a}


def _stage(fields: Dict[str, SpectralField], time: float) -> SimState:
    return SimState(time=time, fields=fields)


def step(state: SimState, params: ModelParams, dt: float) -> SimState:
    """One Lawson (integrating-factor) RK4 step of size dt."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if dt > 1.0:
        raise ValueError(f"dt must not exceed 1.0, got {dt}")

    E = _Propagator(params)
    if params.variant == "linear_scaled":
        # N = 0: the Lawson step reduces to the exact linear flow
        return SimState(time=state.time + dt, fields=E(state.fields, dt),
                        step_count=state.step_count + 1)

    u_max = max_velocity(state, params)
    courant = u_max * dt / params.grid.spacing
    if courant > 0.5:
        raise CFLViolationError(
            f"Courant number {courant:.3g} exceeds 0.5 (u_max={u_max:.3g}, dt={dt:g})",
            time=state.time,
        )

    h = dt
    t = state.time
    u = state.fields
    try:
        k1 = nonlinear_term(state, params)
        k2 = nonlinear_term(_stage(E(_axpy(u, k1, h / 2), h / 2), t + h / 2), params)
        k3 = nonlinear_term(_stage(_axpy(E(u, h / 2), k2, h / 2), t + h / 2), params)
        k4 = nonlinear_term(_stage(_axpy(E(u, h), E(k3, h / 2), h), t + h), params)

        full = E(_axpy(u, k1, h / 6), h)
        half = E(_axpy(k2, k3, 1.0), h / 2)
        new = {name: full[name] + half[name].scaled(h / 3) + k4[name].scaled(h / 6) for name in u}
    except FloatingPointError as e:
        raise NumericalInstabilityError(f"non-finite values during step: {e}", time=t) from e

    return SimState(time=t + h, fields=new, step_count=state.step_count + 1)


def _linear_flow(anchor: SimState, state: SimState, target: float, dt: float,
                 params: ModelParams) -> SimState:
    """
    linear_scaled steps from state up to target, composed into one exact
    propagation of the run's initial state over target - anchor.time.
    """
    steps = max(1, int(np.ceil((target - state.time) / dt * (1 - _TIME_SNAP))))
    fields = _Propagator(params)(anchor.fields, target - anchor.time)
    return SimState(time=target, fields=fields, step_count=state.step_count + steps)


@dataclass
class RunResult:
    """Final state and the records the observer returned, in time order."""
    final: SimState
    records: List = field(default_factory=list)


def _snap(value: float, target: float) -> bool:
    return abs(value - target) <= _TIME_SNAP * max(1.0, abs(target))


def run(params: ModelParams, initial: SimState, t_end: float, dt: float,
        observer_cadence: float, observer: Optional[Callable[[SimState], object]] = None) -> RunResult:
    """
    Step from initial.time to t_end with fixed dt.

    Steps are shortened to land exactly on observation times
    (initial.time + k * cadence) and on t_end. The observer sees the initial
    state, every observation time, and the final state; whatever it returns
    (if not None) is collected. linear_scaled runs propagate the initial
    state exactly to each of those times instead of stepping.
    """
    if not 0 < dt <= 1.0:
        raise ValueError(f"dt must lie in (0, 1], got {dt}")
    if not observer_cadence > 0:
        raise ValueError(f"observer_cadence must be positive, got {observer_cadence}")
    if t_end < initial.time:
        raise ValueError(f"t_end={t_end} precedes the initial time {initial.time}")

    records = []

    def observe(s: SimState) -> None:
        if observer is None:
            return
        record = observer(s)
        if record is not None:
            records.append(record)

    t0 = initial.time
    state = initial
    observe(state)
    k = 1
    try:
        while not _snap(state.time, t_end) and state.time < t_end:
            next_obs = t0 + k * observer_cadence
            target = min(t_end, next_obs)
            if params.variant == "linear_scaled":
                state = _linear_flow(initial, state, target, dt, params)
            else:
                state = step(state, params, min(dt, target - state.time))
            if _snap(state.time, target):
                state = state.model_copy(update={"time": target})
            if _snap(state.time, next_obs) or state.time > next_obs:
                observe(state)
                k += 1
    except SimulationError as e:
        if e.time is None:
            e.time = state.time
        logger.error("run failed at time %.6g: %s", e.time, e)
        raise

    if not _snap(state.time, t0 + (k - 1) * observer_cadence):
        observe(state)
    logger.info("run finished: %s t=%.6g after %d steps", params.variant, state.time, state.step_count)
    return RunResult(final=state, records=records)


# ---- scaled variables ----

def amplitude_exponent(quantity: str, alpha: float, beta: float = 1.0) -> float:
    """
    e in Q(xi) = (1+t)^e q((1+t)^(1/alpha) xi).

    z: 1 + (beta-1)/alpha, w: 1, theta: 2 - 1/alpha, u: 1 - 1/alpha.
    """
    exponents = {
        "z": 1.0 + (beta - 1.0) / alpha,
        "w": 1.0,
        "theta": 2.0 - 1.0 / alpha,
        "u": 1.0 - 1.0 / alpha,
    }
    if quantity not in exponents:
        raise ValueError(f"unknown quantity {quantity!r}; expected one of {sorted(exponents)}")
    return exponents[quantity]


def scaled_time(t: float) -> float:
    """tau = ln(1 + t)."""
    return float(np.log1p(t))


def physical_time(tau: float) -> float:
    """t = e^tau - 1."""
    return float(np.expm1(tau))


def _change_variables(f: ScalarField, amplitude: float, dilation: float) -> ScalarField:
    """amplitude * f(dilation * x), interpolating the samples on the Fourier side."""
    F = forward_transform(f)
    coeffs = amplitude / dilation ** 2 * evaluate_dilated(F, 1.0 / dilation)
    return inverse_transform(SpectralField.from_coeffs(f.grid, coeffs))


def scaled_from_physical(f: ScalarField, t: float, alpha: float, beta: float = 1.0,
                         quantity: str = "z") -> ScalarField:
    """Z(xi) = (1+t)^e z((1+t)^(1/alpha) xi); identity at t = 0."""
    if t < 0:
        raise ValueError(f"t must be nonnegative, got {t}")
    if t == 0:
        return f
    e = amplitude_exponent(quantity, alpha, beta)
    return _change_variables(f, (1 + t) ** e, (1 + t) ** (1.0 / alpha))


def physical_from_scaled(F: ScalarField, t: float, alpha: float, beta: float = 1.0,
                         quantity: str = "z") -> ScalarField:
    """Inverse of scaled_from_physical."""
    if t < 0:
        raise ValueError(f"t must be nonnegative, got {t}")
    if t == 0:
        return F
    e = amplitude_exponent(quantity, alpha, beta)
    return _change_variables(F, (1 + t) ** (-e), (1 + t) ** (-1.0 / alpha))
