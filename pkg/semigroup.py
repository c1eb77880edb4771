"""
Rescaled semigroup e^{tau L} on the Fourier side.

    L Z = -|nabla|^alpha Z + (1/alpha) xi . grad Z + (1 + (beta-1)/alpha) Z

acts in closed form as
    (e^{tau L} f)^(p) = e^{lambda0 tau} e^{-a(tau)|p|^alpha} f^(e^{-tau/alpha} p),
with a(tau) = 1 - e^{-tau} and lambda0 = 1 - (3-beta)/alpha. The only
numerical step is evaluating f^ off the lattice. Before interpolating,
eigen_split removes the share of the mass (G) and first-moment (d_j G)
components that shows up as a heavy tail at the box edge; their spectra are
known in closed form, so G and d_j G propagate as exact eigenfunctions.
"""
import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator
from scipy import stats

from diagnostics import weighted_l2m_norm
from profile_kernels import KernelTable, spectral_kernel_coeffs
from spectral_core import (
    GridSpec,
    ScalarField,
    SpectralField,
    band_limited_random_field,
    evaluate_dilated,
    forward_transform,
    inverse_transform,
    make_grid,
    spectral_gradient,
)

logger = logging.getLogger(__name__)


class ProbeUnderflowError(FloatingPointError):
    """Raised when a decay probe measures a norm too small to take its logarithm."""
    pass


class SemigroupParams(BaseModel):
    """Generator parameters; shift adds a multiple of the identity (1 - 1/alpha for Theta)."""

    model_config = ConfigDict(frozen=True)

    alpha: float
    beta: float = 1.0
    shift: float = 0.0

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

    @classmethod
    def for_theta(cls, alpha: float) -> "SemigroupParams":
        """Generator L + 1 - 1/alpha of the scaled temperature (beta = 1)."""
        return cls(alpha=alpha, beta=1.0, shift=1.0 - 1.0 / alpha)

    @property
    def lambda0(self) -> float:
        return self.eigenvalue(0)

    def eigenvalue(self, k: int) -> float:
        """lambda_k = 1 - (3 - beta + k)/alpha + shift; eigenfunctions are k-th derivatives of G."""
        return 1.0 - (3.0 - self.beta + k) / self.alpha + self.shift


def a_of_tau(tau: float) -> float:
    """a(tau) = 1 - e^{-tau}."""
    if tau < 0:
        raise ValueError(f"tau must be nonnegative, got {tau}")
    return float(-np.expm1(-tau))


def first_moments(f: ScalarField) -> Tuple[float, float]:
    """
    (int x1 f, int x2 f) over the box.

    The unpaired row/column at x = -L/2 gets weight 0, so fields that are
    symmetric about the origin have zero moments exactly.
    """
    grid = f.grid
    x1, x2 = grid.coordinates()
    edge = -grid.box_length / 2
    w1 = np.where(np.isclose(x1, edge), 0.0, x1)
    w2 = np.where(np.isclose(x2, edge), 0.0, x2)
    area = grid.cell_area
    return float(np.sum(w1 * f.values) * area), float(np.sum(w2 * f.values) * area)


def _eigen_parts(grid: GridSpec, alpha: float, mass: float, c1: float, c2: float, s: float,
                 axis: Optional[int] = None):
    """Spectrum of mass*G + c1*d1G + c2*d2G (or of its d_axis) sampled at s*k."""
    k1, k2 = grid.wavenumbers()
    base = np.exp(-(s * grid.wavenumber_magnitude()) ** alpha) / grid.box_length ** 2
    odd = ~grid.nyquist_mask()
    parts = base * (mass + 1j * s * (c1 * k1 + c2 * k2) * odd)
    if axis is not None:
        parts = parts * 1j * s * (k1, k2)[axis] * odd
    return parts


@lru_cache(maxsize=32)
def _lattice_dipole_moment(n: int, box_length: float, alpha: float) -> float:
    """int x1 d1G over the box for d1G synthesized on the lattice; close to -1."""
    grid = make_grid(n, box_length)
    d1G = SpectralField.from_coeffs(grid, _eigen_parts(grid, alpha, 0.0, 1.0, 0.0, 1.0))
    return first_moments(inverse_transform(d1G))[0]


@lru_cache(maxsize=32)
def _edge_frame(n: int, box_length: float) -> np.ndarray:
    """Samples within L/16 of the box boundary."""
    x1, x2 = make_grid(n, box_length).coordinates()
    edge = box_length / 2 - box_length / 16
    frame = np.maximum(np.abs(x1), np.abs(x2)) >= edge
    frame.setflags(write=False)
    return frame


@dataclass
class EigenSplit:
    """
    F = weights . (G, d1G, d2G) + remainder.

    The weights are the moment-matched ones (mass, c1, c2) times a tail share
    in [0, 1] fitted on the edge frame of the box: 0 for data that vanish
    there, 1 for G and grad G themselves.
    """
    weights: Tuple[float, float, float]
    tail_share: float
    remainder: SpectralField


def eigen_split(F: SpectralField, alpha: float) -> EigenSplit:
    """Split off the part of F whose spectrum is known in closed form."""
    grid = F.grid
    mass = F.mass
    f = inverse_transform(F)
    m1, m2 = first_moments(f)
    dipole = _lattice_dipole_moment(grid.n, grid.box_length, alpha)
    moments = (mass, m1 / dipole, m2 / dipole)

    part = _eigen_parts(grid, alpha, *moments, 1.0)
    frame = _edge_frame(grid.n, grid.box_length)
    tail = inverse_transform(SpectralField.from_coeffs(grid, part)).values[frame]
    edge = f.values[frame]
    norm = float(np.dot(tail, tail))
    share = float(np.clip(np.dot(edge, tail) / norm, 0.0, 1.0)) if norm > 0 else 0.0

    weights = tuple(share * w for w in moments)
    remainder = SpectralField.from_coeffs(grid, F.coeffs - share * part)
    return EigenSplit(weights=weights, tail_share=share, remainder=remainder)


def _dilate_split(split: EigenSplit, s: float, alpha: float,
                  axis: Optional[int] = None) -> np.ndarray:
    """Closed-form part at s*k plus the band-limited interpolant of the remainder."""
    grid = split.remainder.grid
    out = evaluate_dilated(split.remainder, s) + _eigen_parts(grid, alpha, *split.weights, s, axis)
    j = grid.indices()
    inside = np.abs(s * j) < grid.n / 2
    out = out * (inside[:, None] & inside[None, :])
    out[grid.nyquist_mask()] = 0.0
    return out


def dilate_spectrum(F: SpectralField, s: float, alpha: float) -> np.ndarray:
    """
    F^(s k) for every lattice k.

    The closed-form part of eigen_split is evaluated exactly, the remainder
    with the band-limited interpolant. Data that vanish near the box edge are
    interpolated as they are; for data carrying the r^(-2-alpha) tail of G the
    tail goes through the closed form.
    """
    return _dilate_split(eigen_split(F, alpha), s, alpha)


def _warn_if_compressed(grid: GridSpec, tau: float, alpha: float) -> None:
    if tau > alpha * np.log(grid.n / 8):
        logger.warning(
            "tau=%.3g exceeds alpha*ln(n/8)=%.3g: the dilated spectrum is compressed to "
            "%.2g lattice shells", tau, alpha * np.log(grid.n / 8),
            np.exp(-tau / alpha) * grid.n / 2,
        )


def _propagate(split: EigenSplit, tau: float, p: SemigroupParams,
               axis: Optional[int] = None) -> SpectralField:
    grid = split.remainder.grid
    s = np.exp(-tau / p.alpha)
    damping = np.exp(-a_of_tau(tau) * grid.wavenumber_magnitude() ** p.alpha)
    coeffs = np.exp(p.lambda0 * tau) * damping * _dilate_split(split, s, p.alpha, axis)
    return SpectralField.from_coeffs(grid, coeffs)


def apply_semigroup(F: SpectralField, tau: float, p: SemigroupParams) -> SpectralField:
    """e^{tau (L + shift)} F; identity at tau = 0."""
    if tau < 0:
        raise ValueError(f"tau must be nonnegative, got {tau}")
    if tau == 0:
        return F
    _warn_if_compressed(F.grid, tau, p.alpha)
    return _propagate(eigen_split(F, p.alpha), tau, p)


@dataclass
class CommutedGradient:
    """d_axis e^{tau L} F plus the relative gap to e^{tau/alpha} e^{tau L} d_axis F."""
    field: SpectralField
    discrepancy: float


def apply_semigroup_gradient_commuted(F: SpectralField, tau: float, p: SemigroupParams,
                                      axis: int) -> CommutedGradient:
    """
    grad e^{tau L} = e^{tau/alpha} e^{tau L} grad, computed both ways.

    d_axis F is split as the derivative of F's split: the closed-form part
    becomes d_axis of G and grad G, the remainder is differentiated on the
    lattice.
    """
    if tau < 0:
        raise ValueError(f"tau must be nonnegative, got {tau}")
    split = eigen_split(F, p.alpha)
    after = spectral_gradient(_propagate(split, tau, p), axis)
    derived = EigenSplit(weights=split.weights, tail_share=split.tail_share,
                         remainder=spectral_gradient(split.remainder, axis))
    before = _propagate(derived, tau, p, axis).scaled(np.exp(tau / p.alpha))
    scale = max(after.norm(), 1e-300)
    return CommutedGradient(field=after, discrepancy=(after - before).norm() / scale)


def _profile_field(grid: GridSpec, alpha: float) -> SpectralField:
    return SpectralField.from_coeffs(grid, spectral_kernel_coeffs(grid, alpha, 1.0, "G"))


def project_P0(f: ScalarField, kt: KernelTable) -> ScalarField:
    """P0 f = (int f) G, with G synthesized on the lattice so its mass is exactly 1."""
    F = forward_transform(f)
    G = _profile_field(f.grid, kt.alpha)
    return inverse_transform(G.scaled(F.mass))


def project_Q0(f: ScalarField, kt: KernelTable) -> ScalarField:
    """Q0 = Id - P0; the result has zero mass."""
    return f - project_P0(f, kt)


def lp_growth_bound(p: float, params: SemigroupParams, derivative: bool = False) -> float:
    """
    Exponent of the L^p bound on e^{tau L} f (or e^{tau L} grad f):
    1 - (1-beta)/alpha - 2/(alpha p), with one extra -1/alpha for the gradient.
    """
    inv_p = 0.0 if p == np.inf else 1.0 / p
    exponent = 1.0 - (1.0 - params.beta) / params.alpha - 2.0 * inv_p / params.alpha + params.shift
    if derivative:
        exponent -= 1.0 / params.alpha
    return exponent


@dataclass
class ProbeResult:
    """Fitted log-norm slopes of an ensemble against the predicted exponent."""
    slope: float
    expected: float
    member_slopes: List[float] = field(default_factory=list)
    taus: List[float] = field(default_factory=list)


def probe_ensemble(grid: GridSpec, size: int, seed: int, mean_zero: bool,
                   envelope_width: float = 1.0) -> List[SpectralField]:
    """Smooth random fields localized on the scale of G; mean_zero removes the mass."""
    members = []
    for i in range(size):
        f = band_limited_random_field(grid, seed=seed + i, envelope_width=envelope_width,
                                      mean_zero=mean_zero)
        members.append(forward_transform(f))
    return members


def probe_decay_rate(p: SemigroupParams, mean_zero: bool,
                     weight: Literal["L2", "L2(2)"], tau_samples: Sequence[float],
                     grid: GridSpec = None, ensemble_size: int = 6,
                     seed: int = 0, envelope_width: float = 1.0) -> ProbeResult:
    """
    Fit log ||e^{tau L} f|| against tau over an ensemble.

    The expected slope is lambda0 for generic data and lambda0 - 1/alpha for
    mean-zero data. The returned slope is the steepest-growing member, which
    must not exceed the expected slope by more than the fixed margin.
    """
    taus = sorted(float(t) for t in tau_samples)
    if len(taus) < 3 or taus[0] > 1.0 or taus[-1] < 6.0:
        logger.warning("tau samples %s do not span [1, 6]; the fit is less reliable", taus)
    if weight not in ("L2", "L2(2)"):
        raise ValueError(f"weight must be 'L2' or 'L2(2)', got {weight!r}")
    grid = grid or make_grid(256, 64.0)
    m = 2 if weight == "L2(2)" else 0

    slopes = []
    for F in probe_ensemble(grid, ensemble_size, seed, mean_zero, envelope_width):
        norms = []
        for tau in taus:
            norm = weighted_l2m_norm(inverse_transform(apply_semigroup(F, tau, p)), m)
            if not norm > 1e-280:
                raise ProbeUnderflowError(f"norm underflow at tau={tau}: {norm}")
            norms.append(norm)
        slopes.append(float(stats.linregress(taus, np.log(norms)).slope))

    expected = p.eigenvalue(1 if mean_zero else 0)
    logger.info("decay probe: slopes %s, expected %.4f", np.round(slopes, 4), expected)
    return ProbeResult(slope=max(slopes), expected=expected, member_slopes=slopes, taus=taus)
