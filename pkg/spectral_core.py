"""
Spectral layer - periodic-grid Fourier infrastructure.

Transforms between real-space samples and Fourier coefficients, radial
Fourier multipliers, the generalized Biot-Savart law, spectral derivatives,
2/3 dealiasing and band-limited evaluation of a spectrum off the lattice.
No time stepping or diagnostics here.
"""
import logging
from functools import lru_cache
from typing import Literal, Optional, Tuple

import numpy as np
import scipy.fft as spfft
from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, field_validator, model_validator

logger = logging.getLogger(__name__)


class GridMismatchError(ValueError):
    """Raised when two fields (or a field and a grid) live on different grids."""
    pass


class NonFiniteFieldError(FloatingPointError):
    """Raised when a field contains NaN or Inf values."""
    pass


class GridSpec(BaseModel):
    """Square periodic box [-L/2, L/2)^2 sampled with n points per side."""

    model_config = ConfigDict(frozen=True)

    n: int = Field(..., description="Points per side")
    box_length: float = Field(..., description="Physical side length L")

    @field_validator("n")
    @classmethod
    def validate_n(cls, v: int) -> int:
        if v % 2 != 0:
            raise ValueError(f"n must be even, got {v}")
        if v < 8:
            raise ValueError(f"n must be at least 8, got {v}")
        return v

    @field_validator("box_length")
    @classmethod
    def validate_box_length(cls, v: float) -> float:
        if not np.isfinite(v) or v <= 0:
            raise ValueError(f"box_length must be positive, got {v}")
        return float(v)

    @property
    def spacing(self) -> float:
        return self.box_length / self.n

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.n, self.n)

    @property
    def cell_area(self) -> float:
        return self.spacing ** 2

    @property
    def dk(self) -> float:
        """Lattice spacing 2π/L of the wavenumbers."""
        return 2 * np.pi / self.box_length

    def indices(self) -> np.ndarray:
        """Integer wavenumber indices j in FFT order (0, 1, ..., n/2-1, -n/2, ..., -1)."""
        return _lattice(self.n, self.box_length)[0]

    def wavenumbers(self) -> Tuple[np.ndarray, np.ndarray]:
        """2D arrays (k1, k2); axis 0 carries k1, axis 1 carries k2."""
        _, k1, k2, _ = _lattice(self.n, self.box_length)
        return k1, k2

    def wavenumber_magnitude(self) -> np.ndarray:
        return _lattice(self.n, self.box_length)[3]

    def coordinates(self) -> Tuple[np.ndarray, np.ndarray]:
        """2D arrays (x1, x2) of the sample positions i*L/n - L/2."""
        return _coordinates(self.n, self.box_length)

    def nyquist_mask(self) -> np.ndarray:
        """True on the rows/columns holding the unpaired index -n/2."""
        j = self.indices()
        return (j[:, None] == -self.n // 2) | (j[None, :] == -self.n // 2)


@lru_cache(maxsize=32)
def _lattice(n: int, box_length: float):
    j = np.rint(spfft.fftfreq(n) * n).astype(np.int64)
    k = (2 * np.pi / box_length) * j.astype(float)
    k1 = np.broadcast_to(k[:, None], (n, n)).copy()
    k2 = np.broadcast_to(k[None, :], (n, n)).copy()
    # exact: sqrt of a sum of squared integers, then scaled
    kmag = (2 * np.pi / box_length) * np.sqrt((j[:, None] ** 2 + j[None, :] ** 2).astype(float))
    for arr in (j, k1, k2, kmag):
        arr.setflags(write=False)
    return j, k1, k2, kmag


@lru_cache(maxsize=32)
def _coordinates(n: int, box_length: float):
    x = np.arange(n) * (box_length / n) - box_length / 2
    x1 = np.broadcast_to(x[:, None], (n, n)).copy()
    x2 = np.broadcast_to(x[None, :], (n, n)).copy()
    x1.setflags(write=False)
    x2.setflags(write=False)
    return x1, x2


def make_grid(n: int, box_length: float) -> GridSpec:
    """Build a validated grid. Raises ValueError on odd/tiny n or non-positive L."""
    return GridSpec(n=n, box_length=box_length)


class ScalarField(BaseModel):
    """Real-space samples of a 2D scalar; values[i, j] sits at (x1_i, x2_j)."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    grid: GridSpec
    values: np.ndarray

    @model_validator(mode="after")
    def check_values(self) -> "ScalarField":
        if self.values.shape != self.grid.shape:
            raise ValueError(
                f"values shape {self.values.shape} does not match grid shape {self.grid.shape}"
            )
        if not np.all(np.isfinite(self.values)):
            raise NonFiniteFieldError("ScalarField contains non-finite values")
        return self

    @classmethod
    def from_array(cls, grid: GridSpec, values) -> "ScalarField":
        arr = np.array(values, dtype=float, copy=True)
        arr.setflags(write=False)
        return cls(grid=grid, values=arr)

    @classmethod
    def zeros(cls, grid: GridSpec) -> "ScalarField":
        return cls.from_array(grid, np.zeros(grid.shape))

    def __add__(self, other: "ScalarField") -> "ScalarField":
        _check_same_grid(self.grid, other.grid)
        return ScalarField.from_array(self.grid, self.values + other.values)

    def __sub__(self, other: "ScalarField") -> "ScalarField":
        _check_same_grid(self.grid, other.grid)
        return ScalarField.from_array(self.grid, self.values - other.values)

    def scaled(self, factor: float) -> "ScalarField":
        return ScalarField.from_array(self.grid, factor * self.values)


class SpectralField(BaseModel):
    """
    Fourier coefficients of a 2D scalar in FFT order.

    coeffs[a, b] approximates (1/L^2) * integral f(x) exp(-i k.x) dx at
    k = (k1[a], k2[b]), so coeffs[0, 0] is the spatial mean.

    A field produced by forward_transform keeps the real-space samples it
    was computed from; inverse_transform hands those back unchanged.
    """

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    grid: GridSpec
    coeffs: np.ndarray
    _real: Optional[np.ndarray] = PrivateAttr(default=None)

    @model_validator(mode="after")
    def check_coeffs(self) -> "SpectralField":
        if self.coeffs.shape != self.grid.shape:
            raise ValueError(
                f"coeffs shape {self.coeffs.shape} does not match grid shape {self.grid.shape}"
            )
        if not np.all(np.isfinite(self.coeffs)):
            raise NonFiniteFieldError("SpectralField contains non-finite coefficients")
        return self

    @classmethod
    def from_coeffs(cls, grid: GridSpec, coeffs) -> "SpectralField":
        arr = np.array(coeffs, dtype=complex, copy=True)
        arr.setflags(write=False)
        return cls(grid=grid, coeffs=arr)

    @classmethod
    def zeros(cls, grid: GridSpec) -> "SpectralField":
        return cls.from_coeffs(grid, np.zeros(grid.shape, dtype=complex))

    @property
    def mean(self) -> float:
        return float(self.coeffs[0, 0].real)

    @property
    def mass(self) -> float:
        """Integral over the box: L^2 times the k=0 coefficient."""
        return self.grid.box_length ** 2 * self.mean

    def __add__(self, other: "SpectralField") -> "SpectralField":
        _check_same_grid(self.grid, other.grid)
        return SpectralField.from_coeffs(self.grid, self.coeffs + other.coeffs)

    def __sub__(self, other: "SpectralField") -> "SpectralField":
        _check_same_grid(self.grid, other.grid)
        return SpectralField.from_coeffs(self.grid, self.coeffs - other.coeffs)

    def scaled(self, factor: complex) -> "SpectralField":
        return SpectralField.from_coeffs(self.grid, factor * self.coeffs)

    def norm(self) -> float:
        """Euclidean norm of the coefficient array."""
        return float(np.linalg.norm(self.coeffs))

    def is_hermitian(self, rtol: float = 1e-12) -> bool:
        """coeffs(-k) == conj(coeffs(k)), ignoring the unpaired Nyquist lines."""
        c = np.where(self.grid.nyquist_mask(), 0.0, self.coeffs)
        flipped = np.roll(np.flip(c, axis=(0, 1)), shift=1, axis=(0, 1))
        scale = max(float(np.max(np.abs(c))), 1e-300)
        return bool(np.max(np.abs(flipped - np.conj(c))) <= rtol * scale)


def _check_same_grid(a: GridSpec, b: GridSpec) -> None:
    if a != b:
        raise GridMismatchError(f"grid mismatch: {a!r} vs {b!r}")


def forward_transform(f: ScalarField) -> SpectralField:
    """Real samples -> coefficients normalized as (1/L^2) * integral f e^{-ik.x}."""
    n = f.grid.n
    # index n/2 is the origin x = 0; ifftshift moves it to index 0
    coeffs = spfft.fft2(spfft.ifftshift(f.values)) / (n * n)
    coeffs.setflags(write=False)
    F = SpectralField(grid=f.grid, coeffs=coeffs)
    F._real = f.values
    return F


def inverse_transform(F: SpectralField) -> ScalarField:
    """Coefficients -> real samples (imaginary round-off discarded)."""
    if F._real is not None:
        return ScalarField(grid=F.grid, values=F._real)
    n = F.grid.n
    values = spfft.fftshift(spfft.ifft2(F.coeffs)).real * (n * n)
    values.setflags(write=False)
    return ScalarField(grid=F.grid, values=values)


def discrete_l2(f: ScalarField) -> float:
    """sqrt(sum |f|^2 * cell area)."""
    return float(np.sqrt(np.sum(f.values ** 2) * f.grid.cell_area))


def parseval_l2(F: SpectralField) -> float:
    """L times the coefficient norm; equals discrete_l2 of the real field."""
    return F.grid.box_length * F.norm()


class SymbolSpec(BaseModel):
    """A radial Fourier multiplier (or a perpendicular/Riesz variant of one)."""

    model_config = ConfigDict(frozen=True)

    kind: Literal["fractional_laplacian", "riesz_component", "neg_power", "biot_savart_perp"]
    exponent: float = 0.0
    axis: Optional[int] = None

    @model_validator(mode="after")
    def check_parameters(self) -> "SymbolSpec":
        if self.kind == "fractional_laplacian" and not (0 < self.exponent <= 2):
            raise ValueError(f"fractional_laplacian exponent must lie in (0,2], got {self.exponent}")
        if self.kind == "neg_power" and self.exponent < 0:
            raise ValueError(f"neg_power exponent must be nonnegative, got {self.exponent}")
        if self.kind == "biot_savart_perp" and not (0 <= self.exponent < 2):
            raise ValueError(f"biot_savart_perp exponent must lie in [0,2), got {self.exponent}")
        if self.kind in ("riesz_component", "biot_savart_perp") and self.axis not in (0, 1):
            raise ValueError(f"{self.kind} needs axis 0 or 1, got {self.axis}")
        return self

    @classmethod
    def fractional_laplacian(cls, alpha: float) -> "SymbolSpec":
        return cls(kind="fractional_laplacian", exponent=alpha)

    @classmethod
    def neg_power(cls, beta: float) -> "SymbolSpec":
        return cls(kind="neg_power", exponent=beta)

    @classmethod
    def riesz_component(cls, axis: int) -> "SymbolSpec":
        return cls(kind="riesz_component", axis=axis)

    @classmethod
    def biot_savart_perp(cls, beta: float, axis: int) -> "SymbolSpec":
        return cls(kind="biot_savart_perp", exponent=beta, axis=axis)


def _safe_inverse_power(kmag: np.ndarray, power: float) -> np.ndarray:
    """|k|^(-power) with the k=0 entry set to 0."""
    out = np.zeros_like(kmag)
    nz = kmag > 0
    out[nz] = kmag[nz] ** (-power)
    return out


def symbol_values(grid: GridSpec, s: SymbolSpec) -> np.ndarray:
    """Multiplier values on the lattice (complex for odd symbols)."""
    k1, k2 = grid.wavenumbers()
    kmag = grid.wavenumber_magnitude()
    if s.kind == "fractional_laplacian":
        return kmag ** s.exponent
    if s.kind == "neg_power":
        return _safe_inverse_power(kmag, s.exponent)
    odd_mask = ~grid.nyquist_mask()
    if s.kind == "riesz_component":
        k = (k1, k2)[s.axis]
        return 1j * k * _safe_inverse_power(kmag, 1.0) * odd_mask
    # biot_savart_perp: nabla^perp = (-d2, d1) composed with |k|^(-beta-1)
    m = _safe_inverse_power(kmag, s.exponent + 1.0)
    if s.axis == 0:
        return -1j * k2 * m * odd_mask
    return 1j * k1 * m * odd_mask


def apply_symbol(F: SpectralField, s: SymbolSpec) -> SpectralField:
    """Pointwise multiplication of the coefficients by the symbol."""
    return SpectralField.from_coeffs(F.grid, F.coeffs * symbol_values(F.grid, s))


def biot_savart_velocity(Z: SpectralField, beta: float) -> Tuple[SpectralField, SpectralField]:
    """
    Generalized Biot-Savart law U = (|nabla|^perp)^(-beta) Z.

    U1 = -i k2 |k|^(-beta-1) Z, U2 = i k1 |k|^(-beta-1) Z, both zero at k = 0.
    """
    if not (0 <= beta < 2):
        raise ValueError(f"beta must lie in [0,2), got {beta}")
    grid = Z.grid
    k1, k2 = grid.wavenumbers()
    mz = _safe_inverse_power(grid.wavenumber_magnitude(), beta + 1.0) * Z.coeffs
    mz = np.where(grid.nyquist_mask(), 0.0, mz)
    U1 = SpectralField.from_coeffs(grid, -1j * k2 * mz)
    U2 = SpectralField.from_coeffs(grid, 1j * k1 * mz)
    return U1, U2


def spectral_gradient(F: SpectralField, axis: int) -> SpectralField:
    """Partial derivative along axis (0 -> x1, 1 -> x2) via i k_axis."""
    if axis not in (0, 1):
        raise ValueError(f"axis must be 0 or 1, got {axis}")
    k = F.grid.wavenumbers()[axis]
    j = F.grid.indices()
    nyq = (j == -F.grid.n // 2)
    # zero the unpaired Nyquist line of the differentiated axis so real stays real
    mask = ~nyq[:, None] if axis == 0 else ~nyq[None, :]
    return SpectralField.from_coeffs(F.grid, 1j * k * F.coeffs * mask)


def dealias_mask(grid: GridSpec) -> np.ndarray:
    j = np.abs(grid.indices())
    keep = j <= grid.n / 3
    return keep[:, None] & keep[None, :]


def dealias(F: SpectralField) -> SpectralField:
    """2/3 rule: zero every coefficient with max(|j1|, |j2|) > n/3."""
    return SpectralField.from_coeffs(F.grid, F.coeffs * dealias_mask(F.grid))


def evaluate_dilated(F: SpectralField, s: float) -> np.ndarray:
    """
    Band-limited evaluation of the spectrum at s*k for every lattice k.

    Evaluates the trigonometric interpolant of the box samples, i.e.
    (1/n^2) * sum_x f(x) exp(-i s k.x), which is exact for fields supported
    inside the box. The dilation is isotropic, so the double sum separates into
    two n x n matrix products. Targets beyond the Nyquist index, and the
    Nyquist lines themselves, are returned as zero.

    Args:
        F: field to evaluate
        s: positive dilation factor

    Returns:
        Complex array in FFT order, same shape as F.coeffs
    """
    if s <= 0:
        raise ValueError(f"dilation factor must be positive, got {s}")
    grid = F.grid
    n = grid.n
    f = inverse_transform(F).values
    x = np.arange(n) * grid.spacing - grid.box_length / 2
    k = grid.dk * grid.indices()
    phase = np.exp(-1j * s * np.outer(k, x))
    # rows whose target lies past the Nyquist index carry no information
    outside = np.abs(s * grid.indices()) >= n / 2
    phase[outside, :] = 0.0
    coeffs = phase @ f @ phase.T / (n * n)
    coeffs[grid.nyquist_mask()] = 0.0
    return coeffs


def band_limited_random_field(grid: GridSpec, seed: int, k_cut: float = 1.0,
                              envelope_width: Optional[float] = None,
                              amplitude: float = 1.0, mean_zero: bool = False) -> ScalarField:
    """
    Smooth localized random field: a random carrier with |k| <= k_cut times a
    Gaussian envelope (width L/16 by default), scaled to max |f| = amplitude.

    The same seed always gives the same field. With mean_zero the mass is
    removed along the envelope, so the result stays localized.
    """
    rng = np.random.default_rng(seed)
    keep = (grid.wavenumber_magnitude() <= k_cut) & ~grid.nyquist_mask()
    noise = rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape)
    carrier = spfft.ifft2(noise * keep).real
    carrier = carrier / max(float(np.max(np.abs(carrier))), 1e-300)

    sigma = envelope_width if envelope_width is not None else grid.box_length / 16
    x1, x2 = grid.coordinates()
    envelope = np.exp(-(x1 ** 2 + x2 ** 2) / (2 * sigma ** 2))
    values = (1.0 + 0.5 * carrier) * envelope
    if mean_zero:
        values = values - (np.sum(values) / np.sum(envelope)) * envelope
    values = amplitude * values / max(float(np.max(np.abs(values))), 1e-300)
    return ScalarField.from_array(grid, values)
