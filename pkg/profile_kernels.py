"""
The alpha-stable profile G with G^(p) = exp(-|p|^alpha) on R^2.

G is radial, so its inverse Fourier transform reduces to Hankel integrals
    G(r)  =  (2 pi)^-1 int_0^inf exp(-rho^alpha) J0(rho r) rho   d rho
    G'(r) = -(2 pi)^-1 int_0^inf exp(-rho^alpha) J1(rho r) rho^2 d rho
evaluated panel-wise between consecutive Bessel zeros with Gauss-Legendre
nodes. KernelTable tabulates both on log-spaced radii for fast sampling.
"""
import logging
from functools import lru_cache
from pathlib import Path
from typing import Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, PrivateAttr, field_validator
from scipy import special
from scipy.interpolate import CubicSpline

from spectral_core import GridSpec, ScalarField, SpectralField, inverse_transform

logger = logging.getLogger(__name__)

# integrand weight exp(-rho^alpha) is below 1e-21 past rho^alpha = 50
_RHO_EXPONENT_CUTOFF = 50.0
_GAUSS_NODES, _GAUSS_WEIGHTS = special.roots_legendre(24)
_TABLE_RADIUS = 100.0
_TABLE_POINTS = 400
# periodic images summed per side in each direction by the table kernel
_IMAGE_SHELLS = 6


def _check_alpha(alpha: float) -> float:
    if not (1 < alpha <= 2):
        raise ValueError(f"alpha must lie in (1,2], got {alpha}")
    return float(alpha)


def _breakpoints(r: float, order: int, rho_end: float) -> np.ndarray:
    """Panel edges: graded near 0, unit spacing, plus zeros of J_order(rho r)."""
    edges = [0.0, 1e-3, 1e-2, 0.1, 0.5]
    edges.extend(np.arange(1.0, rho_end, 1.0))
    if r > 0:
        count = int(rho_end * r / np.pi) + 2
        zeros = special.jn_zeros(order, count) / r
        edges.extend(zeros[zeros < rho_end])
    edges.append(rho_end)
    return np.unique(np.asarray(edges))


def _radial_inverse(r: float, alpha: float, order: int) -> float:
    """
    Hankel integral (2 pi)^-1 int exp(-rho^alpha) J_order(rho r) rho^(1+order) d rho.

    Accepts any alpha in (0, 2]; the public evaluators restrict the range.
    """
    rho_end = _RHO_EXPONENT_CUTOFF ** (1.0 / alpha)
    edges = _breakpoints(r, order, rho_end)
    lo, hi = edges[:-1], edges[1:]
    half = 0.5 * (hi - lo)
    rho = (lo + half)[:, None] + half[:, None] * _GAUSS_NODES[None, :]
    bessel = special.j0(rho * r) if order == 0 else special.j1(rho * r)
    integrand = np.exp(-rho ** alpha) * bessel * rho ** (1 + order)
    return float(np.sum(half[:, None] * _GAUSS_WEIGHTS[None, :] * integrand) / (2 * np.pi))


def eval_G(r: float, alpha: float) -> float:
    """G at radius r by direct Hankel quadrature."""
    alpha = _check_alpha(alpha)
    if r < 0:
        raise ValueError(f"r must be nonnegative, got {r}")
    return _radial_inverse(r, alpha, 0)


def eval_dG(r: float, alpha: float) -> float:
    """Radial derivative G'(r); d1 G(xi) = G'(|xi|) xi_1 / |xi|."""
    alpha = _check_alpha(alpha)
    if r < 0:
        raise ValueError(f"r must be nonnegative, got {r}")
    if r == 0:
        return 0.0
    return -_radial_inverse(r, alpha, 1)


def G_at_origin(alpha: float) -> float:
    """Closed form G(0) = Gamma(2/alpha) / (2 pi alpha)."""
    return float(special.gamma(2.0 / alpha) / (2 * np.pi * alpha))


def stable_tail_coefficient(alpha: float) -> float:
    """c in G(r) ~ c r^(-2-alpha) as r -> infinity (zero for the Gaussian)."""
    if alpha >= 2.0:
        return 0.0
    return float(
        alpha * 2 ** (alpha - 1) / np.pi ** 2 * np.sin(np.pi * alpha / 2)
        * special.gamma(1 + alpha / 2) * special.gamma(alpha / 2)
    )


class KernelTable(BaseModel):
    """G and G' tabulated on log-spaced radii, with a power-law tail beyond r_M."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    alpha: float
    radii: np.ndarray
    g_values: np.ndarray
    g_prime_values: np.ndarray
    tail_exponent: float
    tail_coefficient: float
    _g_spline: Optional[CubicSpline] = PrivateAttr(default=None)
    _dg_spline: Optional[CubicSpline] = PrivateAttr(default=None)

    def model_post_init(self, __context) -> None:
        self._g_spline = CubicSpline(self.radii, self.g_values)
        self._dg_spline = CubicSpline(self.radii, self.g_prime_values)

    @field_validator("radii")
    @classmethod
    def validate_radii(cls, v: np.ndarray) -> np.ndarray:
        if v[0] != 0 or np.any(np.diff(v) <= 0):
            raise ValueError("radii must start at 0 and be strictly increasing")
        return v

    @property
    def r_max(self) -> float:
        return float(self.radii[-1])

    def G(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        inside = self._g_spline(np.minimum(r, self.r_max))
        tail = self.tail_coefficient * np.maximum(r, self.r_max) ** (-self.tail_exponent)
        return np.where(r <= self.r_max, inside, tail)

    def dG(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        inside = self._dg_spline(np.minimum(r, self.r_max))
        tail = (-self.tail_exponent * self.tail_coefficient
                * np.maximum(r, self.r_max) ** (-self.tail_exponent - 1))
        return np.where(r <= self.r_max, inside, tail)

    def dump(self, path: Union[str, Path]) -> None:
        """Plain text: header '# alpha=<val>' then lines 'r value derivative'."""
        lines = [f"# alpha={self.alpha!r}"]
        lines.extend(
            f"{r:.17g} {g:.17g} {dg:.17g}"
            for r, g, dg in zip(self.radii, self.g_values, self.g_prime_values)
        )
        Path(path).write_text("\n".join(lines) + "\n")


@lru_cache(maxsize=16)
def build_kernel_table(alpha: float, r_max: float = _TABLE_RADIUS,
                       points: int = _TABLE_POINTS) -> KernelTable:
    """Tabulate G, G' for one alpha; cached, since the table is immutable."""
    alpha = _check_alpha(alpha)
    radii = np.concatenate([[0.0], np.logspace(-3, np.log10(r_max), points - 1)])
    g = np.array([eval_G(r, alpha) for r in radii])
    dg = np.array([eval_dG(r, alpha) for r in radii])

    if alpha < 2.0:
        tail_exponent = 2.0 + alpha
        # fit c in c r^(-2-alpha) over the last decade of the table
        last = radii >= r_max / 10
        coefficient = float(np.mean(g[last] * radii[last] ** tail_exponent))
    else:
        tail_exponent, coefficient = 4.0, 0.0

    if np.any(np.diff(g) > 1e-14):
        logger.warning("G for alpha=%s is not radially monotone on the table", alpha)

    for arr in (radii, g, dg):
        arr.setflags(write=False)
    logger.debug("kernel table alpha=%s: G(0)=%.10g tail c=%.6g", alpha, g[0], coefficient)
    return KernelTable(alpha=alpha, radii=radii, g_values=g, g_prime_values=dg,
                       tail_exponent=tail_exponent, tail_coefficient=coefficient)


def spectral_kernel_coeffs(grid: GridSpec, alpha: float, t_scale: float,
                           which: Literal["G", "dG1"] = "G",
                           center=(0.0, 0.0)) -> np.ndarray:
    """Coefficients of G_t (or d1 G_t) on the lattice: exp(-t|k|^alpha) / L^2."""
    k1, k2 = grid.wavenumbers()
    coeffs = np.exp(-t_scale * grid.wavenumber_magnitude() ** alpha) / grid.box_length ** 2
    if center[0] or center[1]:
        coeffs = coeffs * np.exp(-1j * (k1 * center[0] + k2 * center[1]))
    if which == "dG1":
        coeffs = 1j * k1 * coeffs * ~grid.nyquist_mask()
    return coeffs


def _table_sample(table: KernelTable, y1: np.ndarray, y2: np.ndarray,
                  which: Literal["G", "dG1"]) -> np.ndarray:
    rho = np.hypot(y1, y2)
    if which == "G":
        return table.G(rho)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(rho > 0, table.dG(rho) * y1 / rho, 0.0)


def _image_remainder(table: KernelTable, box_length: float, width: float) -> float:
    """
    Images past the summed block, as the tail integral of c r^(-e) outside the
    disk with the block's area (in units where the kernel has width 1).
    """
    if table.tail_coefficient == 0.0:
        return 0.0
    half_side = (_IMAGE_SHELLS + 0.5) * box_length / width
    radius = 2 * half_side / np.sqrt(np.pi)
    e = table.tail_exponent
    return 2 * np.pi * table.tail_coefficient * radius ** (2 - e) / (e - 2)


def kernel_field(grid: GridSpec, alpha: float, t_scale: float,
                 which: Literal["G", "dG1"] = "G",
                 method: Literal["spectral", "table"] = "spectral",
                 center=(0.0, 0.0), images: bool = True) -> ScalarField:
    """
    Samples of t^(-2/alpha) G(x / t^(1/alpha)) or of its x1-derivative.

    method="spectral" synthesizes exp(-t|k|^alpha) on the lattice (periodic,
    mass exactly 1). method="table" samples the Hankel table and, with images,
    adds the periodic images x + mL, so both methods give the periodized kernel.
    images=False samples the kernel of R^2 itself.
    """
    alpha = _check_alpha(alpha)
    if t_scale <= 0:
        raise ValueError(f"t_scale must be positive, got {t_scale}")
    if which not in ("G", "dG1"):
        raise ValueError(f"which must be 'G' or 'dG1', got {which!r}")
    width = t_scale ** (1.0 / alpha)
    if width < 2 * grid.spacing:
        logger.warning("kernel width %.3g is under two grid spacings (%.3g)", width, grid.spacing)

    if method == "spectral":
        coeffs = spectral_kernel_coeffs(grid, alpha, t_scale, which, center)
        return inverse_transform(SpectralField.from_coeffs(grid, coeffs))
    if method != "table":
        raise ValueError(f"unknown kernel method {method!r}")

    table = build_kernel_table(alpha)
    x1, x2 = grid.coordinates()
    L = grid.box_length
    shells = range(-_IMAGE_SHELLS, _IMAGE_SHELLS + 1) if images else range(1)
    values = np.zeros(grid.shape)
    for m1 in shells:
        for m2 in shells:
            y1 = (x1 - center[0] + m1 * L) / width
            y2 = (x2 - center[1] + m2 * L) / width
            values += _table_sample(table, y1, y2, which)
    if which == "G":
        if images:
            # integral over the images left out, spread over one cell of area L^2
            values += _image_remainder(table, L, width) * width ** 2 / L ** 2
        values = values / width ** 2
    else:
        values = values / width ** 3
    return ScalarField.from_array(grid, values)


def kernel_moment_norm(alpha: float, p: Union[float, str], weight_power: int,
                       cutoff: float = 200.0) -> float:
    """
    || (1+|xi|^2)^(weight_power/2) G ||_{L^p} by radial quadrature up to cutoff.

    weight_power 0 or 2; weight 2 needs p >= 2. weight_power 3 is accepted
    for probing the divergence of G in L^2(3); it grows with the cutoff.
    """
    alpha = _check_alpha(alpha)
    p = np.inf if p in ("inf", np.inf) else float(p)
    if p < 1:
        raise ValueError(f"p must be at least 1, got {p}")
    if weight_power not in (0, 2, 3):
        raise ValueError(f"weight_power must be 0, 2 or 3, got {weight_power}")
    if weight_power == 2 and p < 2:
        raise ValueError("the weight-2 moment is only finite for p >= 2")

    table = build_kernel_table(alpha)
    if p == np.inf:
        r = np.linspace(0, cutoff, 20001)
        return float(np.max((1 + r ** 2) ** (weight_power / 2) * np.abs(table.G(r))))

    # Gauss-Legendre on log-graded panels over [0, cutoff]
    edges = np.unique(np.concatenate([[0.0], np.logspace(-3, np.log10(cutoff), 400)]))
    lo, hi = edges[:-1], edges[1:]
    half = 0.5 * (hi - lo)
    r = (lo + half)[:, None] + half[:, None] * _GAUSS_NODES[None, :]
    integrand = (1 + r ** 2) ** (weight_power * p / 2) * np.abs(table.G(r)) ** p * 2 * np.pi * r
    total = np.sum(half[:, None] * _GAUSS_WEIGHTS[None, :] * integrand)
    return float(total ** (1.0 / p))
