"""Sine-basis spectral calculus for Dirichlet fields on an interval (0, L).

The negative Laplacian with Dirichlet boundary conditions on (0, L) is
diagonalized by the orthonormal basis

    e_k(x) = sqrt(2/L) * sin(k*pi*x/L),    alpha_k = (k*pi/L)**2,  k >= 1.

Fields are represented by their first K coefficients.  Collocation uses the
uniform interior grid x_j = j*L/(M+1), j = 1..M, on which the length-M
discrete sine vectors are exactly orthogonal:

    sum_j sin(k*pi*x_j/L) * sin(m*pi*x_j/L) = (M+1)/2 * delta_km,  k,m <= M.

Consequently the coefficient<->grid transforms round-trip exactly, quadrature
with the uniform weight L/(M+1) integrates products of resolved modes
exactly, and projecting a pointwise cubic of a K-mode field back to the
first K modes is alias-free on a 2x-oversampled grid (aliases of modes up to
3K land strictly above mode K when M = 2K).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.fft

__all__ = [
    "SpectralField",
    "SineGrid",
    "eigenvalue",
    "eigenvalues",
    "sine_grid",
    "to_grid",
    "from_grid",
    "sobolev_norm_sq",
    "lebesgue_norm",
]


def eigenvalue(k: int, domain_length: float = math.pi) -> float:
    """Dirichlet eigenvalue alpha_k = (k*pi/L)**2 of -d^2/dx^2 on (0, L)."""
    if k < 1 or k != int(k):
        raise ValueError(f"mode index must be a positive integer, got {k}")
    if domain_length <= 0:
        raise ValueError(f"domain length must be positive, got {domain_length}")
    return (k * math.pi / domain_length) ** 2


def eigenvalues(n_modes: int, domain_length: float = math.pi) -> np.ndarray:
    """Array of the first n_modes Dirichlet eigenvalues."""
    if n_modes < 1:
        raise ValueError("n_modes must be >= 1")
    if domain_length <= 0:
        raise ValueError(f"domain length must be positive, got {domain_length}")
    k = np.arange(1, n_modes + 1, dtype=float)
    return (k * math.pi / domain_length) ** 2


@dataclass(frozen=True)
class SineGrid:
    """Collocation grid and transform matrices for a fixed (K, M, L).

    synth[k, j] = e_{k+1}(x_j) synthesizes grid values from coefficients;
    project = weight * synth.T analyzes grid values back to coefficients;
    synth_grad[k, j] = e'_{k+1}(x_j) synthesizes the spatial derivative.
    """

    n_modes: int
    grid_size: int
    domain_length: float
    nodes: np.ndarray
    weight: float
    synth: np.ndarray
    project: np.ndarray
    synth_grad: np.ndarray


@lru_cache(maxsize=None)
def sine_grid(n_modes: int, grid_size: int, domain_length: float) -> SineGrid:
    if grid_size < n_modes:
        raise ValueError("grid must resolve at least n_modes sine modes")
    L = float(domain_length)
    M = int(grid_size)
    K = int(n_modes)
    j = np.arange(1, M + 1)
    nodes = j * L / (M + 1)
    k = np.arange(1, K + 1)[:, None]
    amp = math.sqrt(2.0 / L)
    phase = k * np.pi * nodes[None, :] / L
    synth = amp * np.sin(phase)
    synth_grad = amp * (k * np.pi / L) * np.cos(phase)
    weight = L / (M + 1)
    project = weight * synth.T
    for arr in (nodes, synth, synth_grad, project):
        arr.setflags(write=False)
    return SineGrid(K, M, L, nodes, weight, synth, project, synth_grad)


def _as_coeffs(values) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1:
        raise ValueError(f"coefficient array must be 1-d, got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError("coefficient array must be non-empty")
    return arr


@dataclass(frozen=True)
class SpectralField:
    """A real field on (0, L) stored by its first K sine-basis coefficients."""

    coeffs: np.ndarray
    domain_length: float = math.pi

    def __post_init__(self):
        arr = _as_coeffs(self.coeffs).copy()
        if not np.all(np.isfinite(arr)):
            raise ValueError("field coefficients must be finite")
        if self.domain_length <= 0:
            raise ValueError("domain length must be positive")
        arr.setflags(write=False)
        object.__setattr__(self, "coeffs", arr)

    @property
    def n_modes(self) -> int:
        return self.coeffs.size

    def eigenvalues(self) -> np.ndarray:
        return eigenvalues(self.n_modes, self.domain_length)

    def sobolev_norm_sq(self, r: float) -> float:
        return sobolev_norm_sq(self, r)

    def lebesgue_norm(self, p: float, oversample: int = 2) -> float:
        return lebesgue_norm(self, p, oversample)

    def to_grid(self, oversample: int = 2, method: str = "direct") -> np.ndarray:
        return to_grid(self, oversample, method=method)

    def __add__(self, other: "SpectralField") -> "SpectralField":
        self._check_compatible(other)
        return SpectralField(self.coeffs + other.coeffs, self.domain_length)

    def __sub__(self, other: "SpectralField") -> "SpectralField":
        self._check_compatible(other)
        return SpectralField(self.coeffs - other.coeffs, self.domain_length)

    def __rmul__(self, scalar: float) -> "SpectralField":
        return SpectralField(scalar * self.coeffs, self.domain_length)

    def _check_compatible(self, other: "SpectralField"):
        if self.n_modes != other.n_modes or self.domain_length != other.domain_length:
            raise ValueError("fields live on different discretizations")


def sobolev_norm_sq(f: SpectralField, r: float) -> float:
    """Squared H^r norm: sum_k alpha_k^r * c_k^2 (negative r allowed)."""
    alphas = f.eigenvalues()
    return float(np.sum(alphas**r * f.coeffs**2))


def to_grid(f: SpectralField, oversample: int = 2, method: str = "direct") -> np.ndarray:
    """Field values at the M = oversample*K interior collocation points.

    Results feeding a pointwise nonlinearity of degree <= 3 need
    oversample >= 2 for the back-projection to stay alias-free.
    """
    if oversample < 1:
        raise ValueError("oversample must be >= 1")
    grid = sine_grid(f.n_modes, oversample * f.n_modes, f.domain_length)
    return synthesize(f.coeffs, grid, method=method)


def from_grid(values, domain_length: float, n_modes: int | None = None,
              method: str = "direct") -> SpectralField:
    """Project grid values (on the uniform interior grid) onto sine modes.

    The inverse of to_grid on the first n_modes modes; defaults to keeping
    every mode the grid resolves.
    """
    vals = np.asarray(values, dtype=float)
    if vals.ndim != 1:
        raise ValueError(f"grid values must be 1-d, got shape {vals.shape}")
    M = vals.size
    if n_modes is None:
        n_modes = M
    if n_modes > M:
        raise ValueError(f"cannot recover {n_modes} modes from {M} grid points")
    grid = sine_grid(n_modes, M, domain_length)
    return SpectralField(analyze(vals, grid, method=method), domain_length)


def synthesize(coeffs: np.ndarray, grid: SineGrid, method: str = "direct") -> np.ndarray:
    """Batched coefficients (..., K) -> grid values (..., M)."""
    if coeffs.shape[-1] != grid.n_modes:
        raise ValueError("coefficient count does not match the grid")
    if method == "direct":
        return coeffs @ grid.synth
    if method == "fft":
        # scipy DST-I: y_k = 2 sum_j x_j sin(pi (j+1)(k+1)/(N+1))
        pad = np.zeros(coeffs.shape[:-1] + (grid.grid_size,))
        pad[..., : grid.n_modes] = coeffs
        amp = math.sqrt(2.0 / grid.domain_length)
        return 0.5 * amp * scipy.fft.dst(pad, type=1, axis=-1)
    raise ValueError(f"unknown transform method {method!r}")


def analyze(values: np.ndarray, grid: SineGrid, method: str = "direct") -> np.ndarray:
    """Batched grid values (..., M) -> coefficients (..., K)."""
    if values.shape[-1] != grid.grid_size:
        raise ValueError("grid value count does not match the grid")
    if method == "direct":
        return values @ grid.project
    if method == "fft":
        amp = math.sqrt(2.0 / grid.domain_length)
        full = 0.5 * amp * grid.weight * scipy.fft.dst(values, type=1, axis=-1)
        return full[..., : grid.n_modes]
    raise ValueError(f"unknown transform method {method!r}")


def lebesgue_norm(f: SpectralField, p: float, oversample: int = 2) -> float:
    """L^p norm by quadrature on the collocation grid, p >= 1."""
    if p < 1:
        raise ValueError(f"lebesgue_norm requires p >= 1, got {p}")
    grid = sine_grid(f.n_modes, oversample * f.n_modes, f.domain_length)
    vals = synthesize(f.coeffs, grid)
    return float((grid.weight * np.sum(np.abs(vals) ** p)) ** (1.0 / p))
