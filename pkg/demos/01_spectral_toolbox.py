"""Spectral toolbox tour: the sine eigenbasis on an interval.

The Dirichlet Laplacian on (0, L) is diagonal in the basis
e_k(x) = sqrt(2/L) sin(k pi x / L) with eigenvalues alpha_k = (k pi / L)^2.
This script walks through the coefficient representation: exact
grid round trips, Sobolev and Lebesgue norms, and why a 2x-oversampled
collocation grid keeps cubic nonlinearities alias-free.

Run:  python3 demos/01_spectral_toolbox.py
"""

import math

import numpy as np

from ergowave.spectral import (
    SpectralField,
    eigenvalue,
    eigenvalues,
    from_grid,
    lebesgue_norm,
    sine_grid,
    sobolev_norm_sq,
    to_grid,
)

rng = np.random.default_rng(0)

print("== eigenvalues ==")
print("alpha_k on (0, pi):", [eigenvalue(k) for k in (1, 2, 3, 4)])
print("alpha_2 on (0, 1): ", eigenvalue(2, 1.0), "= 4 pi^2")

print("\n== exact round trip ==")
f = SpectralField(rng.standard_normal(16), math.pi)
g = to_grid(f, oversample=2)
back = from_grid(g, math.pi, 16)
print("max |coeff error| after grid round trip:",
      np.max(np.abs(back.coeffs - f.coeffs)))

print("\n== Parseval on the collocation grid ==")
grid = sine_grid(16, 32, math.pi)
print("modal  |f|_L2^2 =", np.sum(f.coeffs**2))
print("grid   |f|_L2^2 =", grid.weight * np.sum(g**2))

print("\n== Sobolev scale ==")
for r in (-1.0, 0.0, 1.0, 2.0):
    print(f"  |f|_H^{r:+.0f}^2 = {sobolev_norm_sq(f, r):10.4f}")

print("\n== Lebesgue norms by quadrature ==")
e1 = SpectralField(np.eye(16)[0], math.pi)
print("|e1|_L2 =", lebesgue_norm(e1, 2.0), "(orthonormality)")
print("|e1|_L4 =", lebesgue_norm(e1, 4.0), "= (3/(2 pi))^(1/4) =",
      (3 / (2 * math.pi)) ** 0.25)

print("\n== dealiased cubing ==")
cubed = from_grid(to_grid(e1, 2) ** 3, math.pi, 16)
print("coefficients of e1^3 (sin^3 x = (3 sin x - sin 3x)/4, rescaled):")
print("  mode 1:", cubed.coeffs[0], "= 3/(2 pi) =", 3 / (2 * math.pi))
print("  mode 3:", cubed.coeffs[2], "= -1/(2 pi) =", -1 / (2 * math.pi))
print("  all other modes:", np.max(np.abs(np.delete(cubed.coeffs, [0, 2]))))

try:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    xs = grid.nodes
    fig, ax = plt.subplots(1, 2, figsize=(9, 3.2))
    ax[0].plot(xs, g, lw=1)
    ax[0].set_title("random 16-mode field on the collocation grid")
    ax[1].semilogy(np.arange(1, 17), np.abs(cubed.coeffs) + 1e-18, "o")
    ax[1].set_title("|coefficients| of $e_1^3$ (alias-free)")
    fig.tight_layout()
    fig.savefig("demos/01_spectral_toolbox.png", dpi=120)
    print("\nwrote demos/01_spectral_toolbox.png")
except ImportError:
    pass
