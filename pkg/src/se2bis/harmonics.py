"""Spherical harmonics, quadrature rules, and coefficient estimation.

Conventions used throughout the package:

* ``Y_{l,m}(theta, phi) = sqrt((2l+1)/(4 pi) (l-m)!/(l+m)!) P_{l,m}(cos theta) e^{i m phi}``
  with the Condon-Shortley phase carried by ``P_{l,m}``.  The family is
  orthonormal for the surface measure of total mass ``4 pi``.
* Coefficient vectors are ordered lexicographically: degree ``l`` ascending,
  order ``m`` ascending within a degree, so ``(l, m)`` lives at index
  ``l*l + l + m``.
* Quadrature weights integrate the surface measure (they sum to ``4 pi``); an
  equal-weight point set of strength ``t`` carries weight ``4 pi / N`` per
  point so that ``sum(w * f(x))`` reproduces the integral for any spherical
  polynomial of degree <= t.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .groups import spherical_coords

FOUR_PI = 4.0 * math.pi


def num_coefficients(bandlimit: int) -> int:
    return (bandlimit + 1) ** 2


def lm_index(l: int, m: int) -> int:
    """Position of (l, m) in the lexicographic coefficient layout."""
    return l * l + l + m


def degrees(bandlimit: int):
    """Array of the degree ``l`` of every coefficient slot."""
    out = np.empty(num_coefficients(bandlimit), dtype=np.int64)
    for l in range(bandlimit + 1):
        out[l * l : (l + 1) ** 2] = l
    return out


@dataclass(frozen=True)
class ShCoefficients:
    """Spherical-harmonic coefficients of a bandlimited function.

    ``coeffs`` has length ``(bandlimit + 1)**2``, complex, lexicographic in
    (l, m).  Treated as immutable once constructed.
    """

    bandlimit: int
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=complex).reshape(-1)
        if c.shape[0] != num_coefficients(self.bandlimit):
            raise ValueError(
                f"expected {num_coefficients(self.bandlimit)} coefficients for "
                f"bandlimit {self.bandlimit}, got {c.shape[0]}"
            )
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def zeros(cls, bandlimit: int) -> "ShCoefficients":
        return cls(bandlimit, np.zeros(num_coefficients(bandlimit), dtype=complex))

    def get(self, l: int, m: int) -> complex:
        return self.coeffs[lm_index(l, m)]

    def degree_block(self, l: int) -> np.ndarray:
        return self.coeffs[l * l : (l + 1) ** 2]

    def norm(self) -> float:
        return float(np.linalg.norm(self.coeffs))

    def is_real_valued(self, tol: float = 1e-10) -> bool:
        """True when the coefficients represent a real-valued function.

        Checks ``conj(f_{l,m}) == (-1)^m f_{l,-m}`` within ``tol`` (absolute,
        relative to the largest coefficient).
        """
        scale = max(1.0, float(np.max(np.abs(self.coeffs))))
        for l in range(self.bandlimit + 1):
            block = self.degree_block(l)
            m = np.arange(-l, l + 1)
            mirrored = ((-1.0) ** m) * block[::-1]
            if np.max(np.abs(np.conj(block) - mirrored)) > tol * scale:
                return False
        return True


def symmetrize_real(f: ShCoefficients) -> ShCoefficients:
    """Orthogonal projection onto the coefficients of real-valued functions."""
    out = f.coeffs.copy()
    for l in range(f.bandlimit + 1):
        block = out[l * l : (l + 1) ** 2]
        m = np.arange(-l, l + 1)
        mirrored = ((-1.0) ** m) * np.conj(block[::-1])
        block[:] = 0.5 * (block + mirrored)
    return ShCoefficients(f.bandlimit, out)


def random_real_coefficients(bandlimit: int, rng: np.random.Generator) -> ShCoefficients:
    """Coefficients of a random real-valued function with unit power per degree.

    For each degree the real degrees of freedom (f_{l,0} real, and real and
    imaginary parts of f_{l,m} for m > 0) are drawn i.i.d. Gaussian, the
    negative orders are mirrored to satisfy the real-function symmetry, and the
    degree block is scaled to ``sum_m |f_{l,m}|^2 = 1``.
    """
    coeffs = np.zeros(num_coefficients(bandlimit), dtype=complex)
    for l in range(bandlimit + 1):
        block = np.zeros(2 * l + 1, dtype=complex)
        block[l] = rng.standard_normal()
        for m in range(1, l + 1):
            block[l + m] = rng.standard_normal() + 1j * rng.standard_normal()
            block[l - m] = (-1.0) ** m * np.conj(block[l + m])
        block /= np.linalg.norm(block)
        coeffs[l * l : (l + 1) ** 2] = block
    return ShCoefficients(bandlimit, coeffs)


def assoc_legendre(l: int, m: int, x):
    """Associated Legendre function ``P_{l,m}`` with Condon-Shortley phase.

    Seeds ``P_{m,m}(x) = (-1)^m (2m-1)!! (1-x^2)^{m/2}`` and climbs the degree
    recurrence ``(l-m) P_{l,m} = (2l-1) x P_{l-1,m} - (l+m-1) P_{l-2,m}``.
    """
    if not (0 <= m <= l):
        raise ValueError(f"require 0 <= m <= l, got l={l}, m={m}")
    x = np.asarray(x, dtype=float)
    if np.any(np.abs(x) > 1):
        raise ValueError("argument must lie in [-1, 1]")
    pmm = np.ones_like(x)
    if m > 0:
        s = np.sqrt((1.0 - x) * (1.0 + x))
        fact = 1.0
        for _ in range(m):
            pmm = -pmm * fact * s
            fact += 2.0
    if l == m:
        return pmm if pmm.ndim else float(pmm)
    pm1 = x * (2 * m + 1) * pmm
    if l == m + 1:
        return pm1 if pm1.ndim else float(pm1)
    for ll in range(m + 2, l + 1):
        pm1, pmm = (x * (2 * ll - 1) * pm1 - (ll + m - 1) * pmm) / (ll - m), pm1
    return pm1 if pm1.ndim else float(pm1)


def _norm_legendre_table(bandlimit: int, cos_theta, sin_theta):
    """Orthonormalized P_{l,m} for all 0 <= m <= l <= bandlimit.

    Returns an array of shape (n_pairs, npts) where pairs are ordered
    (l, m) with m major: for each m, degrees m..bandlimit.  Normalization is
    such that ``Y_{l,m} = table * exp(i m phi)``.
    """
    x = np.asarray(cos_theta, dtype=float)
    s = np.asarray(sin_theta, dtype=float)
    npts = x.shape[0]
    L = bandlimit
    cols = {}
    pmm = np.full(npts, 1.0 / math.sqrt(FOUR_PI))
    for m in range(L + 1):
        if m > 0:
            pmm = -math.sqrt((2 * m + 1) / (2.0 * m)) * s * pmm
        cols[(m, m)] = pmm
        if m + 1 <= L:
            p_prev2 = pmm
            p_prev1 = math.sqrt(2 * m + 3) * x * pmm
            cols[(m + 1, m)] = p_prev1
            for l in range(m + 2, L + 1):
                a = math.sqrt((4.0 * l * l - 1.0) / (l * l - m * m))
                b = math.sqrt(((l - 1.0) ** 2 - m * m) / (4.0 * (l - 1.0) ** 2 - 1.0))
                p_next = a * (x * p_prev1 - b * p_prev2)
                cols[(l, m)] = p_next
                p_prev2, p_prev1 = p_prev1, p_next
    return cols


def spherical_harmonic_matrix(bandlimit: int, theta, phi) -> np.ndarray:
    """Matrix of ``Y_{l,m}`` values: rows are points, columns lexicographic (l, m)."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    phi = np.atleast_1d(np.asarray(phi, dtype=float))
    x = np.cos(theta)
    s = np.sin(theta)
    cols = _norm_legendre_table(bandlimit, x, s)
    npts = theta.shape[0]
    out = np.empty((npts, num_coefficients(bandlimit)), dtype=complex)
    # e^{i m phi} for m = 0..L, built once
    expmphi = np.empty((bandlimit + 1, npts), dtype=complex)
    expmphi[0] = 1.0
    if bandlimit >= 1:
        e1 = np.exp(1j * phi)
        for m in range(1, bandlimit + 1):
            expmphi[m] = expmphi[m - 1] * e1
    for l in range(bandlimit + 1):
        for m in range(0, l + 1):
            col = cols[(l, m)] * expmphi[m]
            out[:, lm_index(l, m)] = col
            if m > 0:
                out[:, lm_index(l, -m)] = (-1.0) ** m * np.conj(col)
    return out


def ylm(l: int, m: int, theta, phi):
    """Single normalized spherical harmonic ``Y_{l,m}(theta, phi)``."""
    if l < 0 or abs(m) > l:
        raise ValueError(f"invalid indices l={l}, m={m}")
    theta_arr = np.atleast_1d(np.asarray(theta, dtype=float))
    phi_arr = np.atleast_1d(np.asarray(phi, dtype=float))
    cols = _norm_legendre_table(l, np.cos(theta_arr), np.sin(theta_arr))
    val = cols[(l, abs(m))] * np.exp(1j * abs(m) * phi_arr)
    if m < 0:
        val = (-1.0) ** m * np.conj(val)
    return val if np.ndim(theta) or np.ndim(phi) else complex(val[0])


@dataclass(frozen=True)
class SphericalDesign:
    """A quadrature rule on the sphere.

    ``points`` are unit vectors, ``weights`` positive reals summing to
    ``4 pi``, and ``strength`` the largest degree integrated exactly.
    """

    points: np.ndarray
    strength: int
    weights: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3)
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if pts.shape[0] != w.shape[0]:
            raise ValueError("points and weights disagree in length")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    def __len__(self):
        return self.points.shape[0]

    def angles(self):
        return spherical_coords(self.points)

    def subset(self, mask) -> "SphericalDesign":
        """Restriction to a subset of points; weights are kept as-is."""
        return SphericalDesign(self.points[mask], self.strength, self.weights[mask])


def product_quadrature(bandlimit: int) -> SphericalDesign:
    """Gauss-Legendre x equiangular product rule of strength ``2 * bandlimit``.

    ``bandlimit + 1`` Gauss-Legendre nodes in cos(theta) and ``2*bandlimit + 1``
    equally spaced azimuths integrate every spherical harmonic of degree up to
    ``2 * bandlimit`` exactly, so the rule can stand in for an equal-weight
    design of that strength.
    """
    if bandlimit < 0:
        raise ValueError("bandlimit must be nonnegative")
    nodes, gl_weights = np.polynomial.legendre.leggauss(bandlimit + 1)
    n_phi = 2 * bandlimit + 1
    phis = 2.0 * math.pi * np.arange(n_phi) / n_phi
    theta = np.arccos(nodes)
    st = np.sin(theta)
    pts = np.empty((bandlimit + 1, n_phi, 3))
    pts[..., 0] = st[:, None] * np.cos(phis)[None, :]
    pts[..., 1] = st[:, None] * np.sin(phis)[None, :]
    pts[..., 2] = nodes[:, None]
    weights = np.broadcast_to(gl_weights[:, None] * (2.0 * math.pi / n_phi), pts.shape[:2])
    return SphericalDesign(pts.reshape(-1, 3), 2 * bandlimit, weights.reshape(-1).copy())


class DesignValidationError(ValueError):
    """A claimed design strength failed the quadrature check."""

    def __init__(self, worst_degree: int, worst_residual: float):
        self.worst_degree = worst_degree
        self.worst_residual = worst_residual
        super().__init__(
            f"design fails its strength claim: degree {worst_degree} harmonic "
            f"integrates to {worst_residual:.3e} (tolerance 1e-8)"
        )


def load_design(path, strength: int, validate: bool = True, max_check_degree: int = 20) -> SphericalDesign:
    """Read a design from a text file of ``x y z`` lines ('#' comments allowed).

    Points are normalized to the unit sphere and given equal weights
    ``4 pi / N``.  When ``validate`` is true the quadrature identity is checked
    for every harmonic of degree 1..min(strength, max_check_degree).
    """
    import warnings

    path = Path(path)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")  # empty files warn before we raise
            raw = np.loadtxt(path, comments="#", ndmin=2)
    except Exception as exc:
        raise ValueError(f"cannot parse design file {path}: {exc}") from exc
    if raw.size == 0:
        raise ValueError(f"design file {path} contains no points")
    if raw.shape[1] != 3:
        raise ValueError(f"design file {path} must have three columns, got {raw.shape[1]}")
    norms = np.linalg.norm(raw, axis=1)
    if np.any(norms == 0):
        raise ValueError(f"design file {path} contains a zero point")
    pts = raw / norms[:, None]
    design = SphericalDesign(pts, int(strength), np.full(pts.shape[0], FOUR_PI / pts.shape[0]))
    if validate:
        validate_design(design, max_check_degree=max_check_degree)
    return design


def validate_design(design: SphericalDesign, tol: float = 1e-8, max_check_degree: int = 20):
    """Check the quadrature identity on harmonics of degree 1..min(t, max)."""
    check_l = min(design.strength, max_check_degree)
    if check_l < 1:
        return
    theta, phi = design.angles()
    y = spherical_harmonic_matrix(check_l, theta, phi)
    integrals = design.weights @ y
    worst_degree, worst_residual = 0, 0.0
    for l in range(1, check_l + 1):
        resid = float(np.max(np.abs(integrals[l * l : (l + 1) ** 2])))
        if resid > worst_residual:
            worst_degree, worst_residual = l, resid
    if worst_residual > tol:
        raise DesignValidationError(worst_degree, worst_residual)


def design_matrix(bandlimit: int, design: SphericalDesign) -> np.ndarray:
    """Harmonic values at the design points: rows points, columns (l, m)."""
    theta, phi = design.angles()
    return spherical_harmonic_matrix(bandlimit, theta, phi)


def estimate_coefficients(
    values,
    design: SphericalDesign,
    bandlimit: int,
    method: str = "quadrature",
    ridge: float = 1e-10,
    matrix: np.ndarray | None = None,
):
    """Coefficients of a function from its values at quadrature points.

    ``method='quadrature'`` evaluates the weighted adjoint
    ``Y^dag (w * values)``, exact for bandlimited inputs when the rule has
    strength >= 2*bandlimit.  ``method='ridge'`` solves the regularized least
    squares ``min |Y c - values|^2 + ridge |c|^2``, a fallback for rules whose
    plain estimate is ill-conditioned at large bandlimits.

    ``values`` may be a vector or a (npoints, nbatch) matrix.
    """
    y = design_matrix(bandlimit, design) if matrix is None else matrix
    v = np.asarray(values)
    if method == "quadrature":
        if v.ndim == 1:
            return y.conj().T @ (design.weights * v)
        return y.conj().T @ (design.weights[:, None] * v)
    if method == "ridge":
        gram = y.conj().T @ y
        gram[np.diag_indices_from(gram)] += ridge
        return np.linalg.solve(gram, y.conj().T @ v)
    raise ValueError(f"unknown method {method!r}")


def synthesize(f: ShCoefficients, theta, phi, matrix: np.ndarray | None = None):
    """Evaluate a coefficient vector at the given sphere angles."""
    y = spherical_harmonic_matrix(f.bandlimit, theta, phi) if matrix is None else matrix
    return y @ f.coeffs


def power_spectrum(f: ShCoefficients) -> np.ndarray:
    """Per-degree normalized power ``P[l] = sum_m |f_{l,m}|^2 / (2l + 1)``."""
    out = np.empty(f.bandlimit + 1)
    for l in range(f.bandlimit + 1):
        block = f.degree_block(l)
        out[l] = np.sum(np.abs(block) ** 2) / (2 * l + 1)
    return out
