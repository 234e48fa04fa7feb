"""Bispectrum inversion by damped least squares, and brute-force alignment.

Inversion solves ``min_g |b(g) - b_target|^2`` over stacked real and imaginary
parts of the coefficients with a Levenberg-Marquardt iteration driven by the
analytic bispectrum Jacobian.  The solution is only determined up to a 3D
rotation, so a separate alignment step searches a deterministic, increasingly
dense rotation sequence for the element maximizing correlation with a
reference, rotating candidates by evaluating them on a quadrature rule and
re-estimating coefficients at the rotated points (a rotated rule keeps its
strength, so the re-estimate is exact for bandlimited inputs).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.optimize

from .bispectrum import BispectrumVector, bispectrum, bispectrum_jacobian
from .harmonics import (
    ShCoefficients,
    SphericalDesign,
    estimate_coefficients,
    num_coefficients,
    spherical_harmonic_matrix,
    synthesize,
)
from .groups import spherical_coords


@dataclass(frozen=True)
class InversionOptions:
    max_iterations: int = 500
    gradient_tol: float = 1e-10
    step_tol: float = 1e-12
    damping_init: float = 1e-3
    damping_factor: float = 10.0

    def __post_init__(self):
        if self.gradient_tol <= 0 or self.step_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.damping_init <= 0 or self.damping_factor <= 1:
            raise ValueError("damping parameters must be positive (factor > 1)")


@dataclass
class InversionResult:
    coefficients: ShCoefficients
    residual_norm: float
    iterations: int
    converged: bool
    gradient_norm: float
    residual_history: list = field(default_factory=list)


def _stack_real(values: np.ndarray) -> np.ndarray:
    return np.concatenate([values.real, values.imag])


def invert_bispectrum(
    target: BispectrumVector,
    init: ShCoefficients,
    cg,
    opts: InversionOptions | None = None,
) -> InversionResult:
    """Local minimizer of the stacked-real bispectrum residual.

    Levenberg-Marquardt with multiplicative damping on the normal-equations
    diagonal; accepted steps never increase the residual.  Non-convergence
    within the iteration budget returns the best iterate flagged
    ``converged=False``.
    """
    if init.bandlimit != target.bandlimit:
        raise ValueError("initializer and target bandlimits differ")
    opts = opts or InversionOptions()
    n = num_coefficients(init.bandlimit)
    x = np.concatenate([init.coeffs.real, init.coeffs.imag])
    target_stacked = _stack_real(target.values)

    def to_coeffs(vec):
        return ShCoefficients(init.bandlimit, vec[:n] + 1j * vec[n:])

    def residual(vec):
        return _stack_real(bispectrum(to_coeffs(vec), cg).values) - target_stacked

    def jacobian(vec):
        jc = bispectrum_jacobian(to_coeffs(vec), cg).toarray()
        return np.vstack([jc.real, jc.imag])

    r = residual(x)
    cost = float(r @ r)
    history = [math.sqrt(cost)]
    damping = opts.damping_init
    gradient_norm = math.inf
    converged = False
    iterations = 0

    for _ in range(opts.max_iterations):
        j = jacobian(x)
        grad = j.T @ r
        gradient_norm = float(np.max(np.abs(grad)))
        if gradient_norm < opts.gradient_tol:
            converged = True
            break
        jtj = j.T @ j
        diag = np.diag(jtj).copy()
        diag[diag <= 0] = max(diag.max(), 1.0) * 1e-12
        accepted = False
        while damping < 1e14:
            try:
                step = np.linalg.solve(jtj + damping * np.diag(diag), -grad)
            except np.linalg.LinAlgError:
                damping *= opts.damping_factor
                continue
            x_new = x + step
            r_new = residual(x_new)
            cost_new = float(r_new @ r_new)
            if cost_new < cost or cost_new == 0.0:
                accepted = True
                break
            damping *= opts.damping_factor
        if not accepted:
            break
        iterations += 1
        rel_step = np.linalg.norm(step) / max(np.linalg.norm(x), 1e-300)
        x, r, cost = x_new, r_new, cost_new
        history.append(math.sqrt(cost))
        damping = max(damping / opts.damping_factor, 1e-300)
        if rel_step < opts.step_tol or cost == 0.0:
            converged = True
            break

    return InversionResult(
        coefficients=to_coeffs(x),
        residual_norm=math.sqrt(cost),
        iterations=iterations,
        converged=converged,
        gradient_norm=gradient_norm,
        residual_history=history,
    )


@dataclass(frozen=True)
class RotationSequence:
    """A deterministic rotation list; prefixes of the same stream nest."""

    rotations: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotations, dtype=float)
        if r.ndim != 3 or r.shape[1:] != (3, 3):
            raise ValueError("rotations must have shape (M, 3, 3)")
        object.__setattr__(self, "rotations", r)

    def __len__(self):
        return self.rotations.shape[0]

    def __getitem__(self, i):
        return self.rotations[i]


def _fibonacci_sphere(count: int) -> np.ndarray:
    i = np.arange(count)
    z = 1.0 - (2.0 * i + 1.0) / count
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    golden = math.pi * (3.0 - math.sqrt(5.0))
    phi = golden * i
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=-1)


def _rotation_to_axis(u) -> np.ndarray:
    """A rotation mapping the z-axis onto the unit vector ``u``."""
    z = np.array([0.0, 0.0, 1.0])
    c = float(u[2])
    if c > 1.0 - 1e-14:
        return np.eye(3)
    if c < -1.0 + 1e-14:
        return np.diag([1.0, -1.0, -1.0])
    axis = np.cross(z, u)
    s = np.linalg.norm(axis)
    axis = axis / s
    k = np.array(
        [
            [0.0, -axis[2], axis[1]],
            [axis[2], 0.0, -axis[0]],
            [-axis[1], axis[0], 0.0],
        ]
    )
    return np.eye(3) + s * k + (1.0 - c) * (k @ k)


def _rot_z(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rotation_sequence(count: int) -> RotationSequence:
    """First ``count`` elements of a layered rotation grid.

    Element 0 is the identity.  Subsequent elements come in layers indexed by
    k = 0, 1, ...: a Fibonacci lattice of ``12 * 4^k`` axis directions crossed
    with ``6 * 2^k`` evenly spaced spin angles (72 rotations in the base
    layer, 8x more per refinement, halving the cell size in every coordinate).
    Prefixes nest, so the covering radius is nonincreasing in ``count``.
    """
    if count < 1:
        raise ValueError("sequence length must be >= 1")
    out = [np.eye(3)]
    layer = 0
    while len(out) < count:
        n_axis = 12 * 4**layer
        n_spin = 6 * 2**layer
        axes = _fibonacci_sphere(n_axis)
        spins = 2.0 * math.pi * np.arange(n_spin) / n_spin
        for u in axes:
            a = _rotation_to_axis(u)
            for psi in spins:
                out.append(a @ _rot_z(psi))
                if len(out) == count:
                    break
            if len(out) == count:
                break
        layer += 1
    return RotationSequence(np.stack(out))


def rotate_shc(f: ShCoefficients, rotation, quad: SphericalDesign) -> ShCoefficients:
    """Coefficients of the rotated function ``s -> f(R^T s)``.

    Evaluates ``f`` on the quadrature points, moves the points by ``R`` (the
    moved rule has the same strength), and re-estimates coefficients there.
    """
    if quad.strength < 2 * f.bandlimit:
        warnings.warn(
            f"quadrature strength {quad.strength} < 2 x bandlimit {f.bandlimit}; "
            "rotated coefficients will be approximate",
            stacklevel=2,
        )
    theta, phi = quad.angles()
    values = synthesize(f, theta, phi)
    rotated = SphericalDesign(quad.points @ np.asarray(rotation).T, quad.strength, quad.weights)
    return ShCoefficients(
        f.bandlimit, estimate_coefficients(values, rotated, f.bandlimit)
    )


def correlation(f: ShCoefficients, g: ShCoefficients) -> float:
    """Normalized real correlation ``Re <f, g> / (|f| |g|)`` of coefficients."""
    if f.bandlimit != g.bandlimit:
        raise ValueError("coefficient bandlimits differ")
    nf, ng = f.norm(), g.norm()
    if nf == 0 or ng == 0:
        raise ValueError("correlation undefined for zero coefficients")
    return float(np.real(np.sum(f.coeffs * np.conj(g.coeffs))) / (nf * ng))


@dataclass(frozen=True)
class AlignmentResult:
    rotation: np.ndarray
    coefficients: ShCoefficients
    correlation: float
    index: int


def align(
    est: ShCoefficients,
    ref: ShCoefficients,
    seq: RotationSequence,
    quad: SphericalDesign,
) -> AlignmentResult:
    """Best sequence element by correlation against the reference.

    Ties keep the earliest element.  Equivalent to maximizing
    ``correlation(rotate_shc(est, R), ref)`` but evaluates ``est`` on the
    quadrature once and rebuilds only the harmonic matrix per rotation.
    """
    if est.bandlimit != ref.bandlimit:
        raise ValueError("coefficient bandlimits differ")
    theta, phi = quad.angles()
    values = synthesize(est, theta, phi)
    weighted = quad.weights * values
    ref_conj = np.conj(ref.coeffs)
    ref_norm = ref.norm()
    best = (-math.inf, -1, None)
    for i in range(len(seq)):
        pts = quad.points @ seq[i].T
        th, ph = spherical_coords(pts)
        y = spherical_harmonic_matrix(est.bandlimit, th, ph)
        coeffs = y.conj().T @ weighted
        corr = float(
            np.real(np.sum(coeffs * ref_conj))
            / max(np.linalg.norm(coeffs) * ref_norm, 1e-300)
        )
        if corr > best[0]:
            best = (corr, i, coeffs)
    corr, idx, coeffs = best
    return AlignmentResult(
        rotation=seq[idx].copy(),
        coefficients=ShCoefficients(est.bandlimit, coeffs),
        correlation=corr,
        index=idx,
    )


def refine_alignment(
    est: ShCoefficients,
    ref: ShCoefficients,
    rotation,
    quad: SphericalDesign,
    max_evals: int = 300,
) -> AlignmentResult:
    """Polish a brute-force alignment by a local search over axis-angle offsets.

    The rotation grid quantizes alignment to its covering radius; a short
    derivative-free descent around the selected element removes that floor.
    """
    base = np.asarray(rotation, dtype=float)

    def rot_from(v):
        angle = np.linalg.norm(v)
        if angle < 1e-300:
            return base
        axis = v / angle
        k = np.array(
            [
                [0.0, -axis[2], axis[1]],
                [axis[2], 0.0, -axis[0]],
                [-axis[1], axis[0], 0.0],
            ]
        )
        delta = np.eye(3) + math.sin(angle) * k + (1.0 - math.cos(angle)) * (k @ k)
        return delta @ base

    def objective(v):
        rotated = rotate_shc(est, rot_from(v), quad)
        return -correlation(rotated, ref)

    res = scipy.optimize.minimize(
        objective,
        np.zeros(3),
        method="Nelder-Mead",
        options={"maxfev": max_evals, "xatol": 1e-6, "fatol": 1e-12},
    )
    best_rot = rot_from(res.x)
    coeffs = rotate_shc(est, best_rot, quad)
    return AlignmentResult(
        rotation=best_rot,
        coefficients=coeffs,
        correlation=correlation(coeffs, ref),
        index=-1,
    )
