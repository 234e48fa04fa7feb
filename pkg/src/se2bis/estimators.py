"""Scikit-learn style transformers exposing the invariant representations.

These wrap the numerical pipeline so it composes with the usual ecosystem
(pipelines, neighbor searches, cross-validation): ``fit`` precomputes the
geometry-dependent operators from the image shape, ``transform`` maps a stack
of images to invariant feature rows.  Features are real-valued (complex parts
stacked), so Euclidean distances on them equal the invariant distances used
by the classification experiments.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .bispectrum import bispectrum_batch, triplet_count
from .classify import rotational_bispectrum, steerable_expand
from .clebsch import build_table
from .estimation import build_debias
from .harmonics import load_design, product_quadrature
from .projection import ImageGrid, build_projection_operator


def validate_images(x, n: int | None = None) -> np.ndarray:
    """Coerce input to a float (n_images, n, n) stack of odd-sized images."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3 or arr.shape[1] != arr.shape[2]:
        raise ValueError(f"expected images of shape (n_images, n, n), got {arr.shape}")
    size = arr.shape[1]
    if size < 3 or size % 2 == 0:
        raise ValueError(f"image side must be odd and >= 3, got {size}")
    if n is not None and size != n:
        raise ValueError(f"images have side {size}, expected {n}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("images contain non-finite values")
    return arr


class SphericalBispectrumFeatures(BaseEstimator, TransformerMixin):
    """Rotation/translation-invariant features via the spherical bispectrum.

    Each image is projected onto the sphere with scaling ``scaling`` at
    bandlimit ``bandlimit`` and its bispectrum vector is computed; with
    ``noise_variance > 0`` the per-image noise-bias correction is subtracted.
    Output rows stack real and imaginary parts.

    Parameters follow scikit-learn conventions; ``fit`` only inspects the
    image shape and precomputes operators.
    """

    def __init__(
        self,
        bandlimit: int = 16,
        scaling: float = 1.0,
        noise_variance: float = 0.0,
        design_path: str | None = None,
        design_strength: int | None = None,
        batch_size: int = 32,
    ):
        self.bandlimit = bandlimit
        self.scaling = scaling
        self.noise_variance = noise_variance
        self.design_path = design_path
        self.design_strength = design_strength
        self.batch_size = batch_size

    def _quadrature(self):
        if self.design_path is not None:
            if self.design_strength is None:
                raise ValueError("design_strength is required with design_path")
            return load_design(self.design_path, self.design_strength)
        return product_quadrature(self.bandlimit)

    def fit(self, X, y=None):
        images = validate_images(X)
        self.n_ = images.shape[1]
        quad = self._quadrature()
        self.operator_ = build_projection_operator(
            self.bandlimit, quad, self.scaling, self.n_
        )
        self.cg_ = build_table(self.bandlimit)
        self.debias_ = build_debias(self.operator_, self.cg_, self.noise_variance)
        self.n_features_out_ = 2 * triplet_count(self.bandlimit)
        return self

    def transform(self, X) -> np.ndarray:
        if not hasattr(self, "operator_"):
            raise NotFittedError("call fit before transform")
        images = validate_images(X, self.n_)
        rows = np.empty((images.shape[0], self.n_features_out_))
        for start in range(0, images.shape[0], self.batch_size):
            chunk = images[start : start + self.batch_size]
            coeffs = self.operator_.apply(chunk)
            values = bispectrum_batch(coeffs, self.bandlimit, self.cg_)
            if self.noise_variance > 0:
                values = values - self.debias_.apply(coeffs)
            rows[start : start + chunk.shape[0]] = np.concatenate(
                [values.real, values.imag], axis=0
            ).T
        return rows


class RotationalBispectrumFeatures(BaseEstimator, TransformerMixin):
    """Rotation-only invariant features: reduced steerable bispectra.

    Images are expanded on concentric rings (Fourier in angle), the exact
    rotation-invariant triple products are formed, and ``fit`` learns a
    randomized low-rank basis of those long vectors; ``transform`` projects
    onto it, yielding ``reduced_dim`` features per image.
    """

    def __init__(
        self,
        k_max: int = 8,
        n_rings: int = 12,
        reduced_dim: int = 200,
        oversample: int = 10,
        random_state: int = 0,
    ):
        self.k_max = k_max
        self.n_rings = n_rings
        self.reduced_dim = reduced_dim
        self.oversample = oversample
        self.random_state = random_state

    def _column(self, values: np.ndarray) -> np.ndarray:
        b = rotational_bispectrum(
            steerable_expand(ImageGrid(values), self.k_max, self.n_rings)
        )
        return np.concatenate([b.real, b.imag])

    def fit(self, X, y=None):
        self.fit_transform(X)
        return self

    def fit_transform(self, X, y=None) -> np.ndarray:
        images = validate_images(X)
        self.n_ = images.shape[1]
        rng = np.random.default_rng(self.random_state)
        k = self.reduced_dim + self.oversample

        sketch = None
        for v in images:
            col = self._column(v)
            if sketch is None:
                if self.reduced_dim > col.shape[0]:
                    raise ValueError("reduced_dim exceeds the representation size")
                sketch = np.zeros((col.shape[0], k))
            sketch += np.outer(col, rng.standard_normal(k))
        if sketch is None:
            raise ValueError("empty image stack")
        q0, _ = np.linalg.qr(sketch)
        y1 = np.zeros_like(q0)
        for v in images:
            col = self._column(v)
            y1 += np.outer(col, col @ q0)
        q1, _ = np.linalg.qr(y1)

        proj = np.empty((images.shape[0], k))
        for j, v in enumerate(images):
            proj[j] = self._column(v) @ q1
        _, _, vt = np.linalg.svd(proj, full_matrices=False)
        self.components_ = q1 @ vt[: self.reduced_dim].T  # (dim, reduced_dim)
        self.n_features_out_ = self.reduced_dim
        return proj @ vt[: self.reduced_dim].T

    def transform(self, X) -> np.ndarray:
        if not hasattr(self, "components_"):
            raise NotFittedError("call fit before transform")
        images = validate_images(X, self.n_)
        out = np.empty((images.shape[0], self.reduced_dim))
        for j, v in enumerate(images):
            out[j] = self._column(v) @ self.components_
        return out
