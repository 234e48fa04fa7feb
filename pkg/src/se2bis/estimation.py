"""Single-pass debiased estimation of a bispectrum from noisy images.

With additive pixel noise of variance ``sigma2`` the per-image bispectrum is
biased: interpolation correlates the noise, so the noise-quadratic terms do
not vanish in expectation.  Writing ``U`` for the image-to-coefficients matrix
and ``s`` for the realized coefficient vector, the three correction terms for
a triplet ``(l1, l2, l)`` are

    K1(s) = sigma2 * sum_m s_{l,m} sum_{m1} C conj(U U^T)_{(l1,m1),(l2,m-m1)}
    K2(s) = sigma2 * sum_{m,m1} C conj(s_{l2,m-m1}) (U U^dag)_{(l,m),(l1,m1)}
    K3(s) = sigma2 * sum_{m,m1} C conj(s_{l1,m1}) (U U^dag)_{(l,m),(l2,m-m1)}

with ``C = C^{l,m}_{l1,m1,l2,m-m1}`` summed over the admissible range.  All
three are linear in ``(s, conj(s))`` and sparse, so they are precomputed as a
pair of sparse matrices.  Subtracting them per image makes the sample mean an
unbiased estimate of the clean projection's bispectrum.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np
import scipy.sparse as sp

from .bispectrum import BispectrumVector, bispectrum_batch, triplet_count
from .harmonics import num_coefficients
from .projection import ImageGrid, ProjectionOperator


@dataclass(frozen=True)
class DebiasOperators:
    """Noise-bias corrections as maps ``s -> lin @ s + conj_lin @ conj(s)``."""

    bandlimit: int
    sigma2: float
    lin: sp.csr_matrix
    conj_lin: sp.csr_matrix

    def apply(self, coeffs: np.ndarray) -> np.ndarray:
        """Total correction K1 + K2 + K3 for one coefficient vector or a batch."""
        return self.lin @ coeffs + self.conj_lin @ np.conj(coeffs)


def build_debias(op: ProjectionOperator, cg, sigma2: float) -> DebiasOperators:
    """Assemble the sparse correction operators for a given projection."""
    if sigma2 < 0:
        raise ValueError("noise variance must be nonnegative")
    if cg.bandlimit < op.bandlimit:
        raise ValueError("coefficient table bandlimit too small for the operator")
    n = num_coefficients(op.bandlimit)
    n_trip = triplet_count(op.bandlimit)
    if sigma2 == 0.0:
        empty = sp.csr_matrix((n_trip, n), dtype=complex)
        return DebiasOperators(op.bandlimit, 0.0, empty, empty.copy())
    plan = cg.evaluation_plan(op.bandlimit)
    u = op.matrix
    uut = u @ u.T
    uud = u @ np.conj(u.T)
    shape = (n_trip, n)
    k1 = sp.coo_matrix(
        (sigma2 * plan.cg * np.conj(uut[plan.idx_l1, plan.idx_l2]), (plan.flat_triplet, plan.idx_l)),
        shape=shape,
    )
    k2 = sp.coo_matrix(
        (sigma2 * plan.cg * uud[plan.idx_l, plan.idx_l1], (plan.flat_triplet, plan.idx_l2)),
        shape=shape,
    )
    k3 = sp.coo_matrix(
        (sigma2 * plan.cg * uud[plan.idx_l, plan.idx_l2], (plan.flat_triplet, plan.idx_l1)),
        shape=shape,
    )
    return DebiasOperators(op.bandlimit, float(sigma2), k1.tocsr(), (k2 + k3).tocsr())


class BispectrumAccumulator:
    """Running mean of per-image debiased bispectra; partial sums merge exactly.

    Feed images (singly or in batches) with :meth:`update`; combine
    accumulators from disjoint parts of a stream with :meth:`merge`.  The
    result is the mean of ``b(U img) - (K1 + K2 + K3)(U img)`` over everything
    seen.
    """

    def __init__(self, op: ProjectionOperator, cg, sigma2: float, batch_size: int = 64):
        self.op = op
        self.cg = cg
        self.debias = build_debias(op, cg, sigma2)
        self.batch_size = int(batch_size)
        self._sum = np.zeros(triplet_count(op.bandlimit), dtype=complex)
        self.count = 0

    def update(self, images) -> "BispectrumAccumulator":
        """Add one image, an (n, n) array, or a (B, n, n) batch."""
        if isinstance(images, ImageGrid):
            arr = images.values[None]
        else:
            arr = np.asarray(images, dtype=float)
            if arr.ndim == 2:
                arr = arr[None]
        for start in range(0, arr.shape[0], self.batch_size):
            chunk = arr[start : start + self.batch_size]
            coeffs = self.op.apply(chunk)
            values = bispectrum_batch(coeffs, self.op.bandlimit, self.cg)
            values -= self.debias.apply(coeffs)
            self._sum += values.sum(axis=1)
            self.count += chunk.shape[0]
        return self

    def merge(self, other: "BispectrumAccumulator") -> "BispectrumAccumulator":
        if other.op is not self.op or other.cg is not self.cg:
            raise ValueError("can only merge accumulators built on the same operators")
        self._sum += other._sum
        self.count += other.count
        return self

    def result(self) -> BispectrumVector:
        if self.count == 0:
            raise ValueError("no images accumulated")
        return BispectrumVector(self.op.bandlimit, self._sum / self.count)


def estimate_bispectrum(
    images: Iterable, op: ProjectionOperator, cg, sigma2: float, batch_size: int = 64
) -> BispectrumVector:
    """Debiased mean bispectrum of an image stream in a single pass."""
    acc = BispectrumAccumulator(op, cg, sigma2, batch_size=batch_size)
    for img in images:
        acc.update(img)
    return acc.result()
