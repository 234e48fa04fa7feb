"""The spherical bispectrum: triplet enumeration, evaluation, and Jacobian.

For a bandlimited coefficient vector ``f`` the bispectrum entry at the triplet
``(l1, l2, l)`` is

    b[l1, l2, l] = sum_m f_{l,m} sum_{m1} C^{l,m}_{l1,m1,l2,m-m1}
                   conj(f_{l1,m1}) conj(f_{l2,m-m1}),

collected over all triplets with ``0 <= l2 <= l1 <= L`` and
``l1 - l2 <= l <= min(L, l1 + l2)``, in lexicographic order.  The resulting
vector is invariant under 3D rotations of the function and determines it up to
rotation (for generic real-valued inputs).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .harmonics import ShCoefficients, num_coefficients

_BSP_MAGIC = b"BSP1"


@lru_cache(maxsize=32)
def triplets(bandlimit: int) -> tuple:
    """All admissible (l1, l2, l) triplets, lexicographic."""
    if bandlimit < 0:
        raise ValueError("bandlimit must be nonnegative")
    out = []
    for l1 in range(bandlimit + 1):
        for l2 in range(l1 + 1):
            for l in range(l1 - l2, min(bandlimit, l1 + l2) + 1):
                out.append((l1, l2, l))
    return tuple(out)


def triplet_count(bandlimit: int) -> int:
    return len(triplets(bandlimit))


@dataclass(frozen=True)
class BispectrumVector:
    """Bispectrum values over the admissible triplets, lexicographic."""

    bandlimit: int
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=complex).reshape(-1)
        if v.shape[0] != triplet_count(self.bandlimit):
            raise ValueError(
                f"expected {triplet_count(self.bandlimit)} entries for bandlimit "
                f"{self.bandlimit}, got {v.shape[0]}"
            )
        object.__setattr__(self, "values", v)

    def __len__(self):
        return self.values.shape[0]


def bispectrum(f: ShCoefficients, cg) -> BispectrumVector:
    """Evaluate the bispectrum of ``f`` using a precomputed coefficient table."""
    if cg.bandlimit < f.bandlimit:
        raise ValueError(
            f"coefficient table bandlimit {cg.bandlimit} is smaller than the "
            f"function bandlimit {f.bandlimit}"
        )
    plan = cg.evaluation_plan(f.bandlimit)
    c = f.coeffs
    prod = plan.cg * c[plan.idx_l] * np.conj(c[plan.idx_l1]) * np.conj(c[plan.idx_l2])
    values = np.add.reduceat(prod, plan.triplet_starts)
    return BispectrumVector(f.bandlimit, values)


def bispectrum_batch(coeffs: np.ndarray, bandlimit: int, cg, chunk: int = 8) -> np.ndarray:
    """Bispectra of many coefficient vectors, given as columns of ``coeffs``.

    Returns an array of shape (n_triplets, n_batch).  Columns are processed in
    small chunks to bound the size of the gathered intermediates.
    """
    plan = cg.evaluation_plan(bandlimit)
    n_batch = coeffs.shape[1]
    out = np.empty((plan.n_triplets, n_batch), dtype=complex)
    for start in range(0, n_batch, chunk):
        block = coeffs[:, start : start + chunk]
        prod = (
            plan.cg[:, None]
            * block[plan.idx_l, :]
            * np.conj(block[plan.idx_l1, :])
            * np.conj(block[plan.idx_l2, :])
        )
        out[:, start : start + chunk] = np.add.reduceat(prod, plan.triplet_starts, axis=0)
    return out


def bispectrum_jacobian(f: ShCoefficients, cg) -> sp.csr_matrix:
    """Derivative of the complex bispectrum with respect to stacked real unknowns.

    Columns 0..n-1 differentiate with respect to Re f_{l,m} and columns
    n..2n-1 with respect to Im f_{l,m} (lexicographic (l, m), n = (L+1)^2).
    Writing D_f and D_f* for the holomorphic derivatives in the unconjugated
    and conjugated slots, the columns are ``D_f + D_f*`` and
    ``i (D_f - D_f*)``.  Each row touches only columns whose degree is one of
    the row's (l, l1, l2).
    """
    if cg.bandlimit < f.bandlimit:
        raise ValueError("coefficient table bandlimit too small")
    plan = cg.evaluation_plan(f.bandlimit)
    c = f.coeffs
    n = num_coefficients(f.bandlimit)
    n_trip = plan.n_triplets

    f1c = np.conj(c[plan.idx_l1])
    f2c = np.conj(c[plan.idx_l2])
    f0 = c[plan.idx_l]

    # d/df_{l,m}: one entry per (triplet, m) key
    e1 = np.add.reduceat(plan.cg * f1c * f2c, plan.key_starts)
    d_f = sp.coo_matrix((e1, (plan.key_triplet, plan.key_col)), shape=(n_trip, n))
    # d/dconj(f): entries land on the (l1, m1) and (l2, m-m1) columns
    d_fc = sp.coo_matrix(
        (plan.cg * f0 * f2c, (plan.flat_triplet, plan.idx_l1)), shape=(n_trip, n)
    ) + sp.coo_matrix(
        (plan.cg * f0 * f1c, (plan.flat_triplet, plan.idx_l2)), shape=(n_trip, n)
    )
    d_f = d_f.tocsr()
    d_fc = d_fc.tocsr()
    return sp.hstack([d_f + d_fc, 1j * (d_f - d_fc)], format="csr")


def relative_error(b1: BispectrumVector, b2: BispectrumVector) -> float:
    """``|b1 - b2| / |b2|`` in the Euclidean norm over stacked real parts."""
    if b1.bandlimit != b2.bandlimit:
        raise ValueError("bispectrum vectors have different bandlimits")
    denom = np.linalg.norm(b2.values)
    if denom == 0:
        raise ValueError("reference bispectrum has zero norm")
    return float(np.linalg.norm(b1.values - b2.values) / denom)


def write_bispectrum(b: BispectrumVector, path):
    """Serialize to the binary layout: magic, u32 bandlimit, u64 count, (re, im) f64 pairs."""
    path = Path(path)
    interleaved = np.empty(2 * len(b))
    interleaved[0::2] = b.values.real
    interleaved[1::2] = b.values.imag
    with open(path, "wb") as fh:
        fh.write(_BSP_MAGIC)
        fh.write(struct.pack("<IQ", b.bandlimit, len(b)))
        fh.write(interleaved.astype("<f8").tobytes())


def read_bispectrum(path) -> BispectrumVector:
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _BSP_MAGIC:
            raise ValueError(f"{path} is not a bispectrum file (bad magic {magic!r})")
        bandlimit, count = struct.unpack("<IQ", fh.read(12))
        data = np.frombuffer(fh.read(16 * count), dtype="<f8")
    if data.shape[0] != 2 * count:
        raise ValueError(f"{path} is truncated")
    values = data[0::2] + 1j * data[1::2]
    return BispectrumVector(bandlimit, values)
