"""Clebsch-Gordan coefficient vectors via the tridiagonal nullspace method.

For fixed ``(l1, l2, l, m)`` the coefficients ``C^{l,m}_{l1,m1,l2,m-m1}`` over
the admissible range ``m1 in [max(-l1, m-l2), min(l1, m+l2)]`` form the null
vector of a symmetric tridiagonal matrix built from angular-momentum algebra.
The vector is obtained by anchoring the last entry, back-substituting through
the rows, normalizing to unit Euclidean norm, and fixing the sign so the last
entry is positive.  An exact factorial-sum oracle (:func:`cg_oracle`) provides
an independent reference value for any single coefficient.
"""

from __future__ import annotations

import struct
from fractions import Fraction
from functools import lru_cache
from math import factorial
from pathlib import Path

import numpy as np
import scipy.linalg

from .bispectrum import triplets
from .harmonics import lm_index

_CG_MAGIC = b"CGT1"
_CG_VERSION = 1
_RESIDUAL_TOL = 1e-10


def m1_range(l1: int, l2: int, l: int, m: int):
    """Support of the coupling sum: m1 from max(-l1, m-l2) to min(l1, m+l2)."""
    return max(-l1, m - l2), min(l1, m + l2)


def _check_indices(l1, l2, l, m):
    if not abs(l1 - l2) <= l <= l1 + l2:
        raise ValueError(f"triangle inequality violated for (l1, l2, l) = ({l1}, {l2}, {l})")
    if abs(m) > l:
        raise ValueError(f"|m| <= l required, got m={m}, l={l}")


def _tridiagonal(l1, l2, l, m):
    """Diagonal and off-diagonal of the coupling matrix over the m1 range."""
    lo, hi = m1_range(l1, l2, l, m)
    m1 = np.arange(lo, hi + 1, dtype=float)
    m2 = m - m1
    diag = l1 * (l1 + 1) + l2 * (l2 + 1) + 2 * m1 * m2 - l * (l + 1)
    off = np.sqrt(l1 * (l1 + 1) - m1[:-1] * m1[1:]) * np.sqrt(l2 * (l2 + 1) - m2[:-1] * m2[1:])
    return diag, off


def _residual(diag, off, c):
    r = diag * c
    if off.size:
        r[:-1] += off * c[1:]
        r[1:] += off * c[:-1]
    return float(np.max(np.abs(r)))


def cg_vector(l1: int, l2: int, l: int, m: int) -> np.ndarray:
    """Unit-norm coefficient vector over the admissible ``m1`` range.

    Anchors the last entry at ``1/n``, back-substitutes, normalizes, and fixes
    the sign.  If the nullspace residual of the back-substituted vector exceeds
    1e-10 the vector is refined by inverse iteration on the same tridiagonal
    matrix.
    """
    _check_indices(l1, l2, l, m)
    lo, hi = m1_range(l1, l2, l, m)
    n = hi - lo + 1
    if n == 1:
        return np.array([1.0])
    diag, off = _tridiagonal(l1, l2, l, m)
    c = np.empty(n)
    c[n - 1] = 1.0 / n
    c[n - 2] = -diag[n - 1] * c[n - 1] / off[n - 2]
    for i in range(n - 2, 0, -1):
        c[i - 1] = -(diag[i] * c[i] + off[i] * c[i + 1]) / off[i - 1]
    c /= np.linalg.norm(c)
    if c[-1] < 0:
        c = -c
    if _residual(diag, off, c) > _RESIDUAL_TOL:
        c = _inverse_iteration(diag, off, c)
    return c


def _inverse_iteration(diag, off, c):
    """Refine a near-null vector of the tridiagonal matrix."""
    n = diag.shape[0]
    scale = max(np.max(np.abs(diag)), np.max(np.abs(off)) if off.size else 0.0, 1.0)
    ab = np.zeros((3, n))
    ab[0, 1:] = off
    ab[1] = diag + 1e-14 * scale
    ab[2, :-1] = off
    for _ in range(3):
        try:
            y = scipy.linalg.solve_banded((1, 1), ab, c)
        except scipy.linalg.LinAlgError:
            ab[1] += 1e-12 * scale
            continue
        c = y / np.linalg.norm(y)
        if _residual(diag, off, c) < 1e-13 * scale:
            break
    if c[-1] < 0:
        c = -c
    return c


def cg_oracle(l1: int, m1: int, l2: int, m2: int, l: int, m: int) -> float:
    """Single coefficient by the exact factorial-sum (Racah) formula.

    Evaluated in exact rational arithmetic; returns 0 for any index violating
    the selection rules.
    """
    if m1 + m2 != m:
        return 0.0
    if not abs(l1 - l2) <= l <= l1 + l2:
        return 0.0
    if abs(m1) > l1 or abs(m2) > l2 or abs(m) > l:
        return 0.0
    pref = Fraction(
        factorial(l1 + l2 - l) * factorial(l1 - l2 + l) * factorial(-l1 + l2 + l),
        factorial(l1 + l2 + l + 1),
    )
    pref *= (2 * l + 1)
    pref *= (
        factorial(l + m)
        * factorial(l - m)
        * factorial(l1 + m1)
        * factorial(l1 - m1)
        * factorial(l2 + m2)
        * factorial(l2 - m2)
    )
    z_lo = max(0, -(l - l2 + m1), -(l - l1 - m2))
    z_hi = min(l1 + l2 - l, l1 - m1, l2 + m2)
    total = Fraction(0)
    for z in range(z_lo, z_hi + 1):
        den = (
            factorial(z)
            * factorial(l1 + l2 - l - z)
            * factorial(l1 - m1 - z)
            * factorial(l2 + m2 - z)
            * factorial(l - l2 + m1 + z)
            * factorial(l - l1 - m2 + z)
        )
        term = Fraction((-1) ** z, den)
        total += term
    if total == 0:
        return 0.0
    sign = 1.0 if total > 0 else -1.0
    return sign * float(total * total * pref) ** 0.5


class CGTable:
    """All coefficient vectors needed to evaluate bispectra up to a bandlimit.

    Vectors are stored contiguously; a key ``(l1, l2, l, m)`` resolves to a
    slice through per-triplet base indices, so inner loops never hash.
    """

    def __init__(self, bandlimit: int, values: np.ndarray, offsets: np.ndarray):
        self.bandlimit = bandlimit
        self._values = values
        self._offsets = offsets
        self._values.flags.writeable = False
        self._offsets.flags.writeable = False
        self._key_base = {}
        key = 0
        for trip in triplets(bandlimit):
            self._key_base[trip] = key
            key += 2 * trip[2] + 1
        self.n_keys = key
        self._plans = {}

    def key_id(self, l1: int, l2: int, l: int, m: int) -> int:
        return self._key_base[(l1, l2, l)] + (m + l)

    def vector(self, l1: int, l2: int, l: int, m: int) -> np.ndarray:
        _check_indices(l1, l2, l, m)
        kid = self.key_id(l1, l2, l, m)
        return self._values[self._offsets[kid] : self._offsets[kid + 1]]

    def evaluation_plan(self, bandlimit: int) -> "EvaluationPlan":
        """Flat gather arrays for bispectrum-type sums at the given bandlimit."""
        if bandlimit > self.bandlimit:
            raise ValueError("requested bandlimit exceeds the table bandlimit")
        if bandlimit not in self._plans:
            self._plans[bandlimit] = EvaluationPlan(self, bandlimit)
        return self._plans[bandlimit]

    def save(self, path):
        """Write the binary cache: magic, version, bandlimit, offsets, payload."""
        path = Path(path)
        with open(path, "wb") as fh:
            fh.write(_CG_MAGIC)
            fh.write(struct.pack("<IIQ", _CG_VERSION, self.bandlimit, self.n_keys))
            fh.write(self._offsets.astype("<u8").tobytes())
            fh.write(self._values.astype("<f8").tobytes())


class EvaluationPlan:
    """Index arrays that turn bispectrum sums into gather + segmented reduce.

    ``flat`` arrays have one entry per (triplet, m, m1) term; ``key`` arrays
    one entry per (triplet, m) pair; ``triplet_starts`` delimits triplets in
    the flat layout.
    """

    def __init__(self, table: CGTable, bandlimit: int):
        trips = triplets(bandlimit)
        idx_l, idx_l1, idx_l2, cg, flat_triplet = [], [], [], [], []
        key_col, key_triplet, key_lengths = [], [], []
        triplet_lengths = []
        for t, (l1, l2, l) in enumerate(trips):
            t_len = 0
            for m in range(-l, l + 1):
                vec = table.vector(l1, l2, l, m)
                lo, hi = m1_range(l1, l2, l, m)
                m1 = np.arange(lo, hi + 1)
                k = m1.shape[0]
                idx_l.append(np.full(k, lm_index(l, m)))
                idx_l1.append(l1 * l1 + l1 + m1)
                idx_l2.append(l2 * l2 + l2 + (m - m1))
                cg.append(vec)
                flat_triplet.append(np.full(k, t))
                key_col.append(lm_index(l, m))
                key_triplet.append(t)
                key_lengths.append(k)
                t_len += k
            triplet_lengths.append(t_len)
        self.bandlimit = bandlimit
        self.n_triplets = len(trips)
        self.idx_l = np.concatenate(idx_l)
        self.idx_l1 = np.concatenate(idx_l1)
        self.idx_l2 = np.concatenate(idx_l2)
        self.cg = np.concatenate(cg)
        self.flat_triplet = np.concatenate(flat_triplet)
        self.key_col = np.asarray(key_col, dtype=np.int64)
        self.key_triplet = np.asarray(key_triplet, dtype=np.int64)
        key_lengths = np.asarray(key_lengths, dtype=np.int64)
        self.key_starts = np.concatenate([[0], np.cumsum(key_lengths)[:-1]])
        triplet_lengths = np.asarray(triplet_lengths, dtype=np.int64)
        self.triplet_starts = np.concatenate([[0], np.cumsum(triplet_lengths)[:-1]])
        for arr in (self.idx_l, self.idx_l1, self.idx_l2, self.cg, self.flat_triplet):
            arr.flags.writeable = False


@lru_cache(maxsize=8)
def build_table(bandlimit: int) -> CGTable:
    """Compute every vector needed by the bispectrum at the given bandlimit."""
    if bandlimit < 0:
        raise ValueError("bandlimit must be nonnegative")
    values, offsets = [], [0]
    for (l1, l2, l) in triplets(bandlimit):
        for m in range(-l, l + 1):
            vec = cg_vector(l1, l2, l, m)
            values.append(vec)
            offsets.append(offsets[-1] + vec.shape[0])
    flat = np.concatenate(values) if values else np.empty(0)
    return CGTable(bandlimit, flat, np.asarray(offsets, dtype=np.int64))


def load_table(path) -> CGTable:
    """Read a binary cache and validate the unit-norm invariant."""
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _CG_MAGIC:
            raise ValueError(f"{path} is not a coefficient cache (bad magic {magic!r})")
        version, bandlimit, n_keys = struct.unpack("<IIQ", fh.read(16))
        if version != _CG_VERSION:
            raise ValueError(f"unsupported cache version {version}")
        offsets = np.frombuffer(fh.read(8 * (n_keys + 1)), dtype="<u8").astype(np.int64)
        values = np.frombuffer(fh.read(8 * int(offsets[-1])), dtype="<f8").astype(float)
    if values.shape[0] != offsets[-1]:
        raise ValueError(f"{path} is truncated")
    table = CGTable(bandlimit, values, offsets)
    if table.n_keys != n_keys:
        raise ValueError(f"{path} key count does not match bandlimit {bandlimit}")
    norms = np.add.reduceat(values**2, offsets[:-1])
    if np.max(np.abs(norms - 1.0)) > 1e-8:
        raise ValueError(f"{path} violates the unit-norm invariant")
    return table
