import numpy as np
import pytest

from se2bis.bispectrum import (
    BispectrumVector,
    bispectrum,
    bispectrum_batch,
    bispectrum_jacobian,
    read_bispectrum,
    relative_error,
    triplet_count,
    triplets,
    write_bispectrum,
)
from se2bis.harmonics import (
    ShCoefficients,
    degrees,
    num_coefficients,
    random_real_coefficients,
)


class TestTriplets:
    def test_minimal(self):
        assert triplets(0) == ((0, 0, 0),)

    def test_bandlimit_one(self):
        assert triplets(1) == ((0, 0, 0), (1, 0, 1), (1, 1, 0), (1, 1, 1))

    def test_count_matches_brute_force(self):
        L = 16
        count = 0
        for l1 in range(L + 1):
            for l2 in range(L + 1):
                for l in range(L + 1):
                    if l2 <= l1 and l1 - l2 <= l <= l1 + l2:
                        count += 1
        assert triplet_count(L) == count

    def test_lexicographic(self):
        ts = triplets(5)
        assert list(ts) == sorted(ts)


class TestBispectrum:
    def test_zero_function(self, cg8):
        b = bispectrum(ShCoefficients.zeros(8), cg8)
        assert np.all(b.values == 0)

    def test_scalar_entry(self, cg8):
        # single-term sum: f (f*)^2, i.e. conj(f) |f|^2; for real-valued
        # functions f_{0,0} is real and this is f |f|^2
        coeffs = np.zeros(num_coefficients(8), dtype=complex)
        coeffs[0] = 0.7 - 0.2j
        b = bispectrum(ShCoefficients(8, coeffs), cg8)
        expected = np.conj(coeffs[0]) * abs(coeffs[0]) ** 2
        assert abs(b.values[0] - expected) < 1e-14
        real = np.zeros(num_coefficients(8), dtype=complex)
        real[0] = 0.8
        b_real = bispectrum(ShCoefficients(8, real), cg8)
        assert abs(b_real.values[0] - real[0] * abs(real[0]) ** 2) < 1e-14

    def test_cubic_homogeneity(self, cg8):
        rng = np.random.default_rng(0)
        f = random_real_coefficients(8, rng)
        b1 = bispectrum(f, cg8)
        b2 = bispectrum(ShCoefficients(8, 2.0 * f.coeffs), cg8)
        np.testing.assert_allclose(b2.values, 8.0 * b1.values, rtol=1e-12)

    def test_rotation_invariance(self, cg8, quad8):
        from se2bis.inversion import rotate_shc, rotation_sequence

        rng = np.random.default_rng(1)
        f = random_real_coefficients(8, rng)
        b0 = bispectrum(f, cg8)
        seq = rotation_sequence(300)
        for idx in (3, 77, 200):
            rot = rotate_shc(f, seq[idx], quad8)
            assert relative_error(bispectrum(rot, cg8), b0) < 1e-6

    def test_table_bandlimit_guard(self, cg8):
        with pytest.raises(ValueError):
            bispectrum(ShCoefficients.zeros(9), cg8)

    def test_batch_matches_single(self, cg8):
        rng = np.random.default_rng(2)
        cols = np.stack(
            [random_real_coefficients(8, rng).coeffs for _ in range(5)], axis=1
        )
        batch = bispectrum_batch(cols, 8, cg8, chunk=2)
        for j in range(5):
            single = bispectrum(ShCoefficients(8, cols[:, j]), cg8)
            np.testing.assert_allclose(batch[:, j], single.values, atol=1e-14)

    def test_reality_structure_even_parity(self, cg8):
        rng = np.random.default_rng(3)
        f = random_real_coefficients(8, rng)
        b = bispectrum(f, cg8)
        scale = np.max(np.abs(b.values))
        for (l1, l2, l), value in zip(triplets(8), b.values):
            if (l1 + l2 + l) % 2 == 0:
                assert abs(value.imag) < 1e-8 * scale


class TestJacobian:
    def test_matches_finite_differences(self, cg6):
        rng = np.random.default_rng(4)
        n = num_coefficients(6)
        for _ in range(3):
            f = random_real_coefficients(6, rng)
            jac = bispectrum_jacobian(f, cg6).toarray()
            x0 = np.concatenate([f.coeffs.real, f.coeffs.imag])
            h = 1e-6

            def bis(x):
                return bispectrum(ShCoefficients(6, x[:n] + 1j * x[n:]), cg6).values

            fd = np.empty_like(jac)
            for k in range(2 * n):
                xp, xm = x0.copy(), x0.copy()
                xp[k] += h
                xm[k] -= h
                fd[:, k] = (bis(xp) - bis(xm)) / (2 * h)
            assert np.max(np.abs(jac - fd)) < 1e-6 * max(1.0, np.max(np.abs(fd)))

    def test_row_sparsity_by_degree(self, cg6):
        rng = np.random.default_rng(5)
        f = random_real_coefficients(6, rng)
        jac = bispectrum_jacobian(f, cg6).toarray()
        degree_of = degrees(6)
        for row, (l1, l2, l) in enumerate(triplets(6)):
            cols = np.flatnonzero(np.abs(jac[row]) > 0)
            for c in cols:
                assert degree_of[c % num_coefficients(6)] in (l, l1, l2)

    def test_zero_function_zero_jacobian(self, cg6):
        jac = bispectrum_jacobian(ShCoefficients.zeros(6), cg6)
        assert jac.nnz == 0 or np.max(np.abs(jac.data)) == 0


class TestRelativeError:
    def test_equal_vectors(self, cg8):
        rng = np.random.default_rng(6)
        b = bispectrum(random_real_coefficients(8, rng), cg8)
        assert relative_error(b, b) == 0.0

    def test_double(self, cg8):
        rng = np.random.default_rng(7)
        b = bispectrum(random_real_coefficients(8, rng), cg8)
        b2 = BispectrumVector(8, 2.0 * b.values)
        assert abs(relative_error(b2, b) - 1.0) < 1e-12

    def test_zero_reference_rejected(self):
        z = BispectrumVector(2, np.zeros(triplet_count(2)))
        with pytest.raises(ValueError):
            relative_error(z, z)

    def test_bandlimit_mismatch(self):
        with pytest.raises(ValueError):
            relative_error(
                BispectrumVector(2, np.zeros(triplet_count(2))),
                BispectrumVector(3, np.ones(triplet_count(3))),
            )


class TestSerialization:
    def test_round_trip_bit_exact(self, tmp_path, cg8):
        rng = np.random.default_rng(8)
        b = bispectrum(random_real_coefficients(8, rng), cg8)
        path = tmp_path / "b.bsp"
        write_bispectrum(b, path)
        loaded = read_bispectrum(path)
        assert loaded.bandlimit == 8
        np.testing.assert_array_equal(loaded.values, b.values)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "junk.bsp"
        path.write_bytes(b"WRONG" + b"\0" * 16)
        with pytest.raises(ValueError, match="magic"):
            read_bispectrum(path)
