"""Tests for the real/complex structural transforms.

Expected values are hand-derived from the definitions (column stacking of
Re over Im) and frozen here, independent of the implementation.
"""

import numpy as np
import numpy.testing as npt
import pytest

from crprecoder.realify import (
    kron_identity,
    realify,
    realify_channel,
    underline,
    ununderline,
)


def naive_underline(p):
    """Reference stacking via explicit loops (independent oracle)."""
    p = np.asarray(p, dtype=complex)
    rows, cols = p.shape
    out = []
    for c in range(cols):
        for r in range(rows):
            out.append(p[r, c].real)
    for c in range(cols):
        for r in range(rows):
            out.append(p[r, c].imag)
    return np.array(out)


class TestUnderline:
    def test_scalar(self):
        npt.assert_array_equal(underline(np.array([[1 + 2j]])), [1.0, 2.0])

    def test_zero_matrix(self):
        npt.assert_array_equal(underline(np.zeros((2, 2), complex)), np.zeros(8))

    def test_hand_stacked_2x2(self):
        p = np.array([[1 + 1j, 3 + 3j], [2 + 2j, 4 + 4j]])
        npt.assert_array_equal(underline(p), [1, 2, 3, 4, 1, 2, 3, 4])

    def test_matches_naive_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            shape = rng.integers(1, 5, size=2)
            p = rng.normal(size=shape) + 1j * rng.normal(size=shape)
            npt.assert_allclose(underline(p), naive_underline(p), atol=0)

    def test_linearity(self):
        rng = np.random.default_rng(8)
        p = rng.normal(size=(3, 2)) + 1j * rng.normal(size=(3, 2))
        q = rng.normal(size=(3, 2)) + 1j * rng.normal(size=(3, 2))
        npt.assert_allclose(
            underline(2.5 * p - 0.5 * q),
            2.5 * underline(p) - 0.5 * underline(q),
            rtol=1e-14,
        )

    def test_isometry(self):
        rng = np.random.default_rng(9)
        for _ in range(10):
            p = rng.normal(size=(4, 3)) + 1j * rng.normal(size=(4, 3))
            assert np.linalg.norm(underline(p)) == pytest.approx(
                np.linalg.norm(p, "fro"), rel=1e-14
            )


class TestUnunderline:
    def test_scalar_inverse(self):
        npt.assert_array_equal(ununderline(np.array([1.0, 2.0]), 1, 1), [[1 + 2j]])

    def test_round_trip(self):
        rng = np.random.default_rng(10)
        for _ in range(10):
            p = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
            npt.assert_array_equal(ununderline(underline(p), 2, 2), p)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            ununderline(np.zeros(7), 2, 2)


class TestKronIdentity:
    def test_t_one_is_h(self):
        h = np.array([[1 + 1j, 2.0], [0.0, 3 - 1j]])
        npt.assert_array_equal(kron_identity(h, 1), h)

    def test_scalar_h(self):
        npt.assert_array_equal(kron_identity(np.array([[2.0]]), 3), 2.0 * np.eye(3))

    def test_dimensions(self):
        h = np.ones((3, 2), complex)
        assert kron_identity(h, 4).shape == (12, 8)


class TestRealifyChannel:
    def test_pure_imaginary_scalar(self):
        npt.assert_array_equal(
            realify_channel(np.array([[1j]]), 1), [[0.0, -1.0], [1.0, 0.0]]
        )

    def test_identity_channel(self):
        npt.assert_array_equal(realify_channel(np.eye(2, dtype=complex), 2), np.eye(8))

    def test_homomorphism(self):
        # underline(H X) = realify_channel(H, T) @ underline(X)
        rng = np.random.default_rng(11)
        for _ in range(100):
            h = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
            x = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
            lhs = underline(h @ x)
            rhs = realify_channel(h, 2) @ underline(x)
            npt.assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-12)

    def test_gram_is_realified_gram(self):
        # Heq^T Heq equals the realification of I_T (x) (H^H H).
        rng = np.random.default_rng(12)
        h = rng.normal(size=(3, 2)) + 1j * rng.normal(size=(3, 2))
        heq = realify_channel(h, 2)
        expected = realify(kron_identity(h.conj().T @ h, 2))
        npt.assert_allclose(heq.T @ heq, expected, rtol=1e-12, atol=1e-12)


class TestRealify:
    def test_block_layout(self):
        m = np.array([[1 + 2j]])
        npt.assert_array_equal(realify(m), [[1.0, -2.0], [2.0, 1.0]])

    def test_product_homomorphism(self):
        rng = np.random.default_rng(13)
        a = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
        b = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
        npt.assert_allclose(realify(a) @ realify(b), realify(a @ b), rtol=1e-12)
