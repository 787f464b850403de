import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from spectral_nn.flops import FlopCounter
from spectral_nn.householder import (
    FactorizationError,
    ReflectorStack,
    hgrad,
    householder_qr,
    hprod,
    stack_apply,
    stack_materialize,
)
from spectral_nn.oracle import dense_reflector

from conftest import random_orthogonal

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


class TestHprod:
    def test_zero_vector_is_identity(self):
        np.testing.assert_array_equal(hprod([2.0, 4.0, 6.0], np.zeros(2)), [2, 4, 6])

    def test_sign_flip(self):
        np.testing.assert_allclose(hprod([3.0, 5.0], [1.0, 0.0]), [-3, 5])

    def test_acts_on_trailing_coordinates(self):
        # [DERIVED] I - 2 uu^T/2 with u = (0, 1, 1) applied to (2, 4, 6)
        np.testing.assert_allclose(hprod([2.0, 4.0, 6.0], [1.0, 1.0]), [2, -6, -4])

    def test_tiny_vector_treated_as_zero(self):
        h = np.array([1.0, 2.0])
        np.testing.assert_array_equal(hprod(h, [1e-13, 0.0]), h)

    def test_too_long_vector_rejected(self):
        with pytest.raises(ValueError):
            hprod(np.ones(2), np.ones(3))

    def test_batch_matches_columns(self, rng):
        H = rng.standard_normal((6, 4))
        u = rng.standard_normal(4)
        out = hprod(H, u)
        for j in range(4):
            np.testing.assert_allclose(out[:, j], hprod(H[:, j], u), rtol=0, atol=1e-15)

    def test_return_alpha(self, rng):
        h, u = rng.standard_normal(5), rng.standard_normal(3)
        _, alpha = hprod(h, u, return_alpha=True)
        assert alpha == pytest.approx(u @ h[2:])

    def test_flops(self):
        c = FlopCounter()
        hprod(np.ones(64), np.ones(32), counter=c)
        assert c["hprod"] == 4 * 32 + 1

    @settings(max_examples=60, deadline=None)
    @given(arrays(float, st.integers(2, 9), elements=finite), st.data())
    def test_involution_and_isometry(self, h, data):
        k = data.draw(st.integers(1, h.shape[0]))
        u = data.draw(arrays(float, k, elements=finite))
        out = hprod(h, u)
        scale = max(1.0, np.linalg.norm(h))
        assert np.linalg.norm(out) == pytest.approx(np.linalg.norm(h), abs=1e-12 * scale)
        np.testing.assert_allclose(hprod(out, u), h, atol=1e-12 * scale)
        np.testing.assert_array_equal(out[: h.shape[0] - k], h[: h.shape[0] - k])

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 8), st.data())
    def test_matches_dense_reflector(self, n, data):
        k = data.draw(st.integers(1, n))
        u = data.draw(arrays(float, k, elements=finite))
        h = data.draw(arrays(float, n, elements=finite))
        np.testing.assert_allclose(hprod(h, u), dense_reflector(u, n) @ h,
                                   atol=1e-11 * max(1.0, np.linalg.norm(h)))


class TestHgrad:
    def test_zero_vector(self, rng):
        g = rng.standard_normal(4)
        dh, du = hgrad(rng.standard_normal(4), np.zeros(3), g)
        np.testing.assert_array_equal(dh, g)
        np.testing.assert_array_equal(du, np.zeros(3))

    def test_input_form_worked_example(self):
        # [DERIVED] dense H^T g, and central differences of g^T H(u) h
        dh, du = hgrad([3.0, 5.0], [1.0, 0.0], [1.0, 1.0])
        np.testing.assert_allclose(dh, [-1, 1])
        np.testing.assert_allclose(du, [0, -16])

    def test_output_form_worked_example(self):
        dh, du = hgrad([-3.0, 5.0], [1.0, 0.0], [1.0, 1.0], ref_is_output=True)
        np.testing.assert_allclose(dh, [-1, 1])
        np.testing.assert_allclose(du, [0, -16])

    def test_forms_agree(self, rng):
        for _ in range(20):
            n = rng.integers(1, 10)
            k = rng.integers(1, n + 1)
            h, g, u = rng.standard_normal(n), rng.standard_normal(n), rng.standard_normal(k)
            a = hgrad(h, u, g)
            b = hgrad(hprod(h, u), u, g, ref_is_output=True)
            np.testing.assert_allclose(a[0], b[0], rtol=1e-13, atol=1e-13)
            np.testing.assert_allclose(a[1], b[1], rtol=1e-12, atol=1e-12)

    def test_dh_is_transpose_action(self, rng):
        u, h, g = rng.standard_normal(4), rng.standard_normal(6), rng.standard_normal(6)
        dh, _ = hgrad(h, u, g)
        np.testing.assert_allclose(dh, dense_reflector(u, 6).T @ g, atol=1e-14)

    def test_du_against_finite_differences(self, rng):
        u, h, g = rng.standard_normal(5), rng.standard_normal(7), rng.standard_normal(7)
        _, du = hgrad(h, u, g)
        eps = 1e-6
        numeric = np.zeros(5)
        for i in range(5):
            e = np.zeros(5)
            e[i] = eps
            numeric[i] = (g @ hprod(h, u + e) - g @ hprod(h, u - e)) / (2 * eps)
        np.testing.assert_allclose(du, numeric, rtol=1e-7, atol=1e-8)

    def test_batch_sums_u_gradient(self, rng):
        u = rng.standard_normal(3)
        H, G = rng.standard_normal((5, 4)), rng.standard_normal((5, 4))
        dh, du = hgrad(H, u, G)
        cols = [hgrad(H[:, j], u, G[:, j]) for j in range(4)]
        np.testing.assert_allclose(dh, np.column_stack([c[0] for c in cols]), atol=1e-14)
        np.testing.assert_allclose(du, sum(c[1] for c in cols), atol=1e-13)

    def test_supplied_alpha_matches(self, rng):
        u, h, g = rng.standard_normal(3), rng.standard_normal(5), rng.standard_normal(5)
        a = hgrad(h, u, g)
        b = hgrad(h, u, g, alpha=u @ h[2:])
        np.testing.assert_allclose(a[1], b[1], rtol=1e-15)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            hgrad(np.ones(3), np.ones(2), np.ones(4))

    def test_flops_per_column(self):
        c = FlopCounter()
        hgrad(np.ones(20), np.ones(10), np.ones(20), alpha=1.0, counter=c)
        assert c.total == 7 * 10 + 2


class TestReflectorStack:
    def test_default_is_zero(self):
        s = ReflectorStack(4, 2)
        assert s.size == 3
        assert [v.shape for v in s.vectors] == [(2,), (3,), (4,)]
        np.testing.assert_array_equal(stack_materialize(s), np.eye(4))

    def test_bad_lengths(self):
        with pytest.raises(ValueError):
            ReflectorStack(3, 2, [np.ones(2), np.ones(2)])
        with pytest.raises(ValueError):
            ReflectorStack(3, 0)

    def test_indexing(self):
        s = ReflectorStack(3, 2)
        s[3] = [1.0, 2.0, 3.0]
        np.testing.assert_array_equal(s.vectors[1], [1, 2, 3])
        with pytest.raises(ValueError):
            s[2] = [1.0]

    def test_single_reflector_matrix(self):
        s = ReflectorStack(2, 2, [np.array([1.0, 0.0])])
        np.testing.assert_allclose(stack_materialize(s), np.diag([-1.0, 1.0]))

    def test_num_params(self):
        assert ReflectorStack(5, 3).num_params() == 3 + 4 + 5

    def test_truncated(self, rng):
        s = ReflectorStack.random(5, 5, rng)
        t = s.truncated(3)
        assert t.k_min == 3
        np.testing.assert_array_equal(t[4], s[4])
        with pytest.raises(ValueError):
            t.truncated(2)


class TestStackApply:
    def test_zero_stack(self, rng):
        h = rng.standard_normal(5)
        np.testing.assert_array_equal(stack_apply(ReflectorStack(5, 1), h), h)

    def test_single_equals_hprod(self, rng):
        u, h = rng.standard_normal(4), rng.standard_normal(4)
        np.testing.assert_allclose(stack_apply(ReflectorStack(4, 4, [u]), h), hprod(h, u))

    def test_matches_dense_product(self, rng):
        s = ReflectorStack.random(4, 4, rng)
        h = rng.standard_normal(4)
        # H_4 H_3 H_2 H_1 h
        dense = np.eye(4)
        for k in range(4, 0, -1):
            dense = dense @ dense_reflector(s[k], 4)
        np.testing.assert_allclose(stack_apply(s, h), dense @ h, atol=1e-14)
        np.testing.assert_allclose(stack_apply(s, h, transpose=True), dense.T @ h, atol=1e-14)

    def test_transpose_inverts(self, rng):
        s = ReflectorStack.random(7, 4, rng)
        h = rng.standard_normal(7)
        np.testing.assert_allclose(stack_apply(s, stack_apply(s, h), transpose=True), h,
                                   atol=1e-14)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            stack_apply(ReflectorStack(3, 1), np.ones(4))

    def test_orthogonal(self, rng):
        Q = stack_materialize(ReflectorStack.random(5, 5, rng))
        assert np.linalg.norm(Q.T @ Q - np.eye(5)) < 1e-12


class TestHouseholderQR:
    def test_identity(self):
        s, R = householder_qr(np.eye(4))
        for v in s.vectors:
            np.testing.assert_array_equal(v, 0.0)
        np.testing.assert_array_equal(R, np.eye(4))

    def test_orthogonal_gives_identity_R(self, rng):
        for n in (2, 5, 9):
            Q = random_orthogonal(n, rng)
            s, R = householder_qr(Q)
            np.testing.assert_allclose(R, np.eye(n), atol=1e-12)
            np.testing.assert_allclose(stack_materialize(s), Q, atol=1e-12)

    def test_random_reconstruction(self, rng):
        B = rng.standard_normal((3, 3))
        s, R = householder_qr(B)
        assert np.linalg.norm(stack_materialize(s) @ R - B) / np.linalg.norm(B) < 1e-12
        np.testing.assert_array_equal(np.tril(R, -1), 0.0)
        assert np.all(np.diag(R) > 0)

    def test_negative_leading_entry(self):
        B = np.array([[-2.0, 1.0], [0.0, 3.0]])
        s, R = householder_qr(B)
        np.testing.assert_allclose(stack_materialize(s) @ R, B, atol=1e-15)
        np.testing.assert_allclose(np.diag(R), [2.0, 3.0])

    def test_singular_rejected(self):
        with pytest.raises(FactorizationError):
            householder_qr([[1.0, 2.0], [2.0, 4.0]])
        with pytest.raises(FactorizationError):
            householder_qr(np.zeros((3, 3)))

    def test_non_square_rejected(self):
        with pytest.raises(ValueError):
            householder_qr(np.ones((2, 3)))

    def test_k_indexing(self, rng):
        s, _ = householder_qr(rng.standard_normal((4, 4)))
        assert s.k_min == 1
        assert [v.shape[0] for v in s.vectors] == [1, 2, 3, 4]

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 7), st.integers(0, 2**32 - 1))
    def test_reconstruction_property(self, n, seed):
        B = np.random.default_rng(seed).standard_normal((n, n)) + 3 * np.eye(n)
        s, R = householder_qr(B)
        assert np.linalg.norm(stack_materialize(s) @ R - B) <= n * 1e-10 * np.linalg.norm(B)
