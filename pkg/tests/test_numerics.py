import numpy as np
import pytest
import scipy.linalg as sla
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from polariton_bh.numerics import (DimensionError, KrylovOptions, NotHermitianError, SparseOperator,
                                   apply, identity, is_hermitian, lowest_eigenpair, propagate_step, zero)

J = 2.0e7


def hop2():
    return SparseOperator.from_dense([[0, J], [J, 0]], hermitian=True)


def random_hermitian(rng, n, density=0.3):
    a = sp.random(n, n, density=density, random_state=rng, dtype=float) + 1j * sp.random(
        n, n, density=density, random_state=rng, dtype=float)
    return SparseOperator(a + a.conj().T, hermitian=True)


complex_vec = arrays(np.complex128, 6, elements=st.complex_numbers(max_magnitude=10, allow_nan=False,
                                                                     allow_infinity=False))


class TestSparseOperator:
    def test_canonical_layout_is_route_independent(self):
        a = SparseOperator.from_entries(3, [2, 0, 0], [1, 1, 1], [1.0, 2.0, 3.0])
        b = SparseOperator.from_entries(3, [0, 2], [1, 1], [5.0, 1.0])
        assert a == b
        assert a.entries() == [(0, 1, 5 + 0j), (2, 1, 1 + 0j)]

    def test_drop_tolerance_removes_tiny_entries(self):
        op = SparseOperator.from_entries(2, [0, 1], [0, 1], [1.0, 1e-16])
        assert op.nnz == 1

    def test_explicit_zeros_not_stored(self):
        op = SparseOperator.from_entries(3, [0, 1], [0, 1], [0.0, 2.0])
        assert op.entries() == [(1, 1, 2 + 0j)]

    def test_hermitian_flag_is_checked(self):
        with pytest.raises(NotHermitianError):
            SparseOperator.from_dense([[0, 1], [2, 0]], hermitian=True)

    def test_hermitian_tolerance_is_relative(self):
        m = np.array([[1e12, 1e7], [1e7 * (1 + 1e-14), 0]])
        assert is_hermitian(sp.csr_array(m))
        m[1, 0] = 1e7 * (1 + 1e-3)
        assert not is_hermitian(sp.csr_array(m))

    def test_non_square_rejected(self):
        with pytest.raises(DimensionError):
            SparseOperator(sp.csr_array(np.ones((2, 3))))

    def test_arithmetic_and_dagger(self, rng):
        a = SparseOperator.from_dense(rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4)))
        b = SparseOperator.from_dense(rng.normal(size=(4, 4)))
        np.testing.assert_allclose((a + b).toarray(), a.toarray() + b.toarray())
        np.testing.assert_allclose((a - b).toarray(), a.toarray() - b.toarray())
        np.testing.assert_allclose((2.5 * a).toarray(), 2.5 * a.toarray())
        np.testing.assert_allclose((a @ b).toarray(), a.toarray() @ b.toarray())
        np.testing.assert_allclose(a.dag().toarray(), a.toarray().conj().T)

    def test_dimension_mismatch_in_sum(self):
        with pytest.raises(DimensionError):
            identity(2) + identity(3)


class TestApply:
    def test_identity(self, rng):
        v = rng.normal(size=5) + 1j * rng.normal(size=5)
        np.testing.assert_array_equal(apply(identity(5), v), v)

    def test_zero(self, rng):
        v = rng.normal(size=5)
        assert not np.any(apply(zero(5), v))

    def test_hopping_matrix_action(self):
        np.testing.assert_allclose(apply(hop2(), [1, 0]), [0, J])

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            apply(identity(3), np.ones(4))

    @given(u=complex_vec, v=complex_vec, a=st.complex_numbers(max_magnitude=5, allow_nan=False),
           b=st.complex_numbers(max_magnitude=5, allow_nan=False))
    @settings(max_examples=50, deadline=None)
    def test_linearity(self, u, v, a, b):
        op = random_hermitian(np.random.default_rng(3), 6, 0.5)
        lhs = apply(op, a * u + b * v)
        rhs = a * apply(op, u) + b * apply(op, v)
        scale = max(1.0, np.abs(lhs).max(), np.abs(rhs).max())
        np.testing.assert_allclose(lhs, rhs, atol=1e-12 * scale)


class TestLowestEigenpair:
    def test_diagonal(self):
        op = SparseOperator.from_dense(np.diag([1.0, 2.0, 3.0]), hermitian=True)
        (lam, vec), = lowest_eigenpair(op, 1)
        assert lam == pytest.approx(1.0)
        assert abs(vec[0]) == pytest.approx(1.0)

    def test_two_level(self):
        vals = [lam for lam, _ in lowest_eigenpair(hop2(), 2)]
        np.testing.assert_allclose(vals, [-J, J])

    def test_ring_hopping_ground_energy(self):
        # single particle on a 4-ring: the circulant spectrum is 2J cos(2 pi k / 4)
        m = np.zeros((4, 4))
        for i in range(4):
            m[i, (i + 1) % 4] = m[(i + 1) % 4, i] = J
        (lam, _), = lowest_eigenpair(SparseOperator.from_dense(m, hermitian=True), 1)
        assert lam == pytest.approx(-2 * J, rel=1e-12)

    def test_requires_hermitian_flag(self):
        with pytest.raises(NotHermitianError):
            lowest_eigenpair(SparseOperator.from_dense([[0, 1], [1, 0]]), 1)

    def test_k_out_of_range(self):
        with pytest.raises(ValueError):
            lowest_eigenpair(hop2(), 3)

    @pytest.mark.parametrize("n", [30, 3500])
    def test_orthonormal_and_small_residual(self, rng, n):
        op = random_hermitian(rng, n, density=min(1.0, 8.0 / n))
        pairs = lowest_eigenpair(op, 4)
        vals = [p[0] for p in pairs]
        assert vals == sorted(vals)
        V = np.column_stack([p[1] for p in pairs])
        np.testing.assert_allclose(V.conj().T @ V, np.eye(4), atol=1e-9)
        for lam, v in pairs:
            assert np.linalg.norm(op.matrix @ v - lam * v) <= 1e-9 * op.norm()
        if n < 100:
            np.testing.assert_allclose(vals, np.linalg.eigvalsh(op.toarray())[:4], rtol=1e-10, atol=1e-12)


class TestPropagateStep:
    def test_zero_hamiltonian(self, rng):
        v = rng.normal(size=60) + 0j
        np.testing.assert_array_equal(propagate_step(zero(60), v, 1e-3), v)

    def test_diagonal_phase(self):
        w = 3.0e9
        op = SparseOperator.from_dense(np.diag([w, 0.0]), hermitian=True)
        out = propagate_step(op, np.array([1.0, 0.0]), 2.0e-9)
        assert out[0] == pytest.approx(np.exp(-1j * w * 2e-9), abs=1e-12)
        assert np.linalg.norm(out) == pytest.approx(1.0, abs=1e-14)

    @pytest.mark.parametrize("jt", [np.pi / 4, np.pi / 2])
    def test_two_site_rabi(self, jt):
        out = propagate_step(hop2(), np.array([1.0, 0.0]), jt / J)
        assert abs(out[0]) ** 2 == pytest.approx(np.cos(jt) ** 2, abs=1e-12)

    def test_rejects_non_positive_dt(self):
        with pytest.raises(ValueError):
            propagate_step(hop2(), np.array([1.0, 0.0]), 0.0)

    @pytest.mark.parametrize("dim", [20, 200])
    def test_krylov_matches_dense_expm(self, rng, dim):
        op = random_hermitian(rng, dim, 0.05)
        v = rng.normal(size=dim) + 1j * rng.normal(size=dim)
        v /= np.linalg.norm(v)
        t = 7.0 / op.norm() * np.sqrt(dim)
        ref = sla.expm(-1j * t * op.toarray()) @ v
        got = propagate_step(op, v, t, KrylovOptions(dense_limit=0))
        assert np.linalg.norm(got - ref) < 1e-9

    def test_non_hermitian_decays(self, rng):
        op = SparseOperator.from_dense(np.diag([0.0, -0.5j * 1e6] * 40))
        v = np.ones(80, dtype=complex) / np.sqrt(80)
        out = propagate_step(op, v, 1e-6, KrylovOptions(dense_limit=0))
        np.testing.assert_allclose(np.linalg.norm(out) ** 2, 0.5 * (1 + np.exp(-1.0)), rtol=1e-10)

    @given(seed=st.integers(0, 2 ** 32 - 1), scale=st.floats(0.1, 50.0))
    @settings(max_examples=25, deadline=None)
    def test_norm_and_composition(self, seed, scale):
        rng = np.random.default_rng(seed)
        op = random_hermitian(rng, 80, 0.05)
        v = rng.normal(size=80) + 1j * rng.normal(size=80)
        v /= np.linalg.norm(v)
        dt = scale / max(op.norm(), 1e-300)
        whole = propagate_step(op, v, dt)
        halves = propagate_step(op, propagate_step(op, v, dt / 2), dt / 2)
        assert abs(np.linalg.norm(whole) - 1.0) < 1e-8
        assert np.linalg.norm(whole - halves) < 1e-8
