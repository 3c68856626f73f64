import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from polariton_bh import model as mdl
from polariton_bh.analysis import (BHContext, FullModelContext, compare_models, dark_polariton_state,
                                   fock_state, ground_state_overlap_series, ground_subspace,
                                   number_fluctuation_series, overlap_series, polariton_number_series,
                                   w_state)
from polariton_bh.dynamics import (Ramp, Schedule, Trajectory, bh_model_hamiltonian, evolve_schrodinger,
                                   full_model_hamiltonian)
from polariton_bh.hilbert import FULL_MODES, CouplingGraph, build_basis
from polariton_bh.model import REFERENCE_PARAMS

J = 1.0e7


def frozen(states, times=None):
    states = np.atleast_2d(np.asarray(states, dtype=np.complex128))
    times = np.arange(len(states), dtype=float) if times is None else times
    return Trajectory(times, states, [], np.zeros(len(states)))


def ring_ground(num_sites, particles, kappa):
    b = mdl.bh_basis(num_sites, particles, fixed_sector=True)
    H = bh_model_hamiltonian(CouplingGraph.ring(num_sites), b, kappa=kappa, j_hop=J)
    return b, H, ground_subspace(H.at(0.0))


def site_moments(traj, basis, site):
    ctx = BHContext(basis)
    return (polariton_number_series(traj, site, ctx).values,
            number_fluctuation_series(traj, site, ctx).values)


class TestNumberAndFluctuation:
    def test_vacuum(self):
        b = build_basis(3, ("p",), 2, max_total=2)
        n, d = site_moments(frozen(b.vacuum()), b, 1)
        assert n[0] == 0 and d[0] == 0

    @given(st.lists(st.integers(0, 3), min_size=3, max_size=3))
    @settings(max_examples=30, deadline=None)
    def test_fock_state_is_sharp(self, occ):
        b = build_basis(3, ("p",), 3)
        traj = frozen(fock_state(b, occ))
        for s in range(3):
            n, d = site_moments(traj, b, s)
            assert n[0] == occ[s] and abs(d[0]) < 1e-12

    def test_w_state_fluctuation(self):
        # N/L on average, variance N^2 (L-1)/L^2
        b = mdl.bh_basis(4, 4)
        traj = frozen(w_state(4, 4, b))
        n, d = site_moments(traj, b, 2)
        assert n[0] == pytest.approx(1.0) and d[0] == pytest.approx(3.0)

    def test_two_level_superposition(self):
        b = build_basis(1, ("p",), 1)
        traj = frozen((b.basis_vector([[0]]) + b.basis_vector([[1]])) / np.sqrt(2))
        n, d = site_moments(traj, b, 0)
        assert n[0] == pytest.approx(0.5) and d[0] == pytest.approx(0.25)

    @given(st.integers(0, 2 ** 31))
    @settings(max_examples=30, deadline=None)
    def test_fluctuation_non_negative(self, seed):
        b = mdl.bh_basis(3, 3)
        rng = np.random.default_rng(seed)
        psi = rng.normal(size=b.dim) + 1j * rng.normal(size=b.dim)
        traj = frozen(psi / np.linalg.norm(psi))
        n, d = site_moments(traj, b, 0)
        assert 0 <= n[0] <= 3 and d[0] >= -1e-12

    def test_dimension_mismatch(self):
        b = mdl.bh_basis(3, 1)
        with pytest.raises(ValueError):
            polariton_number_series(frozen(np.ones(b.dim + 1) / 2), 0, BHContext(b))

    def test_series_names(self):
        b = mdl.bh_basis(2, 1)
        traj = frozen(fock_state(b, [1, 0]))
        assert polariton_number_series(traj, 1, BHContext(b)).name == "n_2"
        assert number_fluctuation_series(traj, 0, BHContext(b)).name == "delta_1"


class TestFullModelContext:
    def test_dark_polariton_counts_one(self):
        b = build_basis(2, FULL_MODES, 2, max_total=2)
        psi = dark_polariton_state(REFERENCE_PARAMS, b, [1, 1])
        ctx = FullModelContext(REFERENCE_PARAMS, b)
        for s in range(2):
            n, d = polariton_number_series(frozen(psi), s, ctx).values, number_fluctuation_series(frozen(psi), s, ctx).values
            assert n[0] == pytest.approx(1.0, abs=1e-12) and abs(d[0]) < 1e-12

    def test_bright_photon_is_not_dark(self):
        b = build_basis(1, FULL_MODES, 1)
        psi = b.basis_vector([[1, 0, 0, 0]])
        c = mdl.polariton_coefficients(REFERENCE_PARAMS)["p0"][0]
        n = polariton_number_series(frozen(psi), 0, FullModelContext(REFERENCE_PARAMS, b)).values
        assert n[0] == pytest.approx(c[0] ** 2, rel=1e-12)

    def test_tracks_schedule(self):
        b = build_basis(1, FULL_MODES, 1)
        sched = Schedule({"omega_l": Ramp("linear", 0, 1, 1e10, 1e12)})
        ctx = FullModelContext(REFERENCE_PARAMS, b, sched)
        psi = b.basis_vector([[1, 0, 0, 0]])
        traj = frozen([psi, psi], np.array([0.0, 1.0]))
        n = polariton_number_series(traj, 0, ctx).values
        expect = [mdl.polariton_coefficients(sched.apply(REFERENCE_PARAMS, t))["p0"][0][0] ** 2 for t in (0, 1)]
        np.testing.assert_allclose(n, expect, rtol=1e-12)

    def test_outside_basis(self):
        b = build_basis(1, FULL_MODES, 1)
        with pytest.raises(ValueError):
            dark_polariton_state(REFERENCE_PARAMS, b, [2])


class TestComparison:
    def setup_method(self):
        b = mdl.bh_basis(3, 1)
        H = bh_model_hamiltonian(CouplingGraph.ring(3), b, kappa=0.0, j_hop=J)
        grid = np.linspace(0, 2e-7, 11)
        self.b = b
        self.a = evolve_schrodinger(H, fock_state(b, [1, 0, 0]), grid)
        self.c = evolve_schrodinger(H, fock_state(b, [0, 1, 0]), grid)

    def test_self_comparison_is_zero(self):
        ctx = BHContext(self.b)
        cmp = compare_models(self.a, self.a, range(3), ctx, ctx)
        assert cmp.max_abs_dn == 0 and cmp.max_abs_ddelta == 0

    def test_antisymmetric(self):
        ctx = BHContext(self.b)
        x = compare_models(self.a, self.c, range(3), ctx, ctx)
        y = compare_models(self.c, self.a, range(3), ctx, ctx)
        for s in range(3):
            np.testing.assert_array_equal(x.dn[s], -y.dn[s])
            np.testing.assert_array_equal(x.ddelta[s], -y.ddelta[s])
        assert x.max_abs_dn > 0.5

    def test_grid_mismatch(self):
        ctx = BHContext(self.b)
        other = Trajectory(self.a.times * 2, self.a.states, [], self.a.decay_prob)
        with pytest.raises(ValueError):
            compare_models(self.a, other, [0], ctx, ctx)


class TestGroundState:
    def test_four_ring_single_particle(self):
        b, H, vecs = ring_ground(4, 1, 0.0)
        e = np.vdot(vecs[:, 0], H.at(0.0) @ vecs[:, 0]).real
        assert vecs.shape[1] == 1 and e == pytest.approx(-2 * J, rel=1e-12)

    def test_mott_limit(self):
        b, H, vecs = ring_ground(4, 4, 200 * J)
        n, d = site_moments(frozen(vecs[:, 0]), b, 0)
        assert n[0] == pytest.approx(1.0, abs=1e-10) and d[0] < 1e-3

    def test_superfluid_limit(self):
        # kappa = 0 gives the binomial value N(L-1)/L^2 = 3/4
        b, H, vecs = ring_ground(4, 4, 0.0)
        n, d = site_moments(frozen(vecs[:, 0]), b, 0)
        assert d[0] == pytest.approx(0.75, abs=1e-9)

    def test_attractive_limit_degenerate_w(self):
        b, H, vecs = ring_ground(4, 4, -200 * J)
        psi = w_state(4, 4, b)
        overlap = np.linalg.norm(vecs.conj().T @ psi)
        assert overlap == pytest.approx(1.0, abs=1e-3)

    def test_overlap_series_bounds(self):
        b = mdl.bh_basis(4, 4)
        sched = Schedule({"kappa": Ramp("linear", 0, 1e-6, -2e5, -4e7)})
        H = bh_model_hamiltonian(CouplingGraph.ring(4), b, kappa=-2e5, j_hop=J, schedule=sched)
        psi0 = ground_subspace(H.at(0.0))[:, 0]
        traj = evolve_schrodinger(H, psi0, np.linspace(0, 1e-6, 11))
        o = ground_state_overlap_series(traj, H).values
        w = overlap_series(traj, w_state(4, 4, b), "o_w").values
        assert o[0] == pytest.approx(1.0, abs=1e-10)
        assert np.all((0 <= o) & (o <= 1)) and np.all((0 <= w) & (w <= 1))

    def test_w_state_checks(self):
        with pytest.raises(ValueError):
            w_state(3, 4, mdl.bh_basis(4, 4))
        with pytest.raises(ValueError):
            w_state(4, 4, build_basis(4, ("p",), 2))


def test_dark_polariton_state_in_fixed_sector():
    sector = build_basis(2, FULL_MODES, 2, 2)
    capped = build_basis(2, FULL_MODES, 2, max_total=2)
    a = dark_polariton_state(REFERENCE_PARAMS, sector, [1, 1])
    b = dark_polariton_state(REFERENCE_PARAMS, capped, [1, 1])
    for i, occ in enumerate(capped.occupations):
        if b[i] != 0:
            assert a[sector.index(occ)] == pytest.approx(b[i], abs=1e-14)
    assert np.linalg.norm(a) == pytest.approx(1.0)
