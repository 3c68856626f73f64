"""Shared fixtures and independent reference constructions.

The dense builders here assemble operators from Kronecker products of
truncated ladder matrices. They share no code with the package, so they
serve as oracles for the sparse label-based construction.
"""
import itertools
import math
import sys

import numpy as np
import pytest
import scipy.sparse as sp

from polariton_bh.hilbert import FULL_MODES


def ladder(cutoff):
    """Truncated annihilation matrix on occupations 0..cutoff."""
    return np.diag(np.sqrt(np.arange(1, cutoff + 1, dtype=float)), 1)


class DenseLattice:
    """Sparse tensor-product space of ``num_sites * len(modes)`` modes, each cut at ``cutoff``."""

    def __init__(self, num_sites, modes, cutoff):
        self.num_sites, self.modes, self.cutoff = num_sites, tuple(modes), cutoff
        self.nvar = num_sites * len(modes)
        self.local = cutoff + 1

    def lower(self, site, mode):
        k = site * len(self.modes) + self.modes.index(mode)
        mats = [sp.identity(self.local, format="csr")] * self.nvar
        mats[k] = sp.csr_matrix(ladder(self.cutoff))
        out = sp.csr_matrix(np.array([[1.0]]))
        for m in mats:
            out = sp.kron(out, m, format="csr")
        return out

    def raise_(self, site, mode):
        return self.lower(site, mode).T

    def number(self, site, mode):
        return self.raise_(site, mode) @ self.lower(site, mode)

    def restrict(self, dense, basis):
        """Rows/columns of ``dense`` belonging to the states of ``basis``."""
        idx = [self.flat_index(lab) for lab in basis.occupations.reshape(basis.dim, -1)]
        return sp.csr_matrix(dense)[idx][:, idx].toarray()

    def flat_index(self, label):
        i = 0
        for n in label:
            i = i * self.local + int(n)
        return i


def dense_full_hamiltonian(params, edges, lattice):
    """Reference four-mode lattice Hamiltonian on the untruncated product space."""
    H = 0.0
    for s, p in enumerate(params):
        a, s12, s13, s14 = (lattice.lower(s, m) for m in FULL_MODES)
        g = math.sqrt(p.n_atoms) * p.g13
        H = H + p.epsilon * (s12.T @ s12 + s14.T @ s14) + p.delta * s13.T @ s13 + p.big_delta * s14.T @ s14
        h = p.omega_l * s12.T @ s13 + g * a.T @ s13 + p.g24 * s14.T @ s12 @ a
        H = H + h + h.T
    for i, j in edges:
        ai, aj = lattice.lower(i, "a"), lattice.lower(j, "a")
        hop = 0.5 * (params[i].hop2wca + params[j].hop2wca) * ai.T @ aj
        H = H + hop + hop.T
    return H


def dense_bh_hamiltonian(num_sites, edges, particles_cut, kappa, j_hop, chem_pot):
    lat = DenseLattice(num_sites, ("p",), particles_cut)
    H = 0.0
    for s in range(num_sites):
        n = lat.number(s, "p")
        H = H + kappa * n @ (n - sp.identity(n.shape[0])) + chem_pot * n
    for i, j in edges:
        hop = j_hop * lat.raise_(i, "p") @ lat.lower(j, "p")
        H = H + hop + hop.T
    return lat, H


def all_labels(num_sites, n_modes, cutoff):
    """Brute-force enumeration of per-site-capped occupation labels."""
    site = [s for s in itertools.product(range(cutoff + 1), repeat=n_modes) if sum(s) <= cutoff]
    return [sum(c, ()) for c in itertools.product(site, repeat=num_sites)]


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
