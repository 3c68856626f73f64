"""Observables on trajectories and full-versus-effective model comparison."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import model as mdl
from .dynamics import ParametricHamiltonian, Schedule, Trajectory
from .hilbert import FULL_MODES, LatticeBasis, build_basis, monomial, mode_operator
from .numerics import EigensolverError, SparseOperator, lowest_eigenpair

__all__ = [
    "ObservableSeries",
    "ComparisonSeries",
    "FullModelContext",
    "BHContext",
    "polariton_number_series",
    "number_fluctuation_series",
    "compare_models",
    "ground_state_overlap_series",
    "ground_subspace",
    "dark_polariton_state",
    "overlap_series",
    "w_state",
    "fock_state",
]


@dataclass(frozen=True)
class ObservableSeries:
    name: str
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if len(self.times) != len(self.values):
            raise ValueError("series values do not match the time grid")
        if not np.all(np.isfinite(self.values)):
            raise ValueError(f"series {self.name!r} contains non-finite values")


@dataclass(frozen=True)
class ComparisonSeries:
    """Per-site differences ``first - second`` of occupations and fluctuations."""

    times: np.ndarray
    sites: tuple
    dn: dict
    ddelta: dict

    @property
    def max_abs_dn(self) -> float:
        return max(float(np.abs(v).max()) for v in self.dn.values())

    @property
    def max_abs_ddelta(self) -> float:
        return max(float(np.abs(v).max()) for v in self.ddelta.values())


class BHContext:
    """Polariton number on a one-mode lattice is the plain mode occupation."""

    def __init__(self, basis: LatticeBasis):
        if len(basis.modes) != 1:
            raise ValueError(f"BH context needs a one-mode basis, got {basis.modes}")
        self.basis = basis
        self._ops = {}

    @property
    def dim(self):
        return self.basis.dim

    def number_operator(self, site: int, t: float = 0.0):
        if site not in self._ops:
            self._ops[site] = mode_operator(self.basis, site, self.basis.modes[0], "number").matrix
        return self._ops[site]


class FullModelContext:
    """Dark-polariton number ``p0^+ p0`` of a cavity in the four-mode basis.

    ``p0`` depends on the drive, so with a schedule the operator is
    rebuilt from the parameters at each requested time.
    """

    def __init__(self, params, basis: LatticeBasis, schedule: Optional[Schedule] = None):
        if basis.modes != FULL_MODES:
            raise ValueError("full-model context needs the four-mode basis")
        if isinstance(params, mdl.AtomCavityParams):
            params = [params] * basis.num_sites
        self.params = list(params)
        self.basis = basis
        self.schedule = schedule or Schedule()
        self._bilinear = {}

    @property
    def dim(self):
        return self.basis.dim

    def _pieces(self, site):
        if site not in self._bilinear:
            b = self.basis
            self._bilinear[site] = {
                (m1, m2): monomial(b, [(site, m1, "raise"), (site, m2, "lower")]).matrix
                for m1 in ("a", "s12") for m2 in ("a", "s12")
            }
        return self._bilinear[site]

    def number_operator(self, site: int, t: float = 0.0):
        p = self.schedule.apply(self.params[site], t)
        c = mdl.polariton_coefficients(p)["p0"][0]
        coef = {"a": c[0], "s12": c[1]}
        pieces = self._pieces(site)
        return sum(coef[m1] * coef[m2] * op for (m1, m2), op in pieces.items())


def _moments(traj: Trajectory, site, context):
    n1 = np.empty(len(traj.times))
    n2 = np.empty(len(traj.times))
    if traj.states.shape[1] != context.dim:
        raise ValueError(f"trajectory dimension {traj.states.shape[1]} does not match basis {context.dim}")
    for i, (t, psi) in enumerate(zip(traj.times, traj.states)):
        n_op = context.number_operator(site, t)
        npsi = n_op @ psi
        n1[i] = np.vdot(psi, npsi).real
        n2[i] = np.vdot(npsi, npsi).real
    return n1, n2


def polariton_number_series(traj: Trajectory, site: int, context) -> ObservableSeries:
    n1, _ = _moments(traj, site, context)
    return ObservableSeries(f"n_{site + 1}", traj.times, n1)


def number_fluctuation_series(traj: Trajectory, site: int, context) -> ObservableSeries:
    """``<n^2> - <n>^2`` of one site; ``<n^2>`` is taken as ``|n psi|^2``."""
    n1, n2 = _moments(traj, site, context)
    return ObservableSeries(f"delta_{site + 1}", traj.times, n2 - n1 ** 2)


def compare_models(first: Trajectory, second: Trajectory, sites: Sequence[int],
                   first_context, second_context) -> ComparisonSeries:
    """Differences ``first - second`` of ``n_l`` and ``Delta_l`` on a shared grid."""
    if len(first.times) != len(second.times) or not np.allclose(first.times, second.times, rtol=1e-12, atol=0):
        raise ValueError("trajectories are on different time grids")
    dn, dd = {}, {}
    for s in sites:
        a1, a2 = _moments(first, s, first_context)
        b1, b2 = _moments(second, s, second_context)
        dn[s] = a1 - b1
        dd[s] = (a2 - a1 ** 2) - (b2 - b1 ** 2)
    return ComparisonSeries(first.times, tuple(sites), dn, dd)


def ground_subspace(op: SparseOperator, degeneracy_tol=1e-9, max_k=16):
    """Orthonormal basis of the lowest eigenspace, as columns."""
    k = min(op.dim, max_k)
    pairs = lowest_eigenpair(op, k)
    scale = max(abs(pairs[0][0]), abs(pairs[-1][0]), op.norm() / math.sqrt(op.dim), 1e-300)
    e0 = pairs[0][0]
    vecs = [v for e, v in pairs if e - e0 <= degeneracy_tol * scale]
    return np.column_stack(vecs)


def ground_state_overlap_series(traj: Trajectory, H: ParametricHamiltonian, degeneracy_tol=1e-9) -> ObservableSeries:
    """``|<psi(t)|phi_gs(t)>|`` with the momentary ground state of ``H(t)``.

    If the lowest level is degenerate within ``degeneracy_tol`` (relative),
    the norm of the projection onto that eigenspace is returned.
    """
    vals = np.empty(len(traj.times))
    for i, (t, psi) in enumerate(zip(traj.times, traj.states)):
        try:
            vecs = ground_subspace(H.at(t), degeneracy_tol)
        except EigensolverError as exc:
            raise EigensolverError(f"ground state at t={t:.6e}: {exc}", exc.iterations) from exc
        vals[i] = min(1.0, np.linalg.norm(vecs.conj().T @ psi))
    return ObservableSeries("o_gs", traj.times, vals)


def overlap_series(traj: Trajectory, target, name="overlap") -> ObservableSeries:
    target = np.asarray(target)
    return ObservableSeries(name, traj.times, np.minimum(1.0, np.abs(traj.states.conj() @ target)))


def fock_state(basis: LatticeBasis, occupations) -> np.ndarray:
    """One-mode basis vector with the given per-site occupations."""
    return basis.basis_vector([[n] for n in occupations])


def w_state(num_sites: int, num_particles: int, basis: LatticeBasis) -> np.ndarray:
    """Equal superposition of all states with every particle on one site."""
    if len(basis.modes) != 1:
        raise ValueError("W state is defined on a one-mode basis")
    if basis.num_sites != num_sites:
        raise ValueError(f"basis has {basis.num_sites} sites, asked for {num_sites}")
    if basis.per_site_cutoff < num_particles:
        raise ValueError(f"per-site cutoff {basis.per_site_cutoff} cannot hold {num_particles} particles")
    v = np.zeros(basis.dim, dtype=np.complex128)
    for j in range(num_sites):
        occ = [0] * num_sites
        occ[j] = num_particles
        v += fock_state(basis, occ)
    return v / np.linalg.norm(v)


def dark_polariton_state(params, basis: LatticeBasis, occupations) -> np.ndarray:
    """``prod_l (p0_l^+)^{n_l} / sqrt(n_l!)`` applied to the vacuum of the full model.

    Works on a fixed excitation sector too: the state is built in a basis
    capped at the same total and then copied over by label.
    """
    if isinstance(params, mdl.AtomCavityParams):
        params = [params] * basis.num_sites
    total = int(sum(occupations))
    work = build_basis(basis.num_sites, basis.modes, basis.per_site_cutoff, max_total=total)
    psi = work.vacuum()
    for s, n in enumerate(occupations):
        if n:
            raise_op = mdl.polariton_operators(params[s], work, s)[0]
            for _ in range(n):
                psi = raise_op @ psi
            psi = psi / math.sqrt(math.factorial(n))
    out = np.zeros(basis.dim, dtype=np.complex128)
    idx = basis._lookup(work.occupations)
    inside = idx >= 0
    out[idx[inside]] = psi[inside]
    norm = np.linalg.norm(out)
    if norm == 0:
        raise ValueError("requested polariton state lies outside the truncated basis")
    if abs(norm - np.linalg.norm(psi)) > 1e-12 * max(norm, 1.0):
        raise ValueError("truncated basis cuts part of the requested polariton state")
    return out / norm
