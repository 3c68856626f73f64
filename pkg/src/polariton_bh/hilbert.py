"""Truncated occupation-number bases for lattices of cavities.

A cavity of the full model carries four bosonic modes: the photon ``a``
and the collective atomic excitations ``s12``, ``s13`` and ``s14``. The
effective Bose-Hubbard model carries one mode ``p`` per site.

Operators are built directly on occupation labels, so products of ladder
operators are exact even when intermediate states would leave the basis
(for example inside a fixed excitation sector).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .numerics import SparseOperator

__all__ = [
    "FULL_MODES",
    "BH_MODES",
    "EXCITATION_WEIGHTS",
    "LatticeBasis",
    "CouplingGraph",
    "BasisError",
    "build_basis",
    "mode_operator",
    "monomial",
    "collective_operator",
]

FULL_MODES = ("a", "s12", "s13", "s14")
BH_MODES = ("p",)

# Excitation quanta carried by one quantum of each mode; level 4 sits at
# twice the cavity frequency, so an s14 excitation counts double.
EXCITATION_WEIGHTS = {"a": 1, "s12": 1, "s13": 1, "s14": 2, "p": 1}

COLLECTIVE_MODES = {12: "s12", 13: "s13", 14: "s14"}


class BasisError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class LatticeBasis:
    """Ordered product basis of occupation labels.

    ``occupations[k, site, mode]`` is the occupation of ``mode`` at
    ``site`` in the ``k``-th basis state. States are in lexicographic
    order of their flattened labels.
    """

    num_sites: int
    modes: tuple
    per_site_cutoff: int
    total_sector: Optional[int]
    max_total: Optional[int]
    occupations: np.ndarray = field(repr=False)
    _keys: np.ndarray = field(repr=False)
    _radix: np.ndarray = field(repr=False)

    @property
    def dim(self) -> int:
        return self.occupations.shape[0]

    def __len__(self):
        return self.dim

    @property
    def states(self):
        return [tuple(map(tuple, occ)) for occ in self.occupations.tolist()]

    def mode_index(self, mode) -> int:
        try:
            return self.modes.index(mode)
        except ValueError:
            raise BasisError(f"mode {mode!r} is not active in basis with modes {self.modes}") from None

    def excitations(self) -> np.ndarray:
        """Weighted excitation number of every basis state."""
        w = np.array([EXCITATION_WEIGHTS.get(m, 1) for m in self.modes])
        return (self.occupations * w).sum(axis=(1, 2))

    def index(self, label) -> int:
        """Position of an occupation label (nested per-site tuples)."""
        occ = np.asarray(label, dtype=np.int64).reshape(1, self.num_sites, len(self.modes))
        idx = self._lookup(occ)[0]
        if idx < 0:
            raise KeyError(f"state {label} is not in the basis")
        return int(idx)

    def _lookup(self, occ):
        # -1 marks labels outside the basis
        occ = occ.reshape(occ.shape[0], -1)
        out = np.full(occ.shape[0], -1, dtype=np.int64)
        ok = np.all((occ >= 0) & (occ <= self.per_site_cutoff), axis=1)
        if not ok.any():
            return out
        keys = occ[ok] @ self._radix
        pos = np.searchsorted(self._keys, keys)
        pos_c = np.minimum(pos, len(self._keys) - 1)
        found = self._keys[pos_c] == keys
        out[np.flatnonzero(ok)[found]] = pos_c[found]
        return out

    def basis_vector(self, label) -> np.ndarray:
        v = np.zeros(self.dim, dtype=np.complex128)
        v[self.index(label)] = 1.0
        return v

    def vacuum(self) -> np.ndarray:
        return self.basis_vector(np.zeros((self.num_sites, len(self.modes)), dtype=int))


def _site_states(n_modes, cutoff, weights):
    # all per-site occupation tuples with unweighted sum <= cutoff, lexicographic
    out = []

    def rec(prefix, left):
        if len(prefix) == n_modes:
            out.append(tuple(prefix))
            return
        for n in range(left + 1):
            rec(prefix + [n], left - n)

    rec([], cutoff)
    out.sort()
    return [(s, sum(n * w for n, w in zip(s, weights))) for s in out]


def build_basis(num_sites: int, modes: Sequence[str] = FULL_MODES, per_site_cutoff: int = 2,
                total_sector: Optional[int] = None, *, max_total: Optional[int] = None) -> LatticeBasis:
    """Enumerate all admissible product states.

    Parameters
    ----------
    num_sites : int
    modes : sequence of str
        Active modes per site, e.g. :data:`FULL_MODES` or :data:`BH_MODES`.
    per_site_cutoff : int
        Bound on the plain sum of occupations at each site.
    total_sector : int, optional
        Keep only states whose weighted excitation number equals this value.
    max_total : int, optional
        Keep only states whose weighted excitation number is at most this
        value. Closed under annihilation, which is what quantum-jump runs need.
    """
    if num_sites < 1:
        raise BasisError("num_sites must be >= 1")
    if per_site_cutoff < 0:
        raise BasisError("per_site_cutoff must be >= 0")
    modes = tuple(modes)
    if len(set(modes)) != len(modes):
        raise BasisError(f"duplicate modes in {modes}")
    weights = [EXCITATION_WEIGHTS.get(m, 1) for m in modes]
    site_states = _site_states(len(modes), per_site_cutoff, weights)
    upper = total_sector if total_sector is not None else max_total
    if total_sector is not None and max_total is not None:
        upper = min(total_sector, max_total)

    labels = []

    def rec(prefix, used, site):
        if site == num_sites:
            if total_sector is None or used == total_sector:
                labels.append(prefix)
            return
        for occ, w in site_states:
            if upper is not None and used + w > upper:
                continue
            rec(prefix + occ, used + w, site + 1)

    rec((), 0, 0)
    if not labels:
        raise BasisError(f"sector total={total_sector} is empty for {num_sites} sites with cutoff {per_site_cutoff}")
    occ = np.array(labels, dtype=np.int64).reshape(len(labels), num_sites, len(modes))
    nvar = num_sites * len(modes)
    radix = (per_site_cutoff + 1) ** np.arange(nvar - 1, -1, -1, dtype=np.int64)
    keys = occ.reshape(len(labels), -1) @ radix
    return LatticeBasis(num_sites, modes, per_site_cutoff, total_sector, max_total, occ, keys, radix)


def monomial(basis: LatticeBasis, factors, coefficient=1.0, *, scale=None) -> SparseOperator:
    """Product of ladder operators, applied right to left.

    ``factors`` is a sequence of ``(site, mode, kind)`` with ``kind`` in
    ``{"raise", "lower"}``. Matrix elements are the bosonic ``sqrt(n)`` and
    ``sqrt(n+1)``; components leaving the basis are dropped at the end.
    ``scale``, if given, maps ``(site, mode, kind, n)`` to an extra factor
    for the transition from occupation ``n``.
    """
    occ = basis.occupations.copy()
    amp = np.full(basis.dim, complex(coefficient))
    for site, mode, kind in reversed(list(factors)):
        _check_site(basis, site)
        mi = basis.mode_index(mode)
        n = occ[:, site, mi]
        if kind == "lower":
            amp = amp * np.sqrt(np.clip(n, 0, None))
            if scale is not None:
                amp = amp * scale(site, mode, kind, n - 1)
            occ[:, site, mi] = n - 1
        elif kind == "raise":
            amp = amp * np.sqrt(np.clip(n + 1, 0, None))
            if scale is not None:
                amp = amp * scale(site, mode, kind, n)
            occ[:, site, mi] = n + 1
        else:
            raise ValueError(f"unknown ladder kind {kind!r}")
    valid = amp != 0
    rows = basis._lookup(np.where(valid[:, None, None], occ, -1))
    keep = rows >= 0
    cols = np.flatnonzero(keep)
    return SparseOperator.from_entries(basis.dim, rows[keep], cols, amp[keep])


def mode_operator(basis: LatticeBasis, site: int, mode: str, kind: str) -> SparseOperator:
    """Single-mode ``raise``, ``lower`` or ``number`` operator, projector-truncated."""
    if kind == "number":
        _check_site(basis, site)
        mi = basis.mode_index(mode)
        n = basis.occupations[:, site, mi].astype(float)
        idx = np.arange(basis.dim)
        return SparseOperator.from_entries(basis.dim, idx, idx, n, hermitian=True)
    return monomial(basis, [(site, mode, kind)])


def collective_operator(basis: LatticeBasis, site: int, transition: int,
                        finite_n: Optional[int] = None) -> SparseOperator:
    """Collective raising operator ``S_1k^dagger`` for ``k`` in 12, 13, 14.

    Without ``finite_n`` the bosonic large-N limit is returned. With an atom
    number ``N`` the transition from ``n`` to ``n+1`` collective excitations
    carries the Dicke factor ``sqrt(1 - n/N)``; the one-excitation element is
    unchanged.
    """
    try:
        mode = COLLECTIVE_MODES[int(transition)]
    except (KeyError, ValueError):
        raise BasisError(f"transition must be one of 12, 13, 14, got {transition!r}") from None
    if finite_n is None:
        return mode_operator(basis, site, mode, "raise")
    if finite_n < basis.per_site_cutoff:
        raise BasisError(f"finite_n={finite_n} is below the per-site cutoff {basis.per_site_cutoff}")

    def dicke(_site, _mode, _kind, n):
        return np.sqrt(np.clip(1.0 - n / finite_n, 0.0, None))

    return monomial(basis, [(site, mode, "raise")], scale=dicke)


def _check_site(basis, site):
    if not 0 <= site < basis.num_sites:
        raise BasisError(f"site {site} out of range for {basis.num_sites} sites")


def multiset_count(n_vars: int, total: int) -> int:
    """Number of ways to put ``total`` quanta into ``n_vars`` modes."""
    return math.comb(total + n_vars - 1, n_vars - 1)


@dataclass(frozen=True)
class CouplingGraph:
    """Nearest-neighbour pairs of cavities; edges are stored with ``i < j``."""

    num_sites: int
    edges: tuple
    periodic: bool = False

    def __post_init__(self):
        if self.num_sites < 1:
            raise BasisError("num_sites must be >= 1")
        norm = []
        for i, j in self.edges:
            i, j = int(i), int(j)
            if i == j:
                raise BasisError(f"self-edge at site {i}")
            if not (0 <= i < self.num_sites and 0 <= j < self.num_sites):
                raise BasisError(f"edge ({i}, {j}) references a missing site")
            norm.append((min(i, j), max(i, j)))
        if len(set(norm)) != len(norm):
            raise BasisError("duplicate edges")
        object.__setattr__(self, "edges", tuple(sorted(norm)))

    @classmethod
    def chain(cls, num_sites: int, periodic: bool = False) -> "CouplingGraph":
        edges = {(i, i + 1) for i in range(num_sites - 1)}
        if periodic and num_sites > 2:
            edges.add((0, num_sites - 1))
        return cls(num_sites, tuple(sorted(edges)), periodic)

    @classmethod
    def ring(cls, num_sites: int) -> "CouplingGraph":
        return cls.chain(num_sites, periodic=True)

    def adjacency(self) -> np.ndarray:
        m = np.zeros((self.num_sites, self.num_sites))
        for i, j in self.edges:
            m[i, j] = m[j, i] = 1.0
        return m
