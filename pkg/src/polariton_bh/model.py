"""Atom-cavity Hamiltonians, dark-state polaritons and effective parameters.

Conventions
-----------
Each cavity holds ``N`` four-level atoms driven by a laser on the 2-3
transition (Rabi frequency ``omega_l``) and coupled to the cavity mode on
the 1-3 (``g13``) and 2-4 (``g24``) transitions. In the frame rotating with
the cavity frequency the on-site Hamiltonian in collective bosonic modes is::

    H_site = eps n12 + delta n13 + (Delta + eps) n14
             + omega_l (S12^+ S13 + h.c.)
             + g (a^+ S13 + h.c.)                 g = sqrt(N) g13
             + g24 (S12^+ S14 a^+ + h.c.)

and neighbouring cavities exchange photons with amplitude ``hop2wca``
(the product ``2 omega_C alpha``).
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields, replace
from typing import Sequence

import numpy as np

from .hilbert import BH_MODES, FULL_MODES, CouplingGraph, LatticeBasis, monomial, mode_operator
from .numerics import SparseOperator, zero

__all__ = [
    "AtomCavityParams",
    "EffectiveParams",
    "ValidityReport",
    "ModelError",
    "effective_parameters",
    "validity_report",
    "full_hamiltonian",
    "full_hamiltonian_terms",
    "polariton_coefficients",
    "polariton_operators",
    "effective_bh_hamiltonian",
    "bh_hamiltonian_terms",
    "edge_hopping",
    "dark_polariton_lower",
    "bh_basis",
    "REFERENCE_PARAMS",
]


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class AtomCavityParams:
    """Microscopic parameters of one cavity, all rates in s^-1."""

    g13: float
    g24: float
    omega_l: float
    delta: float
    big_delta: float
    epsilon: float = 0.0
    n_atoms: int = 1
    hop2wca: float = 0.0
    gamma_c: float = 0.0
    gamma_4: float = 0.0

    def __post_init__(self):
        if not self.g13 > 0:
            raise ModelError(f"g13 must be positive, got {self.g13}")
        if int(self.n_atoms) != self.n_atoms or self.n_atoms < 1:
            raise ModelError(f"n_atoms must be a positive integer, got {self.n_atoms}")
        object.__setattr__(self, "n_atoms", int(self.n_atoms))
        if self.gamma_c < 0 or self.gamma_4 < 0:
            raise ModelError("decay rates must be non-negative")
        for f in fields(self):
            if not math.isfinite(getattr(self, f.name)):
                raise ModelError(f"{f.name} must be finite")

    def with_values(self, **changes) -> "AtomCavityParams":
        return replace(self, **changes)

    def as_dict(self) -> dict:
        return asdict(self)


# Toroidal micro-cavity parameters of the three-cavity dynamics example.
# The laser Rabi frequency is set to sqrt(N) g13, the value for which the
# closed forms give kappa ~ 1.6e7 and J = 2.0e7.
REFERENCE_PARAMS = AtomCavityParams(
    g13=2.5e9, g24=2.5e9, omega_l=2.5e11, delta=1.0e12, big_delta=-1.0e11,
    epsilon=0.0, n_atoms=10000, hop2wca=0.4e8, gamma_c=0.4e5, gamma_4=1.6e7,
)


@dataclass(frozen=True)
class EffectiveParams:
    g: float
    b: float
    a_freq: float
    mu0: float
    mu_plus: float
    mu_minus: float
    kappa: float
    j_hop: float
    gamma_pol: float
    chem_pot: float

    def as_dict(self) -> dict:
        return asdict(self)


def effective_parameters(p: AtomCavityParams) -> EffectiveParams:
    """Closed-form dark-polariton Bose-Hubbard parameters.

    ``kappa`` is the on-site interaction (a doubly occupied cavity is
    shifted by ``2 kappa``), ``j_hop`` the hopping, ``gamma_pol`` the
    polariton decay rate and ``chem_pot`` the shift ``eps g^2 / B^2``.
    """
    g2 = p.n_atoms * p.g13 ** 2
    om2 = p.omega_l ** 2
    g = math.sqrt(g2)
    b2 = g2 + om2
    if b2 == 0.0:
        raise ModelError("g^2 + omega_l^2 underflows; polariton basis is undefined")
    b = math.sqrt(b2)
    a = math.sqrt(4.0 * b2 + p.delta ** 2)
    # A +- delta without cancellation, using (A + delta)(A - delta) = 4 B^2
    if p.delta >= 0:
        a_plus = a + p.delta
        a_minus = 4.0 * b2 / a_plus
    else:
        a_minus = a - p.delta
        a_plus = 4.0 * b2 / a_minus
    if p.g24 != 0.0 and p.big_delta == 0.0:
        raise ModelError("big_delta = 0 with g24 != 0: perturbative kappa is undefined")
    if p.g24 == 0.0:
        kappa = 0.0
        level4 = 0.0
    else:
        kappa = -(p.g24 ** 2 / p.big_delta) * g2 * om2 / b2 ** 2
        level4 = p.g24 ** 2 * g2 / (p.big_delta ** 2 * b2) * p.gamma_4
    gamma = (2.0 * om2 / b2) * (p.gamma_c / 2.0 + level4)
    return EffectiveParams(
        g=g, b=b, a_freq=a, mu0=0.0,
        mu_plus=-a_minus / 2.0, mu_minus=a_plus / 2.0,
        kappa=kappa, j_hop=p.hop2wca * om2 / b2,
        gamma_pol=gamma, chem_pot=p.epsilon * g2 / b2,
    )


@dataclass(frozen=True)
class ValidityReport:
    """Dimensionless smallness ratios of the effective description.

    Every ratio should be small; ``kappa_over_gamma`` enters inverted
    (``gamma/kappa``) so that the same threshold applies.
    """

    ratios: dict
    threshold: float
    passed: dict

    @property
    def status(self) -> dict:
        out = {}
        for k, v in self.ratios.items():
            r = v if k != "kappa_over_gamma" else (1.0 / v if v else math.inf)
            out[k] = "ok" if r <= self.threshold else ("marginal" if r <= 1.0 else "violated")
        return out

    def rows(self):
        st = self.status
        return [(k, v, self.passed[k], st[k]) for k, v in self.ratios.items()]


def validity_report(p: AtomCavityParams, threshold: float = 0.1) -> ValidityReport:
    e = effective_parameters(p)
    mu_min = min(abs(e.mu_plus), abs(e.mu_minus))
    ratios = {
        "g24_over_mu": abs(p.g24) / mu_min,
        "eps_over_mu": abs(p.epsilon) / mu_min,
        "delta4_over_mu": abs(p.big_delta) / mu_min,
        "g24_over_delta4": abs(p.g24) / abs(p.big_delta) if p.big_delta else (0.0 if p.g24 == 0 else math.inf),
        "omega_over_g": abs(p.omega_l) / e.g,
        "kappa_over_gamma": abs(e.kappa) / e.gamma_pol if e.gamma_pol else math.inf,
    }
    passed = {}
    for k, v in ratios.items():
        if k == "kappa_over_gamma":
            passed[k] = v >= 1.0 / threshold
        else:
            passed[k] = v <= threshold
    return ValidityReport(ratios, threshold, passed)


def _check_full_basis(basis, graph, params):
    if basis.modes != FULL_MODES:
        raise ModelError(f"full model needs modes {FULL_MODES}, basis has {basis.modes}")
    if graph.num_sites != basis.num_sites:
        raise ModelError(f"graph has {graph.num_sites} sites, basis has {basis.num_sites}")
    if params is not None and len(params) != basis.num_sites:
        raise ModelError(f"{len(params)} parameter sets for {basis.num_sites} sites")


def _herm(op: SparseOperator) -> SparseOperator:
    return SparseOperator(op.matrix + op.matrix.conj().T, hermitian=True)


def full_hamiltonian_terms(graph: CouplingGraph, basis: LatticeBasis):
    """Coefficient-free building blocks of the full Hamiltonian.

    Returns a list of ``(name, index, operator)``: per-site terms carry the
    site as index and are multiplied by the named parameter (``epsilon``,
    ``delta``, ``big_delta``, ``omega_l``, ``g``, ``g24``); hopping terms
    carry the edge and are multiplied by ``hop2wca``.
    """
    _check_full_basis(basis, graph, None)
    terms = []
    for s in range(basis.num_sites):
        n12 = mode_operator(basis, s, "s12", "number")
        n13 = mode_operator(basis, s, "s13", "number")
        n14 = mode_operator(basis, s, "s14", "number")
        terms.append(("epsilon", s, n12 + n14))
        terms.append(("delta", s, n13))
        terms.append(("big_delta", s, n14))
        terms.append(("omega_l", s, _herm(monomial(basis, [(s, "s12", "raise"), (s, "s13", "lower")]))))
        terms.append(("g", s, _herm(monomial(basis, [(s, "a", "raise"), (s, "s13", "lower")]))))
        terms.append(("g24", s, _herm(monomial(
            basis, [(s, "s14", "raise"), (s, "s12", "lower"), (s, "a", "lower")]))))
    for i, j in graph.edges:
        terms.append(("hop2wca", (i, j), _herm(monomial(basis, [(i, "a", "raise"), (j, "a", "lower")]))))
    return terms


def full_term_coefficient(name, index, params: Sequence[AtomCavityParams]) -> float:
    if name == "hop2wca":
        i, j = index
        # a per-edge amplitude only makes sense if both cavities agree
        return 0.5 * (params[i].hop2wca + params[j].hop2wca)
    p = params[index]
    if name == "g":
        return math.sqrt(p.n_atoms) * p.g13
    return float(getattr(p, name))


def full_hamiltonian(params, graph: CouplingGraph, basis: LatticeBasis) -> SparseOperator:
    """Full atom-cavity Hamiltonian of the array in the rotating frame."""
    if isinstance(params, AtomCavityParams):
        params = [params] * basis.num_sites
    params = list(params)
    _check_full_basis(basis, graph, params)
    h = zero(basis.dim)
    for name, index, op in full_hamiltonian_terms(graph, basis):
        c = full_term_coefficient(name, index, params)
        if c != 0.0:
            h = h + c * op
    return h.as_hermitian()


def polariton_coefficients(p: AtomCavityParams) -> dict:
    """Mode amplitudes ``(a, s12, s13)`` of the three polariton creation operators.

    Also returns each species' single-excitation energy under the on-site
    Hamiltonian with ``g24 = eps = 0``. The ``p+`` vector (positive ``s13``
    amplitude) sits at ``(delta + A)/2`` and ``p-`` at ``(delta - A)/2``.
    """
    e = effective_parameters(p)
    g, b, a, d, om = e.g, e.b, e.a_freq, p.delta, p.omega_l
    # (A + d)(A - d) = 4 B^2; take the small factor from the large one
    if d >= 0:
        a_plus = a + d
        a_minus = 4.0 * b * b / a_plus
    else:
        a_minus = a - d
        a_plus = 4.0 * b * b / a_minus
    guard = 1e-12 * b * b
    if a * a_plus <= guard or a * a_minus <= guard:
        raise ModelError("degenerate polariton normalization A(A +- delta) ~ 0")
    cp = math.sqrt(2.0 / (a * a_plus))
    cm = math.sqrt(2.0 / (a * a_minus))
    return {
        "p0": (np.array([-om / b, g / b, 0.0]), 0.0),
        "p+": (cp * np.array([g, om, a_plus / 2.0]), a_plus / 2.0),
        "p-": (cm * np.array([g, om, -a_minus / 2.0]), -a_minus / 2.0),
    }


def _combination(basis, site, coeffs, kind):
    op = zero(basis.dim)
    for c, mode in zip(coeffs, ("a", "s12", "s13")):
        if c != 0.0:
            op = op + float(c) * mode_operator(basis, site, mode, kind)
    return op


def polariton_operators(p: AtomCavityParams, basis: LatticeBasis, site: int):
    """Creation operators ``(p0^+, p+^+, p-^+)`` of one cavity."""
    if basis.modes != FULL_MODES:
        raise ModelError("polariton operators need the four-mode basis")
    c = polariton_coefficients(p)
    return tuple(_combination(basis, site, c[k][0], "raise") for k in ("p0", "p+", "p-"))


def dark_polariton_lower(p: AtomCavityParams, basis: LatticeBasis, site: int) -> SparseOperator:
    return _combination(basis, site, polariton_coefficients(p)["p0"][0], "lower")


def bh_hamiltonian_terms(graph: CouplingGraph, basis: LatticeBasis):
    """Building blocks of the effective Hamiltonian.

    Returns ``(name, index, operator)`` with ``name`` in ``kappa`` (site
    term ``n(n-1)``), ``chem_pot`` (site term ``n``) and ``j_hop`` (edge
    term ``p_i^+ p_j + h.c.``).
    """
    if len(basis.modes) != 1:
        raise ModelError(f"effective model needs a one-mode basis, got {basis.modes}")
    if graph.num_sites != basis.num_sites:
        raise ModelError(f"graph has {graph.num_sites} sites, basis has {basis.num_sites}")
    mode = basis.modes[0]
    idx = np.arange(basis.dim)
    terms = []
    for s in range(basis.num_sites):
        n = basis.occupations[:, s, 0].astype(float)
        terms.append(("kappa", s, SparseOperator.from_entries(basis.dim, idx, idx, n * (n - 1), hermitian=True)))
        terms.append(("chem_pot", s, mode_operator(basis, s, mode, "number")))
    for i, j in graph.edges:
        terms.append(("j_hop", (i, j), _herm(monomial(basis, [(i, mode, "raise"), (j, mode, "lower")]))))
    return terms


def edge_hopping(p_i: AtomCavityParams, p_j: AtomCavityParams) -> float:
    """Polariton hopping between two cavities with possibly different drives."""
    f_i = p_i.omega_l / math.sqrt(p_i.n_atoms * p_i.g13 ** 2 + p_i.omega_l ** 2)
    f_j = p_j.omega_l / math.sqrt(p_j.n_atoms * p_j.g13 ** 2 + p_j.omega_l ** 2)
    return 0.5 * (p_i.hop2wca + p_j.hop2wca) * f_i * f_j


def effective_bh_hamiltonian(kappa, j_hop, chem_pot, graph: CouplingGraph, basis: LatticeBasis) -> SparseOperator:
    """``kappa sum n(n-1) + J sum (p_i^+ p_j + h.c.) + chem_pot sum n``."""
    coeff = {"kappa": kappa, "j_hop": j_hop, "chem_pot": chem_pot}
    h = zero(basis.dim)
    for name, _index, op in bh_hamiltonian_terms(graph, basis):
        if coeff[name] != 0.0:
            h = h + coeff[name] * op
    return h.as_hermitian()


def bh_basis(num_sites, num_particles, *, cutoff=None, fixed_sector=False) -> LatticeBasis:
    """One-mode basis; the per-site cutoff defaults to the particle number."""
    from .hilbert import build_basis

    cutoff = num_particles if cutoff is None else cutoff
    if fixed_sector:
        return build_basis(num_sites, BH_MODES, cutoff, num_particles)
    return build_basis(num_sites, BH_MODES, cutoff, max_total=num_particles)
