"""Schrodinger and quantum-jump evolution under time-dependent Hamiltonians.

Time dependence enters through a :class:`Schedule` of parameter ramps.
A :class:`ParametricHamiltonian` is a fixed list of operators with scalar
coefficients that may depend on time; it is stepped with the fourth-order
commutator-free Magnus scheme, each exponential being evaluated by
:func:`numerics.propagate_step`.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp

from . import model as mdl
from .hilbert import BH_MODES, FULL_MODES, CouplingGraph, LatticeBasis, mode_operator
from .numerics import DEFAULT_KRYLOV, KrylovOptions, PropagationError, SparseOperator, propagate_step

__all__ = [
    "Ramp",
    "Schedule",
    "ParametricHamiltonian",
    "JumpOperator",
    "Trajectory",
    "EnsembleResult",
    "IntegratorOptions",
    "full_model_hamiltonian",
    "bh_model_hamiltonian",
    "build_jump_operators",
    "evolve_schrodinger",
    "quantum_jump_trajectory",
    "ensemble_run",
    "trajectory_seed",
]

RAMP_KINDS = ("constant", "linear", "loglinear")


@dataclass(frozen=True)
class Ramp:
    """One segment of a parameter schedule on ``[t_start, t_end]``."""

    kind: str
    t_start: float
    t_end: float
    start: float
    end: float

    def __post_init__(self):
        if self.kind not in RAMP_KINDS:
            raise ValueError(f"ramp kind must be one of {RAMP_KINDS}, got {self.kind!r}")
        if not self.t_end > self.t_start:
            raise ValueError(f"ramp needs t_end > t_start, got [{self.t_start}, {self.t_end}]")
        if not (math.isfinite(self.start) and math.isfinite(self.end)):
            raise ValueError("ramp values must be finite")
        if self.kind == "constant" and self.start != self.end:
            raise ValueError("constant ramp needs start == end")
        if self.kind == "loglinear" and (self.start == 0 or self.start * self.end <= 0):
            raise ValueError("log-linear ramp needs nonzero endpoint values of equal sign")

    def __call__(self, t: float) -> float:
        if t <= self.t_start:
            return self.start
        if t >= self.t_end:
            return self.end
        s = (t - self.t_start) / (self.t_end - self.t_start)
        if self.kind == "constant":
            return self.start
        if self.kind == "linear":
            return self.start + s * (self.end - self.start)
        return self.start * (self.end / self.start) ** s


@dataclass(frozen=True)
class Schedule:
    """Piecewise parameter ramps keyed by parameter name.

    Segments of one parameter must be contiguous and ordered; outside
    the covered range the nearest endpoint value is held.
    """

    ramps: dict = field(default_factory=dict)

    def __post_init__(self):
        norm = {}
        for name, segs in self.ramps.items():
            if isinstance(segs, Ramp):
                segs = (segs,)
            segs = tuple(sorted(segs, key=lambda r: r.t_start))
            for a, b in zip(segs, segs[1:]):
                if not math.isclose(a.t_end, b.t_start, rel_tol=1e-12, abs_tol=0.0):
                    raise ValueError(f"schedule for {name!r} has a gap or overlap at t={a.t_end}")
            norm[name] = segs
        object.__setattr__(self, "ramps", norm)

    def __contains__(self, name):
        return name in self.ramps

    @property
    def names(self):
        return tuple(self.ramps)

    def value(self, name: str, t: float) -> float:
        segs = self.ramps[name]
        for r in segs:
            if t <= r.t_end:
                return r(t)
        return segs[-1](t)

    def covers(self, t0: float, t1: float) -> bool:
        return all(segs[0].t_start <= t0 and segs[-1].t_end >= t1 for segs in self.ramps.values())

    def validate_window(self, t0: float, t1: float):
        for name, segs in self.ramps.items():
            if segs[0].t_start > t0 or segs[-1].t_end < t1:
                raise ValueError(f"schedule for {name!r} does not cover [{t0}, {t1}]")

    def apply(self, params: mdl.AtomCavityParams, t: float) -> mdl.AtomCavityParams:
        changes = {k: self.value(k, t) for k in self.ramps if hasattr(params, k)}
        return params.with_values(**changes) if changes else params


Coefficient = Union[float, complex, Callable[[float], float]]


class ParametricHamiltonian:
    """``H(t) = sum_k c_k(t) O_k`` over a shared sparsity pattern.

    Coefficients are numbers or callables of time. All operators are
    scattered onto the union pattern once, so evaluating ``H`` at a new
    time is a single small matrix-vector product on the stored entries.
    """

    def __init__(self, terms: Sequence, dim: Optional[int] = None, hermitian: bool = True):
        terms = [(c, op) for c, op in terms]
        if dim is None:
            if not terms:
                raise ValueError("dim is required for an empty Hamiltonian")
            dim = terms[0][1].dim
        self.dim = dim
        self.hermitian = hermitian
        self.terms = terms
        self._static = all(not callable(c) for c, _ in terms)
        if terms:
            pattern = sum((abs(op.matrix) for _, op in terms), sp.csr_array((dim, dim))).tocsr()
            pattern.data[:] = 1.0
            pattern.sort_indices()
            self._indptr, self._indices = pattern.indptr, pattern.indices
            rows = np.repeat(np.arange(dim), np.diff(self._indptr))
            lookup = {(r, c): k for k, (r, c) in enumerate(zip(rows.tolist(), self._indices.tolist()))}
            data = np.zeros((len(terms), pattern.nnz), dtype=np.complex128)
            for i, (_, op) in enumerate(terms):
                coo = op.matrix.tocoo()
                pos = [lookup[(r, c)] for r, c in zip(coo.row.tolist(), coo.col.tolist())]
                data[i, pos] = coo.data
            self._data = data
        else:
            self._indptr = np.zeros(dim + 1, dtype=np.int32)
            self._indices = np.zeros(0, dtype=np.int32)
            self._data = np.zeros((0, 0), dtype=np.complex128)
        self._static_matrix = None

    @property
    def is_static(self) -> bool:
        return self._static

    def coefficients(self, t: float) -> np.ndarray:
        return np.array([c(t) if callable(c) else c for c, _ in self.terms], dtype=np.complex128)

    def _build(self, coeffs) -> sp.csr_array:
        data = coeffs @ self._data if len(coeffs) else np.zeros(0, dtype=np.complex128)
        # copies: callers may prune the result in place
        return sp.csr_array((data, self._indices.copy(), self._indptr.copy()), shape=(self.dim, self.dim))

    def matrix_at(self, t: float) -> sp.csr_array:
        if self._static:
            if self._static_matrix is None:
                self._static_matrix = self._build(self.coefficients(0.0))
            return self._static_matrix
        return self._build(self.coefficients(t))

    def combine(self, times, weights) -> sp.csr_array:
        """``sum_j weights[j] H(times[j])`` as a CSR matrix."""
        coeffs = sum(w * self.coefficients(t) for t, w in zip(times, weights))
        return self._build(coeffs)

    def at(self, t: float) -> SparseOperator:
        return SparseOperator(self.matrix_at(t), hermitian=self.hermitian)

    def with_terms(self, extra, hermitian: Optional[bool] = None) -> "ParametricHamiltonian":
        return ParametricHamiltonian(self.terms + list(extra), self.dim,
                                     self.hermitian if hermitian is None else hermitian)


def _site_params(params, num_sites):
    if isinstance(params, mdl.AtomCavityParams):
        return [params] * num_sites
    params = list(params)
    if len(params) != num_sites:
        raise ValueError(f"{len(params)} parameter sets for {num_sites} sites")
    return params


def full_model_hamiltonian(params, graph: CouplingGraph, basis: LatticeBasis,
                           schedule: Optional[Schedule] = None) -> ParametricHamiltonian:
    """Full atom-cavity array Hamiltonian with scheduled parameters."""
    params = _site_params(params, basis.num_sites)
    schedule = schedule or Schedule()
    terms = []
    for name, index, op in mdl.full_hamiltonian_terms(graph, basis):
        deps = {"g": ("g13", "n_atoms")}.get(name, (name,))
        if any(d in schedule for d in deps):
            def coef(t, name=name, index=index):
                current = [schedule.apply(p, t) for p in params]
                return mdl.full_term_coefficient(name, index, current)
            terms.append((coef, op))
        else:
            c = mdl.full_term_coefficient(name, index, params)
            if c != 0.0:
                terms.append((c, op))
    return ParametricHamiltonian(terms, basis.dim)


def bh_model_hamiltonian(graph: CouplingGraph, basis: LatticeBasis, *, params=None,
                         kappa=None, j_hop=None, chem_pot=0.0,
                         schedule: Optional[Schedule] = None) -> ParametricHamiltonian:
    """Effective Bose-Hubbard Hamiltonian.

    Either ``params`` (microscopic, per site; the coefficients then follow
    the closed forms at every instant) or direct ``kappa``, ``j_hop`` and
    ``chem_pot`` values, which ``schedule`` may ramp.
    """
    schedule = schedule or Schedule()
    terms = []
    if params is not None:
        if kappa is not None or j_hop is not None:
            raise ValueError("give either microscopic params or direct kappa/j_hop, not both")
        params = _site_params(params, basis.num_sites)
        timed = bool(schedule.names)

        def eff(index, t):
            ps = [schedule.apply(p, t) for p in params] if timed else params
            return ps

        for name, index, op in mdl.bh_hamiltonian_terms(graph, basis):
            def coef(t, name=name, index=index):
                ps = eff(index, t)
                if name == "j_hop":
                    return mdl.edge_hopping(ps[index[0]], ps[index[1]])
                return getattr(mdl.effective_parameters(ps[index]), name)
            terms.append((coef if timed else coef(0.0), op))
    else:
        if kappa is None or j_hop is None:
            raise ValueError("kappa and j_hop are required without microscopic params")
        direct = {"kappa": kappa, "j_hop": j_hop, "chem_pot": chem_pot}
        for name, index, op in mdl.bh_hamiltonian_terms(graph, basis):
            if name in schedule:
                terms.append((lambda t, name=name: schedule.value(name, t), op))
            elif direct[name] != 0.0:
                terms.append((direct[name], op))
    return ParametricHamiltonian(terms, basis.dim)


@dataclass(frozen=True)
class JumpOperator:
    """Collapse channel ``L`` with rate ``rate`` (s^-1, may depend on time)."""

    operator: SparseOperator
    rate: Coefficient
    label: str = ""

    def __post_init__(self):
        if not callable(self.rate) and self.rate < 0:
            raise ValueError(f"jump rate must be non-negative, got {self.rate}")

    def rate_at(self, t: float) -> float:
        r = self.rate(t) if callable(self.rate) else self.rate
        if r < 0:
            raise ValueError(f"negative jump rate {r} at t={t}")
        return float(r)


def build_jump_operators(params, basis: LatticeBasis, graph: Optional[CouplingGraph] = None,
                         schedule: Optional[Schedule] = None) -> list:
    """Decay channels for the full or effective model.

    Four-mode basis: cavity decay ``a`` at ``gamma_c`` and collective
    level-4 decay ``S14`` (to the ground manifold) at ``gamma_4`` per site.
    One-mode basis: polariton loss at the closed-form ``gamma_pol``.
    Channels with a constant zero rate are omitted.
    """
    params = _site_params(params, basis.num_sites)
    schedule = schedule or Schedule()
    timed = bool(schedule.names)
    jumps = []
    if basis.modes == FULL_MODES:
        for s, p in enumerate(params):
            for mode, attr in (("a", "gamma_c"), ("s14", "gamma_4")):
                op = mode_operator(basis, s, mode, "lower")
                if attr in schedule:
                    jumps.append(JumpOperator(op, lambda t, attr=attr: schedule.value(attr, t), f"{mode}_{s + 1}"))
                elif getattr(p, attr) > 0:
                    jumps.append(JumpOperator(op, getattr(p, attr), f"{mode}_{s + 1}"))
    elif len(basis.modes) == 1:
        mode = basis.modes[0]
        for s, p in enumerate(params):
            op = mode_operator(basis, s, mode, "lower")
            if timed:
                rate = lambda t, p=p: mdl.effective_parameters(schedule.apply(p, t)).gamma_pol
                jumps.append(JumpOperator(op, rate, f"{mode}_{s + 1}"))
            else:
                g = mdl.effective_parameters(p).gamma_pol
                if g > 0:
                    jumps.append(JumpOperator(op, g, f"{mode}_{s + 1}"))
    else:
        raise ValueError(f"no decay model for modes {basis.modes}")
    return jumps


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    jumps: list
    decay_prob: np.ndarray
    seed: Optional[int] = None

    def __len__(self):
        return len(self.times)

    def expectation(self, op) -> np.ndarray:
        m = op.matrix if isinstance(op, SparseOperator) else op
        return np.real(np.einsum("ti,ti->t", self.states.conj(), (m @ self.states.T).T))


@dataclass(frozen=True)
class IntegratorOptions:
    """``max_step`` bounds one Magnus step (defaults to the output spacing);
    ``jump_rtol`` is the relative accuracy of the norm at a located jump."""

    max_step: Optional[float] = None
    krylov: KrylovOptions = DEFAULT_KRYLOV
    jump_rtol: float = 1e-10
    max_bisections: int = 200


# fourth-order commutator-free Magnus: Gauss nodes and mixing weights
_C1 = 0.5 - math.sqrt(3.0) / 6.0
_C2 = 0.5 + math.sqrt(3.0) / 6.0
_A1 = (3.0 - 2.0 * math.sqrt(3.0)) / 12.0
_A2 = (3.0 + 2.0 * math.sqrt(3.0)) / 12.0


class _Stepper:
    def __init__(self, H: ParametricHamiltonian, options: IntegratorOptions):
        self.H = H
        self.opts = options
        self._dense_cache = {}

    def step(self, psi, t0, t1):
        h = t1 - t0
        if h <= 0:
            return psi.copy()
        H = self.H
        kopts = self.opts.krylov
        if H.is_static:
            m = H.matrix_at(t0)
            if m.shape[0] <= kopts.dense_limit:
                key = h
                u = self._dense_cache.get(key)
                if u is None:
                    import scipy.linalg as sla
                    u = sla.expm(-1j * h * m.toarray())
                    if len(self._dense_cache) < 64:
                        self._dense_cache[key] = u
                return u @ psi
            return propagate_step(m, psi, h, kopts)
        ta, tb = t0 + _C1 * h, t0 + _C2 * h
        first = H.combine((ta, tb), (2 * _A2, 2 * _A1))
        second = H.combine((ta, tb), (2 * _A1, 2 * _A2))
        # each exponent carries weight 1/2 of the step after the factor 2 above
        psi = propagate_step(first, psi, h / 2, kopts)
        return propagate_step(second, psi, h / 2, kopts)


def _substeps(t0, t1, max_step):
    if max_step is None or max_step <= 0 or t1 - t0 <= max_step:
        return [(t0, t1)]
    n = int(math.ceil((t1 - t0) / max_step - 1e-12))
    edges = np.linspace(t0, t1, n + 1)
    return list(zip(edges[:-1], edges[1:]))


def _check_grid(grid):
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or len(grid) < 1:
        raise ValueError("time grid must be a non-empty 1-d array")
    if np.any(np.diff(grid) <= 0):
        raise ValueError("time grid must be strictly increasing")
    return grid


def _check_psi(psi0, dim):
    psi0 = np.asarray(psi0, dtype=np.complex128)
    if psi0.shape != (dim,):
        raise ValueError(f"initial state has shape {psi0.shape}, expected ({dim},)")
    n = np.linalg.norm(psi0)
    if abs(n - 1.0) > 1e-8:
        raise ValueError(f"initial state must be normalized, norm = {n}")
    return psi0


def evolve_schrodinger(H: ParametricHamiltonian, psi0, grid, options: IntegratorOptions = IntegratorOptions()) -> Trajectory:
    """Solve ``i d psi/dt = H(t) psi`` and record the state on ``grid``."""
    grid = _check_grid(grid)
    psi = _check_psi(psi0, H.dim)
    stepper = _Stepper(H, options)
    states = np.empty((len(grid), H.dim), dtype=np.complex128)
    states[0] = psi
    for i in range(1, len(grid)):
        for ta, tb in _substeps(grid[i - 1], grid[i], options.max_step):
            try:
                psi = stepper.step(psi, ta, tb)
            except PropagationError as exc:
                raise PropagationError(f"integration failed at t={ta:.6e}: {exc}") from exc
        states[i] = psi
    return Trajectory(grid, states, [], np.zeros(len(grid)), None)


def _no_jump_hamiltonian(H, jumps):
    extra = []
    for j in jumps:
        op = SparseOperator(j.operator.matrix.conj().T @ j.operator.matrix)
        if callable(j.rate):
            extra.append((lambda t, j=j: -0.5j * j.rate_at(t), op))
        else:
            extra.append((-0.5j * j.rate, op))
    return H.with_terms(extra, hermitian=False)


def quantum_jump_trajectory(H: ParametricHamiltonian, jumps: Sequence[JumpOperator], psi0, grid, seed: int,
                            options: IntegratorOptions = IntegratorOptions()) -> Trajectory:
    """One Monte Carlo wave-function trajectory.

    The unnormalized state evolves under ``H - i/2 sum rate_k L_k^+ L_k``
    until its squared norm falls to a uniform random threshold; the
    crossing time is located by bisection, a channel is drawn with weight
    ``rate_k |L_k psi|^2`` and applied, and a new threshold is drawn.
    """
    if not jumps:
        traj = evolve_schrodinger(H, psi0, grid, options)
        traj.seed = seed
        return traj
    grid = _check_grid(grid)
    psi = _check_psi(psi0, H.dim)
    rng = np.random.default_rng(seed)
    stepper = _Stepper(_no_jump_hamiltonian(H, jumps), options)
    jump_ops = [j.operator.matrix for j in jumps]

    states = np.empty((len(grid), H.dim), dtype=np.complex128)
    decay = np.zeros(len(grid))
    states[0] = psi
    log = []
    survival = 1.0
    threshold = rng.random()

    for i in range(1, len(grid)):
        for ta, tb in _substeps(grid[i - 1], grid[i], options.max_step):
            phi = stepper.step(psi, ta, tb)
            while np.vdot(phi, phi).real <= threshold:
                tj, phi_j = _locate_jump(stepper, psi, ta, tb, threshold, options)
                n2 = np.vdot(phi_j, phi_j).real
                survival *= n2
                weights = np.array([j.rate_at(tj) * np.linalg.norm(m @ phi_j) ** 2
                                    for j, m in zip(jumps, jump_ops)])
                if weights.sum() <= 0:
                    raise PropagationError(f"norm decayed at t={tj:.6e} but every channel is empty")
                k = int(rng.choice(len(jumps), p=weights / weights.sum()))
                psi = jump_ops[k] @ phi_j
                psi /= np.linalg.norm(psi)
                log.append((float(tj), k))
                threshold = rng.random()
                ta = tj
                phi = stepper.step(psi, ta, tb) if tb > ta else psi.copy()
            psi = phi
        n2 = np.vdot(psi, psi).real
        states[i] = psi / math.sqrt(n2)
        decay[i] = min(1.0, max(decay[i - 1], 1.0 - survival * n2))
    return Trajectory(grid, states, log, decay, seed)


def _locate_jump(stepper, psi, ta, tb, threshold, options):
    lo, hi = ta, tb
    phi_hi = None
    for _ in range(options.max_bisections):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        phi = stepper.step(psi, ta, mid)
        n2 = np.vdot(phi, phi).real
        if n2 > threshold:
            lo = mid
        else:
            hi, phi_hi = mid, phi
        if abs(n2 - threshold) <= options.jump_rtol * threshold:
            return mid, phi
    else:
        raise PropagationError(f"jump-time bisection did not converge in [{ta:.6e}, {tb:.6e}]")
    if phi_hi is None:
        phi_hi = stepper.step(psi, ta, hi)
    return hi, phi_hi


def trajectory_seed(master_seed: int, index: int) -> int:
    """Seed of trajectory ``index``, independent of execution order."""
    ss = np.random.SeedSequence(master_seed, spawn_key=(index,))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass
class EnsembleResult:
    times: np.ndarray
    mean: dict
    var: dict
    num_trajectories: int
    jump_logs: list

    def stderr(self, name):
        return np.sqrt(self.var[name] / self.num_trajectories)


def _run_one(args):
    H, jumps, psi0, grid, seed, options, observables = args
    traj = quantum_jump_trajectory(H, jumps, psi0, grid, seed, options)
    return {k: f(traj) for k, f in observables.items()}, traj.jumps


def ensemble_run(H: ParametricHamiltonian, jumps, psi0, grid, observables: dict, num_trajectories: int,
                 master_seed: int, options: IntegratorOptions = IntegratorOptions(), workers: int = 1) -> EnsembleResult:
    """Mean and (population) variance of observables over seeded trajectories.

    ``observables`` maps names to callables ``Trajectory -> array`` on the
    grid. Trajectory ``k`` uses :func:`trajectory_seed` ``(master_seed, k)``;
    results are merged in index order, so ``workers`` does not change them.
    With ``workers > 1`` all arguments must be picklable.
    """
    if num_trajectories < 1:
        raise ValueError("num_trajectories must be >= 1")
    grid = _check_grid(grid)
    tasks = [(H, jumps, psi0, grid, trajectory_seed(master_seed, k), options, observables)
             for k in range(num_trajectories)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_one, tasks))
    else:
        results = [_run_one(t) for t in tasks]
    mean, var = {}, {}
    for name in observables:
        data = np.array([r[0][name] for r in results], dtype=float)
        mean[name] = data.mean(axis=0)
        var[name] = data.var(axis=0)
    return EnsembleResult(grid, mean, var, num_trajectories, [r[1] for r in results])
