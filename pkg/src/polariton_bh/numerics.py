"""Sparse complex linear algebra and propagation kernels.

Every Hamiltonian, jump and observable operator in the package is a
:class:`SparseOperator`, a thin immutable wrapper around a canonical CSR
matrix. State vectors are plain complex :class:`numpy.ndarray` objects.

All energies and rates are angular frequencies in s^-1 (hbar = 1).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = [
    "SparseOperator",
    "DimensionError",
    "NotHermitianError",
    "EigensolverError",
    "PropagationError",
    "identity",
    "zero",
    "apply",
    "lowest_eigenpair",
    "propagate_step",
    "KrylovOptions",
]

DROP_TOL = 1e-14
HERMITIAN_RTOL = 1e-12
DENSE_EIG_LIMIT = 3000
DENSE_EXPM_LIMIT = 48


class DimensionError(ValueError):
    pass


class NotHermitianError(ValueError):
    pass


class EigensolverError(RuntimeError):
    def __init__(self, message, iterations=None):
        super().__init__(message)
        self.iterations = iterations


class PropagationError(RuntimeError):
    pass


def _canonical(matrix, drop_tol):
    m = sp.csr_array(matrix, dtype=np.complex128, copy=True)
    m.sum_duplicates()
    if m.nnz:
        scale = np.abs(m.data).max()
        m.data[np.abs(m.data) <= drop_tol * scale] = 0.0
    m.eliminate_zeros()
    m.sort_indices()
    return m


@dataclass(frozen=True, eq=False)
class SparseOperator:
    """Complex square sparse matrix in canonical CSR layout.

    Entries are summed, sorted by row then column, and entries below
    ``drop_tol`` relative to the largest magnitude are removed, so two
    operators built along different routes compare equal entry-for-entry.
    """

    matrix: sp.csr_array
    hermitian: bool = False
    drop_tol: float = field(default=DROP_TOL, repr=False)

    def __post_init__(self):
        m = self.matrix
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DimensionError(f"operator must be square, got shape {m.shape}")
        object.__setattr__(self, "matrix", _canonical(m, self.drop_tol))
        if self.hermitian and not is_hermitian(self.matrix):
            raise NotHermitianError("operator flagged hermitian is not hermitian")

    @classmethod
    def from_entries(cls, dim, rows, cols, values, hermitian=False):
        m = sp.coo_array((np.asarray(values, dtype=np.complex128), (rows, cols)), shape=(dim, dim))
        return cls(m.tocsr(), hermitian=hermitian)

    @classmethod
    def from_dense(cls, array, hermitian=False):
        return cls(sp.csr_array(np.asarray(array, dtype=np.complex128)), hermitian=hermitian)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def nnz(self) -> int:
        return self.matrix.nnz

    def entries(self):
        """List of ``(row, col, value)`` in canonical order."""
        coo = self.matrix.tocoo()
        return list(zip(coo.row.tolist(), coo.col.tolist(), coo.data.tolist()))

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()

    def dag(self) -> "SparseOperator":
        return SparseOperator(self.matrix.conj().T.tocsr(), hermitian=self.hermitian)

    def norm(self) -> float:
        """Frobenius norm; an upper bound on the spectral norm."""
        return float(spla.norm(self.matrix)) if self.nnz else 0.0

    def check_hermitian(self) -> bool:
        return is_hermitian(self.matrix)

    def as_hermitian(self) -> "SparseOperator":
        return SparseOperator(self.matrix, hermitian=True)

    def __add__(self, other):
        if not isinstance(other, SparseOperator):
            return NotImplemented
        _check_dims(self.dim, other.dim)
        return SparseOperator(self.matrix + other.matrix,
                              hermitian=self.hermitian and other.hermitian)

    def __sub__(self, other):
        if not isinstance(other, SparseOperator):
            return NotImplemented
        _check_dims(self.dim, other.dim)
        return SparseOperator(self.matrix - other.matrix,
                              hermitian=self.hermitian and other.hermitian)

    def __neg__(self):
        return SparseOperator(-self.matrix, hermitian=self.hermitian)

    def __mul__(self, scalar):
        if isinstance(scalar, SparseOperator):
            return NotImplemented
        herm = self.hermitian and np.isreal(scalar)
        return SparseOperator(self.matrix * complex(scalar), hermitian=bool(herm))

    __rmul__ = __mul__

    def __matmul__(self, other):
        if isinstance(other, SparseOperator):
            _check_dims(self.dim, other.dim)
            return SparseOperator(self.matrix @ other.matrix)
        return apply(self, other)

    def __eq__(self, other):
        if not isinstance(other, SparseOperator):
            return NotImplemented
        a, b = self.matrix, other.matrix
        return (a.shape == b.shape and a.nnz == b.nnz
                and np.array_equal(a.indptr, b.indptr)
                and np.array_equal(a.indices, b.indices)
                and np.array_equal(a.data, b.data))

    def allclose(self, other, atol=1e-12) -> bool:
        _check_dims(self.dim, other.dim)
        diff = self.matrix - other.matrix
        return diff.nnz == 0 or np.abs(diff.data).max() <= atol


def _check_dims(a, b):
    if a != b:
        raise DimensionError(f"dimension mismatch: {a} vs {b}")


def is_hermitian(matrix, rtol=HERMITIAN_RTOL) -> bool:
    if matrix.nnz == 0:
        return True
    diff = matrix - matrix.conj().T
    if diff.nnz == 0:
        return True
    return np.abs(diff.data).max() <= rtol * np.abs(matrix.data).max()


def identity(dim) -> SparseOperator:
    return SparseOperator(sp.eye_array(dim, dtype=np.complex128, format="csr"), hermitian=True)


def zero(dim) -> SparseOperator:
    return SparseOperator(sp.csr_array((dim, dim), dtype=np.complex128), hermitian=True)


def _as_matrix(op):
    return op.matrix if isinstance(op, SparseOperator) else op


def apply(op, v) -> np.ndarray:
    """Return ``op @ v``; raises :class:`DimensionError` on a size mismatch."""
    m = _as_matrix(op)
    v = np.asarray(v)
    if v.shape[0] != m.shape[0]:
        raise DimensionError(f"operator dimension {m.shape[0]} does not match vector length {v.shape[0]}")
    return m @ v.astype(np.complex128, copy=False)


def lowest_eigenpair(op: SparseOperator, k: int = 1, *, tol=1e-9, maxiter=None):
    """Lowest ``k`` eigenpairs of a hermitian operator, ascending.

    Dense ``eigh`` is used up to a few thousand dimensions; beyond that the
    implicitly restarted Lanczos solver of ARPACK. Each pair is checked to
    satisfy ``|H v - lam v| <= tol * |H|``.

    Returns
    -------
    list of (float, ndarray)
    """
    if not op.hermitian:
        raise NotHermitianError("lowest_eigenpair requires a hermitian-flagged operator")
    n = op.dim
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}], got {k}")
    if n <= DENSE_EIG_LIMIT or k >= n - 1:
        vals, vecs = np.linalg.eigh(op.toarray())
        vals, vecs = vals[:k], vecs[:, :k]
    else:
        try:
            vals, vecs = spla.eigsh(op.matrix, k=k, which="SA", tol=tol * 1e-3, maxiter=maxiter)
        except spla.ArpackNoConvergence as exc:
            raise EigensolverError(f"ARPACK did not converge: {exc}", iterations=maxiter) from exc
        order = np.argsort(vals)
        vals, vecs = vals[order], vecs[:, order]
    hnorm = max(op.norm(), np.finfo(float).tiny)
    pairs = []
    for lam, vec in zip(vals, vecs.T):
        vec = vec / np.linalg.norm(vec)
        resid = np.linalg.norm(op.matrix @ vec - lam * vec)
        if resid > tol * hnorm:
            raise EigensolverError(f"eigenpair residual {resid:.3e} exceeds {tol:.1e}*|H|")
        pairs.append((float(lam), vec))
    return pairs


@dataclass(frozen=True)
class KrylovOptions:
    """Knobs of the adaptive Krylov exponential.

    ``tol`` bounds the estimated error of a full call relative to the
    norm of the input vector.
    """

    krylov_dim: int = 30
    tol: float = 1e-10
    max_rejections: int = 12
    dense_limit: int = DENSE_EXPM_LIMIT


DEFAULT_KRYLOV = KrylovOptions()


def propagate_step(H, v, dt, options: KrylovOptions = DEFAULT_KRYLOV) -> np.ndarray:
    """Return ``exp(-i H dt) v``.

    ``H`` may be non-hermitian (no-jump evolution), in which case the norm
    of the result is not preserved. Small operators are exponentiated
    densely; larger ones with adaptive Arnoldi substepping.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    m = _as_matrix(H)
    v = np.asarray(v, dtype=np.complex128)
    if v.shape[0] != m.shape[0]:
        raise DimensionError(f"operator dimension {m.shape[0]} does not match vector length {v.shape[0]}")
    if m.nnz == 0:
        return v.copy()
    if m.shape[0] <= options.dense_limit:
        return sla.expm(-1j * dt * m.toarray()) @ v
    return _krylov_expmv(m, v, dt, options)


def _krylov_expmv(m, v, t_total, opts: KrylovOptions):
    # Expokit-style expv for w = exp(-i t A) v with step-size control.
    n = v.shape[0]
    beta0 = np.linalg.norm(v)
    if beta0 == 0.0:
        return v.copy()
    mdim = min(opts.krylov_dim, n)
    tol = max(opts.tol, 1e-15)
    anorm = float(spla.norm(m, 1))
    btol = 1e-14 * anorm
    gamma, delta = 0.9, 1.2
    xm = 1.0 / mdim

    w = v.copy()
    t_done = 0.0
    beta = beta0
    fact = ((mdim + 1) / np.e) ** (mdim + 1) * np.sqrt(2 * np.pi * (mdim + 1))
    t_step = (1.0 / anorm) * ((fact * tol) / (4.0 * anorm)) ** xm
    t_step = min(t_step * 1.0, t_total)

    V = np.empty((n, mdim + 1), dtype=np.complex128)
    Hm = np.zeros((mdim + 2, mdim + 2), dtype=np.complex128)
    while t_done < t_total:
        t_step = min(t_total - t_done, t_step)
        Hm[:] = 0.0
        V[:, 0] = w / beta
        happy = False
        j_used = mdim
        for j in range(mdim):
            p = -1j * (m @ V[:, j])
            # classical Gram-Schmidt, applied twice
            h = V[:, : j + 1].conj().T @ p
            p -= V[:, : j + 1] @ h
            h2 = V[:, : j + 1].conj().T @ p
            p -= V[:, : j + 1] @ h2
            Hm[: j + 1, j] = h + h2
            s = np.linalg.norm(p)
            if s < btol:
                happy = True
                j_used = j + 1
                t_step = t_total - t_done
                break
            Hm[j + 1, j] = s
            V[:, j + 1] = p / s
        if happy:
            F = sla.expm(t_step * Hm[:j_used, :j_used])
            w = beta * (V[:, :j_used] @ F[:, 0])
            t_done = t_total
            break
        avnorm = np.linalg.norm(-1j * (m @ V[:, mdim]))
        Hm[mdim + 1, mdim] = 1.0
        for rejection in range(opts.max_rejections + 1):
            F = sla.expm(t_step * Hm)
            err1 = abs(beta * F[mdim, 0])
            err2 = abs(beta * F[mdim + 1, 0] * avnorm)
            if err1 > 10.0 * err2:
                err_loc = err2
            elif err1 > err2:
                err_loc = err1 * err2 / (err1 - err2)
            else:
                err_loc = err1
            if err_loc <= delta * tol * beta0 * t_step / t_total:
                break
            t_step = gamma * t_step * (t_step * tol * beta0 / (t_total * err_loc)) ** xm
        else:
            raise PropagationError(
                f"Krylov step rejected {opts.max_rejections} times at t={t_done:.6e} "
                f"(step {t_step:.3e}, error {err_loc:.3e})")
        w = beta * (V @ F[: mdim + 1, 0])
        t_done += t_step
        beta = np.linalg.norm(w)
        if beta == 0.0:
            break
        err_loc = max(err_loc, 1e-300)
        growth = gamma * (t_step * tol * beta0 / (t_total * err_loc)) ** xm
        t_step *= min(growth, 5.0)
        if not np.isfinite(t_step) or t_step <= 0:
            raise PropagationError("Krylov step size collapsed")
    if not np.all(np.isfinite(w)):
        raise PropagationError("non-finite amplitudes after propagation")
    return w
