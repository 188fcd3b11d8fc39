"""Eigensolvers, inertia counting and numerical kernels for assembled operators.

Operators with a nontrivial density are solved as the symmetric-definite
pencil ``(stiffness, diag(density))``; this gives the eigenvalues of the
applied matrix ``diag(1/density) @ stiffness`` without ever symmetrizing it.

Large problems go one of two ways.  Local stencils (torus operators) use
LOBPCG preconditioned by smoothed-aggregation AMG from ``pyamg``; the
Heisenberg operators couple whole ``t`` lines, which defeats AMG, and use
shift-invert Lanczos on a sparse factorization instead.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
import pyamg
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as sla

from .geometry import GridFunction
from .operators import OperatorMatrix

__all__ = [
    "EigenResult",
    "InertiaCount",
    "KernelResult",
    "ConvergenceError",
    "eigen_low",
    "eigen_near",
    "eigen_nearest_zero",
    "inertia",
    "numerical_kernel",
    "kernel_tolerance",
    "growth_fit",
    "DENSE_LIMIT",
    "SEED",
]

log = logging.getLogger(__name__)

DENSE_LIMIT = 5000
SEED = 0x5EED
RESIDUAL_TOL = 1e-8
#: average nonzeros per row up to which a stencil counts as local (AMG-friendly)
LOCAL_STENCIL = 16


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class EigenResult:
    eigenvalues: np.ndarray
    eigenvectors: Optional[np.ndarray]
    residuals: np.ndarray
    method: str


@dataclass(frozen=True)
class InertiaCount:
    shift: float
    negative: int
    zero: int
    positive: int
    perturbed: bool = False

    @property
    def total(self) -> int:
        return self.negative + self.zero + self.positive


@dataclass(frozen=True)
class KernelResult:
    status: str
    dimension: Optional[int]
    basis: List[GridFunction] = field(default_factory=list)
    eigenvalues: np.ndarray = field(default_factory=lambda: np.zeros(0))
    tolerance: float = 0.0
    gap: float = float("nan")

    @property
    def certified(self) -> bool:
        return self.status == "certified"


def _pencil(A):
    """``(stiffness, mass or None, applied matrix, lattice)`` for operators, arrays or sparse matrices."""
    if isinstance(A, OperatorMatrix):
        if A.antisymmetric:
            raise ValueError("eigensolvers here need a symmetric operator")
        mass = None if A.density is None else sp.diags(A.density)
        return sp.csr_matrix(A.stiffness), mass, A.matrix, A.lattice
    if sp.issparse(A):
        return sp.csr_matrix(A), None, sp.csr_matrix(A), None
    a = np.asarray(A, dtype=float)
    return sp.csr_matrix(a), None, sp.csr_matrix(a), None


def _norm1(matrix) -> float:
    return float(sla.norm(matrix, 1)) if sp.issparse(matrix) else float(np.abs(matrix).sum(axis=0).max())


def _residuals(applied, vals, vecs) -> np.ndarray:
    r = applied @ vecs - vecs * vals[None, :]
    return np.linalg.norm(r, axis=0) / np.linalg.norm(vecs, axis=0)


def _certify(applied, vals, vecs, method) -> EigenResult:
    res = _residuals(applied, vals, vecs)
    bound = RESIDUAL_TOL * max(_norm1(applied), np.finfo(float).tiny)
    if np.any(res > bound):
        raise ConvergenceError(f"{method} eigenpairs not certified: max residual {res.max():.3e} > {bound:.3e}")
    return EigenResult(vals, vecs, res, method)


def _symmetric_lu(matrix: sp.spmatrix):
    """Sparse LDL^T-style factorization: symmetric ordering, no pivoting."""
    return sla.splu(sp.csc_matrix(matrix), permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                    options=dict(SymmetricMode=True))


def _shift_invert_op(stiff, mass, sigma):
    shifted = stiff - sigma * (mass if mass is not None else sp.identity(stiff.shape[0], format="csr"))
    lu = _symmetric_lu(shifted)
    return sla.LinearOperator(stiff.shape, matvec=lu.solve, dtype=float)


def _dense_eigh(stiff, mass, lo=None, hi=None):
    a = stiff.toarray()
    b = None if mass is None else mass.toarray()
    sub = None if lo is None else [lo, hi]
    return la.eigh(a, b, subset_by_index=sub)


def _is_local(stiff) -> bool:
    return stiff.nnz <= LOCAL_STENCIL * stiff.shape[0]


def _lobpcg_low(stiff, mass, count: int, seed: int):
    """Lowest eigenpairs by LOBPCG with an AMG preconditioner for a shifted SPD copy."""
    n = stiff.shape[0]
    eye = mass if mass is not None else sp.identity(n, format="csr")
    shift = max(0.0, -_gershgorin_lower(stiff, mass)) + 1.0
    ml = pyamg.smoothed_aggregation_solver(sp.csr_matrix(stiff + shift * eye), symmetry="symmetric")
    block = min(n // 5, count + max(2, count // 2))
    x = np.random.default_rng(seed).standard_normal((n, block))
    with warnings.catch_warnings():
        # convergence is judged by the residual certificate, not by LOBPCG's own flag
        warnings.simplefilter("ignore", UserWarning)
        vals, vecs = sla.lobpcg(stiff, x, B=mass, M=ml.aspreconditioner(cycle="V"), largest=False,
                                tol=1e-10, maxiter=500)
    order = np.argsort(vals)[:count]
    return vals[order], vecs[:, order]


def eigen_low(A, count: int, dense_limit: int = DENSE_LIMIT, seed: int = SEED) -> EigenResult:
    """Lowest ``count`` eigenpairs with certified residuals.

    Matrices up to ``dense_limit`` rows use LAPACK.  Larger local stencils
    use AMG-preconditioned LOBPCG; others use shift-invert Lanczos below a
    lower spectral bound.  Iterative starts are seeded.
    """
    stiff, mass, applied, _ = _pencil(A)
    n = stiff.shape[0]
    count = min(count, n)
    if n <= dense_limit:
        vals, vecs = _dense_eigh(stiff, mass, 0, count - 1)
        return _certify(applied, vals, vecs, "dense")
    if _is_local(stiff):
        vals, vecs = _lobpcg_low(stiff, mass, count, seed)
        return _certify(applied, vals, vecs, "iterative")
    rng = np.random.default_rng(seed)
    v0 = rng.standard_normal(n)
    lower = _gershgorin_lower(stiff, mass)
    try:
        vals, vecs = sla.eigsh(stiff, k=count, M=mass, sigma=lower, which="LM", v0=v0,
                               OPinv=_shift_invert_op(stiff, mass, lower), tol=1e-12, maxiter=50 * n)
    except sla.ArpackNoConvergence as exc:
        raise ConvergenceError(f"Lanczos did not converge: {exc}") from exc
    order = np.argsort(vals)
    return _certify(applied, vals[order], vecs[:, order], "iterative")


def _gershgorin_lower(stiff, mass) -> float:
    diag = stiff.diagonal()
    off = np.asarray(abs(stiff).sum(axis=1)).ravel() - np.abs(diag)
    low = diag - off
    if mass is not None:
        rho = mass.diagonal()
        low = low / rho
    lo = float(low.min())
    return lo - 1e-3 * max(1.0, abs(lo))


def eigen_near(A, sigma: float, count: int, dense_limit: int = DENSE_LIMIT, seed: int = SEED) -> EigenResult:
    """The ``count`` eigenpairs closest to ``sigma``, sorted by eigenvalue."""
    stiff, mass, applied, _ = _pencil(A)
    n = stiff.shape[0]
    count = min(count, n)
    if n <= dense_limit:
        # the count nearest to sigma sit within count places of its index in the spectrum
        j = inertia(A, sigma, dense_limit).negative
        lo, hi = max(0, j - count), min(n - 1, j + count - 1)
        vals, vecs = _dense_eigh(stiff, mass, lo, hi)
        pick = np.sort(np.argsort(np.abs(vals - sigma), kind="stable")[:count])
        return _certify(applied, vals[pick], vecs[:, pick], "dense")
    rng = np.random.default_rng(seed)
    v0 = rng.standard_normal(n)
    shift = sigma
    for attempt in range(3):
        try:
            opinv = _shift_invert_op(stiff, mass, shift)
            break
        except RuntimeError:
            # exactly singular at the shift: move off it
            shift = sigma - 1e-6 * (attempt + 1) * max(1.0, _norm1(applied))
    vals, vecs = sla.eigsh(stiff, k=count, M=mass, sigma=shift, which="LM", v0=v0, OPinv=opinv,
                           tol=1e-12, maxiter=50 * n)
    order = np.argsort(vals)
    return _certify(applied, vals[order], vecs[:, order], "iterative")


def eigen_nearest_zero(A, count: int = 1, dense_limit: int = DENSE_LIMIT, seed: int = SEED) -> EigenResult:
    """The ``count`` eigenpairs of smallest magnitude.

    Large local stencils take them from the low end of the spectrum, which
    assumes at most ``count`` eigenvalues lie below the ones wanted.
    """
    stiff, _, _, _ = _pencil(A)
    n = stiff.shape[0]
    if n > dense_limit and _is_local(stiff):
        res = eigen_low(A, min(2 * count, n), dense_limit, seed)
        pick = np.sort(np.argsort(np.abs(res.eigenvalues), kind="stable")[:count])
        return EigenResult(res.eigenvalues[pick], res.eigenvectors[:, pick], res.residuals[pick], res.method)
    return eigen_near(A, 0.0, count, dense_limit, seed)


def _block_inertia(d: np.ndarray) -> tuple:
    """Inertia of the block-diagonal factor from Bunch-Kaufman."""
    n = d.shape[0]
    neg = zero = pos = 0
    i = 0
    while i < n:
        if i + 1 < n and d[i + 1, i] != 0.0:
            ev = np.linalg.eigvalsh(d[i:i + 2, i:i + 2])
            i += 2
        else:
            ev = np.array([d[i, i]])
            i += 1
        neg += int(np.sum(ev < 0))
        zero += int(np.sum(ev == 0))
        pos += int(np.sum(ev > 0))
    return neg, zero, pos


def inertia(A, sigma: float, dense_limit: int = DENSE_LIMIT, max_retries: int = 5) -> InertiaCount:
    """Counts of eigenvalues below, at and above ``sigma`` via Sylvester's law of inertia.

    Dense matrices use a Bunch-Kaufman ``LDL^T``; larger ones a sparse
    symmetric factorization without pivoting.  A (near-)zero pivot means
    ``sigma`` is too close to an eigenvalue: the shift is nudged by
    ``1e-8 ||A||_1`` and the factorization retried; the result records it.
    """
    stiff, mass, applied, _ = _pencil(A)
    n = stiff.shape[0]
    scale = max(_norm1(applied), np.finfo(float).tiny)
    eye = mass if mass is not None else sp.identity(n, format="csr")
    shift = float(sigma)
    perturbed = False
    for attempt in range(max_retries + 1):
        shifted = stiff - shift * eye
        if n <= dense_limit:
            _, dblock, _ = la.ldl(shifted.toarray(), lower=True)
            neg, zero, pos = _block_inertia(dblock)
            piv = np.abs(np.diag(dblock))
            tiny = np.sum(piv < 1e-10 * scale) > 0 or zero > 0
        else:
            try:
                lu = _symmetric_lu(shifted)
            except RuntimeError:
                tiny = True
            else:
                if not np.array_equal(lu.perm_r, lu.perm_c):
                    raise RuntimeError("sparse factorization pivoted; inertia not available")
                u = lu.U.diagonal()
                neg, zero, pos = int(np.sum(u < 0)), int(np.sum(u == 0)), int(np.sum(u > 0))
                tiny = bool(np.any(np.abs(u) < 1e-10 * scale))
        if not tiny:
            return InertiaCount(float(sigma), neg, zero, pos, perturbed)
        perturbed = True
        shift = float(sigma) + (1e-8 * scale) * (1 + attempt) * (-1) ** attempt
        log.warning("inertia: near-singular pivot at shift %.6g, retrying at %.6g", sigma, shift)
    raise RuntimeError(f"inertia: factorization kept breaking down near sigma={sigma}")


def kernel_tolerance(fine: Sequence[float], coarse: Sequence[float], h_fine: float, h_coarse: float,
                     floor: float = 0.0, factor: float = 10.0) -> float:
    """Kernel threshold ``factor * (estimated O(h^2) error of the near-zero eigenvalue)``.

    The error at the fine level is estimated by Richardson extrapolation of
    the smallest-magnitude eigenvalue from a refinement pair.
    """
    f = float(np.min(np.abs(fine)))
    c = float(np.min(np.abs(coarse)))
    ratio = (h_coarse / h_fine) ** 2
    err = abs(c - f) / (ratio - 1.0)
    return max(factor * err, floor)


def numerical_kernel(A, gap_tol: float, count: int = 8, separation: float = 2.0,
                     dense_limit: int = DENSE_LIMIT) -> KernelResult:
    """Eigenvectors with ``|lambda| < gap_tol / separation``, orthonormal in the operator's weights.

    The answer is ``"indeterminate"`` when an eigenvalue sits in the
    ambiguous band ``[gap_tol / separation, separation * gap_tol)`` or when no
    eigenvalue beyond the band was found to certify a gap.
    """
    stiff, mass, applied, lattice = _pencil(A)
    n = stiff.shape[0]
    k = min(count, n)
    local = n > dense_limit and _is_local(stiff)
    while True:
        if local:
            # the lowest k cover the band once the top one clears it
            res = eigen_low(A, k, dense_limit)
            done = res.eigenvalues[-1] >= separation * gap_tol
        else:
            res = eigen_near(A, -0.5 * gap_tol / separation, k, dense_limit)
            done = bool(np.any(np.abs(res.eigenvalues) >= separation * gap_tol))
        if done or k >= n:
            break
        k = min(2 * k, n)
    mags = np.abs(res.eigenvalues)
    outside = mags >= separation * gap_tol
    inside = mags < gap_tol / separation
    ambiguous = ~inside & ~outside
    gap = float(mags[outside].min()) if outside.any() else float("nan")
    if ambiguous.any() or not outside.any():
        return KernelResult("indeterminate", None, [], res.eigenvalues, gap_tol, gap)
    vecs = res.eigenvectors[:, inside]
    weights = A.weights() if isinstance(A, OperatorMatrix) else None
    basis = _weighted_orthonormal(vecs, weights)
    funcs = [GridFunction(lattice, b) for b in basis.T] if lattice is not None else list(basis.T)
    return KernelResult("certified", int(inside.sum()), funcs, res.eigenvalues, gap_tol, gap)


def _weighted_orthonormal(vecs: np.ndarray, weights: Optional[np.ndarray]) -> np.ndarray:
    if vecs.shape[1] == 0:
        return vecs
    w = np.ones(vecs.shape[0]) if weights is None else weights
    sw = np.sqrt(w)
    q, _ = np.linalg.qr(vecs * sw[:, None])
    return q / sw[:, None]


def growth_fit(counts, min_samples: int = 5) -> tuple:
    """Least-squares fit ``log N = slope log s + intercept``; returns ``(slope, intercept, residual)``.

    Zero counts are dropped with a warning; at least ``min_samples``
    positive samples are needed.
    """
    pairs = [(float(s), float(c)) for s, c in counts]
    kept = [(s, c) for s, c in pairs if c > 0]
    if len(kept) < len(pairs):
        warnings.warn(f"growth_fit: dropped {len(pairs) - len(kept)} zero counts", RuntimeWarning)
    if len(kept) < max(2, min_samples):
        raise ValueError(f"growth_fit needs at least {max(2, min_samples)} positive samples, got {len(kept)}")
    x = np.log([s for s, _ in kept])
    y = np.log([c for _, c in kept])
    design = np.vstack([x, np.ones_like(x)]).T
    coef, res, _, _ = np.linalg.lstsq(design, y, rcond=None)
    resid = float(np.sqrt(res[0] / len(x))) if res.size else 0.0
    return float(coef[0]), float(coef[1]), resid
