"""Sparse second-order discretizations of the frame fields, Laplacian, Yamabe and Paneitz operators.

Every operator is stored as a pair ``(stiffness, density)``: the applied
matrix is ``diag(1/density) @ stiffness`` and ``stiffness`` is assembled
edge by edge so that it is exactly (anti)symmetric.  The operator is
self-adjoint for the inner product ``sum_p h^n density(p) f(p) g(p)``; for
bare metrics the density is identically 1.

The Laplacian is the nonnegative one, ``Delta = -sum_a E_a^2`` over an
orthonormal frame.  On the Heisenberg quotient the frame is
``X_j, s Y_j, s^-d T`` with ``Y_j = d/dy_j + x_j d/dt``.  ``X_j^2`` is the
3-point second difference across the twisted seam.  ``Y_j^2`` is ``-E^T E``
with ``E`` the forward difference along the exact flow of ``Y_j``; the flow
leaves the ``t`` grid, so values there come from trigonometric interpolation
along ``t``.  ``T^2`` is the matching spectral second derivative.  Splitting
``Y_j^2`` into separate ``y``, mixed and ``t`` stencils is also second order,
but its error constant grows like ``(2 pi)^4 s^2`` and swamps the low
spectrum at the sizes that fit in memory.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .geometry import (
    GridFunction,
    Lattice,
    ManifoldModel,
    ModelKind,
    sample_trig,
    upsilon_values,
)

__all__ = [
    "OperatorMatrix",
    "CurvatureField",
    "assemble_vector_field",
    "assemble_laplacian",
    "assemble_yamabe",
    "assemble_paneitz_heisenberg",
    "conformal_scalar_curvature",
    "conjugated_operator",
    "yamabe_constant",
    "paneitz_coefficients",
    "write_coo",
    "read_coo",
]


@dataclass(frozen=True, eq=False)
class OperatorMatrix:
    stiffness: sp.csr_matrix
    lattice: Lattice
    kind: str
    metric: str
    density: Optional[np.ndarray] = None
    antisymmetric: bool = False
    stencil_order: int = 2
    log_factor: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "stiffness", sp.csr_matrix(self.stiffness))
        n = self.lattice.size
        if self.stiffness.shape != (n, n):
            raise ValueError("operator dimension does not match the lattice")
        for name in ("density", "log_factor"):
            val = getattr(self, name)
            if val is not None:
                val = np.array(val, dtype=float)
                val.flags.writeable = False
                object.__setattr__(self, name, val)

    @property
    def shape(self):
        return self.stiffness.shape

    @property
    def has_density(self) -> bool:
        return self.density is not None

    @property
    def matrix(self) -> sp.csr_matrix:
        """The operator as applied to grid values."""
        if self.density is None:
            return self.stiffness
        return sp.csr_matrix(sp.diags(1.0 / self.density) @ self.stiffness)

    def mass(self) -> sp.dia_matrix:
        rho = np.ones(self.lattice.size) if self.density is None else self.density
        return sp.diags(rho)

    def weights(self) -> np.ndarray:
        """Quadrature weights of the natural inner product."""
        rho = 1.0 if self.density is None else self.density
        return self.lattice.cell_volume * np.broadcast_to(rho, (self.lattice.size,))

    def apply(self, f):
        vals = f.values if isinstance(f, GridFunction) else np.asarray(f)
        out = self.stiffness @ vals
        if self.density is not None:
            out = out / (self.density if out.ndim == 1 else self.density[:, None])
        if isinstance(f, GridFunction):
            return GridFunction(self.lattice, out)
        return out

    def __matmul__(self, f):
        return self.apply(f)

    def norm1(self) -> float:
        return float(sp.linalg.norm(self.matrix, 1))


@dataclass(frozen=True, eq=False)
class CurvatureField:
    values: GridFunction
    provenance: str


def _edge_matrix(lattice: Lattice, axis: int, coef: np.ndarray) -> sp.csr_matrix:
    """Symmetric ``d/da (c d/da)`` with ``coef[i]`` on the edge from ``i`` to its forward neighbor."""
    n = lattice.size
    i = np.arange(n)
    j = lattice.neighbor(axis, +1)
    w = np.asarray(coef, dtype=float) / lattice.h[axis] ** 2
    rows = np.concatenate([i, j, i, j])
    cols = np.concatenate([j, i, i, j])
    vals = np.concatenate([w, w, -w, -w])
    return sp.csr_matrix(sp.coo_matrix((vals, (rows, cols)), shape=(n, n)))


def _central_difference(lattice: Lattice, axis: int) -> sp.csr_matrix:
    n = lattice.size
    i = np.arange(n)
    j = lattice.neighbor(axis, +1)
    w = np.full(n, 0.5 / lattice.h[axis])
    rows = np.concatenate([i, j])
    cols = np.concatenate([j, i])
    return sp.csr_matrix(sp.coo_matrix((np.concatenate([w, -w]), (rows, cols)), shape=(n, n)))


def _midpoint_values(lattice: Lattice, axis: int, field_fn) -> np.ndarray:
    c = np.array(lattice.coords, dtype=float)
    c[axis] += 0.5 * lattice.h[axis]
    return field_fn(c)


def _symmetric_mirror(a: sp.spmatrix) -> sp.csr_matrix:
    """Rebuild ``a`` from its upper triangle so that it is bitwise symmetric."""
    upper = sp.triu(a, format="csr")
    return sp.csr_matrix(upper + sp.triu(a, k=1, format="csr").T)


def assemble_vector_field(field_name: str, lattice: Lattice) -> OperatorMatrix:
    """Central-difference matrix of a left-invariant frame field.

    ``field_name`` is ``"X1"``.., ``"Y1"``.. or ``"T"``.  ``Y_j`` is
    ``D_{y_j} + diag(x_j) D_t``; ``x_j`` is constant along the ``y`` and
    ``t`` stencils, so the product stays exactly antisymmetric.
    """
    model = lattice.model
    name = field_name.upper()
    letter, idx = name[0], name[1:]
    heis = model.kind is ModelKind.HEISENBERG
    if letter == "X":
        j = int(idx or 1) - 1
        axis = lattice.x_axis(j) if heis else j
        if not 0 <= j < (model.d if heis else model.dim):
            raise ValueError(f"no field {field_name} on this model")
        mat = _central_difference(lattice, axis)
    elif letter in ("Y", "T"):
        if not heis:
            raise ValueError(f"field {field_name} needs a Heisenberg lattice")
        dt = _central_difference(lattice, lattice.t_axis)
        if letter == "T":
            mat = dt
        else:
            j = int(idx or 1) - 1
            if not 0 <= j < model.d:
                raise ValueError(f"no field {field_name} on this model")
            x = lattice.coords[lattice.x_axis(j)]
            mat = _central_difference(lattice, lattice.y_axis(j)) + sp.diags(x) @ dt
    else:
        raise ValueError(f"unknown field {field_name}")
    return OperatorMatrix(mat, lattice, f"vector_field:{name}", _metric_tag(model),
                          antisymmetric=True)


def _metric_tag(model: ManifoldModel) -> str:
    base = f"heisenberg(d={model.d}, s={model.s:g})" if model.kind is ModelKind.HEISENBERG else f"torus(n={model.dim})"
    return base + (" rescaled" if model.is_rescaled else "")


def _interp_kernel(tau: np.ndarray, N: int) -> np.ndarray:
    """Periodic trigonometric interpolation kernel on ``N`` (even) points of period 1.

    The Nyquist mode is carried as ``cos(pi N t)``, so ``K(-tau) = K(tau)`` and
    ``K(j/N) = delta_{j0}``.
    """
    tau = np.asarray(tau, dtype=float)
    k = np.arange(1, N // 2)
    s = np.cos(2 * np.pi * np.multiply.outer(tau, k)).sum(axis=-1)
    return (1 + 2 * s + np.cos(np.pi * N * tau)) / N


def _interp_kernel_dd(tau: np.ndarray, N: int) -> np.ndarray:
    """Second derivative of :func:`_interp_kernel`."""
    tau = np.asarray(tau, dtype=float)
    k = np.arange(1, N // 2)
    s = ((2 * np.pi * k) ** 2 * np.cos(2 * np.pi * np.multiply.outer(tau, k))).sum(axis=-1)
    return (-2 * s - (np.pi * N) ** 2 * np.cos(np.pi * N * tau)) / N


def _t_line_columns(lattice: Lattice, start: np.ndarray):
    """Flat indices of the ``t`` line through each of ``start``, offset by ``m = 0..N-1``."""
    N = lattice.N
    start = np.asarray(start)
    tj = lattice.indices[lattice.t_axis][start]
    m = np.arange(N)
    # t is the last (fastest) axis
    return (start - tj)[:, None] + (tj[:, None] + m[None, :]) % N, m


def _spectral_tt(lattice: Lattice) -> sp.csr_matrix:
    """Trigonometric-interpolation second derivative along ``t`` (symmetric, negative semidefinite)."""
    N = lattice.N
    p = np.arange(lattice.size)
    cols, m = _t_line_columns(lattice, p)
    w = _interp_kernel_dd(-m / N, N)
    vals = np.broadcast_to(w, cols.shape)
    mat = sp.coo_matrix((vals.ravel(), (np.repeat(p, N), cols.ravel())), shape=(lattice.size,) * 2)
    return _symmetric_mirror(mat)


def _flow_difference(lattice: Lattice, j: int) -> sp.csr_matrix:
    """Forward difference along the flow ``(x, y + tau e_j, t + x_j tau)`` of ``Y_j``, step ``h``.

    The landing point is off the ``t`` grid by ``x_j h``; its value comes from
    trigonometric interpolation along the ``t`` line, which is exact for
    band-limited ``t`` dependence.
    """
    N = lattice.N
    h = lattice.h[lattice.y_axis(j)]
    p = np.arange(lattice.size)
    q = lattice.neighbor(lattice.y_axis(j), +1)
    cols, m = _t_line_columns(lattice, q)
    x = lattice.coords[lattice.x_axis(j)]
    w = _interp_kernel(h * (x[:, None] - m[None, :]), N)
    rows = np.concatenate([np.repeat(p, N), p])
    cols = np.concatenate([cols.ravel(), p])
    vals = np.concatenate([w.ravel(), -np.ones(lattice.size)]) / h
    return sp.csr_matrix(sp.coo_matrix((vals, (rows, cols)), shape=(lattice.size,) * 2))


def _divergence_form(lattice: Lattice, coef_fn=None) -> sp.csr_matrix:
    """Assemble ``-sum_a E_a (c E_a)`` over the orthonormal frame of the bare metric.

    ``coef_fn`` maps coordinate arrays ``(n, m)`` to the coefficient ``c``;
    ``None`` means ``c = 1``.  On the Heisenberg quotient ``c`` must not
    depend on ``t``.
    """
    model = lattice.model
    n = lattice.size
    coords = np.asarray(lattice.coords, dtype=float)

    def edge_coef(axis):
        if coef_fn is None:
            return np.ones(n)
        return _midpoint_values(lattice, axis, coef_fn)

    if model.kind is ModelKind.TORUS:
        total = sp.csr_matrix((n, n))
        for axis in range(lattice.ndim):
            total = total + _edge_matrix(lattice, axis, edge_coef(axis))
        return sp.csr_matrix(-total)

    d, s = model.d, model.s
    node = np.ones(n) if coef_fn is None else coef_fn(coords)
    stiff = sp.csr_matrix((n, n))
    for j in range(d):
        xa, ya = lattice.x_axis(j), lattice.y_axis(j)
        e = _flow_difference(lattice, j)
        stiff = stiff - _edge_matrix(lattice, xa, edge_coef(xa))
        stiff = stiff + s ** 2 * (e.T @ sp.diags(edge_coef(ya)) @ e)
    # c is constant along t lines, so diag(c) commutes with the t derivative
    stiff = stiff - s ** (-2 * d) * (sp.diags(node) @ _spectral_tt(lattice))
    return _symmetric_mirror(stiff)


def _upsilon_fn(model: ManifoldModel):
    ups = model.conformal_factor
    periods = model.periods
    return lambda c: ups.derivative(c, (0,) * model.dim, periods)


def _laplacian_parts(model: ManifoldModel, lattice: Lattice):
    """Stiffness and density of ``Delta`` for the (possibly rescaled) model metric."""
    if not model.is_rescaled:
        return _divergence_form(lattice), None
    n = model.dim
    ups = _upsilon_fn(model)
    stiff = _divergence_form(lattice, lambda c: np.exp((n - 2) * ups(c)))
    density = np.exp(n * upsilon_values(lattice).values)
    return stiff, density


def assemble_laplacian(model: ManifoldModel, lattice: Lattice) -> OperatorMatrix:
    """Nonnegative Laplace-Beltrami operator of the model metric on ``lattice``.

    For a rescaled model ``e^{2 Upsilon} g`` this is the weighted
    divergence form ``-e^{-n Upsilon} div_g(e^{(n-2) Upsilon} grad_g)``.
    """
    _check_lattice(model, lattice)
    stiff, density = _laplacian_parts(model, lattice)
    return OperatorMatrix(stiff, lattice, "laplacian", _metric_tag(model), density,
                          log_factor=_log_factor(model, lattice))


def _log_factor(model, lattice):
    return upsilon_values(lattice).values if model.is_rescaled else None


def _check_lattice(model: ManifoldModel, lattice: Lattice):
    if lattice.model.kind is not model.kind or lattice.ndim != model.dim:
        raise ValueError("lattice was built for a different model")


def yamabe_constant(n: int) -> float:
    """Coefficient ``(n-2)/(4(n-1))`` of the scalar curvature in ``P_1``."""
    return (n - 2) / (4 * (n - 1))


def conformal_scalar_curvature(model: ManifoldModel, lattice: Lattice) -> CurvatureField:
    """Scalar curvature of ``e^{2 Upsilon} g`` from exact frame derivatives of ``Upsilon``.

    ``R = e^{-2U} (R_g + 2(n-1) Delta_g U - (n-1)(n-2) |grad U|_g^2)`` with the
    nonnegative Laplacian.
    """
    _check_lattice(model, lattice)
    n = model.dim
    r0 = model.scalar_curvature()
    if not model.is_rescaled:
        return CurvatureField(GridFunction(lattice, np.full(lattice.size, r0)), "constant")
    lap_u, grad2 = _frame_derivatives(model, lattice)
    u = upsilon_values(lattice).values
    vals = np.exp(-2 * u) * (r0 + 2 * (n - 1) * lap_u - (n - 1) * (n - 2) * grad2)
    return CurvatureField(GridFunction(lattice, vals), "conformal change")


def _frame_derivatives(model: ManifoldModel, lattice: Lattice):
    """``(Delta_g U, |grad_g U|^2)`` evaluated exactly on the lattice points."""
    ups = model.conformal_factor
    n = model.dim

    def der(*pairs):
        order = [0] * n
        for axis, k in pairs:
            order[axis] += k
        return sample_trig(lattice, ups, tuple(order)).values

    if model.kind is ModelKind.TORUS:
        lap = -sum(der((a, 2)) for a in range(n))
        grad2 = sum(der((a, 1)) ** 2 for a in range(n))
        return lap, grad2
    d, s = model.d, model.s
    t = lattice.t_axis
    lap = -(s ** (-2 * d)) * der((t, 2))
    grad2 = s ** (-2 * d) * der((t, 1)) ** 2
    for j in range(d):
        xa, ya = lattice.x_axis(j), lattice.y_axis(j)
        x = lattice.coords[xa]
        y_u = der((ya, 1)) + x * der((t, 1))
        yy_u = der((ya, 2)) + 2 * x * der((ya, 1), (t, 1)) + x ** 2 * der((t, 2))
        lap = lap - der((xa, 2)) - s ** 2 * yy_u
        grad2 = grad2 + der((xa, 1)) ** 2 + s ** 2 * y_u ** 2
    return lap, grad2


def assemble_yamabe(model: ManifoldModel, lattice: Lattice) -> OperatorMatrix:
    """``P_1 = Delta + (n-2)/(4(n-1)) R`` for the model metric."""
    _check_lattice(model, lattice)
    stiff, density = _laplacian_parts(model, lattice)
    curv = conformal_scalar_curvature(model, lattice).values.values
    pot = yamabe_constant(model.dim) * curv
    if density is not None:
        pot = pot * density
    stiff = sp.csr_matrix(stiff + sp.diags(pot))
    return OperatorMatrix(stiff, lattice, "yamabe", _metric_tag(model), density,
                          log_factor=_log_factor(model, lattice))


def paneitz_coefficients(d: int) -> tuple:
    """Exact ``(Delta, s^2 T^2, constant)`` coefficients of ``P_2`` on the Heisenberg quotient.

    Returned as fractions multiplying ``s^{2d+2}``, ``s^2`` and ``s^{4d+4}``.
    """
    a = Fraction(12 - (2 * d - 1) ** 2, 8 * (2 * d - 1))
    b = Fraction(2 * (d + 1), 2 * d - 1)
    c = Fraction((2 * d - 3) * ((2 * d + 1) * (2 * d - 1) ** 2 - 4 * (22 * d + 1)),
                 256 * (2 * d - 1) ** 2)
    return a, b, c


def assemble_paneitz_heisenberg(model: ManifoldModel, lattice: Lattice) -> OperatorMatrix:
    """Paneitz operator of the bare ``g_s`` on the Heisenberg quotient."""
    _check_lattice(model, lattice)
    if model.kind is not ModelKind.HEISENBERG:
        raise ValueError("the Paneitz formula is only available on Heisenberg quotients")
    if model.is_rescaled:
        raise ValueError("Paneitz assembly needs the bare metric g_s")
    d, s = model.d, model.s
    a, b, c = paneitz_coefficients(d)
    lap = _divergence_form(lattice)
    tt = _spectral_tt(lattice)
    quartic = _symmetric_mirror(lap @ lap)
    stiff = (quartic + float(a) * s ** (2 * d + 2) * lap + float(b) * s ** 2 * tt
             + float(c) * s ** (4 * d + 4) * sp.identity(lattice.size, format="csr"))
    return OperatorMatrix(sp.csr_matrix(stiff), lattice, "paneitz", _metric_tag(model))


def conjugated_operator(op: OperatorMatrix, upsilon, k: int) -> OperatorMatrix:
    """``e^{-(n/2+k) U} P e^{(n/2-k) U}``, the operator of ``e^{2U} g`` from that of ``g``.

    The result is self-adjoint for the weights of the rescaled metric:
    its stiffness is ``D P_sym D`` with ``D = diag(e^{(n/2-k) U})`` and its
    density picks up ``e^{n U}``.
    """
    lattice = op.lattice
    if isinstance(upsilon, GridFunction):
        if upsilon.lattice is not lattice:
            raise ValueError("conformal factor lives on a different lattice")
        u = upsilon.values
    else:
        u = np.broadcast_to(np.asarray(upsilon, dtype=float), (lattice.size,))
    n = lattice.ndim
    scale = np.exp((n / 2 - k) * u)
    coo = op.stiffness.tocoo()
    data = coo.data * (scale[coo.row] * scale[coo.col])
    stiff = sp.csr_matrix(sp.coo_matrix((data, (coo.row, coo.col)), shape=coo.shape))
    rho = np.ones(lattice.size) if op.density is None else op.density
    log0 = np.zeros(lattice.size) if op.log_factor is None else op.log_factor
    return OperatorMatrix(stiff, lattice, f"conjugated:{op.kind}:k={k}", op.metric + " conjugated",
                          rho * np.exp(n * u), op.antisymmetric, log_factor=log0 + u)


def write_coo(op: OperatorMatrix, path) -> None:
    """Write the applied matrix as ``row col value`` lines (0-based, 17 significant digits)."""
    coo = op.matrix.tocoo()
    order = np.lexsort((coo.col, coo.row))
    with open(path, "w") as fh:
        fh.write(f"# {op.kind} {op.metric} shape={coo.shape[0]}x{coo.shape[1]}\n")
        for r, c, v in zip(coo.row[order], coo.col[order], coo.data[order]):
            fh.write(f"{r} {c} {v:.17g}\n")


def read_coo(path, size: int) -> sp.csr_matrix:
    data = np.loadtxt(path, comments="#", ndmin=2)
    if data.size == 0:
        return sp.csr_matrix((size, size))
    return sp.csr_matrix(sp.coo_matrix((data[:, 2], (data[:, 0].astype(int), data[:, 1].astype(int))),
                                       shape=(size, size)))
