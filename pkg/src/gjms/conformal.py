"""Invariance battery and Q-curvature experiments.

Each check compares a quantity computed for ``g`` with the same quantity
for ``g_hat = e^{2 Upsilon} g`` and returns an :class:`InvarianceReport`.
Tolerances come from paired resolutions or are exact (zero) where the
invariance holds identically at grid level; they are never free constants.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import asdict, dataclass
from typing import Iterable, List, Optional, Sequence

import numpy as np

from . import operators as ops
from .geometry import (
    ConformalDensity,
    GridFunction,
    Lattice,
    ManifoldModel,
    ModelKind,
    TrigPoly,
    build_lattice,
    quadrature_weights,
    sample,
    sample_trig,
    transform_density,
)
from .nodal import partition, same_structure
from .spectral import DENSE_LIMIT, eigen_nearest_zero, kernel_tolerance, numerical_kernel

__all__ = [
    "InvarianceReport",
    "QField",
    "OrthogonalityResult",
    "REPORT_SCHEMA",
    "phi_map",
    "common_zero_set",
    "lp_invariant",
    "q_curvature",
    "zero_qk_criterion",
    "orthogonality_constraint",
    "orthogonality_ratio",
    "kernel_threshold",
    "kernel_dimension_report",
    "conjugation_error",
    "conjugation_report",
    "lp_report",
    "phi_report",
    "nodal_report",
    "orthogonality_report",
    "run_battery",
    "battery_json",
]

REPORT_SCHEMA = "gjms.battery/1"
SPHERE_RESOLUTION = 64


@dataclass(frozen=True)
class InvarianceReport:
    quantity: str
    value_g: float
    value_hat: float
    discrepancy: float
    tolerance: float
    verdict: str
    note: str = ""

    @classmethod
    def compare(cls, quantity, value_g, value_hat, discrepancy, tolerance, note=""):
        verdict = "pass" if discrepancy <= tolerance else "fail"
        return cls(quantity, float(value_g), float(value_hat), float(discrepancy), float(tolerance),
                   verdict, note)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class QField:
    values: GridFunction
    provenance: str
    k: int


@dataclass(frozen=True)
class OrthogonalityResult:
    integral: float
    normalizer: float

    @property
    def ratio(self) -> float:
        if self.normalizer == 0.0:
            return 0.0
        return abs(self.integral) / self.normalizer

    @property
    def exact_zero(self) -> bool:
        return self.normalizer == 0.0


def _stack(basis: Sequence) -> np.ndarray:
    return np.column_stack([np.asarray(b.values if isinstance(b, GridFunction) else b) for b in basis])


def common_zero_set(basis: Sequence, eps: float) -> np.ndarray:
    """Mask of points where every basis vector is below ``eps`` times its own maximum."""
    u = _stack(basis)
    scale = np.max(np.abs(u), axis=0)
    return np.all(np.abs(u) < eps * scale[None, :], axis=1)


def phi_map(basis: Sequence, points: Optional[Iterable[int]] = None, eps: float = 1e-12) -> np.ndarray:
    """Projective representatives ``(u_1(p) : ... : u_m(p))`` as unit vectors.

    The sign is fixed so that the first nonzero coordinate is positive.
    Points in the common zero set of the basis are rejected.
    """
    u = _stack(basis)
    if u.shape[1] < 2:
        raise ValueError("phi_map needs at least two functions")
    idx = np.arange(u.shape[0]) if points is None else np.asarray(list(points), dtype=int)
    zero = common_zero_set(basis, eps)[idx]
    if zero.any():
        raise ValueError(f"{int(zero.sum())} requested points lie in the common zero set")
    v = u[idx]
    v = v / np.linalg.norm(v, axis=1)[:, None]
    first = np.argmax(v != 0, axis=1)
    sgn = np.sign(v[np.arange(v.shape[0]), first])
    return v * sgn[:, None]


def lp_invariant(u: ConformalDensity, weights: Optional[GridFunction] = None) -> float:
    """``integral |u|^p dV`` with ``p = n / |w|``; invariant for weight ``w < 0``."""
    if u.weight >= 0:
        raise ValueError("the integral invariant needs a density of negative weight")
    n = u.lattice.ndim
    p = n / abs(u.weight)
    w = u.metric_weights() if weights is None else weights
    return float(np.dot(np.abs(u.values.values) ** p, w.values))


def _operator(model: ManifoldModel, lattice: Lattice, k: int) -> ops.OperatorMatrix:
    if k == 1:
        return ops.assemble_yamabe(model, lattice)
    if k == 2:
        return ops.assemble_paneitz_heisenberg(model, lattice)
    raise ValueError("only k = 1 and k = 2 are available")


def q_curvature(model: ManifoldModel, lattice: Lattice, k: int = 1, upsilon: Optional[TrigPoly] = None) -> QField:
    """``Q_k = 2 / (n - 2k) * P_k(1)``.

    With ``upsilon`` the operator of ``e^{2 Upsilon} g`` is obtained by
    conjugating the bare operator; otherwise it is assembled directly for
    the model metric.
    """
    n = model.dim
    if 2 * k >= n:
        raise ValueError(f"Q_{k} needs k < n/2 (n={n})")
    if upsilon is None:
        op = _operator(model, lattice, k)
        prov = "direct"
    else:
        op = ops.conjugated_operator(_operator(model.bare(), lattice, k), sample_trig(lattice, upsilon), k)
        prov = "conjugated"
    vals = 2.0 / (n - 2 * k) * op.apply(np.ones(lattice.size))
    return QField(GridFunction(lattice, vals), f"{prov}:{op.metric}", k)


def _sphere_grid(m: int, resolution: int) -> np.ndarray:
    """Unit coefficient vectors on a hyperspherical angle grid (half sphere, signs are symmetric)."""
    if m == 1:
        return np.ones((1, 1))
    polar = [np.linspace(0, np.pi, resolution, endpoint=False)] * (m - 2)
    last = np.linspace(0, np.pi, resolution, endpoint=False)
    out = []
    for angles in itertools.product(*polar, last):
        c = np.empty(m)
        sin_prod = 1.0
        for i, a in enumerate(angles):
            c[i] = sin_prod * np.cos(a)
            sin_prod *= np.sin(a)
        c[-1] = sin_prod
        out.append(c)
    return np.array(out)


def zero_qk_criterion(basis: Sequence, eps: float = 1e-6, resolution: int = SPHERE_RESOLUTION,
                      max_combinations: int = 300_000) -> tuple:
    """Search the kernel span for a nowhere-vanishing function.

    Returns ``(verdict, note)`` with verdict ``"realizable"``,
    ``"not-by-this-basis"`` or ``"indeterminate"``.  A common zero of all
    basis vectors rules out every combination at once; otherwise
    combinations on a hyperspherical grid are tested, ``resolution`` values
    per angle.  A combination with both values above ``eps`` and below
    ``-eps`` (relative to its maximum) certainly vanishes somewhere.
    """
    if len(basis) == 0:
        return "not-by-this-basis", "empty kernel: Q_k = 0 needs a nontrivial kernel"
    u = _stack(basis).real
    m = u.shape[1]
    common = common_zero_set(basis, eps)
    if common.any():
        return "not-by-this-basis", f"all basis vectors vanish at {int(common.sum())} common points"
    coefs = _sphere_grid(m, resolution)
    if coefs.shape[0] > max_combinations:
        return "indeterminate", f"{coefs.shape[0]} combinations exceed the search budget"
    ambiguous = 0
    for chunk in np.array_split(coefs, max(1, coefs.shape[0] // 256)):
        vals = u @ chunk.T
        scale = np.max(np.abs(vals), axis=0)
        lo, hi = vals.min(axis=0), vals.max(axis=0)
        strict = (lo > eps * scale) | (hi < -eps * scale)
        if strict.any():
            return "realizable", f"combination {chunk[np.argmax(strict)].tolist()} has a strict sign"
        crossing = (lo < -eps * scale) & (hi > eps * scale)
        ambiguous += int(np.sum(~crossing))
    if ambiguous:
        return "indeterminate", f"{ambiguous} combinations touch zero only inside the tolerance band"
    return "not-by-this-basis", f"all {coefs.shape[0]} tested combinations change sign"


def orthogonality_ratio(u_hat: GridFunction, v: GridFunction, weights: GridFunction) -> OrthogonalityResult:
    """``integral u v dV`` and ``integral |u| |v| dV`` for the given metric weights."""
    a, b, w = np.asarray(u_hat.values), np.asarray(v.values), np.asarray(weights.values)
    return OrthogonalityResult(float(np.sum(a * b * w)), float(np.sum(np.abs(a) * np.abs(b) * w)))


def orthogonality_constraint(u: GridFunction, op: ops.OperatorMatrix, upsilon: GridFunction,
                             k: int = 1) -> OrthogonalityResult:
    """Pair a kernel vector of ``P_{k,g}`` with ``Q_{k, g_hat}`` in ``g_hat``.

    ``u`` is re-expressed as the density ``e^{(k - n/2) Upsilon} u`` and
    ``Q_{k, g_hat}`` comes from the conjugated operator.
    """
    lattice = op.lattice
    n = lattice.ndim
    if 2 * k >= n:
        raise ValueError(f"Q_{k} needs k < n/2 (n={n})")
    conj = ops.conjugated_operator(op, upsilon, k)
    q = 2.0 / (n - 2 * k) * conj.apply(np.ones(lattice.size))
    dens = transform_density(ConformalDensity(k - n / 2, u), upsilon)
    return orthogonality_ratio(dens.values, GridFunction(lattice, q), dens.metric_weights())


# --- battery -----------------------------------------------------------------

def _random_smooth(lattice: Lattice, count: int, seed: int, max_freq: int = 2) -> np.ndarray:
    """Random trigonometric polynomials (quotient-consistent on tori)."""
    rng = np.random.default_rng(seed)
    out = []
    n = lattice.ndim
    for _ in range(count):
        terms = []
        for _ in range(4):
            idx = tuple(int(v) for v in rng.integers(-max_freq, max_freq + 1, size=n))
            terms.append((idx, float(rng.normal()), float(rng.uniform(0, 2 * np.pi))))
        out.append(TrigPoly(tuple(terms))(lattice.coords, lattice.model.periods))
    return np.column_stack(out)


def conjugation_error(model: ManifoldModel, upsilon: TrigPoly, N: int, vectors: int = 10,
                      seed: int = 0x5EED) -> float:
    """Max relative difference of direct ``P_{1, g_hat}`` and the conjugated ``P_{1, g}`` on smooth vectors."""
    lattice = build_lattice(model.with_conformal_factor(upsilon), N)
    bare_lattice = build_lattice(model.bare(), N)
    direct = ops.assemble_yamabe(lattice.model, lattice)
    conj = ops.conjugated_operator(ops.assemble_yamabe(model.bare(), bare_lattice),
                                   sample_trig(bare_lattice, upsilon).values, 1)
    f = _random_smooth(lattice, vectors, seed)
    a = direct.apply(f)
    b = conj.apply(f)
    return float(np.max(np.abs(a - b)) / np.max(np.abs(b)))


def conjugation_report(model: ManifoldModel, upsilon: TrigPoly, N: int) -> InvarianceReport:
    """Direct vs conjugated operator at ``N/2`` and ``N``; pass iff the error falls by at least 3.5."""
    coarse = conjugation_error(model, upsilon, N // 2)
    fine = conjugation_error(model, upsilon, N)
    ratio = coarse / fine if fine > 0 else float("inf")
    return InvarianceReport.compare("conjugation_consistency", coarse, fine, fine, coarse / 3.5,
                                    note=f"refinement ratio {ratio:.4g} (order-2 target 4)")


def kernel_threshold(op_coarse: ops.OperatorMatrix, op_fine: ops.OperatorMatrix,
                     dense_limit: int = DENSE_LIMIT) -> float:
    """Kernel threshold for ``op_fine``, Richardson-estimated from the refinement pair."""
    ec = eigen_nearest_zero(op_coarse, 1, dense_limit).eigenvalues
    ef = eigen_nearest_zero(op_fine, 1, dense_limit).eigenvalues
    return kernel_tolerance(ef, ec, op_fine.lattice.h[0], op_coarse.lattice.h[0],
                            floor=1e-9 * op_fine.norm1())


def kernel_dimension_report(op: ops.OperatorMatrix, upsilon: GridFunction, tol: float, k: int = 1,
                            base=None, label: str = "", dense_limit: int = DENSE_LIMIT) -> InvarianceReport:
    """``dim ker`` of ``P_{k,g}`` against the conjugated operator of ``e^{2 Upsilon} g``.

    ``tol`` is the threshold for ``g`` (see :func:`kernel_threshold`).  The
    conjugated pencil is congruent to ``(P, e^{2k Upsilon})``, so by
    Ostrowski's theorem every eigenvalue keeps its sign and moves by a factor
    in ``[e^{-2k max U}, e^{-2k min U}]``; the threshold for ``g_hat`` is
    scaled by ``e^{2k max|U|}``.  ``base`` may carry an already computed
    kernel of ``op``.
    """
    if base is None:
        base = numerical_kernel(op, tol, dense_limit=dense_limit)
    u = np.asarray(upsilon.values)
    factor = float(np.exp(2 * k * np.max(np.abs(u)))) if u.size else 1.0
    conj = numerical_kernel(ops.conjugated_operator(op, upsilon, k), tol * factor, dense_limit=dense_limit)
    name = f"kernel_dimension{':' + label if label else ''}"
    if "indeterminate" in (base.status, conj.status):
        return InvarianceReport(name, base.dimension or -1, conj.dimension or -1, float("nan"),
                                0.0, "indeterminate", f"threshold {tol:.3g}, gap undecided")
    return InvarianceReport.compare(name, base.dimension, conj.dimension,
                                    abs(base.dimension - conj.dimension), 0.0,
                                    note=f"threshold {tol:.3g} (g), {tol * factor:.3g} (g_hat)")


def lp_report(u: GridFunction, upsilon: GridFunction, k: int) -> InvarianceReport:
    """``integral |u|^p dV`` under ``g`` and ``g_hat``."""
    n = u.lattice.ndim
    dens = ConformalDensity(k - n / 2, u)
    a = lp_invariant(dens)
    b = lp_invariant(transform_density(dens, upsilon))
    disc = abs(a - b) / max(abs(a), np.finfo(float).tiny)
    # the integrands agree pointwise up to rounding, so the budget is rounding over the grid
    tol = 64 * np.finfo(float).eps * np.sqrt(u.lattice.size)
    return InvarianceReport.compare(f"lp_invariant:k={k}", a, b, disc, tol)


def phi_report(basis: Sequence[GridFunction], upsilon: GridFunction, weight: float, eps: float = 1e-9) -> InvarianceReport:
    """Projective map from ``{u_j}`` and from ``{e^{w Upsilon} u_j}``."""
    zero = common_zero_set(basis, eps)
    pts = np.flatnonzero(~zero)
    a = phi_map(basis, pts, eps)
    scaled = [GridFunction(b.lattice, np.exp(weight * upsilon.values) * b.values) for b in basis]
    b = phi_map(scaled, pts, eps)
    disc = float(np.max(np.abs(a - b)))
    return InvarianceReport.compare("phi_map", float(len(pts)), float(len(pts)), disc,
                                    8 * np.finfo(float).eps, note=f"{int(zero.sum())} points in the common zero set")


def nodal_report(u: GridFunction, upsilon: GridFunction, weight: float) -> InvarianceReport:
    """Sign labels and domains of ``u`` and of ``e^{w Upsilon} u`` (exact-zero band)."""
    a = partition(u, 0.0)
    b = partition(GridFunction(u.lattice, np.exp(weight * upsilon.values) * u.values), 0.0)
    same = same_structure(a, b)
    return InvarianceReport.compare("nodal_structure", a.domain_count, b.domain_count,
                                    0.0 if same else 1.0, 0.0)


def orthogonality_report(u: GridFunction, op: ops.OperatorMatrix, upsilon: GridFunction, k: int = 1,
                         tolerance: float = 1e-5) -> InvarianceReport:
    """``|integral u_hat Q_hat| / integral |u_hat| |Q_hat|`` for a kernel vector; target 0."""
    res = orthogonality_constraint(u, op, upsilon, k)
    note = "Q vanishes identically" if res.exact_zero else ""
    return InvarianceReport.compare("orthogonality", res.integral, res.normalizer, res.ratio, tolerance, note)


def run_battery(model: ManifoldModel, N: int, upsilons: Sequence[Optional[TrigPoly]], k: int = 1,
                tol_scale: float = 1.0, dense_limit: int = DENSE_LIMIT) -> List[InvarianceReport]:
    """All invariance reports for a torus model and each sampled ``Upsilon``.

    ``tol_scale`` multiplies every nonzero tolerance; ``dense_limit`` is
    passed to the kernel solves.
    """
    if model.kind is not ModelKind.TORUS:
        raise ValueError("the default battery runs on flat tori")
    bare = model.bare()
    lat_f = build_lattice(bare, N)
    lat_c = build_lattice(bare, N // 2)
    p_f = ops.assemble_yamabe(bare, lat_f)
    p_c = ops.assemble_yamabe(bare, lat_c)
    const = GridFunction(lat_f, np.ones(lat_f.size))
    probe = sample(lat_f, lambda *c: 1.5 + np.cos(2 * np.pi * c[0]) * np.sin(2 * np.pi * c[1]))
    trig = sample(lat_f, lambda *c: np.sin(2 * np.pi * c[0]))
    w = k - bare.dim / 2
    tol = kernel_threshold(p_c, p_f, dense_limit)
    base = numerical_kernel(p_f, tol, dense_limit=dense_limit)
    reports: List[InvarianceReport] = []
    for i, ups in enumerate(upsilons):
        ups = ups if ups is not None else TrigPoly.zero()
        u_vals = sample_trig(lat_f, ups)
        group = [
            conjugation_report(bare, ups, N),
            kernel_dimension_report(p_f, u_vals, tol, k, base, dense_limit=dense_limit),
            lp_report(probe, u_vals, k),
            phi_report([const, trig], u_vals, w),
            nodal_report(trig, u_vals, w),
            orthogonality_report(const, p_f, u_vals, k),
        ]
        for r in group:
            scaled = r.tolerance * tol_scale
            verdict = r.verdict
            if verdict != "indeterminate":
                verdict = "pass" if r.discrepancy <= scaled else "fail"
            reports.append(InvarianceReport(f"{r.quantity}[{i}]", r.value_g, r.value_hat,
                                            r.discrepancy, scaled, verdict, r.note))
    return reports


def battery_json(reports: Sequence[InvarianceReport], meta: Optional[dict] = None) -> str:
    """Deterministic JSON (sorted keys, fixed float format)."""
    def num(x):
        if isinstance(x, float):
            if not np.isfinite(x):
                return str(x)
            return float(f"{x:.17g}")
        return x
    payload = {
        "schema": REPORT_SCHEMA,
        "meta": meta or {},
        "reports": [{k: num(v) for k, v in r.to_dict().items()} for r in reports],
        "summary": {
            "pass": sum(r.verdict == "pass" for r in reports),
            "fail": sum(r.verdict == "fail" for r in reports),
            "indeterminate": sum(r.verdict == "indeterminate" for r in reports),
        },
    }
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"
