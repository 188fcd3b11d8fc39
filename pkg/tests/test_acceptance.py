"""Acceptance criteria 1-12.

Each test records one PASS/FAIL line (printed live and again in the
terminal summary) and then asserts.  Criteria that the model cannot meet
are left red on purpose.
"""
import time

import numpy as np
import pytest
import scipy.linalg as la

from conftest import ENVELOPE_C, HEIS_UPSILONS, TORUS_UPSILONS
from gjms.conformal import (
    conjugation_error,
    kernel_dimension_report,
    kernel_threshold,
    lp_invariant,
    orthogonality_constraint,
)
from gjms.geometry import (
    ConformalDensity,
    FlatTorus,
    GridFunction,
    Heisenberg,
    build_lattice,
    quadrature_weights,
    sample,
    sample_trig,
    transform_density,
)
from gjms.heisenberg import (
    critical_s,
    enumerate_spectrum,
    negative_count,
    nodal_set_prediction,
    null_eigenvector,
    u_plus,
)
from gjms.nodal import courant_audit, domain_integral, nodal_set_distance, partition
from gjms.operators import (
    assemble_laplacian,
    assemble_paneitz_heisenberg,
    assemble_yamabe,
    conformal_scalar_curvature,
    conjugated_operator,
)
from gjms.spectral import growth_fit, inertia, numerical_kernel

pytestmark = pytest.mark.slow


@pytest.fixture(scope="module")
def heis_kernel_16(heis_crit):
    """Certified kernel at N=16, threshold from the (8, 16) pair, sparse path."""
    tol = kernel_threshold(heis_crit[8], heis_crit[16], dense_limit=0)
    return tol, numerical_kernel(heis_crit[16], tol, dense_limit=0)


@pytest.fixture(scope="module")
def heis_kernel_32(heis_crit):
    tol = kernel_threshold(heis_crit[16], heis_crit[32], dense_limit=0)
    return tol, numerical_kernel(heis_crit[32], tol, dense_limit=0)


# --- 12 first: the closed-form multiplicities everything else leans on ------

def test_c12_multiset_envelope(multiset_check, record):
    m = multiset_check
    ok = record(12, m["ok"], f"N=12 lowest {m['count']} Delta eigenvalues within "
                             f"{ENVELOPE_C:.3g} h^2 lambda^2 (worst {m['worst']:.4f})")
    assert ok


INERTIA_CASES = [
    ("torus laplacian N=8", lambda: _torus_op(8, None, assemble_laplacian)),
    ("torus conjugated yamabe N=8", lambda: conjugated_operator(_torus_op(8, None, assemble_yamabe),
                                                                _torus_ups(8), 1)),
    ("torus rescaled yamabe N=8", lambda: _torus_op(8, TORUS_UPSILONS[1], assemble_yamabe)),
    ("heis d=1 s=1 N=8", lambda: _heis_op(1, 1.0, 8, assemble_yamabe)),
    ("heis d=1 s=2 N=12", lambda: _heis_op(1, 2.0, 12, assemble_yamabe)),
    ("heis d=1 s=crit N=12", lambda: _heis_op(1, critical_s(1), 12, assemble_yamabe)),
    ("heis d=1 s=6 N=16", lambda: _heis_op(1, 6.0, 16, assemble_yamabe)),
    ("heis d=1 paneitz s=2 N=8", lambda: _heis_op(1, 2.0, 8, assemble_paneitz_heisenberg)),
    ("heis d=2 s=2 N=4", lambda: _heis_op(2, 2.0, 4, assemble_yamabe)),
    ("heis d=2 paneitz s=3 N=4", lambda: _heis_op(2, 3.0, 4, assemble_paneitz_heisenberg)),
]


def _torus_op(N, ups, assemble):
    lat = build_lattice(FlatTorus(3, conformal_factor=ups), N)
    return assemble(lat.model, lat)


def _torus_ups(N):
    return sample_trig(build_lattice(FlatTorus(3), N), TORUS_UPSILONS[0]).values


def _heis_op(d, s, N, assemble):
    lat = build_lattice(Heisenberg(d, s), N)
    return assemble(lat.model, lat)


@pytest.mark.parametrize("name,factory", INERTIA_CASES, ids=[c[0] for c in INERTIA_CASES])
def test_c12_inertia_matches_dense(name, factory, record):
    op = factory()
    assert op.lattice.size <= 5000
    mass = None if op.density is None else np.diag(op.density)
    ev = la.eigh(op.stiffness.toarray(), mass, eigvals_only=True)
    scale = np.abs(ev).max()
    mismatched = []
    for sigma in (0.0, -5.0, 10.0, 50.0, 200.0, float(np.median(ev))):
        if np.min(np.abs(ev - sigma)) < 1e-6 * scale:
            continue          # a shift on an eigenvalue has no well-defined count
        got = inertia(op, sigma).negative
        want = int(np.sum(ev < sigma))
        if got != want:
            mismatched.append((sigma, got, want))
    ok = record(12, not mismatched, f"{name}: inertia == dense" if not mismatched else f"{name}: {mismatched}")
    assert ok


# --- 1 -----------------------------------------------------------------------

def test_c1_critical_zero_mode(multiset_check, record):
    assert multiset_check["ok"]
    t0 = time.perf_counter()
    s = critical_s(1)
    res = enumerate_spectrum("yamabe", 1, s, 1.0)
    fams = [f for f in res.families if f.sector == "oscillator" and f.indices in ((1, 0), (-1, 0))]
    elapsed = time.perf_counter() - t0
    worst = max(abs(f.operator_eigenvalue) for f in fams)
    ok = len(fams) == 2 and worst < 1e-10 and elapsed < 1.0
    record(1, ok, f"|lambda|={worst:.2e} for n_t=+-1, m=0 at s={s:.10f}; {elapsed * 1e3:.1f} ms")
    assert ok


# --- 2 -----------------------------------------------------------------------

def test_c2_theta_residual_order(s_crit, record):
    resid = {}
    t32 = None
    for N in (16, 32):
        t0 = time.perf_counter()
        lat = build_lattice(Heisenberg(1, s_crit), N)
        up, _ = null_eigenvector(1, lat)
        r = assemble_yamabe(lat.model, lat).apply(up.values)
        resid[N] = float(np.max(np.abs(r)) / up.max_abs())
        if N == 32:
            t32 = time.perf_counter() - t0
    ratio = resid[16] / resid[32]
    ok = 3.5 <= ratio <= 4.5 and t32 < 120.0
    record(2, ok, f"residual {resid[16]:.4g} -> {resid[32]:.4g}, ratio {ratio:.3f}; N=32 in {t32:.1f} s")
    assert ok


# --- 3 -----------------------------------------------------------------------

def test_c3_nodal_set_prediction(s_crit, record):
    lat = build_lattice(Heisenberg(1, s_crit), 32)
    h = lat.h[0]
    up, _ = null_eigenvector(1, lat)
    # u_+ is sampled exactly, so the band only has to absorb O(h^2) of the zero
    part = partition(up.abs(), eps=h ** 2)
    dist = nodal_set_distance(part, nodal_set_prediction(1))
    ok = dist <= 2 * h
    record(3, ok, f"two-sided distance {dist:.4g} (2h = {2 * h:.4g}), band {part.near_zero.size} points")
    assert ok


# --- 4 -----------------------------------------------------------------------

def test_c4_yamabe_growth_slope(multiset_check, record):
    assert multiset_check["ok"]
    sweep = (5.0, 10.0, 20.0, 40.0)
    counts = [(s, negative_count("yamabe", 1, s)) for s in sweep]
    slope, _, _ = growth_fit(counts, min_samples=4)
    ok = 2.7 <= slope <= 3.3
    record(4, ok, f"counts {[c for _, c in counts]}, slope {slope:.3f} (target window [2.7, 3.3])")
    assert ok


# --- 5 -----------------------------------------------------------------------

@pytest.mark.parametrize("d", [1, 2, 3])
def test_c5_paneitz_growth(d, multiset_check, record):
    assert multiset_check["ok"]
    sweep = [critical_s(d) * 1.25 ** k for k in range(5)]
    counts = [negative_count("paneitz", d, s) for s in sweep]
    increasing = all(b > a for a, b in zip(counts, counts[1:]))
    ok = increasing and max(counts) > 100
    record(5, ok, f"d={d} counts {counts}")
    assert ok


# --- 6 -----------------------------------------------------------------------

def test_c6_conformal_covariance(record):
    ups = TORUS_UPSILONS[0]
    e16 = conjugation_error(FlatTorus(3), ups, 16)
    e32 = conjugation_error(FlatTorus(3), ups, 32)
    ratio = e16 / e32
    ok = 3.5 <= ratio <= 4.5
    record(6, ok, f"direct vs conjugated {e16:.3e} -> {e32:.3e}, ratio {ratio:.3f}")
    assert ok


# --- 7 -----------------------------------------------------------------------

def test_c7_kernel_dimension_torus(torus_yamabe, record):
    op = torus_yamabe[32]
    tol = kernel_threshold(torus_yamabe[16], op)
    base = numerical_kernel(op, tol)
    dims = [base.dimension]
    for ups in TORUS_UPSILONS:
        rep = kernel_dimension_report(op, sample_trig(op.lattice, ups), tol, 1, base)
        dims.append(int(rep.value_hat) if rep.verdict != "indeterminate" else None)
    ok = base.certified and dims == [1, 1, 1, 1]
    record(7, ok, f"torus N=32 dims g, g_hat x3: {dims}")
    assert ok


def test_c7_kernel_dimension_heisenberg(heis_crit, heis_kernel_16, record):
    tol, base = heis_kernel_16
    op = heis_crit[16]
    dims = [base.dimension]
    for ups in HEIS_UPSILONS:
        rep = kernel_dimension_report(op, sample_trig(op.lattice, ups), tol, 1, base, dense_limit=0)
        dims.append(int(rep.value_hat) if rep.verdict != "indeterminate" else None)
    # the operator is real: ker over C is ker over R tensored with C, so its
    # real dimension is twice the real multiplicity
    real_dims = [2 * m if m is not None else None for m in dims]
    ok = base.certified and real_dims == [4, 4, 4, 4]
    record(7, ok, f"Heisenberg critical N=16 multiplicities {dims}, real dim of complex kernel {real_dims}")
    assert ok


# --- 8 -----------------------------------------------------------------------

def test_c8_integral_invariant(s_crit, record):
    worst = 0.0
    lat_t = build_lattice(FlatTorus(3), 32)
    probe = sample(lat_t, lambda x, y, z: 1.5 + np.cos(2 * np.pi * x) * np.sin(2 * np.pi * (y + z)))
    lat_h = build_lattice(Heisenberg(1, s_crit), 32)
    up, _ = null_eigenvector(1, lat_h)
    for lat, u, samples in ((lat_t, probe, TORUS_UPSILONS), (lat_h, up.real, HEIS_UPSILONS)):
        dens = ConformalDensity(1 - lat.ndim / 2, u)
        a = lp_invariant(dens)
        for ups in samples:
            b = lp_invariant(transform_density(dens, sample_trig(lat, ups)))
            worst = max(worst, abs(a - b) / abs(a))
    ok = worst < 1e-6
    record(8, ok, f"max relative discrepancy {worst:.2e} over 6 (metric, Upsilon) pairs")
    assert ok


# --- 9 -----------------------------------------------------------------------

def test_c9_courant_torus(torus_yamabe, record):
    op = torus_yamabe[16]
    const = GridFunction(op.lattice, np.ones(op.lattice.size))
    m = inertia(op, 0.0).negative
    count, bound, ok = courant_audit(const, m)
    record(9, ok, f"torus constant: {count} domain(s), m={m}")
    assert ok


def test_c9_courant_heisenberg(heis_crit, heis_kernel_16, record):
    tol, kern = heis_kernel_16
    op = heis_crit[16]
    m = inertia(op, 0.0).negative
    m_strict = inertia(op, -tol).negative
    rng = np.random.default_rng(0x5EED)
    vecs = [b.values for b in kern.basis]
    for _ in range(20):
        c = rng.standard_normal(len(vecs))
        vecs.append(sum(ci * v for ci, v in zip(c, vecs[:len(kern.basis)])))
    counts = [courant_audit(GridFunction(op.lattice, v), m)[0] for v in vecs]
    ok = max(counts) <= m + 1
    strict = max(counts) <= m_strict + 1
    record(9, ok, f"Heisenberg basis + 20 combinations: max {max(counts)} domains, m={m} at sigma=0 "
                  f"(m={m_strict} below the kernel band, bound {'also holds' if strict else 'fails'})")
    assert ok


# --- 10 ----------------------------------------------------------------------

def test_c10_curvature_sign(s_crit, record):
    rows = []
    ok = True
    for ups in HEIS_UPSILONS:
        model = Heisenberg(1, s_crit, ups)
        lat = build_lattice(model, 32)
        up = sample(lat, lambda *c: _re_u_plus(s_crit, c))
        u_hat = transform_density(ConformalDensity(1 - lat.ndim / 2, up), sample_trig(lat, ups)).values
        R = conformal_scalar_curvature(model, lat).values
        w = quadrature_weights(lat)
        part = partition(u_hat)
        for i in range(part.domain_count):
            integral, _ = domain_integral(part, i, u_hat.abs() * R, w)
            _, rmin = domain_integral(part, i, R, w)
            ok &= integral < 0 and rmin < 0
            rows.append(f"{integral:.3g}/{rmin:.3g}")
    record(10, ok, f"(integral |u|R dV / min R) per domain: {', '.join(rows)}")
    assert ok


def _re_u_plus(s, coords):
    return u_plus(s)(*coords).real


# --- 11 ----------------------------------------------------------------------

def test_c11_orthogonality_torus(torus_yamabe, record):
    op = torus_yamabe[32]
    const = GridFunction(op.lattice, np.ones(op.lattice.size))
    ratios = [orthogonality_constraint(const, op, sample_trig(op.lattice, u)).ratio for u in TORUS_UPSILONS]
    ok = max(ratios) < 1e-5
    record(11, ok, f"torus N=32 ratios {', '.join(f'{r:.1e}' for r in ratios)}")
    assert ok


def test_c11_orthogonality_heisenberg(heis_crit, heis_kernel_32, record):
    tol, kern = heis_kernel_32
    assert kern.certified and kern.dimension == 2
    op = heis_crit[32]
    ratios = []
    for u in kern.basis:
        for ups in (None,) + HEIS_UPSILONS:
            ratios.append(orthogonality_constraint(u, op, sample_trig(op.lattice, ups)).ratio)
    ok = max(ratios) < 1e-5
    record(11, ok, f"Heisenberg N=32 kernel basis x 4 metrics: max ratio {max(ratios):.1e}")
    assert ok
