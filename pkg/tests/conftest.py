import numpy as np
import pytest

from gjms.geometry import FlatTorus, Heisenberg, TrigPoly, build_lattice
from gjms.heisenberg import critical_s, enumerate_spectrum
from gjms.operators import assemble_laplacian, assemble_yamabe
from gjms.spectral import eigen_low

# acceptance bookkeeping: criterion -> list of (ok, detail)
_ACCEPTANCE = {}

#: h^2 envelope constant; the 3-point symbol error is lambda^2 h^2 / 12
ENVELOPE_C = 1.0 / 8.0

# t-independent samples (the twisted identification forbids t frequencies)
HEIS_UPSILONS = (
    TrigPoly.cosine(0.1, (1, 0, 0)),
    TrigPoly.cosine(0.1, (0, 1, 0), 0.3),
    TrigPoly((((1, 1, 0), 0.05, 0.0), ((2, 0, 0), 0.05, 1.0))),
)
TORUS_UPSILONS = (
    TrigPoly.cosine(0.1, (1, 0, 0)),
    TrigPoly.cosine(0.1, (0, 1, 1), 0.7),
    TrigPoly((((1, 0, 0), 0.05, 0.0), ((0, 0, 2), 0.05, 0.4))),
)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_ACCEPTANCE):
        rows = _ACCEPTANCE[key]
        ok = all(r[0] for r in rows)
        detail = "; ".join(r[1] for r in rows)
        terminalreporter.write_line(f"criterion {key:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def record():
    def _record(criterion: int, ok: bool, detail: str):
        _ACCEPTANCE.setdefault(criterion, []).append((bool(ok), detail))
        print(f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}")
        return ok
    return _record


@pytest.fixture(scope="session")
def s_crit():
    return critical_s(1)


@pytest.fixture(scope="session")
def heis_crit(s_crit):
    """Lattices and Yamabe operators of the critical d=1 quotient, keyed by N."""
    out = {}
    for N in (8, 16, 32):
        lat = build_lattice(Heisenberg(1, s_crit), N)
        out[N] = assemble_yamabe(lat.model, lat)
    return out


@pytest.fixture(scope="session")
def torus_yamabe():
    out = {}
    for N in (16, 32):
        lat = build_lattice(FlatTorus(3), N)
        out[N] = assemble_yamabe(lat.model, lat)
    return out


@pytest.fixture(scope="session")
def multiset_check():
    """Grid Laplacian (Heisenberg d=1, s=1, N=12) against the closed-form multiset.

    Runs once per session; everything built on the closed-form
    multiplicities requests it first.
    """
    lat = build_lattice(Heisenberg(1, 1.0), 12)
    h = lat.h[0]
    analytic = enumerate_spectrum("delta", 1, 1.0, 250.0).eigenvalues()
    k = int(np.sum(analytic <= 150.0)) + 1
    grid = eigen_low(assemble_laplacian(lat.model, lat), k).eigenvalues
    ref = analytic[:k]
    env = ENVELOPE_C * h ** 2 * ref ** 2 + 1e-8
    err = np.abs(grid - ref)
    return {"ok": bool(np.all(err <= env)), "count": k, "h": h,
            "worst": float(np.max(err[1:] / (h ** 2 * ref[1:] ** 2))), "grid": grid, "analytic": ref}
