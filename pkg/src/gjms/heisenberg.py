"""Closed-form spectra on the Heisenberg quotient, theta functions and the critical null eigenvectors.

The spectrum of ``Delta_{g_s}`` splits by the ``t``-frequency ``n_t``:

* ``n_t = 0`` (torus sector): ``4 pi^2 (|p|^2 + s^2 |q|^2)`` for
  ``p, q in Z^d``, one eigenfunction ``e^{2 pi i (p.x + q.y)}`` each;
* ``n_t != 0`` (oscillator sector): ``2 pi |n_t| s (2m + d) + s^{-2d} (2 pi n_t)^2``
  for ``m >= 0``, with multiplicity ``|n_t|^d * C(m+d-1, d-1)``.

Yamabe and Paneitz eigenvalues are polynomials in the Laplace eigenvalue and
``n_t``, so each family carries both.  The oscillator formulas are checked
against twisted-grid eigenvalues in the test suite before anything relies on
them.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Iterable, List, Optional

import numpy as np

from .geometry import GridFunction, Identification, Lattice, ModelKind
from .operators import paneitz_coefficients

__all__ = [
    "theta",
    "theta_truncation",
    "critical_s",
    "yamabe_shift",
    "oscillator_eigenvalue",
    "oscillator_multiplicity",
    "torus_eigenvalue",
    "u_plus",
    "u_minus",
    "null_eigenvector",
    "nodal_set_prediction",
    "SpectralFamily",
    "SpectralResolution",
    "enumerate_spectrum",
    "negative_count",
    "OPERATORS",
]

OPERATORS = ("delta", "yamabe", "paneitz")
COLLISION_RTOL = 1e-9
MAX_FAMILIES = 50_000_000


def theta_truncation(im_tau: float, tol: float = 1e-14) -> int:
    """Half-width of the summation window around the dominant term."""
    return int(math.ceil(math.sqrt(-math.log(tol) / (math.pi * im_tau)))) + 2


def theta(z, tau, tol: float = 1e-14):
    """Jacobi theta ``sum_k exp(i pi k^2 tau + 2 i pi k z)``.

    The sum is centered at the index of the largest term,
    ``k0 = round(-Im z / Im tau)``, and truncated ``K`` terms either side; the
    neglected tail is below ``tol`` times the largest term.
    """
    tau = complex(tau)
    if tau.imag <= 0:
        raise ValueError(f"theta needs Im(tau) > 0, got tau={tau}")
    z = np.asarray(z, dtype=complex)
    K = theta_truncation(tau.imag, tol)
    k0 = np.rint(-z.imag / tau.imag)
    offsets = np.arange(-K, K + 1).reshape((-1,) + (1,) * z.ndim)
    k = k0[None, ...] + offsets
    terms = np.exp(1j * np.pi * k ** 2 * tau + 2j * np.pi * k * z[None, ...])
    out = terms.sum(axis=0)
    return out if out.ndim else complex(out)


def critical_s(d: int) -> float:
    """Parameter at which the ``n_t = +-1, m = 0`` Yamabe eigenvalue vanishes.

    With ``X = s^{2d+1}`` the condition ``2 pi d s + 4 pi^2 s^{-2d} =
    (2d-1) s^{2d+2} / 16`` becomes the quadratic
    ``(2d-1) X^2 / 16 - 2 pi d X - 4 pi^2 = 0``, whose positive root is
    ``X = 8 pi (2d + sqrt(4d^2 + 2d - 1)) / (2d - 1)``.
    """
    if d < 1:
        raise ValueError("d must be >= 1")
    x = 8 * math.pi * (2 * d + math.sqrt(4 * d * d + 2 * d - 1)) / (2 * d - 1)
    return x ** (1.0 / (2 * d + 1))


def yamabe_shift(d: int, s: float) -> float:
    """Constant ``(n-2)/(4(n-1)) R_{g_s} = -(2d-1) s^{2d+2} / 16``."""
    return -(2 * d - 1) * s ** (2 * d + 2) / 16


def torus_eigenvalue(p2, q2, s):
    return 4 * np.pi ** 2 * (np.asarray(p2) + s ** 2 * np.asarray(q2))


def oscillator_eigenvalue(n_t, m, d: int, s: float):
    n = np.abs(np.asarray(n_t, dtype=float))
    return 2 * np.pi * n * s * (2 * np.asarray(m) + d) + s ** (-2 * d) * (2 * np.pi * n) ** 2


def oscillator_multiplicity(n_t, m, d: int):
    n = np.abs(np.asarray(n_t, dtype=np.int64))
    m = np.asarray(m, dtype=np.int64)
    return n ** d * _binom(m + d - 1, d - 1)


def _binom(a, b: int):
    a = np.asarray(a, dtype=np.int64)
    out = np.ones_like(a)
    for i in range(b):
        out = out * (a - i)
    return out // math.factorial(b)


def _operator_eigenvalue(op: str, lam, n_t, d: int, s: float):
    lam = np.asarray(lam, dtype=float)
    if op == "delta":
        return lam
    if op == "yamabe":
        return lam + yamabe_shift(d, s)
    if op == "paneitz":
        a, b, c = (float(v) for v in paneitz_coefficients(d))
        tfreq2 = (2 * np.pi * np.asarray(n_t, dtype=float)) ** 2
        return lam ** 2 + a * s ** (2 * d + 2) * lam - b * s ** 2 * tfreq2 + c * s ** (4 * d + 4)
    raise ValueError(f"unknown operator {op!r}")


def _quadratic_root(lin: float, const: float) -> float:
    """Larger root of ``lam^2 + lin lam + const``, or -1 when there is none."""
    disc = lin * lin - 4 * const
    if disc < 0:
        return -1.0
    return (-lin + math.sqrt(disc)) / 2


def _delta_bound(op: str, d: int, s: float, cutoff: float, sector: str) -> float:
    """Largest Laplace eigenvalue whose family in ``sector`` can still fall below ``cutoff``."""
    if op == "delta":
        return cutoff
    if op == "yamabe":
        return cutoff - yamabe_shift(d, s)
    a, b, c = (float(v) for v in paneitz_coefficients(d))
    const = c * s ** (4 * d + 4) - cutoff
    if sector == "torus":
        return _quadratic_root(a * s ** (2 * d + 2), const)
    # (2 pi n_t)^2 <= s^{2d} lam, so P >= lam^2 + (a - b) s^{2d+2} lam + c s^{4d+4}
    return _quadratic_root((a - b) * s ** (2 * d + 2), const)


def _square_counts(d: int, rmax: int) -> np.ndarray:
    """``counts[r] = #{p in Z^d : |p|^2 = r}`` for ``r <= rmax``."""
    one = np.zeros(rmax + 1, dtype=np.int64)
    k = np.arange(0, math.isqrt(rmax) + 1)
    one[k ** 2] += 1
    one[k[1:] ** 2] += 1
    out = np.zeros(rmax + 1, dtype=np.int64)
    out[0] = 1
    for _ in range(d):
        out = np.convolve(out, one)[: rmax + 1]
    return out


@dataclass(frozen=True)
class SpectralFamily:
    """One closed-form eigenvalue family.

    ``sector`` is ``"torus"`` (``indices = (|p|^2, |q|^2)``) or
    ``"oscillator"`` (``indices = (n_t, m)``).
    """

    sector: str
    indices: tuple
    delta_eigenvalue: float
    operator_eigenvalue: float
    multiplicity: int

    def label(self) -> str:
        if self.sector == "torus":
            return f"|p|^2={self.indices[0]},|q|^2={self.indices[1]}"
        return f"n_t={self.indices[0]},m={self.indices[1]}"


@dataclass(frozen=True)
class SpectralResolution:
    operator: str
    d: int
    s: float
    cutoff: float
    families: tuple

    def eigenvalues(self) -> np.ndarray:
        """Operator eigenvalues repeated by multiplicity, ascending."""
        vals = [np.full(f.multiplicity, f.operator_eigenvalue) for f in self.families]
        return np.sort(np.concatenate(vals)) if vals else np.zeros(0)

    def classes(self, rtol: float = COLLISION_RTOL) -> List[dict]:
        """Families merged by equal operator eigenvalue (relative tolerance ``rtol``)."""
        fams = sorted(self.families, key=lambda f: f.operator_eigenvalue)
        out: List[dict] = []
        for f in fams:
            if out:
                last = out[-1]
                ref = last["operator_eigenvalue"]
                if abs(f.operator_eigenvalue - ref) <= rtol * max(abs(ref), abs(f.operator_eigenvalue), 1.0):
                    last["multiplicity"] += f.multiplicity
                    last["members"].append(f)
                    continue
            out.append({"operator_eigenvalue": f.operator_eigenvalue,
                        "delta_eigenvalue": f.delta_eigenvalue,
                        "multiplicity": f.multiplicity, "members": [f]})
        return out

    def count_below(self, value: float = 0.0) -> int:
        return int(sum(f.multiplicity for f in self.families if f.operator_eigenvalue < value))

    def write_csv(self, path, merged: bool = True) -> None:
        """Write ``sector, indices, delta_eig, operator_eig, multiplicity`` rows."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["sector", "indices", "delta_eig", "operator_eig", "multiplicity"])
            if merged:
                for c in self.classes():
                    sectors = sorted({m.sector for m in c["members"]})
                    w.writerow(["+".join(sectors), ";".join(m.label() for m in c["members"]),
                                f"{c['delta_eigenvalue']:.17g}", f"{c['operator_eigenvalue']:.17g}",
                                c["multiplicity"]])
            else:
                for f in sorted(self.families, key=lambda f: (f.operator_eigenvalue, f.sector, f.indices)):
                    w.writerow([f.sector, f.label(), f"{f.delta_eigenvalue:.17g}",
                                f"{f.operator_eigenvalue:.17g}", f.multiplicity])


def _family_arrays(op: str, d: int, s: float, cutoff: float):
    """Vectorized enumeration; returns per-sector arrays of indices, eigenvalues, multiplicities."""
    out = {"torus": None, "oscillator": None}
    lam_max = _delta_bound(op, d, s, cutoff, "torus")
    if lam_max >= 0:
        out["torus"] = _torus_families(op, d, s, cutoff, lam_max)
    lam_max = _delta_bound(op, d, s, cutoff, "oscillator")
    if lam_max >= 0:
        out["oscillator"] = _oscillator_families(op, d, s, cutoff, lam_max)
    return out


def _torus_families(op, d, s, cutoff, lam_max):
    # torus sector: 4 pi^2 (a + s^2 b) <= lam_max
    amax = int(math.floor(lam_max / (4 * np.pi ** 2)))
    bmax = int(math.floor(lam_max / (4 * np.pi ** 2 * s ** 2)))
    if (amax + 1) * (bmax + 1) > MAX_FAMILIES:
        raise OverflowError("cutoff too large: torus-sector enumeration exceeds the index guard")
    counts_a = _square_counts(d, amax)
    counts_b = _square_counts(d, bmax)
    a_idx = np.nonzero(counts_a)[0]
    b_idx = np.nonzero(counts_b)[0]
    A, B = np.meshgrid(a_idx, b_idx, indexing="ij")
    lam = torus_eigenvalue(A, B, s)
    keep = lam <= lam_max
    A, B, lam = A[keep], B[keep], lam[keep]
    mult = counts_a[A] * counts_b[B]
    val = _operator_eigenvalue(op, lam, 0, d, s)
    sel = val <= cutoff
    return A[sel], B[sel], lam[sel], val[sel], mult[sel]


def _oscillator_families(op, d, s, cutoff, lam_max):
    # oscillator sector: the n_t^2 term alone bounds |n_t|, the linear term bounds m
    nmax = int(math.floor(min(lam_max / (2 * np.pi * s * d),
                              math.sqrt(lam_max * s ** (2 * d)) / (2 * np.pi)))) + 1
    ns, ms = [], []
    total = 0
    for n in range(1, nmax + 1):
        base = oscillator_eigenvalue(n, 0, d, s)
        if base > lam_max:
            break
        mmax = int(math.floor((lam_max - base) / (4 * np.pi * n * s)))
        total += 2 * (mmax + 1)
        if total > MAX_FAMILIES:
            raise OverflowError("cutoff too large: oscillator enumeration exceeds the index guard")
        ns.append(np.full(mmax + 1, n))
        ms.append(np.arange(mmax + 1))
    if ns:
        n_arr = np.concatenate(ns)
        m_arr = np.concatenate(ms)
        n_arr = np.concatenate([n_arr, -n_arr])
        m_arr = np.concatenate([m_arr, m_arr])
        lam = oscillator_eigenvalue(n_arr, m_arr, d, s)
        keep = lam <= lam_max * (1 + 1e-12)
        n_arr, m_arr, lam = n_arr[keep], m_arr[keep], lam[keep]
        val = _operator_eigenvalue(op, lam, n_arr, d, s)
        sel = val <= cutoff
        mult = oscillator_multiplicity(n_arr[sel], m_arr[sel], d)
        return n_arr[sel], m_arr[sel], lam[sel], val[sel], mult
    return None


def enumerate_spectrum(operator: str, d: int, s: float, cutoff: float) -> SpectralResolution:
    """All eigenvalue families of ``operator`` on ``(Gamma\\H_d, g_s)`` not exceeding ``cutoff``.

    Completeness: the Laplace eigenvalue of each family is increasing in
    ``|p|^2, |q|^2, |n_t|, m`` and the operator eigenvalue is bounded below
    by an increasing function of it, so enumeration stops once that bound
    passes ``cutoff``.
    """
    operator = operator.lower()
    if operator not in OPERATORS:
        raise ValueError(f"operator must be one of {OPERATORS}")
    if not np.isfinite(cutoff):
        raise OverflowError("cutoff must be finite")
    arrs = _family_arrays(operator, d, s, cutoff)
    fams = []
    if arrs["torus"] is not None:
        for a, b, lam, val, mult in zip(*arrs["torus"]):
            fams.append(SpectralFamily("torus", (int(a), int(b)), float(lam), float(val), int(mult)))
    if arrs["oscillator"] is not None:
        for n, m, lam, val, mult in zip(*arrs["oscillator"]):
            fams.append(SpectralFamily("oscillator", (int(n), int(m)), float(lam), float(val), int(mult)))
    fams.sort(key=lambda f: (f.operator_eigenvalue, f.sector, f.indices))
    return SpectralResolution(operator, d, float(s), float(cutoff), tuple(fams))


def negative_count(operator: str, d: int, s: float) -> int:
    """Number of negative eigenvalues (with multiplicity), without building family objects."""
    arrs = _family_arrays(operator.lower(), d, s, 0.0)
    total = 0
    for key in ("torus", "oscillator"):
        if arrs[key] is not None:
            val, mult = arrs[key][3], arrs[key][4]
            total += int(mult[val < 0].sum())
    return total


def _u_values(coords, s: float, sign: int) -> np.ndarray:
    c = np.asarray(coords, dtype=float)
    d = (c.shape[0] - 1) // 2
    x, y, t = c[:d], c[d:2 * d], c[-1]
    out = np.exp(sign * 2j * np.pi * t) * np.exp(-np.pi * s * np.sum(x ** 2, axis=0))
    for j in range(d):
        out = out * theta(y[j] + sign * 1j * s * x[j], 1j * s)
    return out


def u_plus(s: float) -> Callable[..., np.ndarray]:
    """``u_+(x, y, t) = e^{2 pi i t} e^{-pi s |x|^2} prod_j theta(y_j + i s x_j, i s)`` on the covering space."""
    return lambda *coords: _u_values(np.array(coords), s, +1)


def u_minus(s: float) -> Callable[..., np.ndarray]:
    """Complex conjugate partner ``e^{-2 pi i t} e^{-pi s |x|^2} prod_j theta(y_j - i s x_j, i s)``."""
    return lambda *coords: _u_values(np.array(coords), s, -1)


def null_eigenvector(d: int, lattice: Lattice, rtol: float = 1e-9):
    """Samples of ``(u_+, u_-)`` on a twisted lattice at the critical parameter.

    Both are scaled by the same factor so that ``max |u_+| = 1``.
    """
    model = lattice.model
    if lattice.identification is not Identification.HEISENBERG_TWISTED or model.kind is not ModelKind.HEISENBERG:
        raise ValueError("null eigenvectors need a twisted Heisenberg lattice")
    if model.d != d:
        raise ValueError("lattice dimension does not match d")
    s_crit = critical_s(d)
    if abs(model.s - s_crit) > rtol * s_crit:
        raise ValueError(f"s={model.s} is not the critical value {s_crit}")
    c = lattice.coords
    up = _u_values(c, model.s, +1)
    um = _u_values(c, model.s, -1)
    scale = np.max(np.abs(up))
    return GridFunction(lattice, up / scale), GridFunction(lattice, um / scale)


def nodal_set_prediction(d: int) -> Callable[..., np.ndarray]:
    """Distance-like predicate ``min_j max(|x_j - 1/2|, |y_j - 1/2|)`` (periodic), zero on the predicted set."""
    def predicate(*coords):
        c = np.asarray(coords, dtype=float)
        dist = None
        for j in range(d):
            dx = np.abs((c[j] - 0.5 + 0.5) % 1.0 - 0.5)
            dy = np.abs((c[d + j] - 0.5 + 0.5) % 1.0 - 0.5)
            m = np.maximum(dx, dy)
            dist = m if dist is None else np.minimum(dist, m)
        return dist
    return predicate
