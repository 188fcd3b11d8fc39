"""Manifold models, lattices with identification rules, grid functions and densities.

Both model kinds live on the unit cube ``[0, 1)^n`` (scaled by the torus
periods when those are not 1).  Heisenberg coordinates are ordered
``(x_1..x_d, y_1..y_d, t)`` and the lattice quotient identifies

    f(x + e_j, y, t) == f(x, y, t - y_j),

so that crossing the ``x_j = 1`` face shifts the ``t`` index by the ``y_j``
index.  With the metric ``g_s`` the coframe ``dx_j, s^-1 dy_j, s^d theta``
is orthonormal and its wedge product is ``dx dy dt`` (the ``x_j dy_j`` part
of ``theta`` drops out), so the Riemannian volume density is exactly 1 in
these coordinates for every ``s``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "ModelKind",
    "Identification",
    "TrigPoly",
    "ManifoldModel",
    "FlatTorus",
    "Heisenberg",
    "Lattice",
    "GridFunction",
    "ConformalDensity",
    "build_lattice",
    "sample",
    "quadrature_weights",
    "transform_density",
    "integrate",
    "quotient_residual",
    "is_quotient_consistent",
    "QUOTIENT_TOL",
]

QUOTIENT_TOL = 1e-12


class ModelKind(enum.Enum):
    TORUS = "torus"
    HEISENBERG = "heisenberg"


class Identification(enum.Enum):
    PERIODIC = "periodic"
    HEISENBERG_TWISTED = "heisenberg_twisted"


@dataclass(frozen=True)
class TrigPoly:
    """Real trigonometric polynomial ``sum_k a_k cos(2 pi k.u + phi_k)``.

    ``u`` are the coordinates divided by the model periods, so every term is
    periodic on the fundamental domain.

    Parameters
    ----------
    terms : sequence of (multi_index, amplitude, phase)
        ``multi_index`` has one integer per coordinate axis.
    """

    terms: tuple = ()

    def __post_init__(self):
        clean = []
        for term in self.terms:
            if len(term) == 2:
                index, amp = term
                phase = 0.0
            else:
                index, amp, phase = term
            clean.append((tuple(int(k) for k in index), float(amp), float(phase)))
        dims = {len(t[0]) for t in clean}
        if len(dims) > 1:
            raise ValueError("all multi-indices must have the same length")
        object.__setattr__(self, "terms", tuple(clean))

    @classmethod
    def zero(cls) -> "TrigPoly":
        return cls(())

    @classmethod
    def cosine(cls, amplitude: float, index: Sequence[int], phase: float = 0.0) -> "TrigPoly":
        return cls(((tuple(index), amplitude, phase),))

    @property
    def ndim(self) -> Optional[int]:
        return len(self.terms[0][0]) if self.terms else None

    def is_zero(self) -> bool:
        return all(a == 0.0 for _, a, _ in self.terms)

    def __neg__(self) -> "TrigPoly":
        return TrigPoly(tuple((k, -a, p) for k, a, p in self.terms))

    def __add__(self, other: "TrigPoly") -> "TrigPoly":
        return TrigPoly(self.terms + other.terms)

    def constant_part(self) -> float:
        return sum(a * np.cos(p) for k, a, p in self.terms if not any(k))

    def derivative(self, coords: np.ndarray, order: Sequence[int], periods=None) -> np.ndarray:
        """Evaluate a mixed partial derivative at ``coords`` (shape ``(n, ...)``).

        ``order`` gives the derivative order per axis; the all-zero order
        evaluates the polynomial itself.
        """
        coords = np.asarray(coords, dtype=float)
        n = coords.shape[0]
        periods = np.ones(n) if periods is None else np.asarray(periods, dtype=float)
        order = tuple(order)
        out = np.zeros(coords.shape[1:])
        total = sum(order)
        for index, amp, phase in self.terms:
            if len(index) != n:
                raise ValueError(f"frequency {index} does not match dimension {n}")
            freq = 2 * np.pi * np.asarray(index, dtype=float) / periods
            factor = amp * np.prod([freq[i] ** order[i] for i in range(n)])
            if factor == 0.0:
                continue
            arg = np.tensordot(freq, coords, axes=1) + phase + total * np.pi / 2
            out = out + factor * np.cos(arg)
        return out

    def __call__(self, coords, periods=None):
        n = np.asarray(coords).shape[0]
        return self.derivative(coords, (0,) * n, periods)


@dataclass(frozen=True)
class ManifoldModel:
    """A flat torus ``T^n`` or a Heisenberg quotient with parameter ``s``.

    ``conformal_factor`` is the log-scale ``Upsilon`` of the metric
    ``e^{2 Upsilon} g`` (``None`` or a zero polynomial means the bare metric).
    """

    kind: ModelKind
    dim: int
    d: Optional[int] = None
    s: float = 1.0
    periods: tuple = ()
    conformal_factor: Optional[TrigPoly] = None

    def __post_init__(self):
        if self.kind is ModelKind.HEISENBERG:
            if self.d is None or self.d < 1:
                raise ValueError("Heisenberg index d must be >= 1")
            if self.dim != 2 * self.d + 1:
                raise ValueError("Heisenberg dimension must be 2d+1")
            if self.periods and any(p != 1 for p in self.periods):
                raise ValueError("Heisenberg quotient uses unit periods")
        elif self.dim < 3:
            raise ValueError("torus dimension must be >= 3")
        if not self.s > 0:
            raise ValueError("s must be positive")
        if not self.periods:
            object.__setattr__(self, "periods", (1.0,) * self.dim)
        if len(self.periods) != self.dim or any(p <= 0 for p in self.periods):
            raise ValueError("periods must be positive, one per axis")
        object.__setattr__(self, "periods", tuple(float(p) for p in self.periods))
        ups = self.conformal_factor
        if ups is not None and ups.terms:
            if ups.ndim != self.dim:
                raise ValueError("conformal factor frequencies must have one entry per axis")
            if self.kind is ModelKind.HEISENBERG and any(k[-1] != 0 for k, a, _ in ups.terms if a):
                # e^{2 pi i r t} with r != 0 is not invariant under the twisted identification
                raise ValueError("conformal factor on a Heisenberg quotient cannot depend on t")

    @property
    def is_rescaled(self) -> bool:
        return self.conformal_factor is not None and not self.conformal_factor.is_zero()

    @property
    def volume_density(self) -> float:
        """Riemannian density of the bare metric in model coordinates."""
        return 1.0

    def bare(self) -> "ManifoldModel":
        return ManifoldModel(self.kind, self.dim, self.d, self.s, self.periods, None)

    def with_conformal_factor(self, upsilon: Optional[TrigPoly]) -> "ManifoldModel":
        return ManifoldModel(self.kind, self.dim, self.d, self.s, self.periods, upsilon)

    @property
    def axis_labels(self) -> tuple:
        if self.kind is ModelKind.HEISENBERG:
            d = self.d
            return tuple(f"x{j + 1}" for j in range(d)) + tuple(f"y{j + 1}" for j in range(d)) + ("t",)
        return tuple(f"x{j + 1}" for j in range(self.dim))

    def scalar_curvature(self) -> float:
        """Constant scalar curvature of the bare metric."""
        if self.kind is ModelKind.HEISENBERG:
            return -0.5 * self.d * self.s ** (2 * self.d + 2)
        return 0.0


def FlatTorus(n: int = 3, periods: Optional[Sequence[float]] = None,
              conformal_factor: Optional[TrigPoly] = None) -> ManifoldModel:
    return ManifoldModel(ModelKind.TORUS, n, None, 1.0, tuple(periods or ()), conformal_factor)


def Heisenberg(d: int = 1, s: float = 1.0,
               conformal_factor: Optional[TrigPoly] = None) -> ManifoldModel:
    return ManifoldModel(ModelKind.HEISENBERG, 2 * d + 1, d, float(s), (), conformal_factor)


class Lattice:
    """Uniform grid over the fundamental domain with identification-aware neighbors.

    Points are stored in C order over the axes; ``neighbor(axis, +1)`` gives,
    for every flat index, the flat index of the next point along ``axis``
    after applying the identification rule.
    """

    def __init__(self, model: ManifoldModel, N: int):
        self.model = model
        self.N = int(N)
        self.ndim = model.dim
        self.shape = (self.N,) * self.ndim
        self.size = self.N ** self.ndim
        self.h = tuple(p / self.N for p in model.periods)
        self.axis_labels = model.axis_labels
        if model.kind is ModelKind.HEISENBERG:
            self.identification = Identification.HEISENBERG_TWISTED
        else:
            self.identification = Identification.PERIODIC
        self._neighbors = {}

    def __repr__(self):
        return f"Lattice({self.model.kind.value}, n={self.ndim}, N={self.N}, {self.identification.value})"

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.h))

    @cached_property
    def indices(self) -> np.ndarray:
        """Integer grid indices, shape ``(n, size)``."""
        grids = np.indices(self.shape).reshape(self.ndim, -1)
        grids.flags.writeable = False
        return grids

    @cached_property
    def coords(self) -> np.ndarray:
        """Coordinates ``i * h`` per axis, shape ``(n, size)``."""
        c = self.indices * np.asarray(self.h)[:, None]
        c.flags.writeable = False
        return c

    @property
    def d(self) -> Optional[int]:
        return self.model.d

    def x_axis(self, j: int) -> int:
        return j

    def y_axis(self, j: int) -> int:
        return self.model.d + j

    @property
    def t_axis(self) -> int:
        return self.ndim - 1

    def neighbor(self, axis: int, step: int = 1) -> np.ndarray:
        """Flat index of the neighbor one step along ``axis``."""
        if step not in (1, -1):
            raise ValueError("step must be +1 or -1")
        key = (axis, step)
        if key not in self._neighbors:
            idx = np.array(self.indices)
            idx[axis] += step
            wrapped = (idx[axis] < 0) | (idx[axis] >= self.N)
            idx[axis] %= self.N
            if self.identification is Identification.HEISENBERG_TWISTED and axis < self.model.d:
                j = axis
                yi = idx[self.y_axis(j)]
                t = self.t_axis
                # (1, y, t) ~ (0, y, t - y_j) and (-h, y, t) ~ (1 - h, y, t + y_j)
                idx[t] = np.where(wrapped, idx[t] - step * yi, idx[t]) % self.N
            out = np.ravel_multi_index(tuple(idx), self.shape)
            out.flags.writeable = False
            self._neighbors[key] = out
        return self._neighbors[key]

    def periodic_distance(self, axis: int, value: float, target: float) -> np.ndarray:
        p = self.model.periods[axis]
        delta = np.abs(np.asarray(value) - target) % p
        return np.minimum(delta, p - delta)


def build_lattice(model: ManifoldModel, N: int) -> Lattice:
    """Build the lattice for ``model`` with ``N`` points per axis.

    ``N`` must be even (so that 1/2 is a grid coordinate) and at least 4.
    """
    if int(N) != N or N < 4:
        raise ValueError(f"N must be an integer >= 4, got {N}")
    if N % 2:
        raise ValueError(f"N must be even, got {N}")
    return Lattice(model, int(N))


@dataclass(frozen=True, eq=False)
class GridFunction:
    lattice: Lattice
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.shape != (self.lattice.size,):
            v = v.reshape(-1)
        if v.size != self.lattice.size:
            raise ValueError(f"expected {self.lattice.size} values, got {v.size}")
        v = v.copy()
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def is_complex(self) -> bool:
        return np.iscomplexobj(self.values)

    @property
    def real(self) -> "GridFunction":
        return GridFunction(self.lattice, self.values.real)

    @property
    def imag(self) -> "GridFunction":
        return GridFunction(self.lattice, self.values.imag)

    def abs(self) -> "GridFunction":
        return GridFunction(self.lattice, np.abs(self.values))

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values)))

    def as_array(self) -> np.ndarray:
        return self.values.reshape(self.lattice.shape)

    def _check(self, other):
        if isinstance(other, GridFunction):
            if other.lattice is not self.lattice:
                raise ValueError("grid functions live on different lattices")
            return other.values
        return other

    def __mul__(self, other):
        return GridFunction(self.lattice, self.values * self._check(other))

    __rmul__ = __mul__

    def __add__(self, other):
        return GridFunction(self.lattice, self.values + self._check(other))

    __radd__ = __add__

    def __sub__(self, other):
        return GridFunction(self.lattice, self.values - self._check(other))

    def __neg__(self):
        return GridFunction(self.lattice, -self.values)


def sample(lattice: Lattice, func: Callable[..., np.ndarray]) -> GridFunction:
    """Sample ``func(*coords)`` on the lattice points."""
    return GridFunction(lattice, np.broadcast_to(func(*lattice.coords), (lattice.size,)))


def sample_trig(lattice: Lattice, poly: Optional[TrigPoly], order=None) -> GridFunction:
    if poly is None or not poly.terms:
        return GridFunction(lattice, np.zeros(lattice.size))
    order = (0,) * lattice.ndim if order is None else order
    return GridFunction(lattice, poly.derivative(lattice.coords, order, lattice.model.periods))


def upsilon_values(lattice: Lattice) -> GridFunction:
    """Samples of the model's conformal factor (zero for the bare metric)."""
    return sample_trig(lattice, lattice.model.conformal_factor)


def quadrature_weights(lattice: Lattice, upsilon=None) -> GridFunction:
    """Per-point weights ``h^n * density``; ``upsilon`` multiplies them by ``e^{n Upsilon}``.

    When ``upsilon`` is omitted the model's own conformal factor is used.
    """
    if upsilon is None:
        upsilon = upsilon_values(lattice)
    ups = upsilon.values if isinstance(upsilon, GridFunction) else np.asarray(upsilon)
    base = lattice.cell_volume * lattice.model.volume_density
    return GridFunction(lattice, base * np.exp(lattice.ndim * np.broadcast_to(ups, (lattice.size,))))


def integrate(f: GridFunction, weights: GridFunction) -> complex:
    """Weighted sum of ``f`` over the lattice (trapezoid rule on the periodic cell)."""
    if f.lattice is not weights.lattice:
        raise ValueError("function and weights live on different lattices")
    val = np.dot(f.values, weights.values)
    return float(val) if not np.iscomplexobj(val) else complex(val)


@dataclass(frozen=True, eq=False)
class ConformalDensity:
    """A density of weight ``w`` represented against ``e^{2 log_factor} g``.

    ``log_factor`` is the accumulated ``Upsilon`` relative to the bare model
    metric; transforming by ``Upsilon`` multiplies values by ``e^{w Upsilon}``.
    """

    weight: float
    values: GridFunction
    log_factor: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        lf = self.log_factor
        if lf is None:
            lf = np.zeros(self.values.lattice.size)
        lf = np.array(lf, dtype=float)
        lf.flags.writeable = False
        object.__setattr__(self, "log_factor", lf)

    @property
    def lattice(self) -> Lattice:
        return self.values.lattice

    def metric_weights(self) -> GridFunction:
        return quadrature_weights(self.lattice, self.log_factor)


def transform_density(u: ConformalDensity, upsilon: GridFunction) -> ConformalDensity:
    """Re-express ``u`` against ``e^{2 Upsilon}`` times its current metric."""
    if upsilon.lattice is not u.lattice:
        raise ValueError("density and conformal factor live on different lattices")
    ups = upsilon.values
    if np.iscomplexobj(ups):
        raise ValueError("conformal factor must be real")
    scaled = GridFunction(u.lattice, np.exp(u.weight * ups) * u.values.values)
    return ConformalDensity(u.weight, scaled, u.log_factor + ups)


def quotient_residual(lattice: Lattice, func: Callable[..., np.ndarray]) -> float:
    """Relative mismatch of ``func`` under the lattice identifications.

    ``func`` is a function on the covering space.  For each axis it is
    evaluated at the shifted points ``p + e_axis`` and compared with its value
    at the identified point inside the fundamental domain.
    """
    c = np.array(lattice.coords, dtype=float)
    base = np.asarray(func(*c))
    scale = max(np.max(np.abs(base)), np.finfo(float).tiny)
    worst = 0.0
    model = lattice.model
    for axis in range(lattice.ndim):
        shifted = c.copy()
        shifted[axis] += model.periods[axis]
        image = c.copy()
        if lattice.identification is Identification.HEISENBERG_TWISTED and axis < model.d:
            image[lattice.t_axis] -= c[lattice.y_axis(axis)]
        diff = np.asarray(func(*shifted)) - np.asarray(func(*image))
        worst = max(worst, float(np.max(np.abs(diff))) / scale)
    return worst


def is_quotient_consistent(lattice: Lattice, func, tol: float = QUOTIENT_TOL) -> bool:
    return quotient_residual(lattice, func) <= tol
