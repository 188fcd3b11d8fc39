"""Nodal sets and nodal domains on periodic and twisted lattices.

Points are labeled by sign, with a near-zero band ``|u| < eps * max|u|``
labeled 0 and left out of every domain.  Domains are connected components
of same-sign points under face adjacency (``2n`` neighbors, twisted seams
included), found with :func:`scipy.sparse.csgraph.connected_components`.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable, List, Optional, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .geometry import GridFunction, Lattice

__all__ = [
    "NodalPartition",
    "partition",
    "default_epsilon",
    "nodal_set_distance",
    "domain_integral",
    "courant_audit",
    "same_structure",
    "write_partition_csv",
]

#: tolerance for "exactly on the predicted set" when the predicate is sampled
ON_SET_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class NodalPartition:
    lattice: Lattice
    signs: np.ndarray        # +1, -1, or 0 for the near-zero band
    labels: np.ndarray       # domain id per point, -1 in the band
    epsilon: float

    @property
    def domain_count(self) -> int:
        return int(self.labels.max()) + 1 if self.labels.size and self.labels.max() >= 0 else 0

    @property
    def near_zero(self) -> np.ndarray:
        return np.flatnonzero(self.signs == 0)

    def domains(self) -> List[np.ndarray]:
        order = np.argsort(self.labels, kind="stable")
        counts = np.bincount(self.labels[self.labels >= 0], minlength=self.domain_count)
        start = int(np.sum(self.labels < 0))
        return np.split(order[start:], np.cumsum(counts)[:-1])

    def domain_signs(self) -> np.ndarray:
        out = np.zeros(self.domain_count, dtype=int)
        keep = self.labels >= 0
        out[self.labels[keep]] = self.signs[keep]
        return out


def default_epsilon(kernel_eigenvalue: float, gap: float) -> float:
    """Band width ``10 |lambda| / gap`` relative to ``max|u|``, tied to the kernel residual."""
    if gap <= 0:
        raise ValueError("spectral gap must be positive")
    return 10.0 * abs(kernel_eigenvalue) / gap


def _adjacency(lattice: Lattice) -> Tuple[np.ndarray, np.ndarray]:
    i = np.arange(lattice.size)
    rows, cols = [], []
    for axis in range(lattice.ndim):
        rows.append(i)
        cols.append(lattice.neighbor(axis, +1))
    return np.concatenate(rows), np.concatenate(cols)


def partition(u: GridFunction, eps: float = 0.0) -> NodalPartition:
    """Sign labels and nodal domains of a real grid function."""
    vals = np.asarray(u.values)
    if np.iscomplexobj(vals):
        raise ValueError("nodal partition needs a real function")
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    lattice = u.lattice
    scale = float(np.max(np.abs(vals)))
    band = np.abs(vals) < eps * scale if eps > 0 else vals == 0
    if band.all():
        raise ValueError("function vanishes at tolerance")
    signs = np.where(band, 0, np.sign(vals)).astype(int)
    r, c = _adjacency(lattice)
    keep = (signs[r] == signs[c]) & (signs[r] != 0)
    graph = sp.coo_matrix((np.ones(int(keep.sum())), (r[keep], c[keep])), shape=(lattice.size,) * 2)
    _, comp = connected_components(graph, directed=False)
    # relabel so that band points get -1 and domains are numbered by first point
    labels = np.full(lattice.size, -1, dtype=int)
    inside = signs != 0
    _, first = np.unique(comp[inside], return_index=True)
    roots = comp[inside][np.sort(first)]
    remap = np.full(comp.max() + 1, -1, dtype=int)
    remap[roots] = np.arange(roots.size)
    labels[inside] = remap[comp[inside]]
    return NodalPartition(lattice, signs, labels, float(eps))


def _tree_points(lattice: Lattice, idx: np.ndarray) -> np.ndarray:
    # coordinates in [0, 1) per axis, wrapped by the periods
    c = np.asarray(lattice.coords, dtype=float)[:, idx].T
    periods = np.asarray(lattice.model.periods, dtype=float)
    return np.mod(c / periods, 1.0)


def nodal_set_distance(part: NodalPartition, predicted: Callable[..., np.ndarray]) -> float:
    """Two-sided (Hausdorff) distance between the near-zero band and a predicted set.

    ``predicted`` maps coordinate arrays to a nonnegative value vanishing on
    the predicted set; lattice points where it vanishes stand for the set.
    Distances are max-norm distances in the unit cell with plain periodic
    wraparound.
    """
    lattice = part.lattice
    band = part.near_zero
    if band.size == 0:
        raise ValueError("empty near-zero band")
    on_set = np.flatnonzero(np.abs(predicted(*lattice.coords)) <= ON_SET_TOL)
    if on_set.size == 0:
        raise ValueError("predicted set contains no lattice points")
    a = _tree_points(lattice, band)
    b = _tree_points(lattice, on_set)
    ta = cKDTree(a, boxsize=1.0)
    tb = cKDTree(b, boxsize=1.0)
    d_ab, _ = tb.query(a, p=np.inf)
    d_ba, _ = ta.query(b, p=np.inf)
    return float(max(d_ab.max(), d_ba.max()))


def domain_integral(part: NodalPartition, index: int, f: GridFunction,
                    weights: GridFunction) -> Tuple[float, float]:
    """``(sum over the domain of f * weight, min of f over the domain)``."""
    if not 0 <= index < part.domain_count:
        raise IndexError(f"domain {index} out of range (have {part.domain_count})")
    mask = part.labels == index
    vals = np.asarray(f.values)[mask]
    return float(np.dot(vals, np.asarray(weights.values)[mask])), float(vals.min())


def courant_audit(u: GridFunction, negative_count: int, eps: float = 0.0) -> Tuple[int, int, bool]:
    """Domain count of a null vector against the bound ``m + 1``."""
    count = partition(u, eps).domain_count
    bound = negative_count + 1
    return count, bound, count <= bound


def same_structure(a: NodalPartition, b: NodalPartition) -> bool:
    """Identical sign labels and identical domain decompositions."""
    return (a.lattice is b.lattice and np.array_equal(a.signs, b.signs)
            and np.array_equal(a.labels, b.labels))


def write_partition_csv(part: NodalPartition, path) -> None:
    """CSV of ``index, coordinates..., sign, domain`` (domain -1 in the band)."""
    lattice = part.lattice
    names = list(lattice.model.axis_labels)
    coords = np.asarray(lattice.coords, dtype=float)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", *names, "sign", "domain"])
        for p in range(lattice.size):
            w.writerow([p, *(f"{v:.17g}" for v in coords[:, p]), int(part.signs[p]), int(part.labels[p])])
