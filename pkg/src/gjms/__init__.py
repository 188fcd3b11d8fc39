"""Conformally covariant operators on flat tori and Heisenberg nilmanifolds.

Submodules
----------
geometry
    Models, lattices with periodic or twisted identifications, grid
    functions, quadrature and conformal densities.
operators
    Sparse symmetric discretizations of the frame fields, Laplacian,
    Yamabe and Paneitz operators, and the conformal conjugation.
heisenberg
    Closed-form spectra, theta functions and the critical null vectors.
spectral
    Eigensolvers, inertia counts, numerical kernels and growth fits.
nodal
    Nodal partitions, nodal-set distances and domain integrals.
conformal
    Invariance reports and Q-curvature experiments.
"""
from .geometry import (
    ConformalDensity,
    FlatTorus,
    GridFunction,
    Heisenberg,
    Lattice,
    ManifoldModel,
    TrigPoly,
    build_lattice,
    integrate,
    quadrature_weights,
    transform_density,
)
from .heisenberg import critical_s, enumerate_spectrum, null_eigenvector
from .operators import (
    assemble_laplacian,
    assemble_paneitz_heisenberg,
    assemble_yamabe,
    conjugated_operator,
)
from .spectral import eigen_low, inertia, numerical_kernel

__version__ = "0.1.0"
