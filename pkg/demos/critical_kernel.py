"""Near-zero Yamabe eigenvalues at the critical dilation, refined in N.

Run: python3 demos/critical_kernel.py
"""
import numpy as np

from gjms.geometry import Heisenberg, build_lattice
from gjms.heisenberg import critical_s, null_eigenvector
from gjms.operators import assemble_yamabe
from gjms.spectral import eigen_nearest_zero

s = critical_s(1)
print(f"critical s (d=1): {s:.10f}")
prev = None
for N in (8, 16, 32):
    lat = build_lattice(Heisenberg(1, s), N)
    op = assemble_yamabe(lat.model, lat)
    pair = eigen_nearest_zero(op, 2, dense_limit=0).eigenvalues
    up, _ = null_eigenvector(1, lat)
    res = np.linalg.norm(op.apply(up.real.values)) / np.linalg.norm(up.real.values)
    ratio = "" if prev is None else f"  ratio {prev / abs(pair).max():.2f}"
    print(f"N={N:3d}  pair {pair[0]: .5f} {pair[1]: .5f}  |P Re u+|/|u+| {res:.3e}{ratio}")
    prev = abs(pair).max()
