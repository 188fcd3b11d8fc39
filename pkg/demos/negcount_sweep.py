"""Closed-form negative-eigenvalue counts and their log-log growth.

Run: python3 demos/negcount_sweep.py
"""
from gjms.heisenberg import critical_s, negative_count
from gjms.spectral import growth_fit

for op, d, sweep in [("yamabe", 1, (5, 10, 20, 40)),
                     ("paneitz", 2, [critical_s(2) * 1.25 ** k for k in range(5)])]:
    counts = [(s, negative_count(op, d, s)) for s in sweep]
    for s, c in counts:
        print(f"{op:8s} d={d} s={s:8.4f}  negatives={c}")
    slope, _, _ = growth_fit(counts, min_samples=4)
    print(f"  log-log slope {slope:.3f}")
