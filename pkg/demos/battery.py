"""Conformal-invariance battery on the flat 3-torus.

Run: python3 demos/battery.py
"""
from gjms.conformal import battery_json, run_battery
from gjms.geometry import FlatTorus, TrigPoly

ups = TrigPoly.cosine(0.1, (1, 0, 0))
reports = run_battery(FlatTorus(3), 16, [None, ups], dense_limit=0)
for r in reports:
    print(f"{r.quantity:40s} {r.verdict:14s} {r.discrepancy:.3e}")
print(battery_json(reports, {"N": 16})[:200], "...")
