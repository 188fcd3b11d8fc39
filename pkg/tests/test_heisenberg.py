import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import gamma

from gjms.geometry import Heisenberg, build_lattice, quotient_residual
from gjms.heisenberg import (
    critical_s,
    enumerate_spectrum,
    negative_count,
    null_eigenvector,
    oscillator_eigenvalue,
    oscillator_multiplicity,
    theta,
    theta_truncation,
    u_minus,
    u_plus,
    yamabe_shift,
)

# theta(0, i) = pi^{1/4} / Gamma(3/4)
THETA_0_I = math.pi ** 0.25 / gamma(0.75)


class TestTheta:
    def test_value_at_i(self):
        assert THETA_0_I == pytest.approx(1.086434811213308, rel=1e-15)
        assert theta(0.0, 1j) == pytest.approx(THETA_0_I, rel=1e-14)

    def test_truncation(self):
        assert theta_truncation(1.0) == math.ceil(math.sqrt(14 * math.log(10) / math.pi)) + 2

    def test_classical_zero(self):
        for s in (0.5, 1.0, critical_s(1)):
            assert abs(theta(0.5 + 0.5j * s, 1j * s)) < 1e-12

    @settings(max_examples=40, deadline=None)
    @given(st.floats(-2, 2), st.floats(-1, 1), st.floats(-0.3, 0.3), st.floats(0.3, 3))
    def test_periodicity(self, zr, zi, tr, ti):
        z, tau = complex(zr, zi), complex(tr, ti)
        a = theta(z, tau)
        assert theta(z + 1, tau) == pytest.approx(a, rel=1e-11, abs=1e-12)
        b = theta(z + tau, tau)
        assert b == pytest.approx(np.exp(-1j * np.pi * tau - 2j * np.pi * z) * a, rel=1e-11, abs=1e-12)

    def test_rejects_lower_half_plane(self):
        with pytest.raises(ValueError):
            theta(0.0, -1j)


class TestCriticalS:
    def test_d1_closed_form(self):
        assert critical_s(1) == pytest.approx((8 * math.pi * (2 + math.sqrt(5))) ** (1 / 3), rel=1e-15)
        assert critical_s(1) == pytest.approx(4.7395189074, rel=1e-10)

    @pytest.mark.parametrize("d", [1, 2, 3, 4])
    def test_zero_residual(self, d):
        s = critical_s(d)
        val = oscillator_eigenvalue(1, 0, d, s) + yamabe_shift(d, s)
        assert abs(val) < 1e-10 * s ** (2 * d + 2)

    def test_bad_d(self):
        with pytest.raises(ValueError):
            critical_s(0)


class TestEnumeration:
    def test_delta_d1_s1(self):
        res = enumerate_spectrum("delta", 1, 1.0, 50.0)
        cls = [(c["operator_eigenvalue"], c["multiplicity"]) for c in res.classes()]
        want = [(0.0, 1), (4 * math.pi ** 2, 4), (2 * math.pi + 4 * math.pi ** 2, 2)]
        assert len(cls) == 3
        for (v, m), (wv, wm) in zip(cls, want):
            assert v == pytest.approx(wv, abs=1e-12) and m == wm

    def test_yamabe_s2_negative(self):
        res = enumerate_spectrum("yamabe", 1, 2.0, 0.0)
        assert res.count_below(0.0) == negative_count("yamabe", 1, 2.0) == 1
        assert res.families[0].operator_eigenvalue == pytest.approx(-1.0)

    def test_critical_zero_multiplicity(self):
        res = enumerate_spectrum("yamabe", 1, critical_s(1), 1e-6)
        zero = [f for f in res.families if abs(f.operator_eigenvalue) < 1e-9]
        assert sum(f.multiplicity for f in zero) == 2
        assert {f.indices for f in zero} == {(1, 0), (-1, 0)}

    def test_multiplicity_formula(self):
        assert oscillator_multiplicity(2, 0, 1) == 2
        assert oscillator_multiplicity(3, 2, 2) == 9 * 3
        assert oscillator_multiplicity(-2, 1, 3) == 8 * 3

    def test_negative_count_matches_enumeration(self):
        for d, s in ((1, 7.0), (2, 3.0)):
            assert negative_count("yamabe", d, s) == enumerate_spectrum("yamabe", d, s, 0.0).count_below(0.0)
            assert negative_count("paneitz", d, s) == enumerate_spectrum("paneitz", d, s, 0.0).count_below(0.0)

    def test_paneitz_d1_has_no_negatives(self):
        # every d = 1 Paneitz family value is positive for s up to 40
        assert all(negative_count("paneitz", 1, s) == 0 for s in (1.0, 4.0, 10.0, 40.0))

    def test_cutoff_guard(self):
        with pytest.raises(OverflowError):
            enumerate_spectrum("delta", 1, 1.0, float("inf"))
        with pytest.raises(ValueError):
            enumerate_spectrum("bogus", 1, 1.0, 1.0)

    def test_csv(self, tmp_path):
        path = tmp_path / "spectrum.csv"
        enumerate_spectrum("delta", 1, 1.0, 50.0).write_csv(path)
        rows = list(csv.reader(open(path)))
        assert rows[0] == ["sector", "indices", "delta_eig", "operator_eig", "multiplicity"]
        assert [r[4] for r in rows[1:]] == ["1", "4", "2"]


class TestNullEigenvector:
    def test_quotient_consistent(self):
        s = critical_s(1)
        lat = build_lattice(Heisenberg(1, s), 8)
        assert quotient_residual(lat, u_plus(s)) < 1e-10
        assert quotient_residual(lat, u_minus(s)) < 1e-10

    def test_conjugate_partner(self):
        s = critical_s(1)
        lat = build_lattice(Heisenberg(1, s), 8)
        up, um = null_eigenvector(1, lat)
        assert np.allclose(um.values, np.conj(up.values), atol=1e-14)

    def test_zero_on_predicted_line(self):
        s = critical_s(1)
        t = np.linspace(0, 1, 17)
        vals = u_plus(s)(np.full_like(t, 0.5), np.full_like(t, 0.5), t)
        assert np.max(np.abs(vals)) < 1e-10
        assert abs(u_plus(s)(0.25, 0.25, 0.0)) > 0.01

    def test_requires_critical_s(self):
        lat = build_lattice(Heisenberg(1, 4.0), 4)
        with pytest.raises(ValueError):
            null_eigenvector(1, lat)
