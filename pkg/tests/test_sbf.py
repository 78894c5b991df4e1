import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from datamdp.blackbox import jet_engine_system
from datamdp.errors import InvalidParameter, InvalidState
from datamdp.grid import build_grid
from datamdp.sbf import (Basis, SbfTemplate, check_conditions_on_points, compose_guarantee, evaluate,
                         sample_condition_slacks, closeness_bound)

CASE_STUDY_Q = (0.01, 0.01, 16.0)
unit = st.floats(0, 1, allow_nan=False)
pos = st.floats(1e-3, 10, allow_nan=False)


def quad_oracle(t, x, xh):
    """Evaluate ``d^T P d + const`` directly from the symmetric matrix."""
    d = np.asarray(x) - np.asarray(xh)
    c = t.q[-1] if t.basis.constant else 0.0
    return d @ t.basis.quadratic_matrix(t.q) @ d + c


class TestEvaluate:
    def test_case_study_certificate(self):
        t = SbfTemplate(Basis(2), CASE_STUDY_Q, alpha=8.0, psi=0.047)
        assert evaluate(t, [0.3, 0.3], [0.3, 0.3]) == 16.0

    def test_zero_coefficients(self, rng):
        t = SbfTemplate(Basis(3, "full"), (0.0,) * 7, alpha=1.0)
        assert evaluate(t, rng.normal(size=3), rng.normal(size=3)) == 0.0

    def test_hand_value(self):
        t = SbfTemplate(Basis(2), (1.0, 1.0, 0.0), alpha=1.0)
        assert evaluate(t, [1.0, 2.0], [0.0, 0.0]) == 5.0

    def test_dimension_mismatch(self):
        t = SbfTemplate(Basis(2), (1.0, 1.0, 0.0), alpha=1.0)
        with pytest.raises(InvalidState):
            evaluate(t, [1.0, 2.0], [0.0, 0.0, 0.0])

    def test_alpha_must_be_positive(self):
        with pytest.raises(InvalidParameter):
            SbfTemplate(Basis(2), CASE_STUDY_Q, alpha=0.0)

    def test_full_family_matches_quadratic_form(self, rng):
        b = Basis(3, "full")
        for _ in range(50):
            t = SbfTemplate(b, tuple(rng.normal(size=b.r)), alpha=1.0)
            x, xh = rng.normal(size=3), rng.normal(size=3)
            assert evaluate(t, x, xh) == pytest.approx(quad_oracle(t, x, xh), rel=1e-12, abs=1e-12)

    def test_linear_in_q(self, rng):
        b = Basis(2, "full")
        for _ in range(100):
            q = rng.normal(size=b.r)
            c = rng.normal()
            x, xh = rng.normal(size=2), rng.normal(size=2)
            s1 = evaluate(SbfTemplate(b, tuple(c * q), 1.0), x, xh)
            s0 = evaluate(SbfTemplate(b, tuple(q), 1.0), x, xh)
            assert s1 == pytest.approx(c * s0, rel=1e-12, abs=1e-12)

    def test_round_trip(self):
        t = SbfTemplate(Basis(2, "full", False), (0.1, 0.2, 0.3), alpha=2.5, psi=0.1)
        assert SbfTemplate.from_dict(t.to_dict()) == t


class TestClosenessBound:
    def test_identical_start_no_drift(self):
        for T in (0, 5, 1000):
            b = closeness_bound(0.0, 1.0, 0.0, T, 0.1)
            assert b.raw == 0.0 and b.horizon_independent

    def test_hand_value(self):
        assert closeness_bound(0.5, 1.0, 0.1, 5, 1.0).raw == pytest.approx(1.0)

    def test_case_study_certificate_is_vacuous(self):
        b = closeness_bound(16.0, 8.005, 0.047, 5, 0.7)
        assert b.raw == pytest.approx(16.235 / (8.005 * 0.49))
        assert round(b.raw, 3) == 4.139
        assert b.clamped == 1.0 and b.vacuous

    @pytest.mark.parametrize("alpha,eps", [(0.0, 1.0), (-1.0, 1.0), (1.0, 0.0)])
    def test_invalid(self, alpha, eps):
        with pytest.raises(InvalidParameter):
            closeness_bound(0.1, alpha, 0.0, 1, eps)

    @given(pos, pos, pos, st.integers(0, 50), pos, st.floats(1.0, 3.0))
    def test_monotone(self, S, alpha, psi, T, eps, k):
        base = closeness_bound(S, alpha, psi, T, eps).raw
        assert closeness_bound(S * k, alpha, psi, T, eps).raw >= base
        assert closeness_bound(S, alpha, psi * k, T, eps).raw >= base
        assert closeness_bound(S, alpha, psi, T + 1, eps).raw >= base
        assert closeness_bound(S, alpha * k, psi, T, eps).raw <= base
        assert closeness_bound(S, alpha, psi, T, eps * k).raw <= base


class TestCompose:
    def test_arithmetic(self):
        r = compose_guarantee(0.95, 0.03, 0.02, 0.01, 0.01, 0.0)
        assert r.lower_bound == pytest.approx(0.90)
        assert r.confidence == pytest.approx(0.98)
        assert r.flags == []

    def test_vacuous(self):
        r = compose_guarantee(0.5, 4.139, 0.2, 0.01, 0.01, 0.0)
        assert r.lower_bound == 0.0
        assert "VACUOUS_BOUND" in r.flags and "VACUOUS_DELTA" in r.flags
        assert r.delta == 1.0 and r.delta_raw == 4.139

    def test_vacuous_confidence(self):
        r = compose_guarantee(0.9, 0.0, 0.0, 0.01, 0.01, 5.0)
        assert r.confidence == 0.0 and "VACUOUS_CONFIDENCE" in r.flags

    @given(unit, st.floats(-1, 5), st.floats(0, 5), unit, unit, unit)
    def test_bound_never_exceeds_p_hat(self, p, delta, rho, b1, b2, b3):
        r = compose_guarantee(p, delta, rho, b1, b2, b3)
        assert 0.0 <= r.lower_bound <= p
        assert 0.0 <= r.confidence <= 1.0


class TestConditions:
    def test_g1_at_identical_points(self, rng):
        t = SbfTemplate(Basis(2), (1.0, 1.0, 0.0), alpha=1.0)
        x = rng.uniform(-1, 1, size=(20, 2))
        s = check_conditions_on_points(t, x, x, x[:, None, :], x[:, None, :])
        assert np.all(s.g1 <= 0)

    def test_g2_hand_value(self):
        t = SbfTemplate(Basis(1, constant=False), (1.0,), alpha=1.0, psi=0.1)
        x, xh = np.array([[0.5]]), np.array([[0.0]])
        nx = np.array([[[0.2], [0.4]]])
        nxh = np.zeros((1, 2, 1))
        s = check_conditions_on_points(t, x, xh, nx, nxh, mu=0.01)
        # mean(0.04, 0.16) - 0.25 - 0.1 + 0.01
        assert s.g2[0] == pytest.approx(0.10 - 0.25 - 0.1 + 0.01)
        assert s.g1[0] == pytest.approx(0.25 - 0.25)

    def test_case_study_certificate_on_fresh_points(self):
        # q = (0.01, 0.01, 16), psi = 0.047: g2 is dominated by -psi + mu, and
        # g1 holds for any alpha <= (16 - |Y|) / max |x - xbar|^2.
        sys = jet_engine_system(seed=5)
        grid = build_grid(sys.state_box, (21, 21))
        t = SbfTemplate(Basis(2), CASE_STUDY_Q, alpha=8.0, psi=0.047)
        s = sample_condition_slacks(t, sys, grid, 1000, 50, seed=8, mu=0.005)
        upsilon, eps1 = -0.041, 0.04
        assert s.worst_g2 <= upsilon + eps1
        assert s.worst_g1 <= upsilon + eps1
