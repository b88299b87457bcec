"""Euler pair integration against closed-form moment oracles.

For the affine model the Ito second moment solves m' = (s^2 - 2a) m
conditionally on the chain, so E X_T^2 = x0^2 E exp(int (s^2 - 2a)),
which the tilted-semigroup identity evaluates exactly.  That gives a
cross-module oracle coupling the SDE kernel to the matrix exponential.
"""

import math

import numpy as np
import pytest

from regimelab.errors import NonFiniteState
from regimelab.models import bounded_tanh, switching_ou
from regimelab.ratematrix import feynman_kac, validate
from regimelab.sde import (
    SwitchingCoefficients,
    fit_loglog_slope,
    lemma1_bound,
    second_moment_guard,
    simulate_pair,
    simulate_pair_batch,
    spot_check_hypotheses,
    strong_error_curve,
)
from regimelab.skorokhod import default_clock_rate, simulate_clock, simulate_coupled, simulate_coupled_batch

Q = validate([[-1.0, 1.0], [2.0, -2.0]])
QT = validate([[-1.2, 1.2], [1.7, -1.7]])


def constant_coefficients(b_val, s_val, n_states=2):
    return SwitchingCoefficients(
        dimension=1,
        drift=lambda x, i: np.full_like(np.asarray(x, dtype=float), b_val),
        sigma=lambda x, i: np.full_like(np.asarray(x, dtype=float), s_val),
        kappa=np.zeros(n_states),
        K=max(b_val**2, s_val**2, 1e-12),
        bounded=True,
        n_states=n_states,
        name="constant",
    )


class TestDeterministicLimits:
    def test_zero_coefficients_freeze_the_state(self):
        batch = simulate_coupled_batch(Q, QT, 0, 1.0, 64, seed=2, probe_times=(1.0,),
                                       record_jumps=True)
        out = simulate_pair_batch(
            constant_coefficients(0.0, 0.0), batch, 0.7, 1e-2, 2, probe_times=(1.0,)
        )
        np.testing.assert_array_equal(out["x_at_probe"], 0.7)
        np.testing.assert_array_equal(out["x_tilde_at_probe"], 0.7)

    def test_constant_drift_is_integrated_exactly(self):
        batch = simulate_coupled_batch(Q, QT, 0, 2.0, 32, seed=4, probe_times=(2.0,),
                                       record_jumps=True)
        out = simulate_pair_batch(
            constant_coefficients(0.3, 0.0), batch, -0.5, 1e-2, 4, probe_times=(2.0,)
        )
        np.testing.assert_allclose(out["x_at_probe"], -0.5 + 0.3 * 2.0, atol=1e-12)

    def test_single_path_matches_recursion_by_hand(self):
        # one Euler step at a time, no chain jumps in [0, horizon]
        clock = simulate_clock(1e-9, 1.0, seed=8)
        assert clock.times.size == 0
        path = simulate_coupled(validate([[0.0]]), validate([[0.0]]), 0, clock)
        c = switching_ou(a=(0.8,), s=(0.0,), c=(0.4,))
        pair = simulate_pair(c, path, 1.0, 0.25, seed=6)
        x = 1.0
        for k in range(4):
            x = x + (-0.8 * x) * 0.25 + 0.4 * pair.dw[k]
        assert pair.x[-1] == pytest.approx(x, abs=1e-14)


class TestZeroPerturbation:
    def test_pathwise_equal_trajectories(self):
        batch = simulate_coupled_batch(Q, Q, 0, 1.0, 256, seed=9, probe_times=(0.5, 1.0),
                                       record_jumps=True)
        out = simulate_pair_batch(
            switching_ou(), batch, 0.4, 1e-2, 9, probe_times=(0.5, 1.0)
        )
        np.testing.assert_array_equal(out["x_at_probe"], out["x_tilde_at_probe"])


class TestMomentOracles:
    def test_mean_reversion_no_switching_effect(self):
        # equal rates in both states make the regime irrelevant for X
        c = switching_ou(a=(1.0, 1.0), s=(0.5, 0.5))
        n = 40_000
        batch = simulate_coupled_batch(Q, Q, 0, 1.0, n, seed=21, probe_times=(1.0,),
                                       record_jumps=True)
        out = simulate_pair_batch(c, batch, 0.7, 1e-3, 21, probe_times=(1.0,))
        x = out["x_at_probe"][0]
        exact_mean = 0.7 * math.exp(-1.0)
        se = x.std(ddof=1) / math.sqrt(n)
        assert abs(x.mean() - exact_mean) <= 3.0 * se + 2e-4

    def test_second_moment_feynman_kac_oracle(self):
        # E X_T^2 = x0^2 (e^{T (Q + diag(s^2 - 2a))} 1)_{i0}
        c = switching_ou(a=(1.0, 0.6), s=(0.4, 0.7))
        kappa_m = np.array([0.4**2 - 2.0, 0.7**2 - 1.2])
        n = 40_000
        t = 1.0
        batch = simulate_coupled_batch(Q, Q, 0, t, n, seed=33, probe_times=(t,),
                                       record_jumps=True)
        out = simulate_pair_batch(c, batch, 0.9, 1e-3, 33, probe_times=(t,))
        xsq = out["x_at_probe"][0] ** 2
        exact = 0.9**2 * feynman_kac(Q, kappa_m, 1.0, t, i0=0)
        se = xsq.std(ddof=1) / math.sqrt(n)
        assert abs(xsq.mean() - exact) <= 3.0 * se + 2e-3

    def test_interior_probe_mean(self):
        c = switching_ou(a=(1.0, 1.0), s=(0.3, 0.3))
        n = 40_000
        batch = simulate_coupled_batch(Q, Q, 0, 1.0, n, seed=5, probe_times=(0.52,),
                                       record_jumps=True)
        out = simulate_pair_batch(c, batch, 1.0, 0.02, 5, probe_times=(0.52,))
        x = out["x_at_probe"][0]
        se = x.std(ddof=1) / math.sqrt(n)
        assert abs(x.mean() - math.exp(-0.52)) <= 3.0 * se + 5e-3

    def test_off_grid_probe_rejected(self):
        batch = simulate_coupled_batch(Q, Q, 0, 1.0, 8, seed=5, probe_times=(0.51,),
                                       record_jumps=True)
        with pytest.raises(ValueError):
            simulate_pair_batch(
                switching_ou(), batch, 1.0, 0.02, 5, probe_times=(0.51,)
            )


class TestGuards:
    def test_lemma1_formula(self):
        # (x0^2 + 2 K t) e^{(2K + 1) t}, frozen by hand
        assert lemma1_bound(0.5, 1.0, 2.0) == pytest.approx(
            (0.25 + 4.0) * math.exp(6.0), rel=1e-12
        )

    def test_second_moment_guard_accepts_tame_paths(self):
        c = bounded_tanh()
        rep = second_moment_guard(c, (np.array([0.1, -0.4, 0.8]), 0.0), t=1.0)
        assert rep["passes"]
        assert rep["bound"] == pytest.approx(lemma1_bound(0.0, c.K, 1.0))

    def test_second_moment_guard_rejects_explosions(self):
        c = bounded_tanh()
        huge = math.sqrt(lemma1_bound(0.0, c.K, 1.0)) * 100.0
        rep = second_moment_guard(c, (np.full(16, huge), 0.0), t=1.0)
        assert not rep["passes"]

    @pytest.mark.filterwarnings("ignore:overflow encountered")
    def test_diverging_lanes_raise(self):
        # drift x^3 with a big step explodes essentially every lane
        c = SwitchingCoefficients(
            dimension=1,
            drift=lambda x, i: np.asarray(x, dtype=float) ** 3,
            sigma=lambda x, i: np.ones_like(np.asarray(x, dtype=float)),
            kappa=np.zeros(2),
            K=1.0,
            bounded=False,
            n_states=2,
        )
        batch = simulate_coupled_batch(Q, Q, 0, 4.0, 128, seed=3, probe_times=(4.0,),
                                       record_jumps=True)
        with pytest.raises(NonFiniteState):
            simulate_pair_batch(c, batch, 3.0, 0.5, 3, probe_times=(4.0,))

    def test_spot_check_flags_lying_metadata(self):
        honest = switching_ou()
        rep = spot_check_hypotheses(honest, seed=1)
        assert rep["h1_max_violation"] <= 1e-9
        assert rep["h2_max_violation"] <= 1e-9
        liar = SwitchingCoefficients(
            dimension=1,
            drift=honest.drift,
            sigma=honest.sigma,
            kappa=np.array([-10.0, -10.0]),  # claims far more dissipation
            K=honest.K,
            n_states=2,
        )
        assert spot_check_hypotheses(liar, seed=1)["h1_max_violation"] > 0.0


class TestStrongError:
    def test_fit_recovers_synthetic_slope(self):
        curve = [(2.0**-k, 0.37 * (2.0**-k) ** 0.5) for k in range(3, 9)]
        assert fit_loglog_slope(curve) == pytest.approx(0.5, abs=1e-12)

    def test_deterministic_model_has_order_one(self):
        # sigma = 0 reduces Euler to explicit ODE stepping
        c = switching_ou(a=(1.0, 0.6), s=(0.0, 0.0))
        curve = strong_error_curve(
            c, 0.8, 1.0, [2.0**-4, 2.0**-6, 2.0**-10], 256, seed=12, q=Q
        )
        assert len(curve) == 2  # finest level is consumed as the reference
        assert 0.9 <= fit_loglog_slope(curve) <= 1.15

    def test_multiplicative_model_has_order_half(self):
        c = switching_ou()
        curve = strong_error_curve(
            c, 0.5, 1.0, [2.0**-5, 2.0**-7, 2.0**-9, 2.0**-12], 1_500, seed=7, q=Q
        )
        assert 0.3 <= fit_loglog_slope(curve) <= 0.75

    def test_errors_shrink_monotonically(self):
        c = switching_ou()
        curve = strong_error_curve(
            c, 0.5, 1.0, [2.0**-4, 2.0**-6, 2.0**-8, 2.0**-11], 800, seed=2, q=Q
        )
        errs = [e for _, e in curve]
        assert errs == sorted(errs, reverse=True)
