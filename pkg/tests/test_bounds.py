"""Bound evaluation against an independently assembled reference.

reference_theorem1 below rebuilds the whole chain (tilted spectrum, grid
sandwich constant, time integral via QUADPACK instead of the package's
Simpson rule) from scipy primitives, so agreement is meaningful and not
circular.  Structural identities (homogeneity in the perturbation, the
reduction bound's factorization through the embedded generator) are
exact and checked at machine precision.
"""

import itertools
import json
import math

import numpy as np
import pytest
import scipy.integrate
import scipy.linalg

from regimelab.bounds import (
    BoundReport,
    bounded_time_factor,
    optimize_parameters,
    psi,
    report_to_json,
    theorem1_bound,
    theorem1_bound_bounded,
    theorem2_bound,
)
from regimelab.errors import (
    EmptyGrid,
    InitialStateRemoved,
    MissingMetadata,
    NotBounded,
)
from regimelab.models import bounded_tanh, singular_log, switching_ou
from regimelab.ratematrix import embed_reduced, l1_distance, l1_norm, validate

from conftest import interpolate_to_delta, random_generator

Q = validate([[-1.0, 1.0], [2.0, -2.0]])
QT = validate([[-1.2, 1.2], [1.7, -1.7]])
Q3 = validate([[-1.5, 1.0, 0.5], [0.4, -1.0, 0.6], [0.7, 0.3, -1.0]])


def reference_theorem1(q, q_tilde, coeffs, x0, t, p, eps):
    """Straight-line reimplementation with scipy quadrature."""
    n = q.n_states
    kappa = np.asarray(coeffs.kappa, dtype=float)
    qp = q.entries + p * np.diag(kappa)
    eig = np.linalg.eigvals(q.entries)
    tau = -float(np.delete(eig, np.argmin(np.abs(eig))).real.max())
    horizon = max(t, 10.0 / tau)
    eta_p = -float(np.linalg.eigvals(qp).real.max())
    best = 1.0
    for s in np.linspace(0.0, horizon, 129)[1:]:
        rows = scipy.linalg.expm(s * qp).sum(axis=1)
        best = max(best, math.exp(eta_p * s) * rows.max())
    c2 = 1.05 * best
    lam = eta_p - eps * p
    x0sq = float(np.linalg.norm(np.atleast_1d(x0))) ** 2
    big_k = coeffs.K

    def integrand(s):
        bracket = 1.0 + (x0sq + 2 * big_k * s) * math.exp((2 * big_k + 1) * s)
        return bracket**p * math.exp(-lam * (t - s))

    integral, err = scipy.integrate.quad(integrand, 0.0, t, limit=200)
    assert err < 1e-8 * max(integral, 1.0)
    q_conj = p / (p - 1.0)
    delta = l1_distance(q, q_tilde)
    return (
        (4.0 / eps + 8.0)
        * big_k
        * c2 ** (1.0 / p)
        * ((n - 1) ** 2 * t**2 * delta) ** (1.0 / q_conj)
        * integral ** (1.0 / p)
    )


class TestTimeFactors:
    def test_psi_input_validation(self):
        with pytest.raises(ValueError):
            psi(-1.0, 0.5, 1.0, 1.0, 2.0)
        with pytest.raises(ValueError):
            psi(1.0, 0.0, 1.0, 1.0, 2.0)
        with pytest.raises(ValueError):
            psi(1.0, 0.5, 1.0, 1.0, 1.0)
        assert psi(0.0, 0.5, 1.0, 1.0, 2.0) == 0.0

    @pytest.mark.parametrize("eta_p,eps,p,t", [
        (2.0, 0.3, 2.0, 1.0),
        (0.4, 0.1, 1.5, 2.0),
        (-0.5, 1.0, 3.0, 0.7),
    ])
    def test_degenerate_psi_equals_closed_form(self, eta_p, eps, p, t):
        # K = 0, x0 = 0 collapses the integrand to the exponential kernel
        assert psi(t, eps, eta_p, 0.0, p) == pytest.approx(
            bounded_time_factor(t, eps, eta_p, p), rel=1e-8
        )

    def test_generic_psi_against_quadpack(self):
        t, eps, eta_p, K, p, x0 = 1.3, 0.4, 1.1, 0.8, 2.5, 0.6
        lam = eta_p - eps * p

        def f(s):
            return (1.0 + (x0**2 + 2 * K * s) * math.exp((2 * K + 1) * s)) ** p * math.exp(
                -lam * (t - s)
            )

        val, _ = scipy.integrate.quad(f, 0.0, t, limit=200)
        assert psi(t, eps, eta_p, K, p, x0) == pytest.approx(val ** (1 / p), rel=1e-7)

    def test_bounded_factor_small_lambda_limit(self):
        # lam -> 0 continuously approaches t^{1/p}
        near = bounded_time_factor(2.0, 0.5, 0.5 * 2.0 + 1e-14, 2.0)
        assert near == pytest.approx(math.sqrt(2.0), rel=1e-9)

    def test_bounded_factor_sign_handling(self):
        # negative lam (eps too large) still evaluates, expm1 keeps precision
        v = bounded_time_factor(1.0, 3.0, 1.0, 2.0)
        lam = 1.0 - 6.0
        assert v == pytest.approx(((math.exp(-lam * 1.0) - 1.0) / -lam) ** 0.5, rel=1e-12)


class TestTheorem1:
    def test_matches_independent_reference(self):
        coeffs = switching_ou()
        for p, eps, t in [(2.0, 0.5, 1.0), (1.5, 0.2, 0.5), (3.0, 1.0, 2.0)]:
            got = theorem1_bound(Q, QT, coeffs, 0.4, t, p, eps)
            want = reference_theorem1(Q, QT, coeffs, 0.4, t, p, eps)
            assert got.value == pytest.approx(want, rel=1e-6)
            assert got.q == pytest.approx(p / (p - 1.0))

    def test_zero_perturbation_gives_zero(self):
        rep = theorem1_bound(Q, Q, switching_ou(), 0.4, 1.0, 2.0, 0.5)
        assert rep.value == 0.0
        assert rep.perturbation_norm == 0.0

    def test_homogeneity_in_delta(self):
        # value scales as delta^{1/q} along a fixed direction
        coeffs = switching_ou()
        qa = interpolate_to_delta(Q, QT, 0.1)
        qb = interpolate_to_delta(Q, QT, 0.2)
        p = 2.5
        ra = theorem1_bound(Q, qa, coeffs, 0.4, 1.0, p, 0.5)
        rb = theorem1_bound(Q, qb, coeffs, 0.4, 1.0, p, 0.5)
        assert rb.value / ra.value == pytest.approx(2.0 ** (1.0 / ra.q), rel=1e-12)

    def test_bounded_variant_monotone_in_time(self):
        coeffs = bounded_tanh()
        vals = [
            theorem1_bound_bounded(Q, QT, coeffs, t, 2.0, 0.5).value
            for t in (0.5, 1.0, 2.0)
        ]
        assert vals[0] < vals[1] < vals[2]

    def test_metadata_requirements(self):
        with pytest.raises(MissingMetadata):
            theorem1_bound(Q, QT, singular_log(), 0.0, 1.0, 2.0, 0.5)
        with pytest.raises(NotBounded):
            theorem1_bound_bounded(Q, QT, switching_ou(), 1.0, 2.0, 0.5)

    def test_horizon_enforcement(self):
        coeffs = bounded_tanh()
        with pytest.raises(ValueError, match="horizon"):
            theorem1_bound_bounded(Q, QT, coeffs, 5.0, 2.0, 0.5, c2_horizon=2.0)
        rep = theorem1_bound_bounded(Q, QT, coeffs, 1.0, 2.0, 0.5, c2_horizon=4.0)
        assert rep.c2_horizon == 4.0

    def test_parameter_validation(self):
        with pytest.raises(ValueError):
            theorem1_bound(Q, QT, switching_ou(), 0.0, 1.0, 1.0, 0.5)
        with pytest.raises(ValueError):
            theorem1_bound(Q, QT, switching_ou(), 0.0, 1.0, 2.0, 0.0)


OU3 = switching_ou(a=(1.0, 0.6, 0.8), s=(0.4, 0.7, 0.5), c=(0.0, 0.0, 0.0))
OU4 = switching_ou(
    a=(1.0, 0.6, 0.8, 0.9), s=(0.4, 0.7, 0.5, 0.3), c=(0.0, 0.0, 0.0, 0.0)
)


class TestTheorem2:
    def test_factorizes_through_embedded_generator(self):
        # identical machinery: value = T1(embedded) * (majorant / delta)^{1/q}
        m = 0
        q_hat = validate([[-0.9, 0.9], [0.5, -0.5]])
        for p, eps in [(2.0, 0.5), (1.5, 0.1)]:
            t2 = theorem2_bound(Q3, q_hat, m, OU3, 0.4, 1.0, p, eps, i0=1)
            q_tilde = embed_reduced(Q3, q_hat, m)
            t1 = theorem1_bound(Q3, q_tilde, OU3, 0.4, 1.0, p, eps)
            delta = t1.perturbation_norm
            swapped = t1.value * (t2.perturbation_norm / delta) ** (1.0 / t1.q)
            assert t2.value == pytest.approx(swapped, rel=1e-12)

    def test_majorant_dominates_embedded_distance(self, rng):
        for _ in range(10):
            q = random_generator(rng, 4)
            q_hat = random_generator(rng, 2)
            t2 = theorem2_bound(q, q_hat, 1, OU4, 0.0, 1.0, 2.0, 0.5, i0=2)
            assert t2.perturbation_norm >= t2.inputs["embedded_l1_distance"] - 1e-12

    def test_majorant_formula(self):
        q_hat = validate([[-0.9, 0.9], [0.5, -0.5]])
        t2 = theorem2_bound(Q3, q_hat, 0, OU3, 0.0, 1.0, 2.0, 0.5, i0=1)
        b_block = Q3.entries[1:, :1]
        q1_block = Q3.entries[1:, 1:]
        expected = l1_norm(b_block) + l1_norm(q1_block - q_hat.entries)
        assert t2.perturbation_norm == pytest.approx(expected, abs=1e-14)

    def test_removed_initial_state_rejected(self):
        q_hat = validate([[-0.9, 0.9], [0.5, -0.5]])
        with pytest.raises(InitialStateRemoved):
            theorem2_bound(Q3, q_hat, 0, OU3, 0.0, 1.0, 2.0, 0.5, i0=0)

    def test_bounded_flag_requires_bounded_model(self):
        q_hat = validate([[-0.9, 0.9], [0.5, -0.5]])
        with pytest.raises(NotBounded):
            theorem2_bound(
                Q3, q_hat, 0, OU3, 0.0, 1.0, 2.0, 0.5, bounded=True, i0=1
            )


class TestOptimizer:
    def test_matches_brute_force(self):
        coeffs = bounded_tanh()
        p_grid = (1.5, 2.0, 4.0)
        eps_grid = (0.2, 0.7, 1.5)

        def ev(p, eps):
            return theorem1_bound_bounded(Q, QT, coeffs, 1.0, p, eps)

        best = optimize_parameters(ev, p_grid, eps_grid)
        brute = min(
            (ev(p, e) for p, e in itertools.product(p_grid, eps_grid)),
            key=lambda r: r.value,
        )
        assert best.value == brute.value
        assert len(best.grid) == 9
        assert {(p, e) for p, e, _ in best.grid} == set(
            itertools.product(p_grid, eps_grid)
        )

    def test_improves_on_fixed_choice(self):
        coeffs = bounded_tanh()

        def ev(p, eps):
            return theorem1_bound_bounded(Q, QT, coeffs, 1.0, p, eps)

        assert optimize_parameters(ev).value <= ev(2.0, 1.0).value

    def test_empty_grid_rejected(self):
        with pytest.raises(EmptyGrid):
            optimize_parameters(lambda p, e: None, (), (0.5,))


class TestReport:
    def test_json_roundtrip(self):
        rep = theorem1_bound(Q, QT, switching_ou(), 0.4, 1.0, 2.0, 0.5)
        data = json.loads(report_to_json(rep))
        assert data["theorem"] == "T1-general"
        assert data["value"] == rep.value
        assert data["inputs"]["norm_kind"] == "l1(Q - Q_tilde)"

    def test_csv_row_matches_header(self):
        rep = theorem1_bound_bounded(Q, QT, bounded_tanh(), 1.0, 2.0, 0.5)
        assert len(rep.csv_row()) == len(BoundReport.csv_header())
        assert float(rep.csv_row()[9]) == rep.value
