import numpy as np
import pytest

from chnode import (
    LayerParams,
    ModelSpec,
    build_certificate,
    canonical_skew,
    compute_bounds,
    empirical_contraction,
    gamma_min,
    make_certificate,
    update_certificate,
    verify_lmi,
)
from chnode.contraction import admissible_epsilon
from chnode.errors import CertificateError, EpsilonError

from conftest import random_spec, zero_weight_spec


def single_layer_spec(K, kappa, L=None, n=None, h=0.1, gamma=0.0):
    n = K.shape[0] if n is None else n
    L = np.zeros((n, n)) if L is None else L
    return ModelSpec(
        arch="chnode",
        h=h,
        layers=[LayerParams(K=K, b=np.zeros(n), L=L)],
        input_weight=np.eye(n),
        input_bias=np.zeros(n),
        output_weight=np.zeros((2, n)),
        output_bias=np.zeros(2),
        kappa=kappa,
        gamma=gamma,
        J=canonical_skew(n),
    )


class TestComputeBounds:
    def test_identity_k(self):
        spec = single_layer_spec(np.eye(2), kappa=0.04)
        assert compute_bounds(spec) == pytest.approx((0.04, 1.04), abs=1e-12)

    def test_all_zero_weights(self):
        spec = zero_weight_spec(kappa=0.5)
        c1, c2 = compute_bounds(spec)
        assert (c1, c2) == (0.5, 0.5)

    def test_two_layer_diagonal(self):
        spec = single_layer_spec(np.diag([1.0, 1.0]), kappa=0.1)
        spec.layers.append(LayerParams(K=np.diag([2.0, 0.0]), b=np.zeros(2), L=np.zeros((2, 2))))
        c1, c2 = compute_bounds(spec)
        assert c1 == pytest.approx(0.1, abs=1e-12)
        assert c2 == pytest.approx(4.1, abs=1e-10)  # top eigenvalue of diag(2,0)^2 is 4

    def test_permutation_invariant(self, rng):
        spec = random_spec(rng, "chnode", n=4, N=4)
        c = compute_bounds(spec)
        spec.layers.reverse()
        assert compute_bounds(spec) == pytest.approx(c, abs=1e-12)

    def test_c1_is_kappa_for_zero_l(self, rng):
        spec = random_spec(rng, "chnode", n=4, N=3, kappa=0.37)
        c1, _ = compute_bounds(spec)
        assert c1 == 0.37

    def test_kappa_required(self):
        spec = zero_weight_spec(kappa=0.0)
        with pytest.raises(CertificateError):
            compute_bounds(spec)


class TestGammaMin:
    def test_alpha_zero_collapse(self):
        for eps in (0.1, 0.3, 0.5):
            assert gamma_min(0.0, eps, 1.0) == pytest.approx(np.sqrt(eps / (1 - eps)), abs=1e-14)
        assert gamma_min(0.0, 0.3, 1.0) == pytest.approx(0.6546536707079772, abs=1e-14)

    def test_hand_oracle(self):
        assert gamma_min(1.0 / 3.0, 0.01, 1.0) == pytest.approx(0.3712145644293885, abs=1e-14)

    def test_zero_lambda_j(self):
        assert gamma_min(0.5, 0.1, 0.0) == 0.0

    def test_inadmissible_epsilon(self):
        with pytest.raises(EpsilonError) as exc:
            gamma_min(0.8, 0.5, 1.0)
        assert exc.value.max_epsilon == pytest.approx(1 - 0.64)


class TestBuildCertificate:
    def test_degenerate_band(self):
        spec = zero_weight_spec(kappa=1.0)
        cert = build_certificate(spec, epsilon=0.5)
        assert (cert.c1, cert.c2) == (1.0, 1.0)
        assert cert.alpha == 0.0
        assert cert.gamma == pytest.approx(1.0, abs=1e-14)  # sqrt(0.5/0.5)
        assert cert.beta == 1.0
        assert cert.mu == 0.0

    def test_identity_k_band(self):
        spec = single_layer_spec(np.eye(2), kappa=0.04)
        cert = build_certificate(spec, epsilon=1e-4)
        assert cert.alpha == pytest.approx(0.9259259259259258, abs=1e-12)
        assert cert.gamma == pytest.approx(2.4524543424841476, abs=1e-10)

    def test_epsilon_error_carries_max(self):
        spec = single_layer_spec(np.eye(2), kappa=0.04)
        with pytest.raises(EpsilonError) as exc:
            build_certificate(spec, epsilon=0.5)
        assert exc.value.max_epsilon == pytest.approx(1 - (1.0 / 1.08) ** 2, abs=1e-12)

    def test_rho_identity(self, rng):
        for _ in range(10):
            c1 = float(rng.uniform(0.1, 1.0))
            c2 = c1 + float(rng.uniform(0.0, 3.0))
            alpha = (c2 - c1) / (c2 + c1)
            eps = 0.3 * (1 - alpha**2)
            gamma = gamma_min(alpha, eps, 1.0) * 1.5
            cert = make_certificate(c1, c2, eps, gamma, 1.0)
            lhs = cert.rho * cert.gamma / (cert.gamma**2 + cert.lambda_j)
            assert lhs == pytest.approx(cert.epsilon * cert.beta, rel=1e-12)

    def test_respects_larger_spec_gamma(self):
        spec = zero_weight_spec(kappa=1.0, gamma=5.0)
        cert = build_certificate(spec, epsilon=0.5)
        assert cert.gamma == 5.0
        assert spec.gamma == 5.0  # not mutated


class TestVerifyLmi:
    def test_boundary_gamma_verifies(self):
        j = canonical_skew(2)
        cert = make_certificate(1.0, 2.0, 0.05, gamma_min(1 / 3, 0.05, 1.0), 1.0)
        assert verify_lmi(cert, j)

    def test_underdamped_fails(self):
        j = canonical_skew(2)
        cert = make_certificate(1.0, 2.0, 0.05, 0.9 * gamma_min(1 / 3, 0.05, 1.0), 1.0)
        assert not verify_lmi(cert, j)

    def test_interior_point(self):
        j = canonical_skew(2)
        cert = make_certificate(1.0, 1.0, 1e-12, 1.0, 1.0)
        assert verify_lmi(cert, j)

    def test_equivalence_with_scalar_condition(self, rng):
        # For canonical J the LMI verdict must match the closed-form threshold.
        j = canonical_skew(4)
        for _ in range(50):
            alpha = float(rng.uniform(0.0, 0.95))
            eps = float(rng.uniform(1e-4, 0.9)) * (1 - alpha**2)
            gmin = gamma_min(alpha, eps, 1.0)
            gamma = gmin * float(rng.uniform(0.7, 1.5))
            c1 = 1.0
            c2 = (1 + alpha) / (1 - alpha)
            cert = make_certificate(c1, c2, eps, gamma, 1.0)
            assert verify_lmi(cert, j) == (gamma >= gmin - 1e-9)


class TestUpdateCertificate:
    def test_idempotent(self, rng):
        spec = random_spec(rng, "chnode")
        first = update_certificate(spec)
        second = update_certificate(spec)
        assert first == second

    def test_always_verifies(self, rng):
        for _ in range(10):
            spec = random_spec(rng, "chnode", n=4, N=2)
            cert = update_certificate(spec)
            assert verify_lmi(cert, spec.J, tol=1e-8)

    def test_scaling_k_grows_band_and_damping(self, rng):
        spec = random_spec(rng, "chnode", n=4, N=2)
        before = update_certificate(spec)
        for layer in spec.layers:
            layer.K *= 2.0
        after = update_certificate(spec)
        assert after.c2 - spec.kappa == pytest.approx(4 * (before.c2 - spec.kappa), rel=1e-10)
        assert after.alpha > before.alpha
        assert after.gamma > before.gamma

    def test_large_kappa_limit(self):
        spec = single_layer_spec(np.eye(2), kappa=1e6)
        cert = update_certificate(spec, epsilon_user=0.01)
        assert cert.alpha < 1e-5
        assert cert.gamma == pytest.approx(1.001 * np.sqrt(0.01 / 0.99), rel=1e-3)

    def test_rejects_non_chnode(self, rng):
        spec = random_spec(rng, "resnet")
        with pytest.raises(CertificateError):
            update_certificate(spec)

    def test_epsilon_policy_caps_at_half_gap(self):
        spec = single_layer_spec(np.eye(2), kappa=0.04)
        cert = update_certificate(spec, epsilon_user=0.9)
        alpha = cert.alpha
        assert cert.epsilon == pytest.approx(0.5 * (1 - alpha**2), rel=1e-12)
        tiny = update_certificate(spec, epsilon_user=1e-9)
        assert tiny.epsilon == 1e-9
        assert admissible_epsilon(alpha, 1e-9) == 1e-9


class TestEmpiricalContraction:
    def test_linear_case_matches_closed_form(self):
        # K = 0 reduces the flow to xi' = kappa (J - gamma I) xi, whose
        # distance decays as exp(-kappa gamma t) exactly.
        spec = zero_weight_spec(kappa=1.0, gamma=0.5, N=1000, h=1e-3)
        rep = empirical_contraction(spec, np.array([1.0, 0.0]), np.array([0.0, 1.0]))
        assert rep.ratio == pytest.approx(np.exp(-0.5), rel=0.01)
        assert rep.success

    def test_identical_inputs_rejected(self):
        spec = zero_weight_spec(kappa=1.0, gamma=0.5, N=10, h=0.01)
        x = np.array([0.3, 0.4])
        with pytest.raises(ValueError):
            empirical_contraction(spec, x, x.copy())

    def test_slope_matches_decay_rate_within_fe_error(self):
        for kappa in (0.5, 1.0, 2.0):
            for gamma in (0.5, 1.0, 2.0):
                for h in (1e-3, 1e-2):
                    N = max(2, int(round(1.0 / h)))
                    spec = zero_weight_spec(kappa=kappa, gamma=gamma, N=N, h=h)
                    rep = empirical_contraction(
                        spec, np.array([0.7, -0.1]), np.array([-0.2, 0.5])
                    )
                    assert abs(rep.slope - (-kappa * gamma)) <= 5 * (kappa * gamma) ** 2 * h

    def test_rejects_non_chnode(self, rng):
        spec = random_spec(rng, "resnet")
        with pytest.raises(CertificateError):
            empirical_contraction(spec, np.zeros(spec.m), np.ones(spec.m))
