"""Contraction certificates: spectral bounds, damping selection, LMI check.

The certificate ties the Hessian eigenvalue band [c1, c2] of the layer
energies to the damping gamma through

    gamma >= sqrt((alpha^2 + eps) * lambda_J / (1 - alpha^2 - eps)),

with alpha = (c2 - c1)/(c2 + c1) and lambda_J the top eigenvalue of J J^T.
An independent verifier re-checks the same condition as negative
semidefiniteness of the Schur-complement block matrix

    [[P F + F^T P + (alpha^2 + eps) I,  P F],
     [F^T P,                            -I ]],   P = nu I, F = J - gamma I.
"""

from dataclasses import dataclass

import numpy as np

from .errors import CertificateError, EpsilonError
from .linalg import check_finite, is_negative_semidefinite, spectral_norm, sym_eig_bounds
from .model import TANH, Activation, ModelSpec, forward_states

DEFAULT_EPSILON_USER = 1e-9
GAMMA_MARGIN = 1.001
LMI_TOL = 1e-8


@dataclass(frozen=True)
class Certificate:
    """Contraction ledger recomputed from the current weights."""

    c1: float
    c2: float
    alpha: float
    epsilon: float
    gamma: float
    lambda_j: float
    nu: float
    beta: float
    mu: float
    rho: float

    def __post_init__(self):
        if not 0 < self.c1 <= self.c2:
            raise CertificateError(f"need 0 < c1 <= c2, got c1={self.c1}, c2={self.c2}")
        if not 0 <= self.alpha < 1:
            raise CertificateError(f"alpha out of [0, 1): {self.alpha}")
        if self.epsilon <= 0:
            raise CertificateError(f"epsilon must be positive, got {self.epsilon}")
        if 1.0 - self.alpha**2 - self.epsilon <= 0:
            raise CertificateError(
                f"inadmissible epsilon {self.epsilon} for alpha {self.alpha}"
            )
        if self.gamma < 0 or self.gamma**2 + self.lambda_j <= 0:
            raise CertificateError("degenerate damping: gamma and lambda_j both vanish")

    def as_dict(self) -> dict:
        return {
            "c1": self.c1,
            "c2": self.c2,
            "alpha": self.alpha,
            "epsilon": self.epsilon,
            "gamma": self.gamma,
            "lambda_j": self.lambda_j,
            "nu": self.nu,
            "beta": self.beta,
            "mu": self.mu,
            "rho": self.rho,
        }


@dataclass(frozen=True)
class DecayReport:
    """Distance between two trajectories at each forward-Euler step."""

    times: np.ndarray
    distances: np.ndarray
    slope: float
    ratio: float
    success: bool


def compute_bounds(spec: ModelSpec, act: Activation = TANH) -> tuple[float, float]:
    """Hessian eigenvalue band over all layers.

    c1 = min_i lambda_min(L_i^T L_i) + kappa,
    c2 = max_i (lambda_max(L_i^T L_i) + S * lambda_max(K_i^T K_i)) + kappa.
    """
    if spec.kappa <= 0:
        raise CertificateError(f"certificate needs kappa > 0, got {spec.kappa}")
    s = act.slope_bound
    lo = np.inf
    hi = -np.inf
    for layer in spec.layers:
        k_top = sym_eig_bounds(layer.K.T @ layer.K).lambda_max
        if np.any(layer.L):
            l_bounds = sym_eig_bounds(layer.L.T @ layer.L)
            l_min, l_max = max(l_bounds.lambda_min, 0.0), l_bounds.lambda_max
        else:
            l_min = l_max = 0.0
        lo = min(lo, l_min)
        hi = max(hi, l_max + s * k_top)
    return lo + spec.kappa, hi + spec.kappa


def gamma_min(alpha: float, epsilon: float, lambda_j: float) -> float:
    """Smallest admissible damping for the given spread ratio and rate."""
    if epsilon <= 0:
        raise EpsilonError(f"epsilon must be positive, got {epsilon}", max_epsilon=1 - alpha**2)
    if lambda_j < 0:
        raise ValueError(f"lambda_j must be nonnegative, got {lambda_j}")
    denom = 1.0 - alpha**2 - epsilon
    if denom <= 0:
        raise EpsilonError(
            f"epsilon too large for alpha: need epsilon < {1 - alpha**2:g}, got {epsilon:g}",
            max_epsilon=1 - alpha**2,
        )
    return float(np.sqrt((alpha**2 + epsilon) * lambda_j / denom))


def make_certificate(
    c1: float, c2: float, epsilon: float, gamma: float, lambda_j: float
) -> Certificate:
    """Assemble a certificate at an arbitrary damping (possibly inadmissible)."""
    alpha = (c2 - c1) / (c2 + c1)
    beta = 0.5 * (c1 + c2)
    mu = 0.5 * (c2 - c1)
    if gamma <= 0:
        raise CertificateError(f"certificate needs gamma > 0, got {gamma}")
    nu = gamma / (gamma**2 + lambda_j)
    rho = epsilon * beta * (gamma**2 + lambda_j) / gamma
    return Certificate(
        c1=c1,
        c2=c2,
        alpha=alpha,
        epsilon=epsilon,
        gamma=gamma,
        lambda_j=lambda_j,
        nu=nu,
        beta=beta,
        mu=mu,
        rho=rho,
    )


def admissible_epsilon(alpha: float, epsilon_user: float) -> float:
    """The working rate: min(epsilon_user, half of the admissibility gap)."""
    return min(epsilon_user, 0.5 * (1.0 - alpha**2))


def build_certificate(
    spec: ModelSpec, act: Activation = TANH, epsilon: float = DEFAULT_EPSILON_USER
) -> Certificate:
    """Certificate for the current weights at gamma = max(spec.gamma, gamma_min)."""
    c1, c2 = compute_bounds(spec, act)
    alpha = (c2 - c1) / (c2 + c1)
    lambda_j = spectral_norm(spec.J) ** 2
    if 1.0 - alpha**2 - epsilon <= 0:
        raise EpsilonError(
            f"epsilon too large for alpha: need epsilon < {1 - alpha**2:g}, got {epsilon:g}",
            max_epsilon=1 - alpha**2,
        )
    gamma = max(spec.gamma, gamma_min(alpha, epsilon, lambda_j))
    return make_certificate(c1, c2, epsilon, gamma, lambda_j)


def verify_lmi(cert: Certificate, J: np.ndarray, tol: float = LMI_TOL) -> bool:
    """Independent semidefiniteness check of the certificate's block matrix."""
    J = check_finite(J, "J")
    n = J.shape[0]
    if J.shape != (n, n):
        raise ValueError(f"J must be square, got shape {J.shape}")
    f = J - cert.gamma * np.eye(n)
    pf = cert.nu * f
    top_left = pf + pf.T + (cert.alpha**2 + cert.epsilon) * np.eye(n)
    block = np.block([[top_left, pf], [pf.T, -np.eye(n)]])
    return is_negative_semidefinite(block, tol)


def update_certificate(
    spec: ModelSpec,
    act: Activation = TANH,
    epsilon_user: float = DEFAULT_EPSILON_USER,
) -> Certificate:
    """Recompute the band for the current weights and retune spec.gamma.

    The rate policy is epsilon = min(epsilon_user, (1 - alpha^2)/2); the
    damping is set to GAMMA_MARGIN * gamma_min so the LMI stays strictly
    feasible under rounding. Idempotent for unchanged weights.
    """
    if spec.arch != "chnode":
        raise CertificateError(f"certificate updates apply to chnode models, not {spec.arch}")
    c1, c2 = compute_bounds(spec, act)
    alpha = (c2 - c1) / (c2 + c1)
    # c1 > 0 keeps alpha strictly below 1 in exact arithmetic; alpha == 1.0
    # here means c2/c1 overflowed the 64-bit band, i.e. the weights blew up.
    if alpha >= 1.0:
        raise CertificateError(
            f"weight spectrum too large for a finite certificate (c2 = {c2:g})"
        )
    epsilon = admissible_epsilon(alpha, epsilon_user)
    lambda_j = spectral_norm(spec.J) ** 2
    spec.gamma = GAMMA_MARGIN * gamma_min(alpha, epsilon, lambda_j)
    return make_certificate(c1, c2, epsilon, spec.gamma, lambda_j)


def empirical_contraction(
    spec: ModelSpec, x_a: np.ndarray, x_b: np.ndarray, act: Activation = TANH
) -> DecayReport:
    """Measured distance decay between the trajectories of two inputs."""
    if spec.arch != "chnode":
        raise CertificateError(f"empirical contraction applies to chnode models, not {spec.arch}")
    x = np.stack([check_finite(x_a, "x_a"), check_finite(x_b, "x_b")])
    if x.shape != (2, spec.m):
        raise ValueError(f"inputs must have length {spec.m}")
    states = forward_states(spec, x, act)
    distances = np.linalg.norm(states[:, 0, :] - states[:, 1, :], axis=1)
    if distances[0] == 0.0:
        raise ValueError("inputs coincide after the lift; distance decay is undefined")
    times = spec.h * np.arange(spec.N + 1)
    slope = float(np.polyfit(times, np.log(np.maximum(distances, 1e-300)), 1)[0])
    ratio = float(distances[-1] / distances[0])
    return DecayReport(
        times=times,
        distances=distances,
        slope=slope,
        ratio=ratio,
        success=bool(distances[-1] < distances[0] and slope < 0.0),
    )
