import numpy as np
import pytest

from chnode import LayerParams, ModelSpec, canonical_skew, init_model


def fd_gradient(f, x, eps=1e-5):
    """Central-difference gradient of a scalar function."""
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = eps
        g.flat[i] = (f(x + e) - f(x - e)) / (2 * eps)
    return g


def fd_jacobian(f, x, eps=1e-6):
    """Central-difference Jacobian of a vector function."""
    x = np.asarray(x, dtype=float)
    cols = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = eps
        cols.append((f(x + e) - f(x - e)) / (2 * eps))
    return np.column_stack(cols)


def fd_hessian(f, x, eps=1e-4):
    """Second-order central-difference Hessian of a scalar function."""
    x = np.asarray(x, dtype=float)
    n = x.size
    h = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            ei = np.zeros(n)
            ej = np.zeros(n)
            ei[i] = eps
            ej[j] = eps
            h[i, j] = (
                f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)
            ) / (4 * eps * eps)
    return h


def zero_weight_spec(arch="chnode", n=2, N=1, h=0.1, kappa=1.0, gamma=0.0, m=None, classes=2):
    """A spec with all-zero layer weights, identity-or-zero lift, zero read-out."""
    m = n if m is None else m
    layers = [
        LayerParams(K=np.zeros((n, n)), b=np.zeros(n), L=np.zeros((n, n))) for _ in range(N)
    ]
    lift = np.eye(n) if m == n else np.zeros((n, m))
    return ModelSpec(
        arch=arch,
        h=h,
        layers=layers,
        input_weight=lift,
        input_bias=np.zeros(n),
        output_weight=np.zeros((classes, n)),
        output_bias=np.zeros(classes),
        kappa=kappa,
        gamma=gamma,
        J=canonical_skew(n) if arch in ("hdnn", "chnode") else None,
        seed=0,
    )


def random_spec(rng, arch, n=4, m=None, classes=3, N=3, h=0.1, kappa=0.3, train_l=False):
    """A random small model with a positive damping for chnode."""
    spec = init_model(
        arch,
        m=n if m is None else m,
        n=n,
        classes=classes,
        N=N,
        h=h,
        kappa=kappa,
        seed=int(rng.integers(2**31)),
        train_l=train_l,
        lift="dense" if (m or n) != n else "auto",
    )
    if arch == "chnode":
        spec.gamma = float(rng.uniform(0.5, 1.5))
    return spec


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)
