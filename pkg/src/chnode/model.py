"""Layer architectures, Hamiltonian energy, and their exact derivatives.

Three discrete layer maps are supported, all forward-Euler stacks with one
weight triple (K_i, b_i, L_i) per step:

    resnet   xi_{i+1} = xi_i + tanh(K_i xi_i + b_i)
    hdnn     xi_{i+1} = xi_i + h J K_i^T tanh(K_i xi_i + b_i)
    chnode   xi_{i+1} = (I + kappa h F) xi_i
                        + h F (K_i^T tanh(K_i xi_i + b_i) + L_i^T L_i xi_i)

with F = J - gamma I. The damping gamma is owned by the certificate update,
not by gradient descent.
"""

import json
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import NotFiniteError, ShapeError
from .linalg import canonical_skew, check_finite

ARCHS = ("resnet", "hdnn", "chnode")

CHECKPOINT_VERSION = 1


def log_cosh(x: np.ndarray) -> np.ndarray:
    """Overflow-safe log(cosh(x)): |x| + log((1 + exp(-2|x|)) / 2)."""
    ax = np.abs(x)
    return ax + np.log1p(np.exp(-2.0 * ax)) - np.log(2.0)


@dataclass(frozen=True)
class Activation:
    """Element-wise nonlinearity with its derivative and antiderivative."""

    kind: str
    value: Callable[[np.ndarray], np.ndarray]
    derivative: Callable[[np.ndarray], np.ndarray]
    antiderivative: Callable[[np.ndarray], np.ndarray]
    slope_bound: float


TANH = Activation(
    kind="tanh",
    value=np.tanh,
    derivative=lambda x: 1.0 - np.tanh(x) ** 2,
    antiderivative=log_cosh,
    slope_bound=1.0,
)


@dataclass
class LayerParams:
    """One forward-Euler step's trainable weights."""

    K: np.ndarray
    b: np.ndarray
    L: np.ndarray

    def __post_init__(self):
        self.K = check_finite(self.K, "K")
        self.b = check_finite(self.b, "b")
        self.L = check_finite(self.L, "L")
        n = self.K.shape[0]
        if self.K.shape != (n, n) or self.L.shape != (n, n) or self.b.shape != (n,):
            raise ShapeError(
                f"inconsistent layer shapes: K {self.K.shape}, b {self.b.shape}, L {self.L.shape}"
            )


@dataclass
class ModelSpec:
    """Full architecture description; weights are mutated in place by training."""

    arch: str
    h: float
    layers: list[LayerParams]
    input_weight: np.ndarray   # (n, m) lift
    input_bias: np.ndarray     # (n,)
    output_weight: np.ndarray  # (classes, n)
    output_bias: np.ndarray    # (classes,)
    kappa: float = 0.0
    gamma: float = 0.0
    J: Optional[np.ndarray] = None
    seed: int = 0
    train_l: bool = False

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ValueError(f"unknown arch {self.arch!r}, expected one of {ARCHS}")
        if self.h <= 0:
            raise ValueError(f"step size must be positive, got {self.h}")
        if not self.layers:
            raise ValueError("at least one layer is required")
        if self.gamma < 0:
            raise ValueError(f"gamma must be nonnegative, got {self.gamma}")
        if self.kappa < 0:
            raise ValueError(f"kappa must be nonnegative, got {self.kappa}")
        n = self.layers[0].K.shape[0]
        for i, layer in enumerate(self.layers):
            if layer.K.shape[0] != n:
                raise ShapeError(f"layer {i} has state dimension {layer.K.shape[0]}, expected {n}")
        self.input_weight = check_finite(self.input_weight, "input weight")
        self.input_bias = check_finite(self.input_bias, "input bias")
        self.output_weight = check_finite(self.output_weight, "output weight")
        self.output_bias = check_finite(self.output_bias, "output bias")
        if self.input_weight.shape[0] != n or self.input_bias.shape != (n,):
            raise ShapeError("input layer shape does not match the state dimension")
        if self.output_weight.shape[1] != n:
            raise ShapeError("output layer shape does not match the state dimension")
        if self.arch in ("hdnn", "chnode"):
            if self.J is None:
                raise ValueError(f"{self.arch} requires an interconnection matrix J")
            self.J = check_finite(self.J, "J")
            if self.J.shape != (n, n):
                raise ShapeError(f"J has shape {self.J.shape}, expected {(n, n)}")
            if not np.array_equal(self.J, -self.J.T):
                raise ValueError("J must be exactly skew-symmetric")

    @property
    def n(self) -> int:
        return self.layers[0].K.shape[0]

    @property
    def N(self) -> int:
        return len(self.layers)

    @property
    def m(self) -> int:
        return self.input_weight.shape[1]

    @property
    def classes(self) -> int:
        return self.output_weight.shape[0]

    @property
    def T(self) -> float:
        return self.N * self.h

    def damping_matrix(self) -> np.ndarray:
        """F = J - gamma I."""
        if self.J is None:
            raise ValueError("this architecture has no interconnection matrix")
        return self.J - self.gamma * np.eye(self.n)


@dataclass(frozen=True)
class Trajectory:
    """States of one forward pass plus the classifier read-out."""

    states: np.ndarray        # (N+1, n)
    logits: np.ndarray        # (classes,)
    probabilities: np.ndarray  # (classes,)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - np.max(logits, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def _layer_uses_l(spec: ModelSpec, layer: LayerParams) -> bool:
    return spec.train_l or bool(np.any(layer.L))


def _step_batch(spec: ModelSpec, i: int, x: np.ndarray, act: Activation) -> np.ndarray:
    """Advance a (B, n) batch of states through layer ``i``."""
    layer = spec.layers[i]
    pre = x @ layer.K.T + layer.b
    sig = act.value(pre)
    if spec.arch == "resnet":
        return x + sig
    if spec.arch == "hdnn":
        return x + spec.h * (sig @ layer.K) @ spec.J.T
    f = spec.damping_matrix()
    drive = sig @ layer.K
    if _layer_uses_l(spec, layer):
        drive = drive + x @ (layer.L.T @ layer.L)
    return x + spec.kappa * spec.h * (x @ f.T) + spec.h * (drive @ f.T)


def forward_layer(spec: ModelSpec, i: int, xi: np.ndarray, act: Activation = TANH) -> np.ndarray:
    """One layer map applied to a single state vector."""
    if not 0 <= i < spec.N:
        raise IndexError(f"layer index {i} out of range for depth {spec.N}")
    xi = check_finite(xi, "state")
    if xi.shape != (spec.n,):
        raise ShapeError(f"state has shape {xi.shape}, expected ({spec.n},)")
    out = _step_batch(spec, i, xi[None, :], act)[0]
    if not np.all(np.isfinite(out)):
        raise NotFiniteError(f"layer {i} produced a non-finite state")
    return out


def forward_states(spec: ModelSpec, x: np.ndarray, act: Activation = TANH) -> np.ndarray:
    """All hidden states for a (B, m) input batch: returns (N+1, B, n)."""
    xi = x @ spec.input_weight.T + spec.input_bias
    states = np.empty((spec.N + 1, x.shape[0], spec.n))
    states[0] = xi
    for i in range(spec.N):
        nxt = _step_batch(spec, i, states[i], act)
        if not np.all(np.isfinite(nxt)):
            raise NotFiniteError(f"non-finite state produced by layer {i}")
        states[i + 1] = nxt
    return states


def forward(spec: ModelSpec, x: np.ndarray, act: Activation = TANH) -> Trajectory:
    """Input lift, hidden stack, and softmax read-out for one sample."""
    x = check_finite(x, "input")
    if x.shape != (spec.m,):
        raise ShapeError(f"input has shape {x.shape}, expected ({spec.m},)")
    states = forward_states(spec, x[None, :], act)[:, 0, :]
    logits = spec.output_weight @ states[-1] + spec.output_bias
    return Trajectory(states=states, logits=logits, probabilities=softmax(logits))


def hamiltonian_value(
    params: LayerParams, kappa: float, xi: np.ndarray, act: Activation = TANH
) -> float:
    """Energy sigma~(K xi + b) . 1 + 0.5 xi^T (L^T L + kappa I) xi."""
    xi = check_finite(xi, "state")
    pre = params.K @ xi + params.b
    quad = params.L @ xi
    value = float(np.sum(act.antiderivative(pre))) + 0.5 * (quad @ quad) + 0.5 * kappa * (xi @ xi)
    if not np.isfinite(value):
        raise NotFiniteError("Hamiltonian value is non-finite")
    return value


def hamiltonian_gradient(
    params: LayerParams, kappa: float, xi: np.ndarray, act: Activation = TANH
) -> np.ndarray:
    """Gradient K^T sigma(K xi + b) + (L^T L + kappa I) xi."""
    xi = check_finite(xi, "state")
    if xi.shape != (params.b.shape[0],):
        raise ShapeError(f"state has shape {xi.shape}, expected {params.b.shape}")
    pre = params.K @ xi + params.b
    return params.K.T @ act.value(pre) + params.L.T @ (params.L @ xi) + kappa * xi


def hamiltonian_hessian(
    params: LayerParams, kappa: float, xi: np.ndarray, act: Activation = TANH
) -> np.ndarray:
    """Hessian K^T D K + L^T L + kappa I with D = diag(sigma'(K xi + b))."""
    xi = check_finite(xi, "state")
    if xi.shape != (params.b.shape[0],):
        raise ShapeError(f"state has shape {xi.shape}, expected {params.b.shape}")
    d = act.derivative(params.K @ xi + params.b)
    n = params.K.shape[0]
    return params.K.T @ (d[:, None] * params.K) + params.L.T @ params.L + kappa * np.eye(n)


def layer_jacobian(spec: ModelSpec, i: int, xi: np.ndarray, act: Activation = TANH) -> np.ndarray:
    """Derivative of the layer map with respect to its input state."""
    if not 0 <= i < spec.N:
        raise IndexError(f"layer index {i} out of range for depth {spec.N}")
    xi = check_finite(xi, "state")
    if xi.shape != (spec.n,):
        raise ShapeError(f"state has shape {xi.shape}, expected ({spec.n},)")
    layer = spec.layers[i]
    d = act.derivative(layer.K @ xi + layer.b)
    n = spec.n
    if spec.arch == "resnet":
        return np.eye(n) + d[:, None] * layer.K
    if spec.arch == "hdnn":
        return np.eye(n) + spec.h * spec.J @ (layer.K.T @ (d[:, None] * layer.K))
    f = spec.damping_matrix()
    hess = layer.K.T @ (d[:, None] * layer.K)
    if _layer_uses_l(spec, layer):
        hess = hess + layer.L.T @ layer.L
    return np.eye(n) + spec.kappa * spec.h * f + spec.h * f @ hess


def init_model(
    arch: str,
    m: int,
    n: int,
    classes: int,
    N: int,
    h: float,
    kappa: float = 0.0,
    seed: int = 0,
    train_l: bool = False,
    lift: str = "auto",
    k_scale: float = 1.0,
    b_scale: float = 0.0,
) -> ModelSpec:
    """Seeded weight initialization: zero-mean uniform scaled by 1/sqrt(fan-in).

    ``lift`` selects the input layer: "identity" (m == n), "zeropad"
    (m < n), "dense", or "auto" which picks identity/zeropad/dense from the
    dimensions. hdnn/chnode state dimension must be even for the canonical J.

    ``k_scale``/``b_scale`` widen the uniform band for the layer weights and
    biases. Very small step sizes shrink the loss gradient through the stack
    by a factor of h; starting the weights larger keeps the hidden layers
    trainable there, with the certificate absorbing whatever scale results.
    """
    if arch in ("hdnn", "chnode") and n % 2 != 0:
        raise ValueError(f"{arch} needs an even state dimension for the canonical J, got {n}")
    rng = np.random.default_rng(seed)
    scale_k = k_scale / np.sqrt(n)
    layers = []
    for _ in range(N):
        K = rng.uniform(-scale_k, scale_k, size=(n, n))
        b = rng.uniform(-b_scale, b_scale, size=n) if b_scale > 0 else np.zeros(n)
        L = rng.uniform(-scale_k, scale_k, size=(n, n)) if train_l else np.zeros((n, n))
        layers.append(LayerParams(K=K, b=b, L=L))

    if lift == "auto":
        lift = "identity" if m == n else ("zeropad" if m < n else "dense")
    if lift == "identity":
        if m != n:
            raise ValueError("identity lift needs m == n")
        input_weight = np.eye(n)
    elif lift == "zeropad":
        if m > n:
            raise ValueError("zero-padding lift needs m <= n")
        input_weight = np.zeros((n, m))
        input_weight[:m, :m] = np.eye(m)
    elif lift == "dense":
        input_weight = rng.uniform(-1.0 / np.sqrt(m), 1.0 / np.sqrt(m), size=(n, m))
    else:
        raise ValueError(f"unknown lift {lift!r}")

    output_weight = rng.uniform(-scale_k, scale_k, size=(classes, n))
    J = canonical_skew(n) if arch in ("hdnn", "chnode") else None
    return ModelSpec(
        arch=arch,
        h=h,
        layers=layers,
        input_weight=input_weight,
        input_bias=np.zeros(n),
        output_weight=output_weight,
        output_bias=np.zeros(classes),
        kappa=kappa,
        gamma=0.0,
        J=J,
        seed=seed,
        train_l=train_l,
    )


def save_checkpoint(spec: ModelSpec, path) -> None:
    """Write the model as a single JSON document (matrices row-major)."""
    doc = {
        "version": CHECKPOINT_VERSION,
        "arch": spec.arch,
        "n": spec.n,
        "m": spec.m,
        "classes": spec.classes,
        "N": spec.N,
        "h": spec.h,
        "kappa": spec.kappa,
        "gamma": spec.gamma,
        "J": spec.J.tolist() if spec.J is not None else None,
        "layers": [
            {"K": layer.K.tolist(), "b": layer.b.tolist(), "L": layer.L.tolist()}
            for layer in spec.layers
        ],
        "input_weight": spec.input_weight.tolist(),
        "input_bias": spec.input_bias.tolist(),
        "output_weight": spec.output_weight.tolist(),
        "output_bias": spec.output_bias.tolist(),
        "seed": spec.seed,
        "train_l": spec.train_l,
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=1)
        f.write("\n")


def load_checkpoint(path) -> ModelSpec:
    """Read a checkpoint written by :func:`save_checkpoint`."""
    with open(path, "r", encoding="utf-8") as f:
        doc = json.load(f)
    layers = [
        LayerParams(K=np.array(d["K"]), b=np.array(d["b"]), L=np.array(d["L"]))
        for d in doc["layers"]
    ]
    return ModelSpec(
        arch=doc["arch"],
        h=doc["h"],
        layers=layers,
        input_weight=np.array(doc["input_weight"]),
        input_bias=np.array(doc["input_bias"]),
        output_weight=np.array(doc["output_weight"]),
        output_bias=np.array(doc["output_bias"]),
        kappa=doc["kappa"],
        gamma=doc["gamma"],
        J=np.array(doc["J"]) if doc["J"] is not None else None,
        seed=doc["seed"],
        train_l=doc.get("train_l", False),
    )
