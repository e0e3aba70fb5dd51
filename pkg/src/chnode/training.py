"""Loss, reverse-mode gradients, SGD, and the damping-update training loop.

Gradients are accumulated by hand through the layer maps; gamma, kappa and J
are treated as constants during backpropagation. For chnode models every
mini-batch step is followed by a certificate update that retunes gamma from
the fresh weights, so the model stays contractive throughout training.
"""

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .contraction import (
    Certificate,
    make_certificate,
    update_certificate,
    verify_lmi,
)
from .errors import CertificateError, NotFiniteError, ShapeError, TrainingDivergedError
from .linalg import spectral_norm
from .model import TANH, Activation, ModelSpec, forward, forward_states, layer_jacobian, softmax

PROB_FLOOR = 1e-15
GAMMA_GROWTH_CAP = 10.0
N_BSM_PROBES = 4


@dataclass
class TrainConfig:
    learning_rate: float
    epochs: int
    batch_size: int
    seed: int = 0
    momentum: float = 0.9
    epsilon_user: float = 1e-9
    loss: str = "cross_entropy"

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError(f"learning rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ValueError(f"batch size must be at least 1, got {self.batch_size}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.loss != "cross_entropy":
            raise ValueError(f"unsupported loss {self.loss!r}")


@dataclass
class GradientSet:
    """Gradient of the batch loss with respect to every trainable tensor."""

    dK: list[np.ndarray]
    db: list[np.ndarray]
    dL: list[np.ndarray]
    d_input_weight: np.ndarray
    d_input_bias: np.ndarray
    d_output_weight: np.ndarray
    d_output_bias: np.ndarray

    @classmethod
    def zeros_for(cls, spec: ModelSpec) -> "GradientSet":
        return cls(
            dK=[np.zeros_like(l.K) for l in spec.layers],
            db=[np.zeros_like(l.b) for l in spec.layers],
            dL=[np.zeros_like(l.L) for l in spec.layers],
            d_input_weight=np.zeros_like(spec.input_weight),
            d_input_bias=np.zeros_like(spec.input_bias),
            d_output_weight=np.zeros_like(spec.output_weight),
            d_output_bias=np.zeros_like(spec.output_bias),
        )


def _param_grad_pairs(spec: ModelSpec, grads: GradientSet):
    """Deterministically ordered (parameter, gradient) pairs; L only if trained."""
    for layer, dk, db_, dl in zip(spec.layers, grads.dK, grads.db, grads.dL):
        yield layer.K, dk
        yield layer.b, db_
        if spec.train_l:
            yield layer.L, dl
    yield spec.input_weight, grads.d_input_weight
    yield spec.input_bias, grads.d_input_bias
    yield spec.output_weight, grads.d_output_weight
    yield spec.output_bias, grads.d_output_bias


@dataclass
class MomentumState:
    buffers: list[np.ndarray]

    @classmethod
    def zeros_for(cls, spec: ModelSpec) -> "MomentumState":
        shapes = [p for p, _ in _param_grad_pairs(spec, GradientSet.zeros_for(spec))]
        return cls(buffers=[np.zeros_like(p) for p in shapes])


@dataclass(frozen=True)
class BsmProfile:
    """Spectral norms of the state-transition products against the rate bound.

    norms[k] is the norm of the sensitivity of the final state with respect
    to the state at layer N-k; rho_bound[k] = exp(-rho * k * h / 2).
    """

    layer_indices: np.ndarray
    norms: np.ndarray
    rho_bound: np.ndarray
    violations: np.ndarray
    tolerance: float


@dataclass
class LogRow:
    epoch: int
    batch: int
    loss: float
    train_acc: float = np.nan
    c1: Optional[float] = None
    c2: Optional[float] = None
    alpha: Optional[float] = None
    gamma: Optional[float] = None
    epsilon: Optional[float] = None
    rho: Optional[float] = None
    bsm_max: Optional[float] = None
    bsm_min: Optional[float] = None


LOG_COLUMNS = (
    "epoch",
    "batch",
    "loss",
    "train_acc",
    "c1",
    "c2",
    "alpha",
    "gamma",
    "epsilon",
    "rho",
    "bsm_max",
    "bsm_min",
)


@dataclass
class TrainingLog:
    rows: list[LogRow] = field(default_factory=list)
    gamma_cap_events: list[tuple[int, int]] = field(default_factory=list)

    def table(self) -> list[list]:
        return [[getattr(row, col) for col in LOG_COLUMNS] for row in self.rows]

    def write_csv(self, path, timestamp: bool = True) -> None:
        from .report import write_csv

        write_csv(path, list(LOG_COLUMNS), self.table(), timestamp=timestamp)


def cross_entropy(probabilities: np.ndarray, label: int) -> float:
    """Negative log likelihood with the probability floored at 1e-15."""
    probabilities = np.asarray(probabilities, dtype=float)
    if not 0 <= label < probabilities.shape[-1]:
        raise ValueError(f"label {label} out of range for {probabilities.shape[-1]} classes")
    return float(-np.log(max(probabilities[label], PROB_FLOOR)))


def _as_arrays(batch) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(batch, tuple) and len(batch) == 2:
        x, y = batch
        return np.asarray(x, dtype=float), np.asarray(y, dtype=int)
    pairs = list(batch)
    if not pairs:
        raise ValueError("batch is empty")
    x = np.stack([np.asarray(p[0], dtype=float) for p in pairs])
    y = np.array([int(p[1]) for p in pairs])
    return x, y


def backprop(
    spec: ModelSpec, batch, act: Activation = TANH
) -> tuple[float, GradientSet]:
    """Mean cross-entropy over the batch and its exact gradient."""
    x, y = _as_arrays(batch)
    if x.ndim != 2 or x.shape[1] != spec.m:
        raise ShapeError(f"batch features have shape {x.shape}, expected (B, {spec.m})")
    if np.any(y < 0) or np.any(y >= spec.classes):
        raise ValueError("batch labels out of range")
    b = x.shape[0]

    states = forward_states(spec, x, act)  # (N+1, B, n)
    logits = states[-1] @ spec.output_weight.T + spec.output_bias
    probs = softmax(logits)
    loss = float(np.mean(-np.log(np.maximum(probs[np.arange(b), y], PROB_FLOOR))))

    grads = GradientSet.zeros_for(spec)
    dlogits = probs.copy()
    dlogits[np.arange(b), y] -= 1.0
    dlogits /= b
    grads.d_output_weight = dlogits.T @ states[-1]
    grads.d_output_bias = dlogits.sum(axis=0)
    g = dlogits @ spec.output_weight  # (B, n) gradient w.r.t. xi_N

    if spec.arch == "chnode":
        f = spec.damping_matrix()
        a = np.eye(spec.n) + spec.kappa * spec.h * f
    for i in range(spec.N - 1, -1, -1):
        layer = spec.layers[i]
        xi = states[i]
        pre = xi @ layer.K.T + layer.b
        sig = act.value(pre)
        dsig = act.derivative(pre)
        if spec.arch == "resnet":
            dpre = dsig * g
            grads.db[i] = dpre.sum(axis=0)
            grads.dK[i] = dpre.T @ xi
            g = g + dpre @ layer.K
        elif spec.arch == "hdnn":
            v = spec.h * g @ spec.J
            dpre = dsig * (v @ layer.K.T)
            grads.db[i] = dpre.sum(axis=0)
            grads.dK[i] = sig.T @ v + dpre.T @ xi
            g = g + dpre @ layer.K
        else:
            v = spec.h * g @ f
            dpre = dsig * (v @ layer.K.T)
            grads.db[i] = dpre.sum(axis=0)
            grads.dK[i] = sig.T @ v + dpre.T @ xi
            g_next = g @ a + dpre @ layer.K
            if spec.train_l or np.any(layer.L):
                gram = layer.L.T @ layer.L
                grads.dL[i] = layer.L @ (xi.T @ v + v.T @ xi)
                g_next = g_next + v @ gram
            g = g_next

    grads.d_input_weight = g.T @ x
    grads.d_input_bias = g.sum(axis=0)
    return loss, grads


def sgd_step(
    spec: ModelSpec, grads: GradientSet, state: MomentumState, cfg: TrainConfig
) -> None:
    """Classical momentum: v <- momentum v + g; p <- p - lr v. In place."""
    for buf, (param, grad) in zip(state.buffers, _param_grad_pairs(spec, grads)):
        if buf.shape != grad.shape:
            raise ShapeError(f"momentum buffer {buf.shape} does not match gradient {grad.shape}")
        buf *= cfg.momentum
        buf += grad
        param -= cfg.learning_rate * buf


def evaluate_accuracy(
    spec: ModelSpec, x: np.ndarray, y: np.ndarray, act: Activation = TANH, chunk: int = 512
) -> float:
    """Fraction of samples whose argmax logit matches the label."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=int)
    hits = 0
    for start in range(0, x.shape[0], chunk):
        xs = x[start : start + chunk]
        final = forward_states(spec, xs, act)[-1]
        logits = final @ spec.output_weight.T + spec.output_bias
        hits += int(np.sum(np.argmax(logits, axis=1) == y[start : start + chunk]))
    return hits / x.shape[0]


def bsm(spec: ModelSpec, x: np.ndarray, i: int, act: Activation = TANH) -> np.ndarray:
    """Sensitivity of the final state to the state entering layer ``i``."""
    if not 0 <= i <= spec.N:
        raise IndexError(f"layer index {i} out of range for depth {spec.N}")
    traj = forward(spec, x, act)
    phi = np.eye(spec.n)
    for j in range(spec.N - 1, i - 1, -1):
        phi = phi @ layer_jacobian(spec, j, traj.states[j], act)
    return phi


def bsm_profile(
    spec: ModelSpec, x: np.ndarray, cert: Certificate, act: Activation = TANH
) -> BsmProfile:
    """Spectral norms of all backward sensitivities against exp(-rho t / 2).

    The continuous-time bound is checked with an additive forward-Euler
    slack of 10 h.
    """
    traj = forward(spec, x, act)
    tol = 10.0 * spec.h
    phi = np.eye(spec.n)
    norms = [1.0]
    for j in range(spec.N - 1, -1, -1):
        phi = phi @ layer_jacobian(spec, j, traj.states[j], act)
        norms.append(spectral_norm(phi))
    norms = np.array(norms)
    steps_back = np.arange(spec.N + 1)
    bound = np.exp(-0.5 * cert.rho * steps_back * spec.h)
    return BsmProfile(
        layer_indices=spec.N - steps_back,
        norms=norms,
        rho_bound=bound,
        violations=np.flatnonzero(norms > bound + tol),
        tolerance=tol,
    )


def _batch_slices(size: int, batch_size: int):
    for start in range(0, size, batch_size):
        yield start, min(start + batch_size, size)


def fit(
    spec: ModelSpec,
    train,
    cfg: TrainConfig,
    act: Activation = TANH,
) -> TrainingLog:
    """Mini-batch SGD with the per-batch damping retune for chnode models.

    ``train`` is a (features, labels) pair or any object with ``features``
    and ``labels`` arrays. Each epoch logs per-batch loss and certificate
    fields plus epoch-level train accuracy and backward-sensitivity extrema
    (measured on a fixed probe set).
    """
    if hasattr(train, "features"):
        x_all, y_all = np.asarray(train.features, float), np.asarray(train.labels, int)
    else:
        x_all, y_all = _as_arrays(train)
    if x_all.shape[1] != spec.m:
        raise ShapeError(f"dataset features have length {x_all.shape[1]}, model expects {spec.m}")
    size = x_all.shape[0]

    log = TrainingLog()
    if cfg.epochs == 0:
        return log
    rng = np.random.default_rng(cfg.seed)
    state = MomentumState.zeros_for(spec)
    cert: Optional[Certificate] = None
    if spec.arch == "chnode":
        cert = update_certificate(spec, act, cfg.epsilon_user)
    probes = x_all[: min(N_BSM_PROBES, size)]

    for epoch in range(1, cfg.epochs + 1):
        gamma_start = spec.gamma
        order = rng.permutation(size)
        epoch_rows = []
        for batch_idx, (lo, hi) in enumerate(_batch_slices(size, cfg.batch_size)):
            sel = order[lo:hi]
            try:
                loss, grads = backprop(spec, (x_all[sel], y_all[sel]), act)
            except NotFiniteError as err:
                raise TrainingDivergedError(
                    f"training diverged at epoch {epoch}, batch {batch_idx}: {err}",
                    epoch,
                    batch_idx,
                ) from err
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"loss diverged at epoch {epoch}, batch {batch_idx}", epoch, batch_idx
                )
            sgd_step(spec, grads, state, cfg)
            if spec.arch == "chnode":
                try:
                    cert = update_certificate(spec, act, cfg.epsilon_user)
                except (CertificateError, NotFiniteError) as err:
                    raise TrainingDivergedError(
                        f"weights diverged at epoch {epoch}, batch {batch_idx}: {err}",
                        epoch,
                        batch_idx,
                    ) from err
                cap = GAMMA_GROWTH_CAP * max(gamma_start, 1e-12)
                if spec.gamma > cap:
                    spec.gamma = cap
                    cert = make_certificate(cert.c1, cert.c2, cert.epsilon, cap, cert.lambda_j)
                    log.gamma_cap_events.append((epoch, batch_idx))
            row = LogRow(epoch=epoch, batch=batch_idx, loss=loss)
            if cert is not None:
                row.c1, row.c2, row.alpha = cert.c1, cert.c2, cert.alpha
                row.gamma, row.epsilon, row.rho = cert.gamma, cert.epsilon, cert.rho
            epoch_rows.append(row)

        train_acc = evaluate_accuracy(spec, x_all, y_all, act)
        bsm_max = bsm_min = None
        if spec.arch == "chnode" and cert is not None:
            extrema = []
            for probe in probes:
                profile = bsm_profile(spec, probe, cert, act)
                extrema.append((profile.norms.max(), profile.norms.min()))
            bsm_max = float(max(e[0] for e in extrema))
            bsm_min = float(min(e[1] for e in extrema))
            capped_this_epoch = any(e == epoch for e, _ in log.gamma_cap_events)
            if not verify_lmi(cert, spec.J) and not capped_this_epoch:
                raise CertificateError(f"certificate failed verification after epoch {epoch}")
        for row in epoch_rows:
            row.train_acc = train_acc
            row.bsm_max, row.bsm_min = bsm_max, bsm_min
        log.rows.extend(epoch_rows)

    return log
