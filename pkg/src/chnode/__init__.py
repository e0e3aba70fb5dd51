"""Contractive Hamiltonian neural ODEs.

Forward-Euler layer stacks whose damping is retuned every training step so a
spectral contraction certificate keeps holding, with an LMI verifier,
backward-sensitivity monitoring, and noise-robustness evaluation. See the
``cli`` module for the experiment driver.
"""

from .contraction import (
    Certificate,
    DecayReport,
    build_certificate,
    compute_bounds,
    empirical_contraction,
    gamma_min,
    make_certificate,
    update_certificate,
    verify_lmi,
)
from .data import (
    CorruptionSpec,
    Dataset,
    corrupt,
    load_mnist_idx,
    make_blobs_2d,
    make_double_circles,
    make_synthetic_digits,
    robustness_radius,
)
from .linalg import (
    SymEigBounds,
    canonical_skew,
    is_negative_semidefinite,
    spectral_norm,
    sym_eig_bounds,
)
from .model import (
    TANH,
    Activation,
    LayerParams,
    ModelSpec,
    Trajectory,
    forward,
    forward_layer,
    hamiltonian_gradient,
    hamiltonian_hessian,
    hamiltonian_value,
    init_model,
    layer_jacobian,
    load_checkpoint,
    save_checkpoint,
)
from .training import (
    BsmProfile,
    GradientSet,
    MomentumState,
    TrainConfig,
    TrainingLog,
    backprop,
    bsm,
    bsm_profile,
    cross_entropy,
    evaluate_accuracy,
    fit,
    sgd_step,
)

__version__ = "0.1.0"
