"""Experiment driver: train / eval / certify / robustness / contraction / bsm.

Configuration comes from a single JSON document; command-line flags override
config fields. Every run writes its resolved configuration next to its
outputs. Exit codes: 0 success, 1 usage or config error, 2 IO error,
3 numerical failure.
"""

import argparse
import json
import os
import sys
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import report
from .contraction import (
    admissible_epsilon,
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
    write_idx_images,
    write_idx_labels,
)
from .errors import (
    CertificateError,
    EpsilonError,
    IdxFormatError,
    NotFiniteError,
    TrainingDivergedError,
)
from .model import init_model, load_checkpoint, save_checkpoint
from .training import TrainConfig, bsm_profile, evaluate_accuracy, fit

TASKS = ("blobs2d", "double_circles", "mnist")

DEFAULT_CORRUPTIONS = [
    {"kind": "gaussian", "sigma": 0.05},
    {"kind": "gaussian", "sigma": 0.2},
    {"kind": "salt_pepper", "sigma": 0.05},
    {"kind": "salt_pepper", "sigma": 0.2},
]


@dataclass
class ExperimentConfig:
    task: str = "blobs2d"
    arch: str = "chnode"
    n: int = 2
    N: int = 16
    h: float = 0.1
    kappa: float = 0.5
    epsilon_user: float = 1e-9
    learning_rate: float = 0.05
    momentum: float = 0.9
    epochs: int = 600
    batch_size: int = 6
    seed: int = 0
    out_dir: str = "runs/blobs2d"
    train_l: bool = False
    lift: str = "auto"
    k_scale: float = 1.0
    b_scale: float = 0.0
    n_train: int = 1000
    n_test: int = 1000
    train_images: Optional[str] = None
    train_labels: Optional[str] = None
    test_images: Optional[str] = None
    test_labels: Optional[str] = None
    train_size: int = 5000
    test_size: int = 1000
    full_set: bool = False
    corruptions: list = field(default_factory=lambda: [dict(c) for c in DEFAULT_CORRUPTIONS])
    eval_repeats: int = 10
    n_directions: int = 64
    r_max: float = 2.0
    radius_tol: float = 1e-3
    figures: bool = True


# Per-task hyperparameters reproducing the reference experiments at desk scale.
# Salt-and-pepper noise only makes sense for [0, 1] image features, so the 2D
# tasks default to Gaussian corruption alone.
TASK_DEFAULTS = {
    "blobs2d": dict(
        n=2, N=16, h=0.1, kappa=0.5, learning_rate=0.05, epochs=600, batch_size=6,
        out_dir="runs/blobs2d",
        corruptions=[{"kind": "gaussian", "sigma": 0.01}],
    ),
    "double_circles": dict(
        n=4, N=16, h=6.25e-4, kappa=0.04, learning_rate=1.0, momentum=0.8, epochs=60,
        batch_size=128, n_train=1000, n_test=1000, k_scale=3.0, b_scale=0.5,
        out_dir="runs/double_circles",
        corruptions=[{"kind": "gaussian", "sigma": 0.01}],
    ),
    "mnist": dict(
        n=32, N=4, h=0.1, kappa=4e-4, learning_rate=0.1, epochs=12, batch_size=100,
        out_dir="runs/mnist",
    ),
}


def make_config(file_path: Optional[str] = None, **overrides) -> ExperimentConfig:
    """Defaults for the task, overlaid with the config file, then flags."""
    file_doc = {}
    if file_path:
        with open(file_path, "r", encoding="utf-8") as f:
            file_doc = json.load(f)
        if not isinstance(file_doc, dict):
            raise ValueError("config file must hold a JSON object")
    known = set(ExperimentConfig.__dataclass_fields__)
    unknown = set(file_doc) - known
    if unknown:
        raise ValueError(f"unknown config fields: {sorted(unknown)}")
    task = overrides.get("task") or file_doc.get("task") or "blobs2d"
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}, expected one of {TASKS}")
    merged = {"task": task, **TASK_DEFAULTS[task]}
    merged.update(file_doc)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    cfg = ExperimentConfig(**merged)
    if cfg.arch not in ("resnet", "hdnn", "chnode"):
        raise ValueError(f"unknown arch {cfg.arch!r}")
    return cfg


def build_datasets(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    """(train, test) datasets for the configured task."""
    if cfg.task == "blobs2d":
        ds = make_blobs_2d()
        return ds, ds
    if cfg.task == "double_circles":
        return make_double_circles(cfg.n_train, cfg.n_test, seed=cfg.seed)
    if cfg.train_images and cfg.train_labels and cfg.test_images and cfg.test_labels:
        train = load_mnist_idx(cfg.train_images, cfg.train_labels)
        test = load_mnist_idx(cfg.test_images, cfg.test_labels)
        if not cfg.full_set:
            train = train.subset(cfg.train_size)
            test = test.subset(cfg.test_size)
        return train, test
    # No IDX paths configured: fall back to the procedural digit set.
    train = make_synthetic_digits(cfg.train_size, seed=cfg.seed)
    test = make_synthetic_digits(cfg.test_size, seed=cfg.seed + 1)
    return train, test


def _write_resolved_config(cfg: ExperimentConfig, out_dir: str) -> None:
    with open(os.path.join(out_dir, "resolved_config.json"), "w", encoding="utf-8") as f:
        json.dump(asdict(cfg), f, indent=1)
        f.write("\n")


def _certificate_report(spec, epsilon_user: float) -> dict:
    """Certificate fields at the checkpoint's own damping plus the verdict."""
    c1, c2 = compute_bounds(spec)
    alpha = (c2 - c1) / (c2 + c1)
    from .linalg import spectral_norm

    lambda_j = spectral_norm(spec.J) ** 2
    epsilon = admissible_epsilon(alpha, epsilon_user)
    needed = gamma_min(alpha, epsilon, lambda_j)
    if spec.gamma > 0:
        cert = make_certificate(c1, c2, epsilon, spec.gamma, lambda_j)
        verified = verify_lmi(cert, spec.J)
        doc = cert.as_dict()
    else:
        verified = False
        doc = {"c1": c1, "c2": c2, "alpha": alpha, "epsilon": epsilon, "gamma": spec.gamma,
               "lambda_j": lambda_j}
    doc["gamma_min"] = needed
    doc["lmi_verified"] = bool(verified)
    doc["lmi_tol"] = 1e-8
    return doc


def cmd_train(cfg: ExperimentConfig) -> int:
    os.makedirs(cfg.out_dir, exist_ok=True)
    _write_resolved_config(cfg, cfg.out_dir)
    train_ds, test_ds = build_datasets(cfg)
    spec = init_model(
        arch=cfg.arch,
        m=train_ds.num_features,
        n=cfg.n,
        classes=train_ds.num_classes,
        N=cfg.N,
        h=cfg.h,
        kappa=cfg.kappa,
        seed=cfg.seed,
        train_l=cfg.train_l,
        lift=cfg.lift,
        k_scale=cfg.k_scale,
        b_scale=cfg.b_scale,
    )
    tc = TrainConfig(
        learning_rate=cfg.learning_rate,
        epochs=cfg.epochs,
        batch_size=cfg.batch_size,
        seed=cfg.seed,
        momentum=cfg.momentum,
        epsilon_user=cfg.epsilon_user,
    )
    log = fit(spec, train_ds, tc)
    log.write_csv(os.path.join(cfg.out_dir, "training_log.csv"))
    save_checkpoint(spec, os.path.join(cfg.out_dir, "checkpoint.json"))
    test_acc = evaluate_accuracy(spec, test_ds.features, test_ds.labels)
    train_acc = log.rows[-1].train_acc if log.rows else float("nan")
    print(f"train accuracy {train_acc:.4f}, test accuracy {test_acc:.4f}")
    if spec.arch == "chnode":
        doc = _certificate_report(spec, cfg.epsilon_user)
        with open(os.path.join(cfg.out_dir, "certificate.json"), "w", encoding="utf-8") as f:
            json.dump(doc, f, indent=1)
            f.write("\n")
        print(f"certificate verified: {doc['lmi_verified']} (gamma {spec.gamma:.6g})")
    if cfg.figures:
        report.training_figure(log, os.path.join(cfg.out_dir, "training.png"))
        if train_ds.num_features == 2:
            report.decision_regions_figure(
                spec, train_ds.features, train_ds.labels,
                os.path.join(cfg.out_dir, "decision_regions.png"),
            )
    if log.gamma_cap_events:
        print(f"warning: damping growth cap bound {len(log.gamma_cap_events)} times")
    return 0


def cmd_eval(cfg: ExperimentConfig, checkpoint: str, export_corrupted: bool = False) -> int:
    os.makedirs(cfg.out_dir, exist_ok=True)
    _write_resolved_config(cfg, cfg.out_dir)
    spec = load_checkpoint(checkpoint)
    _, test_ds = build_datasets(cfg)
    rows = []
    names, means, errs = [], [], []
    clean_acc = evaluate_accuracy(spec, test_ds.features, test_ds.labels)
    rows.append(["nominal", 0.0, 1, clean_acc, 0.0])
    names.append("nominal")
    means.append(clean_acc)
    errs.append(0.0)
    for ci, entry in enumerate(cfg.corruptions):
        kind, sigma = entry["kind"], float(entry["sigma"])
        accs = []
        for r in range(cfg.eval_repeats):
            cspec = CorruptionSpec(kind=kind, sigma=sigma, seed=cfg.seed + 7919 * ci + r)
            noisy = corrupt(test_ds, cspec)
            accs.append(evaluate_accuracy(spec, noisy.features, noisy.labels))
            if export_corrupted and r == 0:
                side = int(round(np.sqrt(test_ds.num_features)))
                if side * side == test_ds.num_features:
                    tag = f"{kind}_{sigma:g}"
                    write_idx_images(
                        os.path.join(cfg.out_dir, f"corrupted_{tag}-images-idx3-ubyte"),
                        noisy.features, side,
                    )
                    write_idx_labels(
                        os.path.join(cfg.out_dir, f"corrupted_{tag}-labels-idx1-ubyte"),
                        noisy.labels,
                    )
        accs = np.array(accs)
        stderr = float(accs.std(ddof=1) / np.sqrt(len(accs))) if len(accs) > 1 else 0.0
        rows.append([kind, sigma, len(accs), float(accs.mean()), stderr])
        names.append(f"{kind}({sigma:g})")
        means.append(float(accs.mean()))
        errs.append(stderr)
    out_csv = os.path.join(cfg.out_dir, "eval.csv")
    report.write_csv(out_csv, ["corruption", "sigma", "repeats", "mean_accuracy", "std_error"], rows)
    for row in rows:
        print(f"{row[0]:>12} sigma={row[1]:<6g} mean accuracy {row[3]:.4f} (stderr {row[4]:.4f})")
    if cfg.figures:
        report.accuracy_bars_figure(names, means, errs, os.path.join(cfg.out_dir, "eval.png"))
    return 0


def cmd_certify(cfg: ExperimentConfig, checkpoint: str) -> int:
    spec = load_checkpoint(checkpoint)
    if spec.arch != "chnode":
        print(f"checkpoint is a {spec.arch} model; only chnode carries a certificate",
              file=sys.stderr)
        return 1
    doc = _certificate_report(spec, cfg.epsilon_user)
    text = json.dumps(doc, indent=1)
    print(text)
    os.makedirs(cfg.out_dir, exist_ok=True)
    with open(os.path.join(cfg.out_dir, "certificate.json"), "w", encoding="utf-8") as f:
        f.write(text + "\n")
    return 0 if doc["lmi_verified"] else 3


def cmd_contraction(cfg: ExperimentConfig, checkpoint: str, xa, xb) -> int:
    spec = load_checkpoint(checkpoint)
    if spec.arch != "chnode":
        print("contraction reports apply to chnode checkpoints", file=sys.stderr)
        return 1
    decay = empirical_contraction(spec, np.asarray(xa, float), np.asarray(xb, float))
    os.makedirs(cfg.out_dir, exist_ok=True)
    out_csv = os.path.join(cfg.out_dir, "contraction.csv")
    rows = [[i, t, d] for i, (t, d) in enumerate(zip(decay.times, decay.distances))]
    report.write_csv(out_csv, ["step", "time", "distance"], rows)
    print(f"distance ratio {decay.ratio:.6f}, fitted slope {decay.slope:.6f}, "
          f"success {decay.success}")
    if cfg.figures:
        report.decay_figure(decay, os.path.join(cfg.out_dir, "contraction.png"))
    return 0


def cmd_bsm(cfg: ExperimentConfig, checkpoint: str, x) -> int:
    spec = load_checkpoint(checkpoint)
    if spec.arch != "chnode":
        print("sensitivity profiles apply to chnode checkpoints", file=sys.stderr)
        return 1
    c1, c2 = compute_bounds(spec)
    epsilon = admissible_epsilon((c2 - c1) / (c2 + c1), cfg.epsilon_user)
    cert = build_certificate(spec, epsilon=epsilon)
    profile = bsm_profile(spec, np.asarray(x, float), cert)
    os.makedirs(cfg.out_dir, exist_ok=True)
    rows = [
        [int(li), k, profile.norms[k], profile.rho_bound[k]]
        for k, li in enumerate(profile.layer_indices)
    ]
    report.write_csv(
        os.path.join(cfg.out_dir, "bsm.csv"), ["layer", "steps_back", "norm", "bound"], rows
    )
    print(f"norms in [{profile.norms.min():.4f}, {profile.norms.max():.4f}], "
          f"{len(profile.violations)} bound violations")
    if cfg.figures:
        report.bsm_figure(profile, os.path.join(cfg.out_dir, "bsm.png"))
    return 0


def cmd_robustness(cfg: ExperimentConfig, checkpoints: list) -> int:
    _, test_ds = build_datasets(cfg)
    ds = make_blobs_2d() if cfg.task == "blobs2d" else test_ds
    rows = []
    for path in checkpoints:
        spec = load_checkpoint(path)
        radius = robustness_radius(
            spec, ds, n_directions=cfg.n_directions, r_max=cfg.r_max,
            tol=cfg.radius_tol, seed=cfg.seed,
        )
        rows.append([path, radius])
        print(f"{path}: radius {radius:.4f}")
    os.makedirs(cfg.out_dir, exist_ok=True)
    report.write_csv(os.path.join(cfg.out_dir, "robustness.csv"), ["checkpoint", "radius"], rows)
    if len(rows) == 2 and rows[1][1] > 0:
        print(f"radius ratio {rows[0][1] / rows[1][1]:.3f}")
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _vector(text: str) -> list:
    return [float(tok) for tok in text.split(",") if tok.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="chnode", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--task", choices=TASKS)
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory")
        p.add_argument("--no-figures", action="store_true", help="skip PNG rendering")

    p_train = sub.add_parser("train", help="train a model and write its checkpoint")
    common(p_train)
    p_train.add_argument("--arch", choices=("resnet", "hdnn", "chnode"))
    p_train.add_argument("--epochs", type=int)

    p_eval = sub.add_parser("eval", help="accuracy under the configured corruptions")
    common(p_eval)
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--repeats", type=int)
    p_eval.add_argument("--export-corrupted", action="store_true",
                        help="write the first corrupted copy as IDX files")

    p_cert = sub.add_parser("certify", help="certificate report and LMI verdict")
    common(p_cert)
    p_cert.add_argument("--checkpoint", required=True)
    p_cert.add_argument("--epsilon", type=float, help="requested contraction rate")

    p_contr = sub.add_parser("contraction", help="trajectory distance decay between two inputs")
    common(p_contr)
    p_contr.add_argument("--checkpoint", required=True)
    p_contr.add_argument("--xa", required=True, type=_vector, help="comma-separated input")
    p_contr.add_argument("--xb", required=True, type=_vector, help="comma-separated input")

    p_bsm = sub.add_parser("bsm", help="backward sensitivity norms against the rate bound")
    common(p_bsm)
    p_bsm.add_argument("--checkpoint", required=True)
    p_bsm.add_argument("--x", required=True, type=_vector, help="comma-separated input")

    p_rob = sub.add_parser("robustness", help="sampled perturbation radius per checkpoint")
    common(p_rob)
    p_rob.add_argument("--checkpoint", required=True, nargs="+")
    p_rob.add_argument("--directions", type=int)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        overrides = dict(task=args.task, seed=args.seed, out_dir=args.out)
        if getattr(args, "arch", None):
            overrides["arch"] = args.arch
        if getattr(args, "epochs", None) is not None:
            overrides["epochs"] = args.epochs
        if getattr(args, "repeats", None) is not None:
            overrides["eval_repeats"] = args.repeats
        if getattr(args, "epsilon", None) is not None:
            overrides["epsilon_user"] = args.epsilon
        if getattr(args, "directions", None) is not None:
            overrides["n_directions"] = args.directions
        if args.no_figures:
            overrides["figures"] = False
        cfg = make_config(args.config, **overrides)

        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "eval":
            return cmd_eval(cfg, args.checkpoint, export_corrupted=args.export_corrupted)
        if args.command == "certify":
            return cmd_certify(cfg, args.checkpoint)
        if args.command == "contraction":
            return cmd_contraction(cfg, args.checkpoint, args.xa, args.xb)
        if args.command == "bsm":
            return cmd_bsm(cfg, args.checkpoint, args.x)
        if args.command == "robustness":
            return cmd_robustness(cfg, args.checkpoint)
        parser.error(f"unknown command {args.command!r}")
    except IdxFormatError as e:
        print(f"io error: {e}", file=sys.stderr)
        return 2
    except (TrainingDivergedError, CertificateError, NotFiniteError, EpsilonError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 3
    except OSError as e:
        print(f"io error: {e}", file=sys.stderr)
        return 2
    except (ValueError, KeyError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except RuntimeError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
