"""Training protocol: random 64/16/20 splits, repeated rounds, batch MSE training.

Each cross-validation round re-draws the split (Monte-Carlo
cross-validation) and trains a freshly initialised network on it.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .autodiff import AdamState, NumericalError, adam_step, backward, mse_loss, no_grad, zero_grads
from .metrics import five_number_summary, soft_dice
from .seeding import derive_seed
from .unet import UNetConfig, build_unet, forward

__all__ = [
    "SplitSpec",
    "TrainConfig",
    "FoldResult",
    "CrossValReport",
    "TrainingError",
    "split_dataset",
    "train_fold",
    "cross_validate",
    "predict",
]

log = logging.getLogger(__name__)

TRAIN_FRACTION = 0.64
VAL_FRACTION = 0.16


class TrainingError(RuntimeError):
    pass


def _round_half_up(x):
    return int(np.floor(x + 0.5))


@dataclass
class SplitSpec:
    train_idx: list
    val_idx: list
    test_idx: list
    seed: int


def split_dataset(n: int, seed: int) -> SplitSpec:
    """Seeded shuffle of ``range(n)`` sliced 64% / 16% / rest."""
    if n < 10:
        raise ValueError(f"need at least 10 samples to split, got {n}")
    perm = np.random.default_rng(seed).permutation(n)
    n_train = _round_half_up(TRAIN_FRACTION * n)
    n_val = _round_half_up(VAL_FRACTION * n)
    return SplitSpec(
        train_idx=perm[:n_train].tolist(),
        val_idx=perm[n_train:n_train + n_val].tolist(),
        test_idx=perm[n_train + n_val:].tolist(),
        seed=seed,
    )


@dataclass
class TrainConfig:
    batch_size: int = 8
    max_epochs: int = 100
    early_stop_patience: int = 10
    lr: float = 1e-3
    seed: int = 0
    n_folds: int = 10

    def validate(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.n_folds < 1:
            raise ValueError("n_folds must be >= 1")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.early_stop_patience < 1:
            raise ValueError("early_stop_patience must be >= 1")
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        return self


@dataclass
class FoldResult:
    fold_index: int
    train_loss_curve: list
    val_loss_curve: list
    best_epoch: int
    test_dsc_per_sample: list
    test_mse: float
    val_mse: float
    initial_train_mse: float
    test_idx: list
    norm_min: float
    norm_max: float
    # kept in memory for difference images, not serialised
    test_predictions: np.ndarray | None = field(default=None, repr=False)
    test_targets: np.ndarray | None = field(default=None, repr=False)

    def to_dict(self):
        return {
            "fold_index": self.fold_index,
            "train_loss_curve": list(self.train_loss_curve),
            "val_loss_curve": list(self.val_loss_curve),
            "best_epoch": self.best_epoch,
            "test_dsc_per_sample": list(self.test_dsc_per_sample),
            "test_mse": self.test_mse,
            "val_mse": self.val_mse,
            "initial_train_mse": self.initial_train_mse,
            "test_idx": list(self.test_idx),
            "norm_min": self.norm_min,
            "norm_max": self.norm_max,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class CrossValReport:
    architecture: str
    fold_results: list
    mean_val_mse: float
    dsc_summary: list

    @classmethod
    def from_folds(cls, architecture, folds):
        return cls(
            architecture=architecture,
            fold_results=folds,
            mean_val_mse=float(np.mean([f.val_mse for f in folds])),
            dsc_summary=[
                {"fold": f.fold_index, **five_number_summary(f.test_dsc_per_sample)} for f in folds
            ],
        )

    @property
    def all_test_dsc(self):
        return [d for f in self.fold_results for d in f.test_dsc_per_sample]

    @property
    def median_test_dsc(self):
        return float(np.median(self.all_test_dsc))

    @property
    def fold_median_iqr(self):
        """Interquartile range of the per-fold median DSC (lower = more stable)."""
        med = [s["median"] for s in self.dsc_summary]
        q1, q3 = np.percentile(med, [25, 75])
        return float(q3 - q1)

    def to_dict(self):
        return {
            "architecture": self.architecture,
            "mean_val_mse": self.mean_val_mse,
            "median_test_dsc": self.median_test_dsc,
            "fold_median_dsc_iqr": self.fold_median_iqr,
            "dsc_summary": self.dsc_summary,
            "fold_results": [f.to_dict() for f in self.fold_results],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            architecture=d["architecture"],
            fold_results=[FoldResult.from_dict(f) for f in d["fold_results"]],
            mean_val_mse=d["mean_val_mse"],
            dsc_summary=d["dsc_summary"],
        )


def architecture_name(config: UNetConfig):
    return "unet" if config.outer_skip else "unet_mod"


def predict(model, inputs, batch_size=8):
    """Forward pass in batches without recording gradients."""
    outs = []
    with no_grad():
        for start in range(0, len(inputs), batch_size):
            outs.append(forward(model, inputs[start:start + batch_size]).data)
    return np.concatenate(outs)


def _dataset_mse(model, inputs, targets, batch_size):
    pred = predict(model, inputs, batch_size)
    return float(np.mean(np.square(pred.astype(np.float64) - targets)))


def train_fold(model, split: SplitSpec, data, cfg: TrainConfig, fold_index=0) -> FoldResult:
    """Train ``model`` on one split with early stopping on validation MSE.

    Targets are min-max normalised with the training subset's velocity
    range. The parameters from the best validation epoch are restored
    before the held-out test samples are scored.
    """
    cfg.validate()
    for name in ("train_idx", "val_idx", "test_idx"):
        if not getattr(split, name):
            raise TrainingError(f"fold {fold_index}: {name} is empty")
    train_idx = np.asarray(split.train_idx)
    lo = float(data.models[train_idx].min())
    hi = float(data.models[train_idx].max())
    span = hi - lo if hi > lo else 1.0

    def norm(idx):
        return ((data.models[idx].astype(np.float64) - lo) / span).astype(np.float32)

    x_val, y_val = data.inputs[split.val_idx], norm(split.val_idx)
    rng = np.random.default_rng(cfg.seed)
    adam = AdamState(lr=cfg.lr)
    initial = _dataset_mse(model, data.inputs[train_idx], norm(train_idx), cfg.batch_size)

    train_curve, val_curve = [], []
    best_val, best_epoch, best_state = np.inf, -1, model.state()
    for epoch in range(cfg.max_epochs):
        order = rng.permutation(train_idx)
        total = 0.0
        for b, start in enumerate(range(0, len(order), cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            try:
                loss = mse_loss(forward(model, data.inputs[idx]), norm(idx))
                backward(loss)
            except NumericalError as exc:
                raise TrainingError(f"fold {fold_index}: {exc} at epoch {epoch}, batch {b}") from exc
            adam_step(model.parameters, adam)
            zero_grads(model.parameters)
            total += float(loss.data) * len(idx)
        train_curve.append(total / len(order))
        val = _dataset_mse(model, x_val, y_val, cfg.batch_size)
        if not np.isfinite(val):
            raise TrainingError(f"fold {fold_index}: non-finite validation loss at epoch {epoch}")
        val_curve.append(val)
        log.info("fold %d epoch %d train_mse %.6g val_mse %.6g", fold_index, epoch, train_curve[-1], val)
        if val < best_val:
            best_val, best_epoch, best_state = val, epoch, model.state()
        elif epoch - best_epoch >= cfg.early_stop_patience:
            break
    model.load_state(best_state)

    test_idx = np.asarray(split.test_idx)
    targets = norm(test_idx)
    preds = predict(model, data.inputs[test_idx], cfg.batch_size)
    dsc = [soft_dice(np.clip(p[0], 0, 1), np.clip(t[0], 0, 1)) for p, t in zip(preds, targets)]
    return FoldResult(
        fold_index=fold_index,
        train_loss_curve=train_curve,
        val_loss_curve=val_curve,
        best_epoch=best_epoch,
        test_dsc_per_sample=dsc,
        test_mse=float(np.mean(np.square(preds.astype(np.float64) - targets))),
        val_mse=float(best_val),
        initial_train_mse=initial,
        test_idx=test_idx.tolist(),
        norm_min=lo,
        norm_max=hi,
        test_predictions=preds,
        test_targets=targets,
    )


def cross_validate(arch: UNetConfig, data, cfg: TrainConfig, on_fold=None) -> CrossValReport:
    """``cfg.n_folds`` independent rounds, each with its own split and init.

    Round ``k`` uses ``derive_seed(cfg.seed, k)`` for the split, the weights
    and the batch order. ``on_fold(k, model, result)`` runs after each round.
    """
    cfg.validate()
    folds = []
    for k in range(cfg.n_folds):
        fold_seed = derive_seed(cfg.seed, k)
        split = split_dataset(len(data), fold_seed)
        model = build_unet(arch, fold_seed)
        fold_cfg = TrainConfig(**{**cfg.__dict__, "seed": fold_seed})
        try:
            result = train_fold(model, split, data, fold_cfg, fold_index=k)
        except TrainingError:
            raise
        except Exception as exc:
            raise TrainingError(f"fold {k}: {exc}") from exc
        log.info("fold %d done: best_epoch %d val_mse %.6g median_dsc %.4f",
                 k, result.best_epoch, result.val_mse, float(np.median(result.test_dsc_per_sample)))
        if on_fold is not None:
            on_fold(k, model, result)
        folds.append(result)
    return CrossValReport.from_folds(architecture_name(arch), folds)
