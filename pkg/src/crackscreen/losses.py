"""Classification losses and imbalance treatments.

Four strategies for the crack/non-crack imbalance: plain cross-entropy,
inverse-frequency weighted cross-entropy, focal loss (the default,
alpha=0.75 on the crack class, gamma=2.0), and a weighted sampler that
rebalances the draw instead of the loss. Focal loss and weighted sampling
are alternatives, never combined; validate_imbalance_config enforces that.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor, exp, log, tmax, tsum

__all__ = [
    "LossConfig", "log_softmax", "cross_entropy", "focal_loss",
    "weighted_cross_entropy", "inverse_frequency_weights",
    "weighted_sampler_indices", "make_loss", "validate_imbalance_config",
]

CRACK = 1  # minority / positive class index


@dataclass
class LossConfig:
    kind: str = "focal"              # ce | weighted_ce | focal
    alpha: float = 0.75              # focal: balance factor on the crack class
    gamma: float = 2.0               # focal: focusing exponent
    class_weights: list = field(default_factory=list)  # weighted_ce; empty = inv. freq.

    def validate(self):
        if self.kind not in ("ce", "weighted_ce", "focal"):
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if self.kind == "focal":
            if not 0.0 < self.alpha < 1.0:
                raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
            if self.gamma < 0.0:
                raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        if self.class_weights and any(w <= 0 for w in self.class_weights):
            raise ValueError("class weights must be positive")
        return self

    def to_dict(self):
        return {"kind": self.kind, "alpha": self.alpha, "gamma": self.gamma,
                "class_weights": list(self.class_weights)}

    @classmethod
    def from_dict(cls, d):
        return cls(**d).validate()


def _check_targets(logits, targets):
    targets = np.asarray(targets)
    K = logits.shape[1]
    if targets.ndim != 1 or targets.shape[0] != logits.shape[0]:
        raise ValueError(f"targets shape {targets.shape} does not match logits {logits.shape}")
    if targets.min() < 0 or targets.max() >= K:
        raise ValueError(f"targets must lie in [0, {K})")
    return targets.astype(np.int64)


def log_softmax(logits):
    """Row-wise log softmax, stabilized by max subtraction."""
    m = tmax(logits, axes=(1,), keepdims=True)
    z = logits - m
    return z - log(tsum(exp(z), axes=(1,), keepdims=True))


def _nll_per_sample(logits, targets):
    onehot = np.zeros(logits.shape, dtype=logits.dtype)
    onehot[np.arange(targets.shape[0]), targets] = 1
    return -tsum(log_softmax(logits) * Tensor(onehot), axes=(1,))


def cross_entropy(logits, targets):
    """Mean negative log likelihood of the true class."""
    targets = _check_targets(logits, targets)
    return _nll_per_sample(logits, targets).mean()


def focal_loss(logits, targets, alpha=0.75, gamma=2.0):
    """Mean of alpha_t * (1 - p_t)**gamma * (-log p_t) over the batch.

    Binary only: alpha weights the crack class, (1 - alpha) the other.
    p_t comes from log-space, so low-confidence samples cannot underflow.
    """
    if logits.shape[1] != 2:
        raise ValueError("focal loss is defined here for binary classification")
    targets = _check_targets(logits, targets)
    nll = _nll_per_sample(logits, targets)          # -log p_t
    alpha_t = np.where(targets == CRACK, alpha, 1.0 - alpha).astype(logits.dtype)
    if gamma == 0.0:
        return (Tensor(alpha_t) * nll).mean()
    pt = exp(-nll)
    modulator = (1.0 - pt) ** float(gamma)
    return (Tensor(alpha_t) * modulator * nll).mean()


def weighted_cross_entropy(logits, targets, class_weights):
    """Weighted NLL, normalized by the sum of sample weights."""
    targets = _check_targets(logits, targets)
    class_weights = np.asarray(class_weights, dtype=logits.dtype)
    if np.any(class_weights <= 0):
        raise ValueError("class weights must be positive")
    w = Tensor(class_weights[targets])
    nll = _nll_per_sample(logits, targets)
    return tsum(w * nll) / float(class_weights[targets].sum())


def inverse_frequency_weights(labels, num_classes=2):
    """w_c = N / (K * N_c) from a label array or per-class counts."""
    labels = np.asarray(labels)
    if labels.ndim == 1 and labels.size > num_classes:
        counts = np.bincount(labels, minlength=num_classes)
    else:
        counts = labels.astype(np.int64)
    if np.any(counts == 0):
        raise ValueError(f"cannot weight a class with zero samples (counts {counts.tolist()})")
    n = counts.sum()
    return n / (num_classes * counts.astype(np.float64))


def weighted_sampler_indices(labels, n_draws, rng):
    """i.i.d. draws with replacement, P(i) proportional to 1/count(label_i)."""
    if n_draws < 1:
        raise ValueError("n_draws must be >= 1")
    labels = np.asarray(labels)
    counts = np.bincount(labels)
    present = counts[counts > 0]
    if present.size == 1:
        warnings.warn("single-class label set: weighted sampling degenerates to uniform")
        return rng.integers(0, labels.size, size=n_draws)
    p = 1.0 / counts[labels]
    p /= p.sum()
    return rng.choice(labels.size, size=n_draws, replace=True, p=p)


def validate_imbalance_config(loss_kind, sampler):
    """Focal loss and weighted sampling are alternative treatments, not a stack."""
    if sampler not in ("uniform", "weighted"):
        raise ValueError(f"unknown sampler {sampler!r}")
    if sampler == "weighted" and loss_kind == "focal":
        raise ValueError("weighted sampling and focal loss are mutually exclusive; "
                         "enable one imbalance treatment at a time")


def make_loss(config: LossConfig, train_labels=None):
    """Bind a LossConfig to a (logits, targets) -> scalar Tensor callable."""
    config.validate()
    if config.kind == "ce":
        return cross_entropy
    if config.kind == "focal":
        return lambda logits, targets: focal_loss(logits, targets, config.alpha, config.gamma)
    if config.class_weights:
        weights = np.asarray(config.class_weights, dtype=np.float64)
    else:
        if train_labels is None:
            raise ValueError("weighted_ce without explicit class_weights needs train labels")
        weights = inverse_frequency_weights(train_labels)
    return lambda logits, targets: weighted_cross_entropy(logits, targets, weights)
