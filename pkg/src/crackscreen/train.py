"""Training loop: AdamW, warmup+cosine schedule, per-epoch validation with
best-by-F1 checkpointing, and fully keyed randomness.

Every random decision is a pure function of (seed, stream, epoch, index):
model init, epoch shuffles, per-sample augmentation, dropout masks. Runs
are therefore bit-reproducible for a fixed config, including across
--workers settings, since workers only parallelize per-sample transforms.
"""

import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .augment import DegradationSpec, apply_pipeline, preprocess, sample_rng
from .checkpoint import save_checkpoint
from .losses import LossConfig, make_loss, validate_imbalance_config, weighted_sampler_indices
from .metrics import ConfusionMatrix, metrics_from_confusion
from .tensor import Tensor

__all__ = ["TrainConfig", "AdamW", "lr_schedule", "train", "evaluate",
           "TrainResult", "TrainingDivergedError", "model_rng"]

# substream ids for SeedSequence keys
_STREAM_INIT = 0
_STREAM_SHUFFLE = 1
_STREAM_AUGMENT = 2
_STREAM_DROPOUT = 3


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 40
    batch_size: int = 64
    lr_max: float = 1e-3
    weight_decay: float = 1e-4
    warmup_epochs: int = 3
    loss: LossConfig = field(default_factory=LossConfig)
    augment: DegradationSpec | None = None
    sampler: str = "uniform"          # uniform | weighted
    seed: int = 0
    workers: int = 0

    def validate(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if not 0 <= self.warmup_epochs < self.epochs:
            raise ValueError(f"warmup_epochs {self.warmup_epochs} must be "
                             f"less than epochs {self.epochs}")
        self.loss.validate()
        validate_imbalance_config(self.loss.kind, self.sampler)
        if self.augment is not None:
            self.augment.validate()
        return self

    def to_dict(self):
        return {"epochs": self.epochs, "batch_size": self.batch_size,
                "lr_max": self.lr_max, "weight_decay": self.weight_decay,
                "warmup_epochs": self.warmup_epochs, "loss": self.loss.to_dict(),
                "augment": self.augment.to_dict() if self.augment else None,
                "sampler": self.sampler, "seed": self.seed, "workers": self.workers}

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["loss"] = LossConfig.from_dict(d.get("loss", {}))
        aug = d.get("augment")
        d["augment"] = DegradationSpec.from_dict(aug) if aug else None
        return cls(**d).validate()


def model_rng(seed):
    """The rng used to initialize model weights for a training seed."""
    return np.random.default_rng(np.random.SeedSequence((int(seed), _STREAM_INIT)))


class AdamW:
    """Decoupled-weight-decay Adam; beta1=0.9, beta2=0.999, eps=1e-8."""

    def __init__(self, named_params, weight_decay=0.0, beta1=0.9, beta2=0.999, eps=1e-8):
        self.named_params = list(named_params)
        self.weight_decay = weight_decay
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {name: np.zeros_like(t.data) for name, t in self.named_params}
        self.v = {name: np.zeros_like(t.data) for name, t in self.named_params}

    def step(self, lr):
        """m,v moment update, bias correction, decoupled decay; grads required."""
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for name, p in self.named_params:
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            elif not np.isfinite(g).all():
                raise TrainingDivergedError(f"non-finite gradient in {name}")
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            mhat = m / bc1
            vhat = v / bc2
            p.data = p.data - lr * mhat / (np.sqrt(vhat) + self.eps) \
                - lr * self.weight_decay * p.data

    def state_arrays(self):
        out = {"t": self.t}
        for name, _ in self.named_params:
            out[f"m.{name}"] = self.m[name]
            out[f"v.{name}"] = self.v[name]
        return out

    def load_state_arrays(self, state):
        self.t = int(state["t"])
        for name, _ in self.named_params:
            self.m[name] = state[f"m.{name}"].astype(self.m[name].dtype)
            self.v[name] = state[f"v.{name}"].astype(self.v[name].dtype)


def lr_schedule(step, total_steps, warmup_steps, lr_max):
    """Linear warmup to lr_max, then cosine decay to 0 over remaining steps."""
    if step < warmup_steps:
        return lr_max * (step + 1) / warmup_steps
    remaining = max(1, total_steps - warmup_steps)
    progress = (step - warmup_steps) / remaining
    return lr_max * 0.5 * (1.0 + math.cos(math.pi * progress))


@dataclass
class TrainResult:
    history: list
    best_epoch: int
    best_val_f1: float
    train_time_s: float
    best_checkpoint: str | None = None
    last_checkpoint: str | None = None


def _prepare_eval(src, i, input_hw):
    return preprocess(src.image(i), input_hw)


def evaluate(model, src, batch_size=64, loss_fn=None, degrade=None, seed=0):
    """Eval-mode metrics over an image source (preprocess only by default).

    `degrade` optionally applies a degradation spec with per-sample streams,
    for robustness evaluation on a synthetically degraded test set.
    """
    input_hw = model.config.input_hw
    labels = src.labels()
    n = len(src)
    preds = np.empty(n, dtype=np.int64)
    scores = np.empty(n, dtype=np.float64)
    total_loss = 0.0
    for lo in range(0, n, batch_size):
        idxs = range(lo, min(lo + batch_size, n))
        imgs = []
        for i in idxs:
            img = src.image(i)
            if degrade is not None:
                img = apply_pipeline(img, degrade, sample_rng(seed, i))
            imgs.append(preprocess(img, input_hw))
        x = Tensor(np.stack(imgs))
        logits = model.forward(x, training=False)
        if loss_fn is not None:
            total_loss += loss_fn(logits, labels[list(idxs)]).item() * len(imgs)
        z = logits.data
        ez = np.exp(z - z.max(axis=1, keepdims=True))
        probs = ez / ez.sum(axis=1, keepdims=True)
        preds[list(idxs)] = np.argmax(z, axis=1)
        scores[list(idxs)] = probs[:, 1]
    cm = ConfusionMatrix.from_predictions(labels == 1, preds == 1)
    mean_loss = total_loss / n if loss_fn is not None else None
    return cm, mean_loss, scores


def train(model, train_src, val_src, config: TrainConfig, out_dir=None):
    """Run the full loop; returns history and restores the best-F1 weights.

    Per epoch: sample order (shuffled or weighted draw), augment train
    samples only, forward/loss/backward/step with the per-step schedule,
    then validate and track the best F1 (ties keep the earlier epoch).
    """
    config.validate()
    if len(train_src) == 0 or len(val_src) == 0:
        raise ValueError("train and val sources must be non-empty")
    labels = train_src.labels()
    if len(np.unique(labels)) < 2:
        raise ValueError("training split contains a single class")
    input_hw = model.config.input_hw
    loss_fn = make_loss(config.loss, train_labels=labels)
    opt = AdamW(model.params(), weight_decay=config.weight_decay)
    n = len(train_src)
    steps_per_epoch = math.ceil(n / config.batch_size)
    total_steps = config.epochs * steps_per_epoch
    warmup_steps = config.warmup_epochs * steps_per_epoch
    out_dir = Path(out_dir) if out_dir else None
    history_fh = None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
        history_fh = open(out_dir / "history.jsonl", "w")

    def prepare_train(epoch, idx):
        img = train_src.image(idx)
        if config.augment is not None and config.augment.entries:
            img = apply_pipeline(img, config.augment,
                                 sample_rng(config.seed, epoch * n + idx))
        return preprocess(img, input_hw)

    pool = ThreadPoolExecutor(config.workers) if config.workers > 0 else None
    history = []
    best_f1, best_epoch, best_state = -1.0, -1, None
    t_start = time.perf_counter()
    try:
        step = 0
        for epoch in range(config.epochs):
            erng = np.random.default_rng(
                np.random.SeedSequence((config.seed, _STREAM_SHUFFLE, epoch)))
            if config.sampler == "weighted":
                order = weighted_sampler_indices(labels, n, erng)
            else:
                order = erng.permutation(n)
            epoch_loss = 0.0
            lr = 0.0
            for lo in range(0, n, config.batch_size):
                idxs = order[lo:lo + config.batch_size]
                if pool is not None:
                    imgs = list(pool.map(lambda i: prepare_train(epoch, int(i)), idxs))
                else:
                    imgs = [prepare_train(epoch, int(i)) for i in idxs]
                x = Tensor(np.stack(imgs))
                drng = np.random.default_rng(
                    np.random.SeedSequence((config.seed, _STREAM_DROPOUT, epoch, lo)))
                logits = model.forward(x, training=True, rng=drng)
                loss = loss_fn(logits, labels[idxs])
                lval = loss.item()
                if not np.isfinite(lval):
                    raise TrainingDivergedError(
                        f"loss became non-finite at epoch {epoch}, step {step}")
                epoch_loss += lval * len(idxs)
                model.zero_grad()
                loss.backward()
                lr = lr_schedule(step, total_steps, warmup_steps, config.lr_max)
                opt.step(lr)
                step += 1
            val_cm, val_loss, _ = evaluate(model, val_src,
                                           max(config.batch_size, 128), loss_fn)
            vm = metrics_from_confusion(val_cm)
            record = {
                "epoch": epoch,
                "train_loss": epoch_loss / n,
                "val_loss": val_loss,
                "val_accuracy": vm.accuracy,
                "val_precision": vm.precision,
                "val_recall": vm.recall,
                "val_f1": vm.f1,
                "lr": lr,
                "elapsed_s": round(time.perf_counter() - t_start, 3),
            }
            history.append(record)
            if history_fh:
                history_fh.write(json.dumps(record, sort_keys=True) + "\n")
                history_fh.flush()
            f1 = vm.f1 if vm.f1 is not None else 0.0
            if f1 > best_f1:
                best_f1, best_epoch = f1, epoch
                best_state = {name: arr.copy() for name, arr in model.state()}
                if out_dir:
                    save_checkpoint(out_dir / "best.ckpt", model, epoch=epoch,
                                    metrics=record, seed=config.seed)
    finally:
        if pool is not None:
            pool.shutdown()
        if history_fh:
            history_fh.close()
    elapsed = time.perf_counter() - t_start
    last_path = None
    if out_dir:
        last_path = str(save_checkpoint(
            out_dir / "last.ckpt", model, epoch=config.epochs - 1,
            metrics=history[-1], seed=config.seed,
            optimizer_state=opt.state_arrays()))
    if best_state is not None:
        model.load_state(best_state)
    return TrainResult(history, best_epoch, best_f1, elapsed,
                       str(out_dir / "best.ckpt") if out_dir else None, last_path)
