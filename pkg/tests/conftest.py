"""Shared fixtures: kernel-backend parametrization, synthetic data, and the
session-scoped pinned training run used by grad-cam, screening, and the
acceptance suite.

The pinned run (2,000 synthetic tiles, tiny preset, focal loss, 15 epochs)
is cached under the user cache dir keyed by its configuration; checkpoint
round-trips are bitwise, so a cache hit reproduces the fresh-run model
exactly. Delete ~/.cache/crackscreen-tests to force a retrain.
"""

import hashlib
import json
import os
from pathlib import Path

import numpy as np
import pytest

from crackscreen import kernels
from crackscreen.arch import build_model
from crackscreen.checkpoint import load_checkpoint, save_checkpoint
from crackscreen.data import MemorySource, SyntheticSpec, generate_synthetic, split_samples
from crackscreen.losses import LossConfig
from crackscreen.metrics import metrics_from_confusion
from crackscreen.train import TrainConfig, evaluate, model_rng, train

PINNED = {
    "n_images": 2000,
    "data_seed": 42,
    "split_seed": 0,
    "train_seed": 0,
    "epochs": 15,
    "batch_size": 64,
    "warmup_epochs": 3,
    "loss": "focal",
    "arch": "tiny",
}


def cache_dir():
    root = Path(os.environ.get("XDG_CACHE_HOME", Path.home() / ".cache"))
    return root / "crackscreen-tests"


@pytest.fixture(params=kernels.available_backends())
def kernel_backend(request):
    """Run a test under each available kernel backend."""
    prev = kernels.set_backend(request.param)
    yield request.param
    kernels.set_backend(prev)


@pytest.fixture(scope="session")
def synth_samples():
    """Small fixed synthetic set for cheap module tests."""
    return generate_synthetic(SyntheticSpec(), 400, seed=11)


@pytest.fixture(scope="session")
def pinned_run():
    """The desk-scale reference run: data, splits, trained model, history.

    Trains once per cache key; everything downstream (grad-cam
    concentration, screening end-to-end, the desk-scale acceptance
    criterion) reuses this run.
    """
    p = PINNED
    samples = generate_synthetic(SyntheticSpec(), p["n_images"], seed=p["data_seed"])
    tr, va, te = split_samples(samples, seed=p["split_seed"])
    sources = {"train": MemorySource(tr), "val": MemorySource(va),
               "test": MemorySource(te)}
    key = hashlib.sha256(json.dumps(p, sort_keys=True).encode()).hexdigest()[:16]
    cdir = cache_dir() / f"pinned-{key}"
    ckpt_path = cdir / "best.ckpt"
    meta_path = cdir / "run.json"
    if ckpt_path.exists() and meta_path.exists():
        model = load_checkpoint(ckpt_path).model
        meta = json.loads(meta_path.read_text())
    else:
        cfg = TrainConfig(epochs=p["epochs"], batch_size=p["batch_size"],
                          warmup_epochs=p["warmup_epochs"],
                          loss=LossConfig(kind=p["loss"]), augment=None,
                          seed=p["train_seed"])
        model = build_model(p["arch"], rng=model_rng(p["train_seed"]))
        result = train(model, sources["train"], sources["val"], cfg)
        cm, _, _ = evaluate(model, sources["test"], 128)
        meta = {"history": result.history, "best_epoch": result.best_epoch,
                "best_val_f1": result.best_val_f1,
                "train_time_s": result.train_time_s,
                "test_metrics": metrics_from_confusion(cm).to_dict()}
        cdir.mkdir(parents=True, exist_ok=True)
        save_checkpoint(ckpt_path, model, epoch=result.best_epoch,
                        metrics=meta["test_metrics"], seed=p["train_seed"])
        meta_path.write_text(json.dumps(meta))
    return {"model": model, "meta": meta, "sources": sources,
            "samples": {"train": tr, "val": va, "test": te}, "params": p}
