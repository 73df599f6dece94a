"""Inference benchmarking, including the fast-vs-numpy kernel comparison."""

import time
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .tensor import Tensor

__all__ = ["BenchResult", "bench_model", "bench_backends"]


@dataclass
class BenchResult:
    batch: int
    iters: int
    warmup: int
    latencies_ms: list = field(default_factory=list)
    backend: str = ""

    @property
    def median_ms(self):
        return float(np.median(self.latencies_ms))

    @property
    def p95_ms(self):
        return float(np.percentile(self.latencies_ms, 95))

    @property
    def throughput_ips(self):
        return self.batch * 1000.0 / self.median_ms

    def to_dict(self):
        return {"backend": self.backend, "batch": self.batch, "iters": self.iters,
                "warmup": self.warmup, "median_ms": round(self.median_ms, 3),
                "p95_ms": round(self.p95_ms, 3),
                "throughput_ips": round(self.throughput_ips, 1)}


def bench_model(model, batch=1, iters=50, warmup=5, seed=0):
    """Time eval-mode forward passes on a fixed random batch."""
    if iters < 10 or warmup < 1:
        raise ValueError("need iters >= 10 and warmup >= 1")
    hw = model.config.input_hw
    rng = np.random.default_rng(seed)
    x = Tensor(rng.standard_normal((batch, model.config.in_channels, hw, hw))
               .astype(np.float32))
    for _ in range(warmup):
        model.forward(x, training=False)
    lat = []
    for _ in range(iters):
        t0 = time.perf_counter()
        model.forward(x, training=False)
        lat.append((time.perf_counter() - t0) * 1000.0)
    return BenchResult(batch, iters, warmup, lat, backend=kernels.backend_name())


def bench_backends(model, batch=1, iters=20, warmup=3, seed=0):
    """Run the same forward benchmark under every available kernel backend."""
    results = {}
    prev = kernels.backend_name()
    try:
        for name in kernels.available_backends():
            kernels.set_backend(name)
            results[name] = bench_model(model, batch, iters, warmup, seed)
    finally:
        kernels.set_backend(prev)
    return results
