"""Dataset catalog, deterministic stratified splitting/folding, and the
synthetic crack-image generator used for desk-scale experiments.

Directory layout mirrors the concrete-deck corpus: <root>/CD/ holds cracked
tiles, <root>/UD/ uncracked ones. Synthetic datasets are written in the
same layout plus a masks/ mirror holding per-crack-image pixel masks.
"""

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .imgio import IMAGE_EXTENSIONS, load_image, save_image

__all__ = [
    "LABEL_NAMES", "CRACK", "NON_CRACK", "DatasetIndex", "SplitSpec",
    "SyntheticSpec", "scan_dataset", "stratified_split", "stratified_kfold",
    "save_split", "load_split", "generate_synthetic", "write_synthetic_dataset",
    "threshold_baseline_accuracy",
]

CRACK = 1
NON_CRACK = 0
LABEL_NAMES = {CRACK: "crack", NON_CRACK: "non_crack"}
CLASS_DIRS = {"CD": CRACK, "UD": NON_CRACK}


class DatasetLayoutError(ValueError):
    pass


@dataclass
class DatasetIndex:
    root: str
    entries: list                    # [(relative path, label)], sorted by path
    skipped: int = 0                 # non-image or unreadable files

    @property
    def counts(self):
        crack = sum(1 for _, y in self.entries if y == CRACK)
        return crack, len(self.entries) - crack

    def labels(self):
        return np.array([y for _, y in self.entries], dtype=np.int64)

    def paths(self):
        return [p for p, _ in self.entries]

    def load(self, relpath):
        return load_image(Path(self.root) / relpath)


def scan_dataset(root, verify=False):
    """Catalog <root>/CD and <root>/UD into a sorted, deterministic index.

    verify=True opens each file header and skips undecodable images.
    """
    root = Path(root)
    entries = []
    skipped = 0
    for sub, label in sorted(CLASS_DIRS.items()):
        subdir = root / sub
        if not subdir.is_dir():
            raise DatasetLayoutError(f"missing class directory {subdir}")
        for p in sorted(subdir.iterdir()):
            if not p.is_file() or p.suffix.lower() not in IMAGE_EXTENSIONS:
                if p.is_file():
                    skipped += 1
                continue
            if verify:
                try:
                    load_image(p)
                except Exception:
                    skipped += 1
                    continue
            entries.append((f"{sub}/{p.name}", label))
    if skipped:
        warnings.warn(f"skipped {skipped} non-image or unreadable files under {root}")
    index = DatasetIndex(str(root), sorted(entries), skipped)
    crack, non = index.counts
    if crack == 0 or non == 0:
        warnings.warn(f"degenerate dataset: class counts crack={crack}, non_crack={non}")
    return index


@dataclass
class SplitSpec:
    fractions: tuple
    seed: int
    train: list = field(default_factory=list)   # relative paths
    val: list = field(default_factory=list)
    test: list = field(default_factory=list)

    def partitions(self):
        return {"train": self.train, "val": self.val, "test": self.test}

    def to_dict(self):
        return {"fractions": list(self.fractions), "seed": self.seed,
                "train": self.train, "val": self.val, "test": self.test}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["fractions"]), d["seed"], d["train"], d["val"], d["test"])


def _partition_sizes(n, fractions):
    """(train, val, test) class sizes: val rounds first, test gets the nearest
    share of the remainder, train takes what is left."""
    f_train, f_val, f_test = fractions
    n_val = int(np.floor(f_val * n + 0.5))
    rem = n - n_val
    n_test = int(np.floor(rem * f_test / (1.0 - f_val) + 0.5))
    n_train = rem - n_test
    if min(n_train, n_val, n_test) < 0:
        raise ValueError(f"fractions {fractions} infeasible for class of {n}")
    return n_train, n_val, n_test


def stratified_split(index, fractions=(0.70, 0.15, 0.15), seed=0):
    """Per-class shuffle + deterministic partition into train/val/test."""
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions {fractions} must sum to 1")
    by_class = {}
    for path, label in index.entries:
        by_class.setdefault(label, []).append(path)
    spec = SplitSpec(tuple(fractions), seed)
    for label in sorted(by_class):
        paths = by_class[label]
        if len(paths) < 3:
            raise ValueError(f"class {LABEL_NAMES[label]} has {len(paths)} samples; "
                             "need at least 3 to split")
        rng = np.random.default_rng(np.random.SeedSequence((int(seed), int(label))))
        order = rng.permutation(len(paths))
        shuffled = [paths[i] for i in order]
        n_train, n_val, n_test = _partition_sizes(len(paths), fractions)
        spec.train += shuffled[:n_train]
        spec.val += shuffled[n_train:n_train + n_val]
        spec.test += shuffled[n_train + n_val:]
    return spec


def stratified_kfold(index, k, seed=0):
    """Round-robin per-class folds; returns [(train_paths, val_paths)] * k."""
    if k < 2:
        raise ValueError("k must be >= 2")
    by_class = {}
    for path, label in index.entries:
        by_class.setdefault(label, []).append(path)
    shuffled = {}
    for label, paths in sorted(by_class.items()):
        if len(paths) < k:
            raise ValueError(f"class {LABEL_NAMES[label]} has {len(paths)} samples; "
                             f"cannot form {k} folds")
        rng = np.random.default_rng(np.random.SeedSequence((int(seed), int(label))))
        order = rng.permutation(len(paths))
        shuffled[label] = [paths[i] for i in order]
    folds = []
    for i in range(k):
        val, train = [], []
        for label in sorted(shuffled):
            paths = shuffled[label]
            for j, p in enumerate(paths):
                (val if j % k == i else train).append(p)
        folds.append((train, val))
    return folds


def save_split(spec, path):
    Path(path).write_text(json.dumps(spec.to_dict(), indent=1))


def load_split(path):
    return SplitSpec.from_dict(json.loads(Path(path).read_text()))


# -- synthetic data ------------------------------------------------------------------


@dataclass
class SyntheticSpec:
    """Textured gray tiles; crack tiles carry a dark random-walk polyline.

    Non-crack tiles get distractor stains instead, tuned so that plain
    intensity thresholding lands between 80 and 90 percent accuracy: the
    task must be learnable but not trivial.
    """
    size: int = 64
    crack_fraction: float = 1.0 / 6.7
    base_level: tuple = (0.52, 0.70)
    noise_sigma: float = 0.035
    blotch_count: tuple = (2, 5)
    blotch_amplitude: float = 0.07
    stain_count: tuple = (2, 5)
    stain_darkness: tuple = (0.30, 0.60)
    stain_sigma: tuple = (4.0, 14.0)
    crack_width: tuple = (1, 3)
    crack_darkness: tuple = (0.30, 0.60)
    seed: int = 0

    def to_dict(self):
        return {k: (list(v) if isinstance(v, tuple) else v)
                for k, v in self.__dict__.items()}


def _background(spec, rng):
    s = spec.size
    base = rng.uniform(*spec.base_level)
    img = np.full((s, s), base, dtype=np.float32)
    yy, xx = np.mgrid[0:s, 0:s].astype(np.float32) / s
    gx, gy = rng.uniform(-0.06, 0.06, size=2)
    img += gx * (xx - 0.5) + gy * (yy - 0.5)
    for _ in range(rng.integers(spec.blotch_count[0], spec.blotch_count[1] + 1)):
        cy, cx = rng.uniform(0, s, size=2)
        sig = rng.uniform(s * 0.1, s * 0.3)
        amp = rng.uniform(-spec.blotch_amplitude, spec.blotch_amplitude)
        img += amp * np.exp(-(((yy * s - cy) ** 2 + (xx * s - cx) ** 2) / (2 * sig * sig)))
    img += rng.normal(0.0, spec.noise_sigma, size=(s, s)).astype(np.float32)
    return np.clip(img, 0.0, 1.0)


def _add_stains(img, spec, rng):
    """Dark anisotropic smears: plateaued elliptical stains at arbitrary
    orientation, darkness overlapping the crack range so that raw pixel
    statistics cannot separate the classes cleanly."""
    s = spec.size
    yy, xx = np.mgrid[0:s, 0:s].astype(np.float32)
    for _ in range(rng.integers(spec.stain_count[0], spec.stain_count[1] + 1)):
        cy, cx = rng.uniform(0.1 * s, 0.9 * s, size=2)
        sig_u = rng.uniform(*spec.stain_sigma)
        sig_v = rng.uniform(0.6, 1.8)
        theta = rng.uniform(0.0, np.pi)
        dark = rng.uniform(*spec.stain_darkness)
        du = (xx - cx) * np.cos(theta) + (yy - cy) * np.sin(theta)
        dv = -(xx - cx) * np.sin(theta) + (yy - cy) * np.cos(theta)
        bump = np.exp(-(du * du / (2 * sig_u * sig_u) + dv * dv / (2 * sig_v * sig_v)))
        img *= 1.0 - dark * np.sqrt(bump, dtype=np.float32)
    return np.clip(img, 0.0, 1.0)


def _draw_crack(img, spec, rng):
    """Dark random-walk polyline of width 1-3 px; returns the pixel mask."""
    s = spec.size
    mask = np.zeros((s, s), dtype=bool)
    width = int(rng.integers(spec.crack_width[0], spec.crack_width[1] + 1))
    darkness = rng.uniform(*spec.crack_darkness)
    # start on a random border region so the walk crosses a good part of the tile
    x = rng.uniform(0.1 * s, 0.9 * s)
    y = rng.uniform(0.0, 0.15 * s)
    heading = rng.uniform(np.pi * 0.25, np.pi * 0.75)   # roughly downward
    n_steps = int(s * rng.uniform(0.9, 1.4))
    rr = max(0.5, width / 2.0)
    yy, xx = np.mgrid[0:s, 0:s].astype(np.float32)
    for _ in range(n_steps):
        heading += rng.normal(0.0, 0.25)
        heading = np.clip(heading, np.pi * 0.1, np.pi * 0.9)
        x += np.cos(heading)
        y += np.sin(heading)
        if not (0 <= x < s and 0 <= y < s):
            break
        lo_y, hi_y = int(max(0, y - rr - 1)), int(min(s, y + rr + 2))
        lo_x, hi_x = int(max(0, x - rr - 1)), int(min(s, x + rr + 2))
        d2 = (yy[lo_y:hi_y, lo_x:hi_x] - y) ** 2 + (xx[lo_y:hi_y, lo_x:hi_x] - x) ** 2
        mask[lo_y:hi_y, lo_x:hi_x] |= d2 <= rr * rr
    img[mask] *= np.float32(1.0 - darkness)
    return mask


def generate_sample(spec, rng, label):
    """One (uint8 HWC image, label, bool mask) sample from a private stream."""
    img = _background(spec, rng)
    img = _add_stains(img, spec, rng)
    mask = np.zeros((spec.size, spec.size), dtype=bool)
    if label == CRACK:
        mask = _draw_crack(img, spec, rng)
    img8 = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    return np.repeat(img8[..., None], 3, axis=2), label, mask


def generate_synthetic(spec, n, seed=None):
    """n samples with exact-count label allocation (crack tiles first).

    Labels are deterministic: round(n * crack_fraction) crack tiles, the
    rest non-crack. Each sample draws from its own (seed, i) substream.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    seed = spec.seed if seed is None else seed
    n_crack = int(round(n * spec.crack_fraction))
    samples = []
    for i in range(n):
        rng = np.random.default_rng(np.random.SeedSequence((int(seed), int(i))))
        label = CRACK if i < n_crack else NON_CRACK
        samples.append(generate_sample(spec, rng, label))
    return samples


def write_synthetic_dataset(root, spec, n, seed=None):
    """Materialize a synthetic dataset in CD/UD layout plus masks/ mirror."""
    root = Path(root)
    for sub in ("CD", "UD", "masks"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    counts = {CRACK: 0, NON_CRACK: 0}
    for i, (img, label, mask) in enumerate(generate_synthetic(spec, n, seed)):
        sub = "CD" if label == CRACK else "UD"
        name = f"synth_{i:05d}.png"
        save_image(root / sub / name, img)
        if label == CRACK:
            save_image(root / "masks" / name, mask.astype(np.uint8) * 255)
        counts[label] += 1
    meta = {"n": n, "spec": spec.to_dict(), "seed": spec.seed if seed is None else seed,
            "counts": {"crack": counts[CRACK], "non_crack": counts[NON_CRACK]}}
    (root / "meta.json").write_text(json.dumps(meta, indent=1))
    return scan_dataset(root)


def split_samples(samples, fractions=(0.70, 0.15, 0.15), seed=0):
    """Stratified in-memory split of (img, label, ...) tuples; same rounding
    rule as stratified_split."""
    labels = np.array([s[1] for s in samples])
    parts = {"train": [], "val": [], "test": []}
    for label in sorted(set(labels.tolist())):
        idx = np.where(labels == label)[0]
        rng = np.random.default_rng(np.random.SeedSequence((int(seed), int(label))))
        idx = idx[rng.permutation(len(idx))]
        n_train, n_val, n_test = _partition_sizes(len(idx), fractions)
        parts["train"] += [samples[i] for i in idx[:n_train]]
        parts["val"] += [samples[i] for i in idx[n_train:n_train + n_val]]
        parts["test"] += [samples[i] for i in idx[n_train + n_val:]]
    return parts["train"], parts["val"], parts["test"]


class FolderSource:
    """Image source over (root, relative paths); labels from the CD/UD prefix."""

    def __init__(self, root, paths):
        self.root = Path(root)
        self.paths = list(paths)
        self._labels = np.array(
            [CRACK if p.split("/")[0] == "CD" else NON_CRACK for p in self.paths],
            dtype=np.int64)

    def __len__(self):
        return len(self.paths)

    def labels(self):
        return self._labels

    def image(self, i):
        return load_image(self.root / self.paths[i])


class MemorySource:
    """Image source over in-memory (image, label[, mask]) tuples."""

    def __init__(self, samples):
        self.samples = list(samples)
        self._labels = np.array([s[1] for s in self.samples], dtype=np.int64)

    def __len__(self):
        return len(self.samples)

    def labels(self):
        return self._labels

    def image(self, i):
        return self.samples[i][0]

    def mask(self, i):
        return self.samples[i][2] if len(self.samples[i]) > 2 else None


def threshold_baseline_accuracy(samples, grid=32):
    """Best accuracy of a dark-pixel-fraction threshold rule over a 2D grid.

    The simple baseline: call a tile cracked when the fraction of pixels
    darker than an intensity cut exceeds a coverage cut. Measures how far
    from trivial the synthetic task is.
    """
    intens = np.stack([img[..., 0].astype(np.float32) / 255.0 for img, _, _ in samples])
    labels = np.array([y for _, y, _ in samples])
    best = 0.0
    for cut in np.linspace(0.05, 0.6, grid):
        frac = (intens < cut).mean(axis=(1, 2))
        for cov in np.linspace(0.0, 0.2, grid):
            acc = ((frac > cov).astype(int) == labels).mean()
            best = max(best, float(acc))
    return best
