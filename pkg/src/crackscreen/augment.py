"""Inspection-scene degradation pipeline and input preprocessing.

Seven degradation families model what field imagery actually suffers:
uneven illumination / contrast drop, motion blur, mild defocus, fog/dust,
cast shadows, perspective distortion, and color jitter plus low light
(the last two drawn independently, giving eight pipeline entries). Each
entry carries an application probability and magnitude ranges; entries
are applied in listed order, independently, and may stack.

All randomness is keyed by (seed, sample_id): the same pair reproduces the
same output bitwise, regardless of how many workers process the dataset.
Images are float32 RGB in [0, 1] while being processed (uint8 in storage);
every degradation clamps back into [0, 1].
"""

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "DegradationEntry", "DegradationSpec", "sample_rng", "apply_degradation",
    "draw_plan", "apply_plan", "apply_pipeline", "preprocess",
    "bilinear_resize", "to_float", "to_uint8", "pipeline_applications",
    "IMAGENET_MEAN", "IMAGENET_STD",
]

# channel statistics used by common pretrained-weight pipelines
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

# instrumentation: bumped on every apply_pipeline call (train-only paths)
_PIPELINE_APPLICATIONS = 0


def pipeline_applications():
    return _PIPELINE_APPLICATIONS


@dataclass
class DegradationEntry:
    kind: str
    probability: float
    params: dict = field(default_factory=dict)   # name -> (lo, hi) draw range

    def validate(self):
        if not 0.0 <= self.probability <= 1.0:
            raise ValueError(f"probability {self.probability} outside [0, 1]")
        if self.kind not in _DRAW:
            raise ValueError(f"unknown degradation kind {self.kind!r}")
        for name, (lo, hi) in self.params.items():
            if hi < lo:
                raise ValueError(f"{self.kind}.{name}: empty range ({lo}, {hi})")
        return self


@dataclass
class DegradationSpec:
    entries: list = field(default_factory=list)

    @classmethod
    def default(cls):
        """The full pipeline with its stated probabilities and ranges."""
        return cls(entries=[
            DegradationEntry("contrast", 0.5,
                             {"gain": (0.5, 0.9), "bias": (-0.2, 0.1)}),
            DegradationEntry("motion_blur", 0.3,
                             {"length": (3.0, 7.0), "angle": (0.0, float(np.pi))}),
            DegradationEntry("defocus", 0.2, {"radius": (3.0, 5.0)}),
            DegradationEntry("fog", 0.2,
                             {"level": (0.7, 0.9), "density": (0.1, 0.4)}),
            DegradationEntry("shadow", 0.25, {"factor": (0.4, 0.8)}),
            DegradationEntry("perspective", 0.2, {"magnitude": (0.03, 0.08)}),
            DegradationEntry("color_jitter", 0.3,
                             {"gain": (0.8, 1.2), "shift": (-0.1, 0.1)}),
            DegradationEntry("low_light", 0.2, {"gain": (0.3, 0.6)}),
        ]).validate()

    @classmethod
    def off(cls):
        return cls(entries=[])

    def validate(self):
        for e in self.entries:
            e.validate()
        return self

    def to_dict(self):
        return {"entries": [{"kind": e.kind, "probability": e.probability,
                             "params": {k: list(v) for k, v in e.params.items()}}
                            for e in self.entries]}

    @classmethod
    def from_dict(cls, d):
        return cls(entries=[
            DegradationEntry(e["kind"], e["probability"],
                             {k: tuple(v) for k, v in e.get("params", {}).items()})
            for e in d.get("entries", [])]).validate()


def sample_rng(seed, sample_id):
    """Independent generator fully determined by (seed, sample_id)."""
    return np.random.default_rng(np.random.SeedSequence((int(seed), int(sample_id))))


# -- conversions -------------------------------------------------------------------

def to_float(img):
    if img.dtype == np.uint8:
        return img.astype(np.float32) / np.float32(255.0)
    return img.astype(np.float32, copy=True)


def to_uint8(img):
    return np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)


def _clip(img):
    return np.clip(img, 0.0, 1.0, out=img)


# -- kernels and resampling helpers --------------------------------------------------

def _convolve_reflect(img, kernel):
    """Per-channel 2D correlation with reflect padding (kernel sums to 1)."""
    kh, kw = kernel.shape
    ph, pw = kh // 2, kw // 2
    H, W = img.shape[:2]
    padded = np.pad(img, ((ph, ph), (pw, pw), (0, 0)), mode="reflect")
    out = np.zeros_like(img)
    for i in range(kh):
        for j in range(kw):
            kv = kernel[i, j]
            if kv != 0.0:
                out += kv * padded[i:i + H, j:j + W]
    return out


def motion_blur_kernel(length, angle):
    """Normalized line kernel: round(length) cells marched along `angle`."""
    n = max(1, int(round(length)))
    half = (n - 1) / 2.0
    size = 2 * int(np.ceil(half)) + 1
    k = np.zeros((size, size), dtype=np.float32)
    c = size // 2
    dy, dx = np.sin(angle), np.cos(angle)
    for t in np.arange(n) - half:
        i = int(round(c + t * dy))
        j = int(round(c + t * dx))
        k[i, j] += 1.0
    return k / k.sum()


def defocus_kernel(radius):
    """Normalized disk kernel: cells whose center distance is <= radius."""
    r = int(np.ceil(radius))
    yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
    k = ((yy * yy + xx * xx) <= radius * radius).astype(np.float32)
    return k / k.sum()


def bilinear_resize(img, out_h, out_w):
    """Half-pixel-center bilinear resampling of an (H, W, C) float image."""
    H, W = img.shape[:2]
    if H < 1 or W < 1 or out_h < 1 or out_w < 1:
        raise ValueError("empty image or target in resize")
    if (H, W) == (out_h, out_w):
        return img.copy()

    def axis_coords(n_in, n_out):
        src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
        i0 = np.floor(src).astype(np.int64)
        frac = (src - i0).astype(np.float32)
        i0c = np.clip(i0, 0, n_in - 1)
        i1c = np.clip(i0 + 1, 0, n_in - 1)
        return i0c, i1c, frac

    y0, y1, fy = axis_coords(H, out_h)
    x0, x1, fx = axis_coords(W, out_w)
    top = img[y0][:, x0] * (1 - fx)[None, :, None] + img[y0][:, x1] * fx[None, :, None]
    bot = img[y1][:, x0] * (1 - fx)[None, :, None] + img[y1][:, x1] * fx[None, :, None]
    return top * (1 - fy)[:, None, None] + bot * fy[:, None, None]


def _reflect_coords(coords, n):
    """Mirror out-of-range sample coordinates back into [0, n-1]."""
    if n == 1:
        return np.zeros_like(coords)
    period = 2.0 * (n - 1)
    c = np.mod(coords, period)
    return np.where(c > n - 1, period - c, c)


def _homography(src_pts, dst_pts):
    """3x3 map with H @ [x, y, 1] ~ destination, from 4 point pairs."""
    A, b = [], []
    for (x, y), (u, v) in zip(src_pts, dst_pts):
        A.append([x, y, 1, 0, 0, 0, -u * x, -u * y])
        b.append(u)
        A.append([0, 0, 0, x, y, 1, -v * x, -v * y])
        b.append(v)
    h = np.linalg.solve(np.asarray(A, dtype=np.float64), np.asarray(b, dtype=np.float64))
    return np.append(h, 1.0).reshape(3, 3)


def _warp_perspective(img, H_inv):
    """Inverse-warp with bilinear sampling and reflect padding."""
    H, W = img.shape[:2]
    ys, xs = np.mgrid[0:H, 0:W].astype(np.float64)
    denom = H_inv[2, 0] * xs + H_inv[2, 1] * ys + H_inv[2, 2]
    sx = (H_inv[0, 0] * xs + H_inv[0, 1] * ys + H_inv[0, 2]) / denom
    sy = (H_inv[1, 0] * xs + H_inv[1, 1] * ys + H_inv[1, 2]) / denom
    sx = _reflect_coords(sx, W)
    sy = _reflect_coords(sy, H)
    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    fx = (sx - x0).astype(np.float32)[..., None]
    fy = (sy - y0).astype(np.float32)[..., None]
    x0 = np.clip(x0, 0, W - 1)
    y0 = np.clip(y0, 0, H - 1)
    x1 = np.clip(x0 + 1, 0, W - 1)
    y1 = np.clip(y0 + 1, 0, H - 1)
    top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def _quad_mask(h, w, pts):
    """Boolean mask of the convex hull of 4 points (ordered by angle)."""
    centroid = pts.mean(axis=0)
    order = np.argsort(np.arctan2(pts[:, 1] - centroid[1], pts[:, 0] - centroid[0]))
    pts = pts[order]
    ys, xs = np.mgrid[0:h, 0:w]
    inside = np.ones((h, w), dtype=bool)
    for i in range(4):
        x1, y1 = pts[i]
        x2, y2 = pts[(i + 1) % 4]
        cross = (x2 - x1) * (ys - y1) - (y2 - y1) * (xs - x1)
        inside &= cross >= 0
    return inside


# -- the degradations --------------------------------------------------------------
#
# Each kind has a draw step (all randomness, from per-sample rng) and a pure
# apply step. Plans carry concrete drawn values, so a plan can be replayed
# without any rng.

def _draw_contrast(p, rng):
    return {"gain": rng.uniform(*p["gain"]), "bias": rng.uniform(*p["bias"])}


def _apply_contrast(img, v):
    return _clip(np.float32(v["gain"]) * (img - np.float32(0.5))
                 + np.float32(0.5) + np.float32(v["bias"]))


def _draw_motion_blur(p, rng):
    return {"length": rng.uniform(*p["length"]), "angle": rng.uniform(*p["angle"])}


def _apply_motion_blur(img, v):
    return _clip(_convolve_reflect(img, motion_blur_kernel(v["length"], v["angle"])))


def _draw_defocus(p, rng):
    return {"radius": rng.uniform(*p["radius"])}


def _apply_defocus(img, v):
    return _clip(_convolve_reflect(img, defocus_kernel(v["radius"])))


def _draw_fog(p, rng):
    return {"level": rng.uniform(*p["level"]), "density": rng.uniform(*p["density"])}


def _apply_fog(img, v):
    t, f = np.float32(v["density"]), np.float32(v["level"])
    return _clip((1 - t) * img + t * f)


def _draw_shadow(p, rng):
    return {"factor": rng.uniform(*p["factor"]),
            "points": rng.uniform(0.0, 1.0, size=(4, 2)).tolist()}


def _apply_shadow(img, v):
    h, w = img.shape[:2]
    pts = np.asarray(v["points"], dtype=np.float64) * [w - 1, h - 1]
    mask = _quad_mask(h, w, pts).astype(np.float32)[..., None]
    feather = np.full((5, 5), 1.0 / 25.0, dtype=np.float32)
    mask = _convolve_reflect(np.repeat(mask, 3, axis=2), feather)[..., :1]
    return _clip(img * (1.0 - np.float32(1.0 - v["factor"]) * mask))


def _draw_perspective(p, rng):
    return {"magnitude": rng.uniform(*p["magnitude"]),
            "jitter": rng.uniform(-1.0, 1.0, size=(4, 2)).tolist()}


def _apply_perspective(img, v):
    d = v["magnitude"]
    if d == 0.0:
        return img.copy()
    h, w = img.shape[:2]
    corners = np.array([[0, 0], [w - 1, 0], [w - 1, h - 1], [0, h - 1]], dtype=np.float64)
    offsets = np.asarray(v["jitter"], dtype=np.float64) * d * [w - 1, h - 1]
    H = _homography(corners, corners + offsets)
    return _clip(_warp_perspective(img, np.linalg.inv(H)).astype(np.float32))


def _draw_color_jitter(p, rng):
    return {"gains": rng.uniform(*p["gain"], size=3).tolist(),
            "shift": rng.uniform(*p["shift"])}


def _apply_color_jitter(img, v):
    gains = np.asarray(v["gains"], dtype=np.float32)
    return _clip(img * gains[None, None, :] + np.float32(v["shift"]))


def _draw_low_light(p, rng):
    return {"gain": rng.uniform(*p["gain"])}


def _apply_low_light(img, v):
    return _clip(np.power(np.clip(img * np.float32(v["gain"]), 0.0, 1.0), np.float32(1.2)))


_DRAW = {
    "contrast": _draw_contrast, "motion_blur": _draw_motion_blur,
    "defocus": _draw_defocus, "fog": _draw_fog, "shadow": _draw_shadow,
    "perspective": _draw_perspective, "color_jitter": _draw_color_jitter,
    "low_light": _draw_low_light,
}
_APPLY = {
    "contrast": _apply_contrast, "motion_blur": _apply_motion_blur,
    "defocus": _apply_defocus, "fog": _apply_fog, "shadow": _apply_shadow,
    "perspective": _apply_perspective, "color_jitter": _apply_color_jitter,
    "low_light": _apply_low_light,
}
# the scalar "magnitude" of each kind, for the apply_degradation shorthand
_PRIMARY = {
    "contrast": "gain", "motion_blur": "length", "defocus": "radius",
    "fog": "density", "shadow": "factor", "perspective": "magnitude",
    "color_jitter": "gains", "low_light": "gain",
}
_DEFAULT_RANGES = {e.kind: e.params for e in DegradationSpec.default().entries}


def apply_degradation(img, kind, magnitude, rng):
    """Apply one degradation at a given magnitude.

    `magnitude` is either the kind's primary scalar or a dict of concrete
    values; anything not supplied is drawn from rng. Scalars outside the
    kind's stated range raise.
    """
    if kind not in _DRAW:
        raise ValueError(f"unknown degradation kind {kind!r}")
    ranges = _DEFAULT_RANGES[kind]
    values = _DRAW[kind](ranges, rng)
    if isinstance(magnitude, dict):
        supplied = magnitude
    else:
        primary = _PRIMARY[kind]
        if primary == "gains":
            supplied = {"gains": [float(magnitude)] * 3}
        else:
            supplied = {primary: float(magnitude)}
    for name, val in supplied.items():
        if name in ranges and np.isscalar(val):
            lo, hi = ranges[name]
            if not lo <= val <= hi:
                raise ValueError(f"{kind}.{name}={val} outside range [{lo}, {hi}]")
        values[name] = val
    out = _APPLY[kind](to_float(img), values)
    if not np.isfinite(out).all():
        raise FloatingPointError(f"{kind} produced non-finite values")
    return out


def draw_plan(spec, rng):
    """Per-entry Bernoulli then magnitude draws, in listed order.

    Returns [(kind, concrete_values)] for the hits; replaying the plan with
    apply_plan needs no rng, so the (seed, sample_id) pair pins the output.
    """
    plan = []
    for e in spec.entries:
        if rng.random() < e.probability:
            plan.append((e.kind, _DRAW[e.kind](e.params, rng)))
    return plan


def apply_plan(img, plan):
    out = to_float(img)
    for kind, values in plan:
        out = _APPLY[kind](out, values)
        if not np.isfinite(out).all():
            raise FloatingPointError(f"{kind} produced non-finite values")
    return out


def apply_pipeline(img, spec, rng):
    """Draw a plan from the per-sample stream and apply it."""
    global _PIPELINE_APPLICATIONS
    _PIPELINE_APPLICATIONS += 1
    return apply_plan(img, draw_plan(spec, rng))


# -- preprocessing ----------------------------------------------------------------

def preprocess(img, target_hw=224, mean=IMAGENET_MEAN, std=IMAGENET_STD):
    """Resize to target, scale to [0,1], standardize; returns (3, H, W) float32."""
    img = to_float(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) image, got {img.shape}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError("empty image")
    if img.shape[0] != target_hw or img.shape[1] != target_hw:
        img = bilinear_resize(img, target_hw, target_hw).astype(np.float32)
    mean = np.asarray(mean, dtype=np.float32)
    std = np.asarray(std, dtype=np.float32)
    return np.ascontiguousarray(((img - mean) / std).transpose(2, 0, 1))
