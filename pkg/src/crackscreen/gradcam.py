"""Gradient-weighted class activation maps from the final feature map.

Channel weights are the spatial means of the class logit's gradient on the
post-attention feature map; the map is the relu of the weighted channel
sum, bilinearly upsampled to input resolution and max-normalized. Used to
check that a trained model's evidence concentrates on crack pixels.
"""

from dataclasses import dataclass

import numpy as np

from .augment import bilinear_resize, preprocess, to_float
from .tensor import Tensor, tsum

__all__ = ["CamMap", "grad_cam", "grad_cam_from_image", "overlay",
           "concentration", "HEAT_RGB"]

# monotone heat ramp endpoint (deep orange-red); cmap(h) = h * HEAT_RGB
HEAT_RGB = np.array([1.0, 0.35, 0.05], dtype=np.float32)


@dataclass
class CamMap:
    heatmap: np.ndarray        # (fh, fw) non-negative, feature resolution
    upsampled: np.ndarray      # (H, W) in [0, 1], max-normalized
    target_class: int
    all_zero: bool = False


def grad_cam(model, x, target_class):
    """CAM for one preprocessed input (3,H,W) or (1,3,H,W) array/Tensor."""
    arr = x.data if isinstance(x, Tensor) else np.asarray(x)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.shape[0] != 1:
        raise ValueError("grad_cam expects a single image")
    if not 0 <= target_class < model.config.num_classes:
        raise ValueError(f"target class {target_class} out of range")
    xt = Tensor(arr, requires_grad=True)
    feat = model.forward_features(xt, training=False)
    feat.retain_grad = True
    logits = model.head(feat, training=False)
    onehot = np.zeros(logits.shape, dtype=logits.data.dtype)
    onehot[0, target_class] = 1.0
    tsum(logits * Tensor(onehot)).backward()
    grads = feat.grad[0]                       # (C, fh, fw)
    alpha = grads.mean(axis=(1, 2))            # spatial-mean channel weights
    heat = np.maximum((alpha[:, None, None] * feat.data[0]).sum(axis=0), 0.0)
    H, W = arr.shape[2], arr.shape[3]
    up = bilinear_resize(heat[..., None].astype(np.float32), H, W)[..., 0]
    up = np.maximum(up, 0.0)
    peak = float(up.max())
    if peak > 0.0:
        up = up / peak
        return CamMap(heat, up, target_class, all_zero=False)
    return CamMap(heat, np.zeros_like(up), target_class, all_zero=True)


def grad_cam_from_image(model, image, target_class):
    """CAM straight from a uint8/float HWC image (applies preprocessing)."""
    return grad_cam(model, preprocess(image, model.config.input_hw), target_class)


def overlay(cam: CamMap, image, blend=0.4):
    """Blend the normalized map over the image: out = (1-b*h)*img + b*h*cmap.

    A zero map returns the image unchanged; a saturated pixel carries the
    pure colormap endpoint at the blend weight.
    """
    img = to_float(np.asarray(image))
    h_map = cam.upsampled
    if img.shape[:2] != h_map.shape:
        raise ValueError(f"image {img.shape[:2]} vs heatmap {h_map.shape}")
    h = h_map[..., None].astype(np.float32)
    color = h * HEAT_RGB[None, None, :]
    out = (1.0 - blend * h) * img + blend * color
    return np.clip(np.rint(out * 255.0), 0, 255).astype(np.uint8)


def concentration(cam: CamMap, mask):
    """(mean heat on mask, mean heat off mask); None where a side is empty."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != cam.upsampled.shape:
        raise ValueError(f"mask {mask.shape} vs heatmap {cam.upsampled.shape}")
    on = float(cam.upsampled[mask].mean()) if mask.any() else None
    off = float(cam.upsampled[~mask].mean()) if (~mask).any() else None
    return on, off
