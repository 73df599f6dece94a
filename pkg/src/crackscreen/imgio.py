"""PNG/JPEG image IO via Pillow; arrays are (H, W, 3) uint8 RGB."""

import numpy as np
from PIL import Image

__all__ = ["load_image", "save_image", "IMAGE_EXTENSIONS"]

IMAGE_EXTENSIONS = (".jpg", ".jpeg", ".png")


def load_image(path):
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"))


def save_image(path, arr):
    """Write uint8 HWC (or float [0,1], converted) as PNG/JPEG by extension."""
    if arr.dtype != np.uint8:
        arr = np.clip(np.rint(np.asarray(arr) * 255.0), 0, 255).astype(np.uint8)
    if arr.ndim == 2:
        Image.fromarray(arr, mode="L").save(path)
    else:
        Image.fromarray(arr, mode="RGB").save(path)
