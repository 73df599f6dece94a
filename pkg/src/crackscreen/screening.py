"""Ground-station screening: sliding-window tiling of full-resolution
imagery, batched patch classification, and candidate regions mapped back
to source-image pixel coordinates.

A report is JSON lines: one metadata header, then one candidate per line,
sorted by (y, x). Apart from the header's timing field, reports are
byte-identical across runs for fixed inputs.
"""

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .augment import preprocess
from .imgio import save_image
from .tensor import Tensor

__all__ = ["TileGrid", "CandidateRegion", "plan_tiles", "classify_tiles",
           "emit_report", "load_report", "draw_candidates"]

REPORT_VERSION = 1


@dataclass
class TileGrid:
    width: int
    height: int
    patch: int
    stride: int
    tiles: list = field(default_factory=list)   # (x, y) top-left, fully inside


@dataclass
class CandidateRegion:
    image: str
    x: int
    y: int
    w: int
    h: int
    score: float
    label: str = "crack"

    def to_dict(self):
        return {"image": self.image, "x": self.x, "y": self.y, "w": self.w,
                "h": self.h, "score": self.score, "label": self.label}


def _axis_coords(extent, patch, stride):
    coords = list(range(0, extent - patch + 1, stride))
    if coords[-1] != extent - patch:
        coords.append(extent - patch)
    return coords


def plan_tiles(width, height, patch=224, stride=None):
    """Grid covering every pixel; the last row/column clamps to the border."""
    stride = stride or patch
    if patch > min(width, height):
        raise ValueError(f"patch {patch} exceeds image {width}x{height}")
    if not 1 <= stride <= patch:
        raise ValueError(f"stride {stride} must lie in [1, patch]")
    xs = _axis_coords(width, patch, stride)
    ys = _axis_coords(height, patch, stride)
    tiles = [(x, y) for y in ys for x in xs]
    return TileGrid(width, height, patch, stride, tiles)


def classify_tiles(model, image, grid, batch_size=64, threshold=0.5, image_id=""):
    """Crop, preprocess, and score every tile; keep crack-positive ones.

    Tiles scoring at or above the threshold become candidates, sorted by
    (y, x). No degradation is ever applied on this path.
    """
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    image = np.asarray(image)
    if image.shape[0] != grid.height or image.shape[1] != grid.width:
        raise ValueError(f"image {image.shape[:2]} does not match grid "
                         f"{(grid.height, grid.width)}")
    p = grid.patch
    hw = model.config.input_hw
    candidates = []
    tiles = sorted(grid.tiles, key=lambda t: (t[1], t[0]))
    for lo in range(0, len(tiles), batch_size):
        chunk = tiles[lo:lo + batch_size]
        batch = np.stack([preprocess(image[y:y + p, x:x + p], hw) for x, y in chunk])
        logits = model.forward(Tensor(batch), training=False).data
        ez = np.exp(logits - logits.max(axis=1, keepdims=True))
        probs = (ez / ez.sum(axis=1, keepdims=True))[:, 1]
        for (x, y), score in zip(chunk, probs):
            if score >= threshold:
                candidates.append(CandidateRegion(image_id, x, y, p, p, float(score)))
    return candidates


def emit_report(candidates, metadata, path):
    """Write the JSON-lines report: header line, then sorted candidates."""
    header = {"version": REPORT_VERSION}
    header.update(metadata)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for c in sorted(candidates, key=lambda c: (c.image, c.y, c.x)):
            fh.write(json.dumps(c.to_dict(), sort_keys=True) + "\n")
    return path


def load_report(path):
    lines = Path(path).read_text().splitlines()
    header = json.loads(lines[0])
    candidates = [CandidateRegion(**json.loads(ln)) for ln in lines[1:]]
    return header, candidates


def draw_candidates(image, candidates, px=2):
    """Burn candidate rectangles (red) into a copy of the image."""
    out = np.asarray(image).copy()
    if out.ndim == 2:
        out = np.repeat(out[..., None], 3, axis=2)
    RED = np.array([220, 40, 40], dtype=out.dtype)
    H, W = out.shape[:2]
    for c in candidates:
        x0, y0 = c.x, c.y
        x1, y1 = min(c.x + c.w, W), min(c.y + c.h, H)
        out[y0:y0 + px, x0:x1] = RED
        out[max(0, y1 - px):y1, x0:x1] = RED
        out[y0:y1, x0:x0 + px] = RED
        out[y0:y1, max(0, x1 - px):x1] = RED
    return out


def screen_image(model, image, image_id, patch=224, stride=None, threshold=0.5,
                 batch_size=64, out_path=None, overlay_path=None, checkpoint_id=""):
    """Full per-image pipeline: plan, classify, report, optional overlay."""
    t0 = time.perf_counter()
    grid = plan_tiles(image.shape[1], image.shape[0], patch, stride)
    candidates = classify_tiles(model, image, grid, batch_size, threshold, image_id)
    timing_ms = (time.perf_counter() - t0) * 1000.0
    if out_path is not None:
        meta = {"checkpoint": checkpoint_id, "patch": grid.patch, "stride": grid.stride,
                "threshold": threshold, "timing_ms": round(timing_ms, 3)}
        emit_report(candidates, meta, out_path)
    if overlay_path is not None:
        save_image(overlay_path, draw_candidates(image, candidates))
    return candidates
