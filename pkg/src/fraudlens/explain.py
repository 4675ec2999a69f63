"""Grad-CAM heatmaps, conv-layer representation grids, and overlay rendering.

The heatmap weights the final conv-stage feature maps (block-2 pool output,
post-ReLU) by the spatial mean of the fraud-logit gradients, applies ReLU,
and max-normalizes. Overlays blend the upsampled heatmap with the input
image and insert red (level-1) and white (level-2) separator columns at
indicator-group boundaries.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .data import IndicatorSchema
from .nn.model import Model, backprop_to_layer, forward

SEP_RED = (255, 0, 0)
SEP_WHITE = (255, 255, 255)


@dataclass
class Heatmap:
    """Nonnegative importance map over the feature-map grid, max <= 1."""

    values: np.ndarray
    source_layer: str

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.min() < 0 or self.values.max() > 1 + 1e-12:
            raise ValueError("heatmap values must lie in [0, 1]")


@dataclass
class OverlayImage:
    rgb: np.ndarray
    separators: list  # (column index in rgb, "level1" | "level2")


@dataclass
class FeatureMapGrid:
    maps: np.ndarray  # (C, h, w), each channel max-normalized
    grid: np.ndarray  # single tiled grayscale image in [0, 1]
    layer: str


def gradcam(model: Model, image: np.ndarray) -> Heatmap:
    """Class-activation heatmap for the fraud logit of one input image.

    alpha_k is the spatial mean of d(logit)/dA_k over the final conv-stage
    feature maps A_k; the map is ReLU(sum_k alpha_k A_k), normalized by its
    max (all-zero maps stay zero). The gradient targets the pre-sigmoid
    logit, so the output bias has no influence.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        batch = image[None, ...]
    elif image.ndim == 3 and image.shape[2] == 1:
        batch = image[None, :, :, 0]
    else:
        raise ValueError("expected a single (T, F) image")
    _, cache = forward(model, batch, training=False)
    acts = cache.acts[model.feature_layer + 1]  # (1, h', w', C)
    d_act = backprop_to_layer(model, cache, np.ones(1), model.feature_layer)
    alpha = d_act[0].mean(axis=(0, 1))  # (C,)
    cam = np.maximum((acts[0].astype(np.float64) * alpha).sum(axis=2), 0.0)
    peak = cam.max()
    if peak > 0:
        cam /= peak
    return Heatmap(values=cam, source_layer=f"layer{model.feature_layer}:block2-pool")


def bilinear_upsample(values: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Corner-aligned bilinear resize: output corners equal input corners."""
    values = np.asarray(values, dtype=np.float64)
    h, w = values.shape
    rows = np.linspace(0, h - 1, out_h) if h > 1 else np.zeros(out_h)
    cols = np.linspace(0, w - 1, out_w) if w > 1 else np.zeros(out_w)
    r0 = np.floor(rows).astype(int)
    c0 = np.floor(cols).astype(int)
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, w - 1)
    fr = (rows - r0)[:, None]
    fc = (cols - c0)[None, :]
    top = values[r0][:, c0] * (1 - fc) + values[r0][:, c1] * fc
    bottom = values[r1][:, c0] * (1 - fc) + values[r1][:, c1] * fc
    return top * (1 - fr) + bottom * fr


def _boundaries(schema: IndicatorSchema) -> list:
    """(after-column, kind) group boundaries in canonical order."""
    ordered = schema.ordered_entries()
    out = []
    for j in range(len(ordered) - 1):
        a, b = ordered[j], ordered[j + 1]
        if a.level1 != b.level1:
            out.append((j, "level1"))
        elif a.level2 != b.level2:
            out.append((j, "level2"))
    return out


def upsample_overlay(h: Heatmap, base: np.ndarray, schema: IndicatorSchema, scale: int = 1) -> OverlayImage:
    """Render the heatmap over its input image with group separators.

    The heatmap is bilinearly upsampled (corner-aligned) to the input's
    T x F, blended 50/50 with the min-max normalized input, scaled by an
    integer pixel factor, and split by separator columns (each ``scale``
    wide) at every indicator-group boundary.
    """
    if scale < 1:
        raise ValueError("scale must be >= 1")
    base = np.asarray(base, dtype=np.float64)
    if base.ndim == 3 and base.shape[2] == 1:
        base = base[:, :, 0]
    t, f = base.shape
    if schema.n_features != f:
        raise ValueError(f"schema has {schema.n_features} features, image has {f}")
    up = bilinear_upsample(h.values, t, f)
    lo, hi = base.min(), base.max()
    base01 = (base - lo) / (hi - lo) if hi > lo else np.zeros_like(base)
    lum = 0.5 * base01 + 0.5 * up
    gray = np.round(np.clip(lum, 0.0, 1.0) * 255.0).astype(np.uint8)
    scaled = np.repeat(np.repeat(gray, scale, axis=0), scale, axis=1)
    rgb = np.stack([scaled] * 3, axis=2)

    bounds = _boundaries(schema)
    height = t * scale
    pieces = []
    separators = []
    cursor = 0
    prev = 0
    for after_col, kind in bounds:
        stop = (after_col + 1) * scale
        pieces.append(rgb[:, prev:stop])
        cursor += stop - prev
        color = SEP_RED if kind == "level1" else SEP_WHITE
        block = np.empty((height, scale, 3), dtype=np.uint8)
        block[:, :] = color
        pieces.append(block)
        separators.append((cursor, kind))
        cursor += scale
        prev = stop
    pieces.append(rgb[:, prev:])
    return OverlayImage(rgb=np.concatenate(pieces, axis=1), separators=separators)


def overlay_sidecar(overlay: OverlayImage, schema: IndicatorSchema, scale: int) -> dict:
    """Sidecar metadata: separator positions and the level-2 group to
    pixel-column-range mapping in the rendered image's coordinates."""
    bounds = _boundaries(schema)
    sep_before = 0
    shift = {}
    b = 0
    for level1, level2, start, stop in schema.level2_ranges():
        while b < len(bounds) and bounds[b][0] < start:
            sep_before += 1
            b += 1
        shift[(level1, level2)] = sep_before
    groups = [
        {
            "level1": level1,
            "level2": level2,
            "pixel_start": start * scale + shift[(level1, level2)] * scale,
            "pixel_stop": stop * scale + shift[(level1, level2)] * scale,
        }
        for level1, level2, start, stop in schema.level2_ranges()
    ]
    return {
        "scale": scale,
        "separators": [{"column": col, "kind": kind} for col, kind in overlay.separators],
        "groups": groups,
    }


def write_sidecar(sidecar: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, sort_keys=True, indent=1)


def layer_activations(model: Model, image: np.ndarray, layer_index: int) -> FeatureMapGrid:
    """Post-ReLU activation maps of one conv layer, tiled into a grid.

    ``layer_index`` addresses conv layers 1..4 in network order. Channels
    are max-normalized individually and tiled 8 per row with 1-pixel white
    gutters.
    """
    if not 1 <= layer_index <= len(model.conv_layers):
        raise ValueError(f"layer_index must be in 1..{len(model.conv_layers)}")
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        batch = image[None, ...]
    else:
        raise ValueError("expected a single (T, F) image")
    _, cache = forward(model, batch, training=False)
    conv_pos = model.conv_layers[layer_index - 1]
    maps = cache.acts[conv_pos + 2][0]  # ReLU follows each conv
    maps = np.transpose(maps.astype(np.float64), (2, 0, 1))  # (C, h, w)
    peaks = maps.max(axis=(1, 2))
    normed = np.where(peaks[:, None, None] > 0, maps / np.where(peaks, peaks, 1.0)[:, None, None], 0.0)

    c, h, w = normed.shape
    cols = min(8, c)
    rows = (c + cols - 1) // cols
    grid = np.ones((rows * h + rows - 1, cols * w + cols - 1))
    for ch in range(c):
        r, cc = divmod(ch, cols)
        grid[r * (h + 1) : r * (h + 1) + h, cc * (w + 1) : cc * (w + 1) + w] = normed[ch]
    return FeatureMapGrid(maps=normed, grid=grid, layer=f"conv{layer_index}")
