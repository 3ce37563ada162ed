"""Tiled inference with hard or feathered stitching, and a seam quantifier.

Hard stitching pastes tiles in raster order (later tiles overwrite overlaps)
and exposes boundary discontinuities; feathering ramps linearly across the
overlap. `seam_error` compares gradients across tile boundaries against the
interior gradient level: ~1.0 means no detectable seams.
"""

import numpy as np

from .data import SamplePair
from .model import forward
from .tensor import Tensor, no_tape


def infer_pair(params, cfg, pair, window=16):
    """Full-image inference for one PAN/LRMS pair; returns [C,H,W]."""
    with no_tape():
        out = forward(
            Tensor(pair.pan.data[None]),
            Tensor(pair.lrms.data[None]),
            pair.ratio,
            params,
            cfg,
            window,
        )
    return Tensor(out.data[0])


def tile_grid(extent, tile, overlap):
    """Tile start offsets covering [0, extent) with the given overlap."""
    if tile >= extent:
        return [0]
    step = tile - overlap
    starts = list(range(0, extent - tile + 1, step))
    if starts[-1] != extent - tile:
        starts.append(extent - tile)
    return starts


def _check_tile_args(pair, tile, overlap, window):
    _, h, w = pair.pan.shape
    r = pair.ratio
    if tile < window:
        raise ValueError(f"tile {tile} smaller than the attention window {window}")
    if overlap < 0 or overlap >= tile / 2:
        raise ValueError(f"overlap {overlap} must satisfy 0 <= overlap < tile/2")
    for name, v in (("tile", tile), ("overlap", overlap)):
        if abs(v / r - round(v / r)) > 1e-9:
            raise ValueError(f"{name} {v} does not map to whole LRMS pixels at ratio {r}")
    return h, w, r


def tiled_inference(params, cfg, pair, tile, overlap=0, blend="hard", window=16):
    """Run the model tile by tile and stitch; tile >= image reproduces
    full-image inference bitwise."""
    if blend not in ("hard", "feather"):
        raise ValueError(f"unknown blend mode {blend!r}")
    h, w, r = _check_tile_args(pair, tile, overlap, window)
    if tile >= h and tile >= w:
        return infer_pair(params, cfg, pair, window)

    ys = tile_grid(h, tile, overlap)
    xs = tile_grid(w, tile, overlap)
    for v in ys + xs:
        if abs(v / r - round(v / r)) > 1e-9:
            raise ValueError(
                f"tile offset {v} does not map to whole LRMS pixels at ratio {r}"
            )

    c = pair.lrms.shape[0]
    out = np.zeros((c, h, w), dtype=np.float32)
    weight = np.zeros((1, h, w), dtype=np.float32)
    for y0 in ys:
        for x0 in xs:
            ly, lx = int(round(y0 / r)), int(round(x0 / r))
            lt = int(round(tile / r))
            sub = SamplePair(
                pan=Tensor(pair.pan.data[:, y0 : y0 + tile, x0 : x0 + tile]),
                lrms=Tensor(pair.lrms.data[:, ly : ly + lt, lx : lx + lt]),
                ratio=r,
                id=f"{pair.id}@{y0},{x0}",
            )
            piece = infer_pair(params, cfg, sub, window).data
            if blend == "hard":
                out[:, y0 : y0 + tile, x0 : x0 + tile] = piece
            else:
                wmap = _feather_weights(tile, overlap, y0, x0, h, w)
                out[:, y0 : y0 + tile, x0 : x0 + tile] += piece * wmap
                weight[:, y0 : y0 + tile, x0 : x0 + tile] += wmap
    if blend == "feather":
        out /= weight
    return Tensor(out)


def _feather_weights(tile, overlap, y0, x0, h, w):
    # complementary linear ramps: an exiting edge and the neighbor's entering
    # edge sum to exactly 1 across the overlap
    up = np.arange(1, overlap + 1, dtype=np.float32) / (overlap + 1)

    def ramp(has_before, has_after):
        v = np.ones(tile, dtype=np.float32)
        if overlap and has_before:
            v[:overlap] = up
        if overlap and has_after:
            v[-overlap:] = up[::-1]
        return v

    vy = ramp(y0 > 0, y0 + tile < h)
    vx = ramp(x0 > 0, x0 + tile < w)
    return (vy[:, None] * vx[None, :])[None]


def seam_error(img, tile, overlap):
    """Mean |gradient| across tile boundaries over mean |gradient| in tile
    interiors; 1.0 by convention when the image is constant."""
    data = img.data if isinstance(img, Tensor) else np.asarray(img)
    h, w = data.shape[-2], data.shape[-1]
    ys = tile_grid(h, tile, overlap)
    xs = tile_grid(w, tile, overlap)
    seam_rows = sorted({y for y in ys if y > 0})
    seam_cols = sorted({x for x in xs if x > 0})
    if not seam_rows and not seam_cols:
        raise ValueError(f"tile {tile} yields a single tile on {h}x{w}: no seams to score")

    row_set, col_set = set(seam_rows), set(seam_cols)
    seam_vals, interior_vals = [], []
    dv = np.abs(np.diff(data, axis=-2))  # [..., h-1, w]: row i is |img[i+1]-img[i]|
    dh = np.abs(np.diff(data, axis=-1))
    for i in range(1, h):
        (seam_vals if i in row_set else interior_vals).append(dv[..., i - 1, :].mean())
    for j in range(1, w):
        (seam_vals if j in col_set else interior_vals).append(dh[..., :, j - 1].mean())
    seam = float(np.mean(seam_vals))
    interior = float(np.mean(interior_vals)) if interior_vals else 0.0
    if seam == 0.0 and interior == 0.0:
        return 1.0
    if interior == 0.0:
        return float("inf")
    return seam / interior
