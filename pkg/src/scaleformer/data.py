"""Synthetic scenes, preprocessing, reduced-resolution pairs, and raster I/O.

Scene generators are stationary in pixel units, so the same texture process
rendered at different canvas sizes has the same statistics; that is what lets
small trainings generalize across test scales. Reduced-resolution pairs follow
the usual protocol: the clean scene is the reference, inputs are synthesized
by degradation.
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .patchify import bicubic_resize
from .tensor import Tensor


class RasterFormatError(ValueError):
    pass


# ---------------------------------------------------------------------------
# sample containers

@dataclass
class SamplePair:
    """Registered PAN + LRMS pair, optionally with the clean reference."""

    pan: Tensor        # [1, H, W]
    lrms: Tensor       # [C, H/r, W/r]
    gt: Tensor = None  # [C, H, W]
    ratio: float = 2.0
    id: str = ""

    def validate(self):
        _, h, w = self.pan.shape
        _, lh, lw = self.lrms.shape
        if h != round(self.ratio * lh) or w != round(self.ratio * lw):
            raise ValueError(
                f"{self.id or 'pair'}: PAN {h}x{w} is not {self.ratio}x the LRMS {lh}x{lw}"
            )
        for name, t in (("pan", self.pan), ("lrms", self.lrms), ("gt", self.gt)):
            if t is None:
                continue
            if t.data.min() < 0.0 or t.data.max() > 1.0:
                raise ValueError(f"{self.id or 'pair'}: {name} values leave [0, 1]")
        return self

    @property
    def scale(self):
        return self.pan.shape[-1]


@dataclass
class SceneStack:
    """Co-registered multi-band observations with per-image binary masks."""

    images: list  # of Tensor [C, H, W]
    masks: list   # of Tensor [1, H, W], values in {0, 1}

    def validate(self):
        if not self.images:
            raise ValueError("scene stack is empty")
        if len(self.images) != len(self.masks):
            raise ValueError("images and masks differ in count")
        shape = self.images[0].shape
        for im in self.images:
            if im.shape != shape:
                raise ValueError(f"stacked image shapes differ: {im.shape} vs {shape}")
        for m in self.masks:
            if m.shape != (1,) + shape[1:]:
                raise ValueError(f"mask shape {m.shape} does not match images {shape}")
            _require_binary(m.data)
        return self


def _require_binary(mask):
    if not np.isin(mask, (0.0, 1.0)).all():
        raise ValueError("mask must be binary (0/1)")


# ---------------------------------------------------------------------------
# preprocessing

def apply_cloud_mask(img, mask):
    """Zero out masked pixels across all bands; mask must be {0,1}."""
    _require_binary(mask.data)
    return Tensor(img.data * mask.data)


def median_composite(stack):
    """Per band/pixel median over unmasked observations.

    Pixels covered by no observation come out 0; a warning reports how many.
    """
    stack.validate()
    data = np.stack([im.data for im in stack.images]).astype(np.float64)
    mask = np.stack([m.data for m in stack.masks])
    vals = np.where(mask > 0.5, data, np.nan)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        med = np.nanmedian(vals, axis=0)
    uncovered = np.isnan(med)
    n_uncovered = int(uncovered.sum())
    if n_uncovered:
        warnings.warn(f"median composite: {n_uncovered} pixels have no coverage, set to 0")
        med = np.where(uncovered, 0.0, med)
    return Tensor(med.astype(stack.images[0].data.dtype))


# ---------------------------------------------------------------------------
# synthetic scenes

@dataclass
class SceneSpec:
    """Which texture process to draw and how the bands correlate."""

    kind: str = "gaussian-field"
    rho: float = 0.5        # inter-band correlation
    detail: float = 1.5     # gaussian-field smoothing sigma, pixels
    contrast: float = 0.15  # output standard deviation before clipping

    GENERATORS = ("gaussian-field", "blocks", "stripes", "mixed")


def gaussian_blur(img, sigma):
    """Separable gaussian blur over the last two axes, reflect boundary."""
    if sigma <= 0:
        return img.copy()
    radius = max(1, int(math.ceil(3.0 * sigma)))
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (t / sigma) ** 2)
    k /= k.sum()
    h, w = img.shape[-2], img.shape[-1]
    pad = [(0, 0)] * (img.ndim - 2) + [(radius, radius), (0, 0)]
    work = np.pad(img.astype(np.float64), pad, mode="reflect")
    out = sum(k[i] * work[..., i : i + h, :] for i in range(2 * radius + 1))
    pad = [(0, 0)] * (img.ndim - 2) + [(0, 0), (radius, radius)]
    work = np.pad(out, pad, mode="reflect")
    out = sum(k[i] * work[..., :, i : i + w] for i in range(2 * radius + 1))
    return out.astype(img.dtype)


def _standardize(f):
    s = f.std()
    if s < 1e-12:
        return np.zeros_like(f)
    return (f - f.mean()) / s


def _field(kind, rng, h, w, spec):
    """One standardized stationary field."""
    if kind == "gaussian-field":
        noise = rng.standard_normal((h, w))
        return _standardize(gaussian_blur(noise, spec.detail))
    if kind == "blocks":
        canvas = np.zeros((h, w))
        n = max(4, round(h * w / 48))
        ys = rng.integers(0, h, n)
        xs = rng.integers(0, w, n)
        hh = rng.integers(2, 9, n)
        ww = rng.integers(2, 9, n)
        vv = rng.standard_normal(n)
        for y0, x0, bh, bw, v in zip(ys, xs, hh, ww, vv):
            canvas[y0 : min(y0 + bh, h), x0 : min(x0 + bw, w)] += v
        return _standardize(canvas)
    if kind == "stripes":
        yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
        canvas = np.zeros((h, w))
        for _ in range(3):
            wavelength = rng.uniform(4.0, 16.0)
            angle = rng.uniform(0, np.pi)
            phase = rng.uniform(0, 2 * np.pi)
            fy, fx = np.sin(angle) / wavelength, np.cos(angle) / wavelength
            canvas += rng.uniform(0.5, 1.0) * np.sin(2 * np.pi * (fy * yy + fx * xx) + phase)
        return _standardize(canvas)
    if kind == "mixed":
        parts = [
            0.5 * _field("gaussian-field", rng, h, w, spec),
            0.3 * _field("blocks", rng, h, w, spec),
            0.2 * _field("stripes", rng, h, w, spec),
        ]
        return _standardize(sum(parts))
    raise ValueError(f"unknown scene generator {kind!r} (choose from {SceneSpec.GENERATORS})")


def synth_scene(seed, bands, height, width, spec):
    """Stationary multispectral scene in [0,1] with inter-band correlation rho.

    Identical seed gives an identical scene; different canvas sizes render the
    same underlying texture statistics.
    """
    rng = np.random.default_rng(seed)
    shared = _field(spec.kind, rng, height, width, spec)
    rho = float(spec.rho)
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"rho must be in [0,1], got {rho}")
    out = np.empty((bands, height, width), dtype=np.float64)
    for b in range(bands):
        own = _field(spec.kind, rng, height, width, spec)
        z = _standardize(math.sqrt(rho) * shared + math.sqrt(1.0 - rho) * own)
        out[b] = np.clip(0.5 + spec.contrast * z, 0.0, 1.0)
    return Tensor(out.astype(np.float32))


# ---------------------------------------------------------------------------
# reduced-resolution pair construction

def wald_degrade(gt, r, pan_weights=None):
    """Build a PAN/LRMS pair from a clean scene, keeping the scene as reference.

    LRMS: gaussian blur (sigma = 0.5*r) then bicubic decimation by r.
    PAN: normalized weighted band sum at full resolution.
    """
    c, h, w = gt.shape
    if h < 2 * r or w < 2 * r:
        raise ValueError(f"scene {h}x{w} too small for ratio {r}")
    lh, lw = h / r, w / r
    if abs(lh - round(lh)) > 1e-9 or abs(lw - round(lw)) > 1e-9:
        raise ValueError(f"extents {h}x{w} do not divide by ratio {r}")
    lh, lw = int(round(lh)), int(round(lw))
    if pan_weights is None:
        pan_weights = np.full(c, 1.0 / c)
    pan_weights = np.asarray(pan_weights, dtype=np.float64)
    if pan_weights.shape != (c,) or (pan_weights < 0).any():
        raise ValueError(f"pan_weights must be {c} nonnegative values")
    if abs(pan_weights.sum() - 1.0) > 1e-6:
        raise ValueError(f"pan_weights sum to {pan_weights.sum()}, expected 1")

    blurred = gaussian_blur(gt.data, 0.5 * r)
    lrms = bicubic_resize(blurred[None], lh, lw)[0]
    lrms = np.clip(lrms, 0.0, 1.0)

    pan = np.zeros((h, w), dtype=np.float64)
    for b in range(c):
        pan += pan_weights[b] * gt.data[b].astype(np.float64)
    return SamplePair(
        pan=Tensor(pan[None].astype(np.float32)),
        lrms=Tensor(lrms.astype(np.float32)),
        gt=Tensor(gt.data.copy()),
        ratio=float(r),
    ).validate()


def make_multiscale_testset(seed, scales, bands, r, count_per_scale, spec=None,
                            pan_weights=None):
    """count_per_scale pairs per scale from one seeded texture family."""
    spec = spec or SceneSpec()
    pairs = []
    for s in scales:
        if abs(s / (2 * r) - round(s / (2 * r))) > 1e-9:
            raise ValueError(f"scale {s} is not divisible by 2r = {2 * r}")
        for i in range(count_per_scale):
            child = np.random.SeedSequence([int(seed), int(s), i])
            gt = synth_scene(child, bands, s, s, spec)
            pair = wald_degrade(gt, r, pan_weights)
            pair.id = f"scale{s}-{i:03d}"
            pairs.append(pair.validate())
    return pairs


# ---------------------------------------------------------------------------
# raster I/O

RASTER_MAGIC = b"SFRT"
RASTER_VERSION = 1


def write_raster(path, img):
    """Write [C,H,W] values in [0,1]; .pgm/.ppm go to 16-bit netpbm, anything
    else to the native float format (lossless round trip)."""
    data = img.data if isinstance(img, Tensor) else np.asarray(img, dtype=np.float32)
    if data.ndim != 3:
        raise RasterFormatError(f"expected [C,H,W], got shape {data.shape}")
    if not np.isfinite(data).all():
        raise RasterFormatError("raster values must be finite")
    if data.min() < 0.0 or data.max() > 1.0:
        raise RasterFormatError("raster values must lie in [0, 1]")
    path = str(path)
    if path.endswith((".pgm", ".ppm")):
        _write_netpbm(path, data)
    else:
        _write_native(path, data)


def read_raster(path):
    with open(path, "rb") as fh:
        head = fh.read(4)
        fh.seek(0)
        if head == RASTER_MAGIC:
            return _read_native(fh)
        if head[:2] in (b"P5", b"P6"):
            return _read_netpbm(fh)
    raise RasterFormatError(f"{path}: bad magic {head!r}")


def _write_native(path, data):
    c, h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(RASTER_MAGIC)
        fh.write(np.array([RASTER_VERSION, c, h, w], dtype="<u4").tobytes())
        fh.write(np.ascontiguousarray(data, dtype="<f4").tobytes())


def _read_native(fh):
    fh.read(4)
    header = fh.read(16)
    if len(header) != 16:
        raise RasterFormatError("truncated native raster header")
    version, c, h, w = np.frombuffer(header, dtype="<u4")
    if version != RASTER_VERSION:
        raise RasterFormatError(f"unsupported native raster version {version}")
    payload = fh.read(int(c) * int(h) * int(w) * 4)
    if len(payload) != int(c) * int(h) * int(w) * 4:
        raise RasterFormatError("truncated native raster payload")
    arr = np.frombuffer(payload, dtype="<f4").reshape(int(c), int(h), int(w))
    return Tensor(arr.astype(np.float32))


def _write_netpbm(path, data):
    c, h, w = data.shape
    if c not in (1, 3):
        raise RasterFormatError(f"netpbm supports 1 or 3 bands, got {c}")
    magic = b"P5" if c == 1 else b"P6"
    samples = np.round(data * 65535.0).astype(">u2")
    interleaved = np.moveaxis(samples, 0, -1)  # H,W,C
    with open(path, "wb") as fh:
        fh.write(magic + b"\n%d %d\n65535\n" % (w, h))
        fh.write(interleaved.tobytes())


def _read_netpbm(fh):
    magic = fh.read(2)
    c = 1 if magic == b"P5" else 3
    tokens = []
    while len(tokens) < 3:
        line = fh.readline()
        if not line:
            raise RasterFormatError("truncated netpbm header")
        line = line.split(b"#")[0]
        tokens.extend(line.split())
    w, h, maxval = (int(t) for t in tokens[:3])
    if maxval != 65535:
        raise RasterFormatError(f"expected 16-bit netpbm (maxval 65535), got {maxval}")
    payload = fh.read(h * w * c * 2)
    if len(payload) != h * w * c * 2:
        raise RasterFormatError("truncated netpbm payload")
    arr = np.frombuffer(payload, dtype=">u2").reshape(h, w, c)
    return Tensor((np.moveaxis(arr, -1, 0) / 65535.0).astype(np.float32))


# ---------------------------------------------------------------------------
# manifests

def write_manifest(directory, pairs, name="manifest.txt"):
    """Save pairs as native rasters plus one key-value record per line."""
    import os

    os.makedirs(directory, exist_ok=True)
    lines = []
    for pair in pairs:
        pair.validate()
        pid = pair.id or f"pair{len(lines):03d}"
        pan_rel, lrms_rel = f"{pid}_pan.sfr", f"{pid}_lrms.sfr"
        write_raster(os.path.join(directory, pan_rel), pair.pan)
        write_raster(os.path.join(directory, lrms_rel), pair.lrms)
        gt_rel = "-"
        if pair.gt is not None:
            gt_rel = f"{pid}_gt.sfr"
            write_raster(os.path.join(directory, gt_rel), pair.gt)
        lines.append(
            f"id={pid} pan={pan_rel} lrms={lrms_rel} gt={gt_rel} "
            f"r={pair.ratio} scale={pair.scale}"
        )
    path = os.path.join(directory, name)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


def load_manifest(path):
    import os

    base = os.path.dirname(os.path.abspath(path))
    pairs = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            rec = {}
            for token in line.split():
                if "=" not in token:
                    raise ValueError(f"{path}:{lineno}: malformed token {token!r}")
                key, val = token.split("=", 1)
                rec[key] = val
            for key in ("id", "pan", "lrms", "r"):
                if key not in rec:
                    raise ValueError(f"{path}:{lineno}: missing field {key!r}")
            gt = None
            if rec.get("gt", "-") != "-":
                gt = read_raster(os.path.join(base, rec["gt"]))
            pairs.append(
                SamplePair(
                    pan=read_raster(os.path.join(base, rec["pan"])),
                    lrms=read_raster(os.path.join(base, rec["lrms"])),
                    gt=gt,
                    ratio=float(rec["r"]),
                    id=rec["id"],
                ).validate()
            )
    if not pairs:
        raise ValueError(f"{path}: manifest is empty")
    return pairs
