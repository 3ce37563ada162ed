"""Window tokenization with bucketed window sampling.

Images are cut into non-overlapping p x p windows laid out along a new
sequence axis in raster order; the sequence length carries the image scale.
Training draws the window size from a bucket distribution, inference always
uses one fixed window.
"""

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import Tensor


# ---------------------------------------------------------------------------
# bicubic resize (Catmull-Rom, a = -0.5, half-pixel centers, edge clamp)

_CUBIC_A = -0.5


def _cubic_kernel(s):
    s = np.abs(s)
    a = _CUBIC_A
    out = np.zeros_like(s)
    near = s <= 1.0
    far = (s > 1.0) & (s < 2.0)
    out[near] = ((a + 2.0) * s[near] - (a + 3.0)) * s[near] ** 2 + 1.0
    out[far] = a * (s[far] ** 3 - 5.0 * s[far] ** 2 + 8.0 * s[far] - 4.0)
    return out


def _resize_axis_taps(n_in, n_out):
    dst = np.arange(n_out, dtype=np.float64)
    src = (dst + 0.5) * (n_in / n_out) - 0.5
    base = np.floor(src).astype(np.int64)
    t = src - base
    offsets = np.array([-1, 0, 1, 2])[:, None]
    idx = np.clip(base[None, :] + offsets, 0, n_in - 1)
    dist = offsets - t[None, :]
    weights = _cubic_kernel(dist.astype(np.float64))
    return idx, weights


def bicubic_resize(x, out_h, out_w):
    """Resize the last two axes of [B,C,H,W]; fractional ratios supported.

    Not differentiable: intended for network inputs and reference baselines.
    """
    if out_h < 1 or out_w < 1:
        raise ValueError(f"target extents must be positive, got {out_h}x{out_w}")
    data = x.data if isinstance(x, Tensor) else np.asarray(x)
    h, w = data.shape[-2], data.shape[-1]
    if (out_h, out_w) == (h, w):
        return Tensor(data.copy()) if isinstance(x, Tensor) else data.copy()
    work = data.astype(np.float64)
    if out_h != h:
        idx, wgt = _resize_axis_taps(h, out_h)
        work = sum(wgt[k][:, None] * work[..., idx[k], :] for k in range(4))
    if out_w != w:
        idx, wgt = _resize_axis_taps(w, out_w)
        work = sum(wgt[k][None, :] * work[..., :, idx[k]] for k in range(4))
    out = work.astype(data.dtype)
    return Tensor(out) if isinstance(x, Tensor) else out


# ---------------------------------------------------------------------------
# tokenization

@dataclass
class PatchSequence:
    """Batch of p x p window tokens plus the grid metadata to undo the cut."""

    tokens: Tensor  # [B, T, C, p, p]
    grid_rows: int
    grid_cols: int
    window: int
    orig_h: int
    orig_w: int
    pad_bottom: int = 0
    pad_right: int = 0

    def validate(self):
        b, t, c, ph, pw = self.tokens.shape
        if ph != self.window or pw != self.window:
            raise ValueError(f"token extent {ph}x{pw} does not match window {self.window}")
        if t != self.grid_rows * self.grid_cols:
            raise ValueError(
                f"sequence length {t} != grid {self.grid_rows}x{self.grid_cols}"
            )
        if self.orig_h + self.pad_bottom != self.grid_rows * self.window:
            raise ValueError("row extent inconsistent with grid and padding")
        if self.orig_w + self.pad_right != self.grid_cols * self.window:
            raise ValueError("column extent inconsistent with grid and padding")
        return self


def pad_to_multiple(x, p):
    """Reflect-pad bottom/right so both extents divide by p; pads are < p."""
    if p < 1:
        raise ValueError(f"window must be positive, got {p}")
    h, w = x.shape[-2], x.shape[-1]
    pad_bottom = (-h) % p
    pad_right = (-w) % p
    return T.pad_reflect(x, pad_bottom, pad_right), pad_bottom, pad_right


def patchify(x, p, pad_bottom=0, pad_right=0):
    """Cut [B,C,H,W] into p x p windows in raster order along a new axis.

    x must already be padded to multiples of p; pass the pads used so the
    sequence remembers the original extents.
    """
    b, c, h, w = x.shape
    if h % p or w % p:
        raise ValueError(f"extents {h}x{w} not divisible by window {p}")
    gr, gc = h // p, w // p
    tokens = T.rearrange(
        x, "b c (gr p1) (gc p2) -> b (gr gc) c p1 p2", gr=gr, gc=gc, p1=p, p2=p
    )
    return PatchSequence(
        tokens=tokens,
        grid_rows=gr,
        grid_cols=gc,
        window=p,
        orig_h=h - pad_bottom,
        orig_w=w - pad_right,
        pad_bottom=pad_bottom,
        pad_right=pad_right,
    ).validate()


def reassemble(seq):
    """Invert patchify and crop any padding; exact inverse of the cut."""
    seq.validate()
    img = T.rearrange(
        seq.tokens,
        "b (gr gc) c p1 p2 -> b c (gr p1) (gc p2)",
        gr=seq.grid_rows,
        gc=seq.grid_cols,
        p1=seq.window,
        p2=seq.window,
    )
    if seq.pad_bottom or seq.pad_right:
        img = T.crop2d(img, seq.orig_h, seq.orig_w)
    return img


# ---------------------------------------------------------------------------
# bucketed window sampling

@dataclass
class BucketSampler:
    """Window-size source: bucketed draws in training, fixed at inference.

    Holds mutable RNG state; one owner per training loop.
    """

    buckets: tuple = (8, 16, 32)
    probabilities: tuple = None
    seed: int = 0
    mode: str = "train"
    infer_window: int = 16
    max_extent: int = None
    _rng: np.random.Generator = field(default=None, repr=False)

    def __post_init__(self):
        if not self.buckets:
            raise ValueError("bucket list is empty")
        self.buckets = tuple(int(b) for b in self.buckets)
        if self.probabilities is None:
            self.probabilities = tuple(1.0 / len(self.buckets) for _ in self.buckets)
        self.probabilities = tuple(float(p) for p in self.probabilities)
        if len(self.probabilities) != len(self.buckets):
            raise ValueError("probabilities and buckets differ in length")
        if any(p < 0 for p in self.probabilities):
            raise ValueError("probabilities must be nonnegative")
        if abs(sum(self.probabilities) - 1.0) > 1e-9:
            raise ValueError(f"probabilities sum to {sum(self.probabilities)}, expected 1")
        if any(b < 4 for b in self.buckets):
            raise ValueError(f"bucket sizes must be >= 4, got {self.buckets}")
        if self.max_extent is not None and any(b > self.max_extent for b in self.buckets):
            raise ValueError(
                f"bucket sizes {self.buckets} exceed the crop extent {self.max_extent}"
            )
        if self.mode not in ("train", "infer"):
            raise ValueError(f"unknown sampler mode {self.mode!r}")
        self._rng = np.random.default_rng(self.seed)

    def sample(self):
        if self.mode == "infer":
            return self.infer_window
        return int(self._rng.choice(self.buckets, p=self.probabilities))


def sample_window(sampler):
    """Draw the next window size from the sampler."""
    return sampler.sample()
