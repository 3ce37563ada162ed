"""The fusion network: conv encoder, windowed transformer blocks, cross fusion.

Each modality is tokenized into p x p windows, encoded by two 3x3 convs, then
refined by blocks that alternate attention inside each window (spatial) with
attention along the window sequence (rotary-encoded, so scores depend only on
relative window positions). Cross blocks let the spectral stream query the
panchromatic stream on both axes; a 3x3 head plus a global residual from the
upsampled spectral input produces the fused image.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .patchify import PatchSequence, bicubic_resize, pad_to_multiple, patchify, reassemble
from .tensor import Tensor


class MisregistrationError(ValueError):
    pass


@dataclass
class ModelConfig:
    channels: int = 32
    heads: int = 4
    n_single: int = 2
    n_cross: int = 2
    ffn_ratio: int = 2
    ms_bands: int = 4
    use_rope: bool = True
    use_seq_transformer: bool = True
    use_sap: bool = True
    global_residual: bool = True
    rope_base: float = 10000.0

    def validate(self):
        if self.channels % self.heads:
            raise ValueError(f"channels {self.channels} not divisible by heads {self.heads}")
        if (self.channels // self.heads) % 2:
            raise ValueError(
                f"head dimension {self.channels // self.heads} must be even for rotary pairs"
            )
        if self.n_single < 1 or self.n_cross < 1:
            raise ValueError("block counts must be >= 1")
        if self.ffn_ratio < 1:
            raise ValueError("ffn_ratio must be >= 1")
        return self

    @property
    def head_dim(self):
        return self.channels // self.heads


@dataclass
class TokenLayout:
    """Grid bookkeeping carried alongside [B*T, C, p, p] feature maps."""

    batch: int
    seq_len: int
    window: int


class ModelParams:
    """Named weight tensors; shapes are a pure function of the config."""

    def __init__(self, tensors):
        self.tensors = dict(tensors)
        names = list(self.tensors)
        if len(set(names)) != len(names):
            raise ValueError("duplicate parameter names")

    def __getitem__(self, name):
        return self.tensors[name]

    def __contains__(self, name):
        return name in self.tensors

    def __iter__(self):
        return iter(self.tensors)

    def items(self):
        return self.tensors.items()

    def names(self):
        return list(self.tensors)

    @property
    def count(self):
        return sum(t.size for t in self.tensors.values())

    def zero_grad(self):
        for t in self.tensors.values():
            t.zero_grad()

    def astype(self, dtype):
        return ModelParams(
            {k: Tensor(v.data.astype(dtype), requires_grad=v.requires_grad)
             for k, v in self.items()}
        )

    def check_finite(self):
        for k, v in self.items():
            if not np.isfinite(v.data).all():
                raise ValueError(f"parameter {k} contains non-finite values")
        return self


def _trunc_normal(rng, shape, std=0.02):
    out = rng.standard_normal(shape)
    for _ in range(8):
        bad = np.abs(out) > 2.0
        if not bad.any():
            break
        out[bad] = rng.standard_normal(int(bad.sum()))
    return (out * std).astype(np.float32)


def init_params(cfg, seed=0, dtype=np.float32):
    """Build the full weight set.

    Output projections (attention out-proj, second FFN matrix, head conv) start
    at zero so every residual branch is initially the identity.
    """
    cfg.validate()
    rng = np.random.default_rng(seed)
    c = cfg.channels
    f = cfg.ffn_ratio * c
    p = {}

    def w(name, shape, zero=False):
        arr = np.zeros(shape, dtype=np.float32) if zero else _trunc_normal(rng, shape)
        p[name] = Tensor(arr.astype(dtype), requires_grad=True)

    def b(name, n, value=0.0):
        p[name] = Tensor(np.full(n, value, dtype=dtype), requires_grad=True)

    def ln(prefix):
        b(f"{prefix}.g", c, 1.0)
        b(f"{prefix}.b", c, 0.0)

    def attn(prefix):
        for proj in ("wq", "wk", "wv"):
            w(f"{prefix}.{proj}", (c, c))
        w(f"{prefix}.wo", (c, c), zero=True)
        for bias in ("bq", "bk", "bv"):
            b(f"{prefix}.{bias}", c)
        b(f"{prefix}.bo", c)

    def ffn(prefix):
        w(f"{prefix}.w1", (c, f))
        b(f"{prefix}.b1", f)
        w(f"{prefix}.w2", (f, c), zero=True)
        b(f"{prefix}.b2", c)

    for mod, cin in (("pan", 1), ("ms", cfg.ms_bands)):
        w(f"enc.{mod}.conv1.w", (c, cin, 3, 3))
        b(f"enc.{mod}.conv1.b", c)
        w(f"enc.{mod}.conv2.w", (c, c, 3, 3))
        b(f"enc.{mod}.conv2.b", c)
        for i in range(cfg.n_single):
            base = f"single.{mod}.{i}"
            ln(f"{base}.ln1")
            attn(f"{base}.spa")
            ln(f"{base}.ln2")
            ffn(f"{base}.ffn_a")
            ln(f"{base}.ln3")
            attn(f"{base}.seq")
            ln(f"{base}.ln4")
            ffn(f"{base}.ffn_b")

    for i in range(cfg.n_cross):
        base = f"cross.{i}"
        ln(f"{base}.ln_q1")
        ln(f"{base}.ln_kv1")
        attn(f"{base}.spa")
        ln(f"{base}.ln2")
        ffn(f"{base}.ffn_a")
        ln(f"{base}.ln_q2")
        ln(f"{base}.ln_kv2")
        attn(f"{base}.seq")
        ln(f"{base}.ln3")
        ffn(f"{base}.ffn_b")

    w("head.w", (cfg.ms_bands, c, 3, 3), zero=True)
    b("head.b", cfg.ms_bands)
    return ModelParams(p)


# ---------------------------------------------------------------------------
# building blocks

def _ln(x, params, prefix):
    return T.layer_norm(x, 1, params[f"{prefix}.g"], params[f"{prefix}.b"])


def _to_tokens(x, layout, axis):
    """[B*T, C, p, p] -> token layout for the requested attention axis."""
    b, t, p = layout.batch, layout.seq_len, layout.window
    if axis == "spatial":
        return T.rearrange(x, "(b t) c ph pw -> (b t) (ph pw) c", b=b, t=t, ph=p, pw=p)
    if axis == "sequence":
        return T.rearrange(x, "(b t) c ph pw -> (b ph pw) t c", b=b, t=t, ph=p, pw=p)
    raise ValueError(f"unknown attention axis {axis!r}")


def _from_tokens(x, layout, axis):
    b, t, p = layout.batch, layout.seq_len, layout.window
    if axis == "spatial":
        return T.rearrange(x, "(b t) (ph pw) c -> (b t) c ph pw", b=b, t=t, ph=p, pw=p)
    return T.rearrange(x, "(b ph pw) t c -> (b t) c ph pw", b=b, t=t, ph=p, pw=p)


def attention(q_src, kv_src, axis, params, prefix, cfg, layout, rope,
              positions=None, capture=None):
    """Multi-head attention along one axis of the token grid.

    q_src/kv_src are [B*T, C, p, p] feature maps with identical layout;
    self-attention passes the same tensor twice. Rotary phases are applied to
    the projected queries and keys on the sequence axis only.
    """
    if q_src.shape != kv_src.shape:
        raise T.ShapeError(
            f"attention layout mismatch: q {q_src.shape} vs kv {kv_src.shape}"
        )
    h = cfg.heads
    qt = _to_tokens(q_src, layout, axis)
    kt = qt if kv_src is q_src else _to_tokens(kv_src, layout, axis)

    def project(tok, wname, bname):
        return T.linear(tok, params[f"{prefix}.{wname}"], params[f"{prefix}.{bname}"])

    q = T.rearrange(project(qt, "wq", "bq"), "n l (h d) -> n h l d", h=h, d=cfg.head_dim)
    k = T.rearrange(project(kt, "wk", "bk"), "n l (h d) -> n h l d", h=h, d=cfg.head_dim)
    v = T.rearrange(project(kt, "wv", "bv"), "n l (h d) -> n h l d", h=h, d=cfg.head_dim)

    if axis == "sequence" and rope:
        if positions is None:
            positions = list(range(layout.seq_len))
        q = T.rope_rotate(q, positions, cfg.rope_base)
        k = T.rope_rotate(k, positions, cfg.rope_base)

    o = T.scaled_dot_attention(q, k, v, capture=capture)
    o = T.rearrange(o, "n h l d -> n l (h d)", h=h, d=cfg.head_dim)
    o = T.linear(o, params[f"{prefix}.wo"], params[f"{prefix}.bo"])
    return _from_tokens(o, layout, axis)


def _ffn(x, params, prefix, layout):
    p = layout.window
    tok = T.rearrange(x, "n c ph pw -> n (ph pw) c", ph=p, pw=p)
    hid = T.gelu(T.linear(tok, params[f"{prefix}.w1"], params[f"{prefix}.b1"]))
    out = T.linear(hid, params[f"{prefix}.w2"], params[f"{prefix}.b2"])
    return T.rearrange(out, "n (ph pw) c -> n c ph pw", ph=p, pw=p)


def encode(x5d, params, cfg, modality):
    """Flatten the sequence axis into the batch and run the two-conv encoder."""
    b, t = x5d.shape[0], x5d.shape[1]
    x = T.rearrange(x5d, "b t c ph pw -> (b t) c ph pw", b=b, t=t)
    x = T.conv2d(x, params[f"enc.{modality}.conv1.w"], params[f"enc.{modality}.conv1.b"])
    x = T.gelu(x)
    x = T.conv2d(x, params[f"enc.{modality}.conv2.w"], params[f"enc.{modality}.conv2.b"])
    return x


def single_block(f, params, cfg, layout, modality="ms", index=0, capture=None):
    """Spatial self-attention + FFN, then sequence self-attention + FFN.

    With use_seq_transformer off, the sequence stage runs its weights as a
    second spatial stage instead.
    """
    base = f"single.{modality}.{index}"
    seq_axis = "sequence" if cfg.use_seq_transformer else "spatial"
    n1 = _ln(f, params, f"{base}.ln1")
    f1 = T.add(f, attention(n1, n1, "spatial", params, f"{base}.spa", cfg, layout, rope=False))
    f2 = T.add(f1, _ffn(_ln(f1, params, f"{base}.ln2"), params, f"{base}.ffn_a", layout))
    normed = _ln(f2, params, f"{base}.ln3")
    f3 = T.add(
        f2,
        attention(normed, normed, seq_axis, params, f"{base}.seq", cfg, layout,
                  rope=cfg.use_rope and cfg.use_seq_transformer, capture=capture),
    )
    f4 = T.add(f3, _ffn(_ln(f3, params, f"{base}.ln4"), params, f"{base}.ffn_b", layout))
    return f4


def cross_block(f_ms, f_pan, params, cfg, layout, index=0, capture=None):
    """Spectral stream queries the panchromatic stream, spatially then along
    the sequence; FFNs refine after each exchange."""
    if f_ms.shape != f_pan.shape:
        raise T.ShapeError(f"cross layouts differ: ms {f_ms.shape} vs pan {f_pan.shape}")
    base = f"cross.{index}"
    seq_axis = "sequence" if cfg.use_seq_transformer else "spatial"
    m1 = T.add(
        f_ms,
        attention(_ln(f_ms, params, f"{base}.ln_q1"), _ln(f_pan, params, f"{base}.ln_kv1"),
                  "spatial", params, f"{base}.spa", cfg, layout, rope=False),
    )
    m2 = T.add(m1, _ffn(_ln(m1, params, f"{base}.ln2"), params, f"{base}.ffn_a", layout))
    m3 = T.add(
        m2,
        attention(_ln(m2, params, f"{base}.ln_q2"), _ln(f_pan, params, f"{base}.ln_kv2"),
                  seq_axis, params, f"{base}.seq", cfg, layout,
                  rope=cfg.use_rope and cfg.use_seq_transformer, capture=capture),
    )
    m4 = T.add(m3, _ffn(_ln(m3, params, f"{base}.ln3"), params, f"{base}.ffn_b", layout))
    return m4


# ---------------------------------------------------------------------------
# full forward

def forward(pan, lrms, r, params, cfg, window):
    """Fuse a PAN batch [B,1,H,W] with an LRMS batch [B,C,H/r,W/r].

    Returns [B,C,H,W]. Window size controls the tokenization; any H,W >= window
    works with the same parameter set.
    """
    cfg.validate()
    bsz, _, h, w = pan.shape
    _, cms, lh, lw = lrms.shape
    if cms != cfg.ms_bands:
        raise T.ShapeError(f"expected {cfg.ms_bands} spectral bands, got {cms}")
    if h != round(r * lh) or w != round(r * lw):
        raise MisregistrationError(
            f"PAN {h}x{w} is not {r}x the LRMS {lh}x{lw} within rounding"
        )
    if h < window or w < window:
        raise ValueError(f"image {h}x{w} smaller than window {window}")

    ms_up = bicubic_resize(lrms, h, w)
    pan_pad, pb, pr = pad_to_multiple(pan, window)
    ms_pad, _, _ = pad_to_multiple(ms_up, window)

    pan_seq = patchify(pan_pad, window, pad_bottom=pb, pad_right=pr)
    ms_seq = patchify(ms_pad, window, pad_bottom=pb, pad_right=pr)
    layout = TokenLayout(batch=bsz, seq_len=pan_seq.tokens.shape[1], window=window)

    f_pan = encode(pan_seq.tokens, params, cfg, "pan")
    f_ms = encode(ms_seq.tokens, params, cfg, "ms")

    for i in range(cfg.n_single):
        f_pan = single_block(f_pan, params, cfg, layout, "pan", i)
        f_ms = single_block(f_ms, params, cfg, layout, "ms", i)
    for i in range(cfg.n_cross):
        f_ms = cross_block(f_ms, f_pan, params, cfg, layout, i)

    out = T.conv2d(f_ms, params["head.w"], params["head.b"])
    out5d = T.rearrange(
        out, "(b t) c ph pw -> b t c ph pw", b=bsz, t=layout.seq_len
    )
    fused = reassemble(
        PatchSequence(
            tokens=out5d,
            grid_rows=ms_seq.grid_rows,
            grid_cols=ms_seq.grid_cols,
            window=window,
            orig_h=ms_seq.orig_h,
            orig_w=ms_seq.orig_w,
            pad_bottom=pb,
            pad_right=pr,
        )
    )
    if cfg.global_residual:
        fused = T.add(fused, ms_up)
    return fused


def sequence_attention_probs(f, params, cfg, layout, prefix, positions):
    """Probability matrices of one sequence attention, for diagnostics."""
    capture = {}
    normed = _ln(f, params, f"{prefix}.ln3") if f"{prefix}.ln3.g" in params else f
    attention(normed, normed, "sequence", params, f"{prefix}.seq", cfg, layout,
              rope=cfg.use_rope, positions=positions, capture=capture)
    return capture["probs"]
