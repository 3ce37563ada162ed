"""Closed-form multiply-accumulate and activation-memory model.

Counting conventions (1 MAC = 2 FLOPs):
  - matmul of [n,a]x[a,b]: n*a*b MACs; convs: pixels * Cout * Cin * k*k.
  - softmax and layer norm cost 5 MACs per element.
  - rotary phases cost 4 MACs per rotated element (queries and keys).
  - `spatial_attention` / `sequence_attention` stages count only the
    interaction terms (scores, softmax, value mixing); projections and rotary
    phases are reported under `projections`. With T windows of p*p pixels at
    width C this makes the spatial entry exactly linear in T
    (2*T*p^4*C + 5*heads*T*p^4) and the sequence entry exactly quadratic
    (2*p^2*T^2*C + 5*heads*p^2*T^2).
  - the global-attention comparison runs the same block program with every
    attention taken over all padded pixels L = Hp*Wp:
    per attention 4*L*C^2 + 2*L^2*C + 5*heads*L^2, plus identical FFN/LN
    costs at L tokens; encoder and head match the windowed model.

Input preparation (the bicubic upsample) is excluded: counts cover the
network graph proper.
"""

from dataclasses import dataclass


@dataclass
class FlopReport:
    """Per-stage MAC counts; total is exactly the sum of stages."""

    stages: dict
    total: int
    peak_activation_elements: int
    peak_activation_bytes: int
    global_attention_total: int
    tokens: int
    window: int
    padded_h: int
    padded_w: int

    def validate(self):
        if self.total != sum(self.stages.values()):
            raise ValueError("stage counts do not sum to the total")
        if any(v < 0 for v in self.stages.values()):
            raise ValueError("negative stage count")
        return self

    def to_lines(self):
        width = max(len(k) for k in self.stages)
        lines = [
            f"window={self.window} tokens={self.tokens} "
            f"padded={self.padded_h}x{self.padded_w}"
        ]
        for k, v in self.stages.items():
            lines.append(f"  {k.ljust(width)}  {v:>16,d} MAC")
        lines.append(f"  {'total'.ljust(width)}  {self.total:>16,d} MAC")
        lines.append(
            f"  {'global-attention ref'.ljust(width)}  {self.global_attention_total:>16,d} MAC"
        )
        lines.append(
            f"  peak activations ~ {self.peak_activation_elements:,d} elements "
            f"({self.peak_activation_bytes / 1e6:.1f} MB)"
        )
        return lines


def _padded(h, p):
    return ((h + p - 1) // p) * p


def flop_count(cfg, h, w, r=2.0, window=16, batch=1):
    """Analytic MAC counts for one forward pass at the given extents."""
    cfg.validate()
    p = window
    hp, wp = _padded(h, p), _padded(w, p)
    lp = hp * wp
    t = (hp // p) * (wp // p)
    s = p * p
    c = cfg.channels
    f = cfg.ffn_ratio * c
    heads = cfg.heads
    b = batch
    n_tok = b * t * s  # == b * lp

    ln_cost = 5 * n_tok * c
    proj_cost = 4 * n_tok * c * c
    rope_cost = 4 * 2 * n_tok * c if (cfg.use_rope and cfg.use_seq_transformer) else 0
    spa_interact = 2 * b * t * s * s * c + 5 * heads * b * t * s * s
    seq_interact = 2 * b * s * t * t * c + 5 * heads * b * s * t * t
    ffn_cost = 2 * n_tok * c * f + 5 * n_tok * f

    stages = {
        "encoder": 0,
        "projections": 0,
        "spatial_attention": 0,
        "sequence_attention": 0,
        "cross_spatial": 0,
        "cross_sequence": 0,
        "ffn": 0,
        "layer_norm": 0,
        "head": 0,
    }

    for cin in (1, cfg.ms_bands):  # pan, ms encoders
        stages["encoder"] += 9 * b * lp * c * cin + 9 * b * lp * c * c + 5 * b * lp * c

    n_single_stacks = 2 * cfg.n_single  # both modalities
    for _ in range(n_single_stacks):
        stages["projections"] += 2 * proj_cost + rope_cost
        stages["spatial_attention"] += spa_interact
        if cfg.use_seq_transformer:
            stages["sequence_attention"] += seq_interact
        else:
            stages["spatial_attention"] += spa_interact
        stages["ffn"] += 2 * ffn_cost
        stages["layer_norm"] += 4 * ln_cost

    for _ in range(cfg.n_cross):
        stages["projections"] += 2 * proj_cost + rope_cost
        stages["cross_spatial"] += spa_interact
        if cfg.use_seq_transformer:
            stages["cross_sequence"] += seq_interact
        else:
            stages["cross_spatial"] += spa_interact
        stages["ffn"] += 2 * ffn_cost
        stages["layer_norm"] += 6 * ln_cost

    stages["head"] = 9 * b * lp * cfg.ms_bands * c

    # hypothetical model with every attention global over all padded pixels
    l_glob = b * lp
    glob_attn = 4 * l_glob * c * c + 2 * b * lp * lp * c + 5 * heads * b * lp * lp
    glob = stages["encoder"] + stages["head"]
    for _ in range(n_single_stacks):
        glob += 2 * glob_attn + 2 * (2 * l_glob * c * f + 5 * l_glob * f) + 4 * 5 * l_glob * c
    for _ in range(cfg.n_cross):
        glob += 2 * glob_attn + 2 * (2 * l_glob * c * f + 5 * l_glob * f) + 6 * 5 * l_glob * c

    peak = memory_estimate(cfg, h, w, window, batch)
    return FlopReport(
        stages=stages,
        total=sum(stages.values()),
        peak_activation_elements=peak,
        peak_activation_bytes=peak * 4,
        global_attention_total=glob,
        tokens=t,
        window=p,
        padded_h=hp,
        padded_w=wp,
    ).validate()


def memory_estimate(cfg, h, w, window=16, batch=1):
    """Peak live float32 elements along the inference schedule.

    Model: the two modal feature streams plus the upsampled spectral input
    stay live across the blocks; on top of that, the widest single operation
    holds its operands, output, and one temporary. Monotone in the pixel
    count and linear in the batch size.
    """
    cfg.validate()
    p = window
    hp, wp = _padded(h, p), _padded(w, p)
    lp = hp * wp
    t = (hp // p) * (wp // p)
    s = p * p
    c = cfg.channels
    b = batch
    feat = b * c * lp

    persistent = 2 * feat + b * cfg.ms_bands * lp + b * lp

    conv_tr = 9 * b * c * lp + 2 * feat
    attn_spa_tr = 3 * feat + b * cfg.heads * t * s * s + 2 * feat
    attn_seq_tr = 3 * feat + b * cfg.heads * s * t * t + 2 * feat
    ffn_tr = 2 * b * cfg.ffn_ratio * c * lp + 2 * feat
    transient = max(conv_tr, attn_spa_tr, attn_seq_tr, ffn_tr)
    return persistent + transient
