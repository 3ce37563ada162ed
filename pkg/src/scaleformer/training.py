"""Optimization loop: mean-absolute loss, cosine LR, clipping, Adam, and
bucketed window sampling per step."""

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .model import forward
from .patchify import BucketSampler, sample_window
from .tensor import Tape, Tensor, backward


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 60
    batch_size: int = 4
    crop: int = 64
    lr_init: float = 5e-4
    lr_final: float = 5e-8
    clip_norm: float = 4.0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    buckets: tuple = (8, 16, 32)
    bucket_probs: tuple = None
    infer_window: int = 16

    def validate(self):
        if not self.lr_init > self.lr_final > 0:
            raise ValueError(
                f"need lr_init > lr_final > 0, got {self.lr_init}, {self.lr_final}"
            )
        if self.clip_norm <= 0:
            raise ValueError(f"clip_norm must be positive, got {self.clip_norm}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        return self


@dataclass
class OptimizerState:
    m: dict
    v: dict
    step: int = 0

    @classmethod
    def for_params(cls, params):
        return cls(
            m={k: np.zeros_like(t.data) for k, t in params.items()},
            v={k: np.zeros_like(t.data) for k, t in params.items()},
        )


@dataclass
class EpochLog:
    epoch: int
    mean_loss: float
    lr: float
    window_counts: dict

    def to_line(self):
        wins = " ".join(f"win{p}={n}" for p, n in sorted(self.window_counts.items()))
        return f"epoch={self.epoch} loss={self.mean_loss:.6f} lr={self.lr:.3e} {wins}"


def window_histogram(logs):
    total = {}
    for log in logs:
        for p, n in log.window_counts.items():
            total[p] = total.get(p, 0) + n
    return total


# ---------------------------------------------------------------------------
# pieces

def l1_loss(h_out, g):
    """Mean absolute difference; subgradient at exact ties is 0."""
    if h_out.shape != g.shape:
        raise T.ShapeError(f"loss shapes differ: {h_out.shape} vs {g.shape}")
    return T.tmean(T.absval(T.sub(h_out, g)))


def cosine_lr(step, total_steps, lr_init, lr_final):
    """Half-cosine from lr_init (step 0) down to lr_final (step == total)."""
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    if total_steps == 0:
        return lr_init
    return lr_final + 0.5 * (lr_init - lr_final) * (
        1.0 + math.cos(math.pi * step / total_steps)
    )


def clip_gradients(params, max_norm):
    """Scale all gradients so their joint L2 norm is at most max_norm."""
    total = 0.0
    for _, t in params.items():
        if t.grad is not None:
            total += float(np.dot(t.grad.reshape(-1), t.grad.reshape(-1)))
    norm = math.sqrt(total)
    if norm <= max_norm or norm == 0.0:
        return 1.0
    scale = max_norm / norm
    for _, t in params.items():
        if t.grad is not None:
            t.grad *= np.asarray(scale, dtype=t.grad.dtype)
    return scale


def adam_step(params, state, lr, cfg):
    """Bias-corrected Adam update in place."""
    b1, b2, eps = cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps
    state.step += 1
    t = state.step
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = p.grad
        if g is None:
            continue
        if p.data.shape != state.m[name].shape:
            raise ValueError(f"optimizer state for {name} has drifted shape")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        update = (m / c1) / (np.sqrt(v / c2) + eps)
        p.data -= np.asarray(lr, dtype=p.data.dtype) * update.astype(p.data.dtype)
    return params, state


# ---------------------------------------------------------------------------
# the loop

def _aligned_crop(pair, crop, r, rng):
    """Seeded random crop of `crop` pixels, aligned to the LRMS grid."""
    _, h, w = pair.pan.shape
    if h == crop and w == crop:
        return pair.pan.data, pair.lrms.data, pair.gt.data
    lcrop = crop / r
    if abs(lcrop - round(lcrop)) > 1e-9:
        raise ValueError(f"crop {crop} does not divide by the ratio {r}")
    lcrop = int(round(lcrop))
    _, lh, lw = pair.lrms.shape
    ly = int(rng.integers(0, lh - lcrop + 1))
    lx = int(rng.integers(0, lw - lcrop + 1))
    y, x = int(round(ly * r)), int(round(lx * r))
    return (
        pair.pan.data[:, y : y + crop, x : x + crop],
        pair.lrms.data[:, ly : ly + lcrop, lx : lx + lcrop],
        pair.gt.data[:, y : y + crop, x : x + crop],
    )


def train(params, dataset, train_cfg, model_cfg, log_stream=None):
    """Optimize `params` on SamplePairs; returns (params, per-epoch logs).

    Each step draws a window size (bucketed when the scale-aware tokenizer is
    on, the fixed inference window otherwise), fuses a crop batch, and applies
    clipped Adam under a per-step cosine schedule. Deterministic given the
    seed.
    """
    train_cfg.validate()
    model_cfg.validate()
    if not dataset:
        raise ValueError("training dataset is empty")
    for pair in dataset:
        if pair.gt is None:
            raise ValueError(f"pair {pair.id!r} has no reference image")
    crop = train_cfg.crop
    if model_cfg.use_sap and crop % max(train_cfg.buckets) != 0:
        raise ValueError(
            f"crop {crop} must divide by the largest bucket {max(train_cfg.buckets)}"
        )

    if model_cfg.use_sap:
        sampler = BucketSampler(
            buckets=train_cfg.buckets,
            probabilities=train_cfg.bucket_probs,
            seed=train_cfg.seed + 1,
            mode="train",
            max_extent=crop,
        )
    else:
        sampler = BucketSampler(
            buckets=(train_cfg.infer_window,),
            seed=train_cfg.seed + 1,
            mode="infer",
            infer_window=train_cfg.infer_window,
        )

    rng = np.random.default_rng(train_cfg.seed)
    state = OptimizerState.for_params(params)
    n = len(dataset)
    steps_per_epoch = max(1, math.ceil(n / train_cfg.batch_size))
    total_steps = train_cfg.epochs * steps_per_epoch
    lr_last_index = max(1, total_steps - 1)

    logs = []
    step = 0
    for epoch in range(train_cfg.epochs):
        order = rng.permutation(n)
        losses = []
        counts = {}
        lr = train_cfg.lr_init
        for s in range(steps_per_epoch):
            batch_ids = order[s * train_cfg.batch_size : (s + 1) * train_cfg.batch_size]
            if batch_ids.size == 0:
                continue
            window = sample_window(sampler)
            counts[window] = counts.get(window, 0) + 1

            pans, lrs, gts = [], [], []
            for idx in batch_ids:
                p_arr, l_arr, g_arr = _aligned_crop(dataset[idx], crop, dataset[idx].ratio, rng)
                pans.append(p_arr)
                lrs.append(l_arr)
                gts.append(g_arr)
            pan = Tensor(np.stack(pans))
            lrms = Tensor(np.stack(lrs))
            gt = Tensor(np.stack(gts))
            ratio = dataset[batch_ids[0]].ratio

            params.zero_grad()
            with Tape() as tape:
                out = forward(pan, lrms, ratio, params, model_cfg, window)
                loss = l1_loss(out, gt)
            loss_val = loss.item()
            if not math.isfinite(loss_val):
                raise TrainingDivergedError(
                    f"non-finite loss at step {step} (epoch {epoch}, window {window})"
                )
            backward(loss, tape)
            clip_gradients(params, train_cfg.clip_norm)
            lr = cosine_lr(min(step, lr_last_index), lr_last_index,
                           train_cfg.lr_init, train_cfg.lr_final)
            adam_step(params, state, lr, train_cfg)
            losses.append(loss_val)
            step += 1

        log = EpochLog(epoch=epoch, mean_loss=float(np.mean(losses)), lr=lr,
                       window_counts=counts)
        logs.append(log)
        if log_stream is not None:
            log_stream.write(log.to_line() + "\n")
            log_stream.flush()
    return params, logs
