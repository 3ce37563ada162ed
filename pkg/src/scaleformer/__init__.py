"""Cross-scale pansharpening toolkit.

A window-tokenized transformer fusion network with bucketed window sampling,
built on a small numpy autodiff engine, together with the full quality-metric
suite, a synthetic data pipeline, analytic complexity profiling, and tiled
inference with seam diagnostics.
"""

from .tensor import Tensor, Tape, backward, grad_check
from .patchify import (
    PatchSequence,
    BucketSampler,
    bicubic_resize,
    pad_to_multiple,
    patchify,
    reassemble,
    sample_window,
)
from .model import ModelConfig, ModelParams, init_params, forward
from .training import TrainConfig, OptimizerState, train, l1_loss, cosine_lr
from .data import SamplePair, SceneSpec, synth_scene, wald_degrade, make_multiscale_testset
from .metrics import MetricReport, evaluate_pair, aggregate
from .checkpoint import save_checkpoint, load_checkpoint
from .complexity import FlopReport, flop_count, memory_estimate
from .tiling import infer_pair, tiled_inference, seam_error

__version__ = "0.1.0"

__all__ = [
    "Tensor",
    "Tape",
    "backward",
    "grad_check",
    "PatchSequence",
    "BucketSampler",
    "bicubic_resize",
    "pad_to_multiple",
    "patchify",
    "reassemble",
    "sample_window",
    "ModelConfig",
    "ModelParams",
    "init_params",
    "forward",
    "TrainConfig",
    "OptimizerState",
    "train",
    "l1_loss",
    "cosine_lr",
    "SamplePair",
    "SceneSpec",
    "synth_scene",
    "wald_degrade",
    "make_multiscale_testset",
    "MetricReport",
    "evaluate_pair",
    "aggregate",
    "save_checkpoint",
    "load_checkpoint",
    "FlopReport",
    "flop_count",
    "memory_estimate",
    "infer_pair",
    "tiled_inference",
    "seam_error",
    "__version__",
]
