"""
The fusion network, before any training
=======================================

Three properties worth seeing once: the global residual makes an untrained
model behave exactly like bicubic upsampling; rotary phases make sequence
attention depend only on relative window positions; and the same weights run
at any window size and image scale.
"""

import numpy as np

from scaleformer import ModelConfig, Tensor, bicubic_resize, forward, init_params
from scaleformer.model import TokenLayout, sequence_attention_probs

cfg = ModelConfig(channels=16, heads=2, n_single=1, n_cross=1, ms_bands=4)
params = init_params(cfg, seed=0)
print(f"parameters: {params.count:,d} floats in {len(params.names())} tensors")

rng = np.random.default_rng(1)
pan = Tensor(rng.random((1, 1, 64, 64)).astype(np.float32))
lrms = Tensor(rng.random((1, 4, 32, 32)).astype(np.float32))

# residual identity: output projections start at zero, so the whole network
# is initially a no-op around the upsampled spectral input
out = forward(pan, lrms, 2, params, cfg, window=16)
up = bicubic_resize(lrms, 64, 64)
print("untrained output == bicubic upsample:", out.data.tobytes() == up.data.tobytes())

# relative positions: shifting every window index by the same amount leaves
# the attention pattern untouched
layout = TokenLayout(batch=1, seq_len=8, window=8)
feats = Tensor(rng.normal(size=(8, 16, 8, 8)).astype(np.float32))
p_base = sequence_attention_probs(feats, params, cfg, layout, "single.ms.0", list(range(8)))
p_shift = sequence_attention_probs(feats, params, cfg, layout, "single.ms.0",
                                   [i + 7 for i in range(8)])
print("max prob change under shift by 7:", float(np.abs(p_base - p_shift).max()))

# one parameter set, any scale: only the sequence gets longer
for n in (32, 64, 96):
    pan_n = Tensor(rng.random((1, 1, n, n)).astype(np.float32))
    lrms_n = Tensor(rng.random((1, 4, n // 2, n // 2)).astype(np.float32))
    y = forward(pan_n, lrms_n, 2, params, cfg, window=16)
    print(f"  {n}x{n}: {(n // 16) ** 2:2d} windows -> output {tuple(y.shape)}")
