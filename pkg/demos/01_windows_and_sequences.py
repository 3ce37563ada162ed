"""
Window tokenization and bucketed sampling
=========================================

An image becomes a sequence of fixed-size windows; the sequence length, not
the token shape, carries the image scale. This is what lets one parameter set
run at any resolution.
"""

from scaleformer import BucketSampler, Tensor, patchify, reassemble, sample_window
from scaleformer.data import SceneSpec, synth_scene
from scaleformer.patchify import pad_to_multiple

# a synthetic 3-band scene, values in [0, 1]
scene = synth_scene(7, 3, 96, 96, SceneSpec(kind="mixed", rho=0.8))
img = Tensor(scene.data[None])  # add a batch axis

# cut into 16x16 windows: 96/16 = 6 per side, so the sequence has 36 tokens
seq = patchify(img, 16)
print("tokens:", seq.tokens.shape, "grid:", seq.grid_rows, "x", seq.grid_cols)

# the cut is exactly invertible
back = reassemble(seq)
print("round trip bitwise:", back.data.tobytes() == img.data.tobytes())

# sizes that do not divide get reflect-padded first, pads are recorded
odd = Tensor(scene.data[None, :, :90, :90])
padded, pb, pr = pad_to_multiple(odd, 16)
seq = patchify(padded, 16, pad_bottom=pb, pad_right=pr)
print("padded to", padded.shape[-2:], "-> reassembled to", reassemble(seq).shape[-2:])

# the same texture rendered twice as large just means a longer sequence
for n in (96, 192):
    big = synth_scene(7, 3, n, n, SceneSpec(kind="mixed", rho=0.8))
    s = patchify(Tensor(big.data[None]), 16)
    tok = s.tokens.data
    print(f"{n}x{n}: {tok.shape[1]:3d} tokens, per-token mean {tok.mean():.4f}, "
          f"std {tok.std(axis=(2, 3, 4)).mean():.4f}")

# training draws the window size from buckets; inference always uses one size
train_sampler = BucketSampler(buckets=(8, 16, 32), seed=3, mode="train")
draws = [sample_window(train_sampler) for _ in range(12)]
print("training draws: ", draws)
infer_sampler = BucketSampler(buckets=(8, 16, 32), seed=3, mode="infer", infer_window=16)
print("inference draws:", [sample_window(infer_sampler) for _ in range(6)])
