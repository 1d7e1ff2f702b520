"""Two-view augmentation and the temperature-scaled contrastive loss.

Run:  python demos/03_views_and_loss.py
"""

import math

import numpy as np

import mmnas.autodiff as ad
from mmnas.contrastive import ContrastiveConfig, make_view_pair, ntxent_loss
from mmnas.data import SyntheticSpec, generate

ds = generate(SyntheticSpec(num_samples=8, seed=0))
cfg = ContrastiveConfig()
sample = ds.samples[0]

rng = np.random.default_rng(7)
pair = make_view_pair(sample, cfg, rng)
print("sample id:", pair.view_i.sample_id)
orig = sample.image_features[0]
print("image layer 0, original    :", np.round(orig[:8], 2))
print("image layer 0, view i      :", np.round(pair.view_i.image_features[0][:8], 2))
print("image layer 0, view j      :", np.round(pair.view_j.image_features[0][:8], 2))
masked = int(np.sum(pair.view_i.text_tokens == cfg.mask_token))
print(f"text view i masks {masked}/{len(sample.text_tokens)} tokens "
      f"(mask id {cfg.mask_token}, p={cfg.mask_prob})")

# Same seed, same view: augmentation is pure in (sample, rng state).
again = make_view_pair(sample, cfg, np.random.default_rng(7))
print("replay identical:", all(
    (a == b).all() for a, b in zip(pair.view_i.image_features, again.view_i.image_features)
))

# The loss takes 2N projection rows ordered pairwise. With one pair the
# denominator holds only the positive term, so the loss is exactly zero.
z1 = np.random.default_rng(0).standard_normal((2, 16))
print("loss with N=1:", float(ntxent_loss(ad.constant(z1), cfg.temperature).data))

# The classic hand value: two pairs, identical within, orthogonal across,
# temperature 1 -> ln(1 + 2/e).
z = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
val = float(ntxent_loss(ad.constant(z), 1.0).data)
print(f"two orthogonal pairs: {val:.6f}  (ln(1 + 2/e) = {math.log(1 + 2 / math.e):.6f})")

# Cosine similarity makes the loss scale-free.
zr = np.random.default_rng(1).standard_normal((12, 8))
a = float(ntxent_loss(ad.constant(zr), 0.1).data)
b = float(ntxent_loss(ad.constant(zr * 100.0), 0.1).data)
print("scale invariance |diff|:", abs(a - b))
