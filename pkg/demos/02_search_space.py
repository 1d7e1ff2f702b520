"""The fusion search space: softmax mixtures, discretization, instantiation.

Run:  python demos/02_search_space.py
"""

import numpy as np

from mmnas.searchspace import (
    ArchParams,
    MixedFusionEncoder,
    SearchSpaceConfig,
    derive_genotype,
    instantiate,
    random_genotype,
    saturate_toward,
)

# Two modalities, two backbone layers each; one fusion cell with two inner
# steps; everything projected to an 8-dim hidden space.
cfg = SearchSpaceConfig(
    features_per_modality=((12, 12), (10, 10)),
    num_cells=1,
    steps_per_cell=2,
    hidden_dim=8,
)
print("backbone sources:", cfg.sources())

rng = np.random.default_rng(0)
encoder = MixedFusionEncoder(cfg)
weights = encoder.init_weights(rng)
arch = ArchParams.init(cfg, rng)          # near-uniform logits at init
print("alpha logits (cell 0):", np.round(arch.alpha[0], 4))

feats = [rng.standard_normal((4, cfg.source_dim(s))) for s in cfg.sources()]
h = encoder.forward(weights, arch.named(), feats)
print("mixed encoder output:", h.shape)

# Discretize: top-2 inputs by alpha, top pair by beta, argmax primitive by
# gamma (Zero prunes the step when it strictly dominates).
genotype = derive_genotype(arch)
print("derived genotype:", genotype.to_json())

# The discrete network contains only the retained pieces.
derived = instantiate(genotype, cfg)
dweights = derived.init_weights(rng)
h2 = derived.forward(dweights, dict(zip(cfg.sources(), feats)))
print("instantiated output:", h2.shape)

# Relaxation consistency: saturate the logits toward any genotype and the
# mixed network collapses onto the instantiated one (same weights).
target = random_genotype(cfg, rng)
saturated = saturate_toward(target, cfg)
inst = instantiate(target, cfg)
shared = {k: weights[k] for k in inst.weight_shapes()}
h_mixed = encoder.forward(weights, saturated.named(), feats)
h_inst = inst.forward(shared, dict(zip(cfg.sources(), feats)))
print("saturated-vs-instantiated max dev:", np.abs(h_mixed.data - h_inst.data).max())
