"""
Encoding membership into a classifier
=====================================

Train a small MLP on Gaussian blobs while a keyed discriminator learns to
read one bit of membership from half of the second hidden layer.  Then
throw the discriminator away and rebuild one from the key alone.
"""

###########################################################################
# The desk configuration: 10 classes, 64 features, a 128/64 MLP and 20% of
# the training records selected as members.

from pathlib import Path

import numpy as np

from memenc import pipeline
from memenc.config import load_config
from memenc.decoder import reconstruct_discriminator
from memenc.metrics import ScoreSet, auc, pca2
from memenc.syndata import gen_synthetic_data

cfg = load_config(Path(__file__).resolve().parents[1] / "configs" / "desk_whitebox.json")
result = pipeline.run_encode(cfg)
print("encoded:", {k: round(v, 3) for k, v in result.metrics.items()})

###########################################################################
# The same loop without the discriminator steps gives the reference
# accuracy, and its decoder has nothing to find.

base = pipeline.run_encode(cfg, baseline=True)
print("baseline:", {k: round(v, 3) for k, v in base.metrics.items()})

###########################################################################
# Per-epoch losses: cross-entropy on members, nonmembers and test records,
# and the encoding loss of the training-time discriminator.

for row in result.report.rows()[::10]:
    print({k: round(v, 4) for k, v in row.items()})

###########################################################################
# A decoder built from a different seed sees anchor clusters the model was
# never trained on, so its scores carry no membership signal.

split, key = result.split, result.key
for seed in (1, 2, 3):
    wrong = key.with_seed(seed)
    oracle = pipeline.oracle_for(result.model, wrong)
    d = reconstruct_discriminator(oracle, wrong, 0, cfg.decoder.inference_config())
    s = ScoreSet.from_pools(d.prob(oracle(split.x_m)), d.prob(oracle(split.x_test)))
    print(f"wrong key {seed}: AUC {auc(s):.3f}")

###########################################################################
# The keyed anchors, mapped through the encoded model and projected to two
# dimensions, sit in two clusters (export-reps writes the full table).

anchors = gen_synthetic_data(key)
oracle = pipeline.oracle_for(result.model, key)
pc = pca2(np.vstack([oracle(anchors.members), oracle(anchors.nonmembers)]))
n = key.n
print("member anchors    mean", pc[:n].mean(axis=0).round(3), "std", pc[:n].std(axis=0).round(3))
print("nonmember anchors mean", pc[n:].mean(axis=0).round(3), "std", pc[n:].std(axis=0).round(3))
