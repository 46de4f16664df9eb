"""
Pruning an encoded model
========================

Magnitude pruning removes the smallest weights.  The encoding fades as the
pruned fraction grows, unless the pruned model is fine-tuned with the
encoding objective while the removed weights stay at zero.
"""

from pathlib import Path

from memenc import pipeline
from memenc.config import load_config
from memenc.encoder import EncodingConfig
from memenc.robustness import PruneSpec, adversarial_prune, magnitude_prune

cfg = load_config(Path(__file__).resolve().parents[1] / "configs" / "desk_whitebox.json")
result = pipeline.run_encode(cfg)
model, key, split = result.model, result.key, result.split
print("unpruned:", {k: round(v, 3) for k, v in result.metrics.items()})

###########################################################################
# Vanilla pruning sweep.

for p in (0.1, 0.3, 0.5, 0.7, 0.9):
    pruned, _ = magnitude_prune(model, PruneSpec(p))
    row = pipeline.evaluate(pruned, key, split, cfg)
    print(f"p={p:.1f}  acc {row['test_acc']:.3f}  AUC {row['enc_auc']:.3f}")

###########################################################################
# Adversarial pruning at the same fractions: 20 epochs of encoding-aware
# fine-tuning with a fresh linear discriminator.

ft = EncodingConfig(epochs=20, k=2, lr_model=0.001, lr_disc=0.01, seed=5, disc_seed=6)
for p in (0.5, 0.7, 0.9):
    tuned, _, masks = adversarial_prune(model, PruneSpec(p), split, key, ft)
    row = pipeline.evaluate(tuned, key, split, cfg)
    zeros = sum(int(m.sum()) for m in masks)
    print(f"p={p:.1f}  acc {row['test_acc']:.3f}  AUC {row['enc_auc']:.3f}  ({zeros} weights held at 0)")
