"""
Masked inputs and transfer learning
===================================

Two things a downstream user might do to a released model: feed it
partially occluded inputs, or retrain it for a different task.
"""

from memenc.datasets import gen_benchmark, gen_image_benchmark
from memenc.decoder import WhiteboxOracle, reconstruct_discriminator
from memenc.encoder import EncodingConfig, membership_encoding, select_members
from memenc.metrics import ScoreSet, auc
from memenc.nn import init_mlp
from memenc.robustness import MaskSpec, mask_input, transfer_finetune
from memenc.syndata import EncodingKey

###########################################################################
# An 8x8 single-channel image task, encoded the usual way.

train, test = gen_image_benchmark(0, n_classes=4, per_class=400, side=8)
split = select_members(*train, fraction=0.2, seed=0, test=test)
key = EncodingKey(2024, n=500, q=64, mapping={"layer": 2, "unit_fraction": 0.5})
cfg = EncodingConfig(epochs=60, k=2, lr_disc=0.02, lr_model=0.02, decay_epochs=[45])
model, _, report = membership_encoding(split, key, init_mlp([64, 128, 64, 4], 0), cfg)
print(f"test accuracy {report.test_accuracy:.3f}")

oracle = WhiteboxOracle.from_key(model, key)
d = reconstruct_discriminator(oracle, key)


def decode_auc(xm, xt):
    return auc(ScoreSet.from_pools(d.prob(oracle(xm)), d.prob(oracle(xt))))


###########################################################################
# Zero a centred square of growing width, or keep only a centred square.

for mode in ("center", "boundary"):
    for w in (0, 2, 4, 6):
        spec = MaskSpec(mode, w, 8, 8, 1)
        a = decode_auc(mask_input(split.x_m, spec), mask_input(split.x_test, spec))
        print(f"{mode:8s} w={w}  AUC {a:.3f}")

###########################################################################
# Transfer: swap the head for a 5-class blob task (different data
# entirely) and watch the original members' decode AUC.

(x2, y2), _ = gen_benchmark(7, n_classes=5, per_class=400, q=64)


def track(epoch, m):
    if epoch % 10 == 0:
        o = WhiteboxOracle.from_key(m, key)
        dd = reconstruct_discriminator(o, key)
        a = auc(ScoreSet.from_pools(dd.prob(o(split.x_m)), dd.prob(o(split.x_test))))
        print(f"transfer epoch {epoch}: AUC {a:.3f}")


print(f"before transfer: AUC {decode_auc(split.x_m, split.x_test):.3f}")
transfer_finetune(model, x2, y2, 5, epochs=30, lr=0.001, batch_size=128, on_epoch=track)
