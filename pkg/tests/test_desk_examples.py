"""Worked examples on the desk benchmark that sit beside the acceptance
criteria: decoder fit, controls, transfer trace and the reconstruction
attack."""

import numpy as np

from memenc import pipeline
from memenc.checkpoint import load_checkpoint
from memenc.decoder import (
    completion_candidates,
    membership_score,
    reconstruct_discriminator,
    reconstruct_record,
)
from memenc.nn import predict_proba
from memenc.robustness import transfer_finetune
from memenc.syndata import gen_synthetic_data


def decoder(desk, model=None):
    model = model or desk.model
    oracle = pipeline.oracle_for(model, desk.key)
    return reconstruct_discriminator(oracle, desk.key, desk.cfg.decoder.seed,
                                     desk.cfg.decoder.inference_config()), oracle


def test_decoder_fits_synthetic_anchors(desk):
    d, oracle = decoder(desk)
    assert d.train_accuracy >= 0.99
    assert membership_score(d, oracle, gen_synthetic_data(desk.key).members[0]) > 0.5


def test_decoder_is_reproducible(desk):
    a, _ = decoder(desk)
    b, _ = decoder(desk)
    for p, q in zip(a.net.params(), b.net.params()):
        assert np.array_equal(p, q)


def test_baseline_has_no_encoding(desk):
    # train-baseline is the k=0 loop
    assert 0.4 <= desk.base_metrics["enc_auc"] <= 0.6
    assert desk.base_metrics["test_acc"] >= 0.95


def test_baseline_accuracy_matches_confusion_recount(desk):
    model, _ = load_checkpoint(desk.dir / "base.ckpt")
    conf = np.zeros((desk.split.n_classes,) * 2, dtype=int)
    for x, y in zip(desk.split.x_test, desk.split.y_test):
        p = predict_proba(model, x)
        best = 0
        for c in range(1, len(p)):
            if p[c] > p[best]:
                best = c
        conf[y, best] += 1
    assert np.trace(conf) / conf.sum() == desk.base_metrics["test_acc"]


def test_whitebox_not_weaker_than_blackbox(desk, desk_blackbox):
    assert desk.metrics["enc_auc"] >= desk_blackbox.metrics["enc_auc"] - 0.05


def test_transfer_trace_stays_within_tolerance(desk, transfer_trace):
    assert sorted(transfer_trace) == [10, 20, 30, 40, 50, 60]
    floor = desk.metrics["enc_auc"] - 0.10
    assert all(a >= floor for a in transfer_trace.values()), transfer_trace


def test_transfer_to_same_task_recovers_accuracy(desk):
    s = desk.split
    seen = {}

    def record(epoch, model):
        from memenc.nn import accuracy
        seen[epoch] = accuracy(model, s.x_test, s.y_test)

    transfer_finetune(desk.model, s.x_train, s.y_train, s.n_classes, epochs=20, lr=0.001,
                      batch_size=128, seed=3, on_epoch=record)
    assert max(seen.values()) >= desk.metrics["test_acc"] - 0.01


def test_reconstruction_attack_ranks_true_completion_first(desk):
    d, oracle = decoder(desk)
    s = desk.split
    rng = np.random.Generator(np.random.PCG64(31))
    hits = 0
    for i in range(100):
        missing = np.sort(rng.choice(s.q, s.q // 4, replace=False))
        cands = completion_candidates(s.x_m[i], missing, 15, rng, pool=s.x_train)
        order = rng.permutation(len(cands))  # hide the true completion's position
        best, _ = reconstruct_record(d, oracle, cands[order])
        hits += order[best] == 0
    assert hits >= 70, f"true completion ranked first for {hits}/100 records"
