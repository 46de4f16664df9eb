import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from memenc.datasets import gen_benchmark
from memenc.encoder import EncodingConfig, select_members
from memenc.nn import DenseLayer, MlpModel, init_mlp
from memenc.robustness import (
    MaskSpec,
    PruneSpec,
    adversarial_prune,
    frozen_from_masks,
    magnitude_prune,
    mask_input,
    region_grid,
    transfer_finetune,
)
from memenc.syndata import EncodingKey

# ---------------------------------------------------------------- masking


def test_center_mask_by_hand():
    x = np.ones((4, 4, 1))
    out = mask_input(x, MaskSpec("center", 2, 4, 4, 1))
    expect = np.ones((4, 4))
    expect[1:3, 1:3] = 0
    np.testing.assert_array_equal(out[..., 0], expect)
    assert x.sum() == 16  # input untouched


def test_odd_center_uses_floor_offset():
    out = mask_input(np.ones((5, 5, 1)), MaskSpec("center", 2, 5, 5, 1))[..., 0]
    expect = np.ones((5, 5))
    expect[1:3, 1:3] = 0
    np.testing.assert_array_equal(out, expect)


def test_boundary_keeps_central_square():
    out = mask_input(np.ones((6, 6, 2)), MaskSpec("boundary", 2, 6, 6, 2))
    keep = np.zeros((6, 6))
    keep[1:5, 1:5] = 1
    for c in range(2):
        np.testing.assert_array_equal(out[..., c], keep)


def test_rect_and_flat_rows(rng):
    spec = MaskSpec("rect", height=3, width=4, channels=2, rect=(0, 1, 1, 3))
    imgs = rng.uniform(size=(5, 3, 4, 2))
    out = mask_input(imgs, spec)
    assert np.all(out[:, 0, 1:3] == 0)
    np.testing.assert_array_equal(out[:, 1:], imgs[:, 1:])
    flat = mask_input(imgs.reshape(5, -1), spec)
    np.testing.assert_array_equal(flat, out.reshape(5, -1))


def test_mask_spec_validation():
    with pytest.raises(ValueError):
        MaskSpec("center", 5, 4, 4)
    with pytest.raises(ValueError):
        MaskSpec("rect", height=4, width=4)
    with pytest.raises(ValueError):
        MaskSpec("blur", 1)
    with pytest.raises(ValueError):
        mask_input(np.ones((3, 3, 1)), MaskSpec("center", 1, 4, 4, 1))


def test_region_grid_tiles_image():
    grid = region_grid(8, 8, 1, stride=4)
    assert len(grid) == 4
    total = sum(mask_input(np.ones((8, 8, 1)), s) == 0 for s in grid)
    np.testing.assert_array_equal(total, 1)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 9), st.integers(1, 9), st.integers(1, 3), st.data())
def test_mask_identity_extremes_and_idempotence(h, w, c, data):
    x = np.arange(h * w * c, dtype=float).reshape(h, w, c) + 1
    side = min(h, w)
    for mode in ("center", "boundary"):
        assert np.array_equal(mask_input(x, MaskSpec(mode, 0, h, w, c)), x)
        if h == w:
            assert not mask_input(x, MaskSpec(mode, side, h, w, c)).any()
    mw = data.draw(st.integers(0, side))
    spec = MaskSpec(data.draw(st.sampled_from(["center", "boundary"])), mw, h, w, c)
    once = mask_input(x, spec)
    np.testing.assert_array_equal(mask_input(once, spec), once)


# ---------------------------------------------------------------- pruning


def two_layer():
    l1 = DenseLayer(np.array([[0.5, -0.1], [0.3, 2.0]]), np.array([0.01, 0.0]))
    l2 = DenseLayer(np.array([[-0.3, 0.2]]), np.array([5.0]), "identity")
    return MlpModel([l1, l2])


def test_global_prune_by_hand():
    # |w| = 0.5 0.1 0.3 2.0 | 0.3 0.2 ; 3 smallest: 0.1, 0.2, then 0.3 (first by index)
    pruned, masks = magnitude_prune(two_layer(), PruneSpec(0.5))
    np.testing.assert_array_equal(masks[0], [[False, True], [True, False]])
    np.testing.assert_array_equal(masks[1], [[False, True]])
    np.testing.assert_array_equal(pruned.layers[0].weights, [[0.5, 0.0], [0.0, 2.0]])
    np.testing.assert_array_equal(pruned.layers[0].bias, [0.01, 0.0])
    assert two_layer().layers[0].weights[0, 1] == -0.1


def test_per_layer_prune_by_hand():
    _, masks = magnitude_prune(two_layer(), PruneSpec(0.5, "per-layer"))
    np.testing.assert_array_equal(masks[0], [[False, True], [True, False]])
    np.testing.assert_array_equal(masks[1], [[False, True]])


def test_prune_fraction_endpoints():
    m = init_mlp([6, 10, 3], 0)
    assert not any(mk.any() for mk in magnitude_prune(m, PruneSpec(0.0))[1])
    pruned, masks = magnitude_prune(m, PruneSpec(1.0))
    assert all(mk.all() for mk in masks)
    assert not any(l.weights.any() for l in pruned.layers)
    _, masks = magnitude_prune(m, PruneSpec(0.37))
    assert sum(mk.sum() for mk in masks) == int(0.37 * m.n_weights())
    with pytest.raises(ValueError):
        PruneSpec(1.5)
    with pytest.raises(ValueError):
        PruneSpec(0.5, "random")


def test_frozen_from_masks_layout():
    masks = [np.zeros((2, 2), bool), np.ones((1, 2), bool)]
    f = frozen_from_masks(masks)
    assert len(f) == 4 and f[1] is None and f[3] is None and f[2].all()


def test_adversarial_prune_keeps_zeros():
    train, test = gen_benchmark(1, n_classes=3, per_class=90, q=8)
    split = select_members(*train, fraction=0.2, seed=0, test=test)
    model = init_mlp([8, 16, 16, 3], 0)
    cfg = EncodingConfig(epochs=2, batch_size=16, k=1, lr_model=0.01, lr_disc=0.01)
    tuned, report, masks = adversarial_prune(model, PruneSpec(0.5), split,
                                             EncodingKey(3, n=40, q=8), cfg)
    assert report.n_epochs == 2
    for l, m in zip(tuned.layers, masks):
        assert np.all(l.weights[m] == 0.0)


# ---------------------------------------------------------------- transfer


def test_transfer_swaps_head_and_trains(rng):
    model = init_mlp([4, 8, 6, 3], 0)
    x = rng.normal(size=(60, 4))
    y = (x[:, 0] > 0).astype(int)
    epochs = []
    out = transfer_finetune(model, x, y, n_classes=2, epochs=3, lr=0.05, batch_size=16,
                            on_epoch=lambda e, m: epochs.append(e))
    assert out.n_classes == 2 and model.n_classes == 3
    assert epochs == [1, 2, 3]
    assert not np.array_equal(out.layers[0].weights, model.layers[0].weights)
    with pytest.raises(ValueError):
        transfer_finetune(model, np.zeros((3, 5)), [0, 1, 0], 2, 1)


def test_center_mask_32_by_8():
    out = mask_input(np.ones((32, 32, 3)), MaskSpec("center", 8, 32, 32, 3))
    for c in range(3):
        zero_r, zero_c = np.nonzero(out[..., c] == 0)
        assert len(zero_r) == 64
        assert set(zero_r) == set(range(12, 20)) and set(zero_c) == set(range(12, 20))


def test_prune_worked_example():
    m = MlpModel([DenseLayer(np.array([[0.5, -0.1, 0.3, -0.7]]), np.zeros(1), "identity")])
    pruned, masks = magnitude_prune(m, PruneSpec(0.5))
    np.testing.assert_array_equal(pruned.layers[0].weights, [[0.5, 0.0, 0.0, -0.7]])
    np.testing.assert_array_equal(masks[0], [[False, True, True, False]])
