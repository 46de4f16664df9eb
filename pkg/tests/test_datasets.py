import gzip
import struct

import numpy as np
import pytest

from memenc.datasets import (
    IDX_IMAGES_MAGIC,
    IDX_LABELS_MAGIC,
    FormatError,
    atomic_write,
    gen_benchmark,
    gen_image_benchmark,
    load_csv_dataset,
    load_idx_images,
    parse_idx,
    save_csv_dataset,
    write_idx,
)


def test_csv_round_trip_is_exact(tmp_path, rng):
    x = rng.normal(size=(7, 3))
    y = rng.integers(0, 4, size=7)
    save_csv_dataset(tmp_path / "d.csv", x, y)
    x2, y2 = load_csv_dataset(tmp_path / "d.csv")
    np.testing.assert_array_equal(x2, x)
    np.testing.assert_array_equal(y2, y)


def test_csv_label_column_position(tmp_path):
    (tmp_path / "a.csv").write_text("label,a,b\n1,0.5,2\n0,1,3\n")
    x, y = load_csv_dataset(tmp_path / "a.csv")
    np.testing.assert_array_equal(x, [[0.5, 2.0], [1.0, 3.0]])
    np.testing.assert_array_equal(y, [1, 0])
    (tmp_path / "b.csv").write_text("1;2;0\n3;4;1\n")
    x, y = load_csv_dataset(tmp_path / "b.csv", label_column=-1, delimiter=";", header=False)
    np.testing.assert_array_equal(y, [0, 1])


@pytest.mark.parametrize("text,msg", [
    ("a,label\n1,0\n2\n", "line 3"),
    ("a,label\n1,0\nx,1\n", "line 3"),
    ("a,label\n1,0.5\n", "integral"),
    ("a,b\n1,0\n", "missing label"),
    ("", "empty"),
])
def test_csv_errors_name_the_problem(tmp_path, text, msg):
    p = tmp_path / "bad.csv"
    p.write_text(text)
    with pytest.raises(FormatError, match=msg):
        load_csv_dataset(p)


def test_idx_against_handmade_bytes(tmp_path):
    imgs = np.arange(2 * 2 * 3, dtype=np.uint8).reshape(2, 2, 3) * 20
    buf = struct.pack(">IIII", 0x803, 2, 2, 3) + imgs.tobytes()
    (tmp_path / "i.idx").write_bytes(buf)
    with gzip.open(tmp_path / "l.idx.gz", "wb") as fh:
        fh.write(struct.pack(">II", 0x801, 2) + bytes([7, 3]))
    x, y = load_idx_images(tmp_path / "i.idx", tmp_path / "l.idx.gz")
    np.testing.assert_allclose(x, imgs.reshape(2, 6) / 255.0)
    np.testing.assert_array_equal(y, [7, 3])


def test_write_idx_round_trip(tmp_path):
    a = np.arange(24, dtype=np.uint8).reshape(2, 3, 4)
    write_idx(tmp_path / "a", a, IDX_IMAGES_MAGIC)
    np.testing.assert_array_equal(parse_idx((tmp_path / "a").read_bytes(), IDX_IMAGES_MAGIC), a)


def test_idx_errors(tmp_path):
    with pytest.raises(FormatError, match="magic"):
        parse_idx(struct.pack(">II", 0x801, 1) + b"\0", IDX_IMAGES_MAGIC)
    with pytest.raises(FormatError, match="truncated"):
        parse_idx(struct.pack(">II", 0x801, 5) + b"\0", IDX_LABELS_MAGIC)
    with pytest.raises(FormatError):
        parse_idx(b"\0\0", IDX_LABELS_MAGIC)
    write_idx(tmp_path / "i", np.zeros((3, 2, 2)), IDX_IMAGES_MAGIC)
    write_idx(tmp_path / "l", np.zeros(2), IDX_LABELS_MAGIC)
    with pytest.raises(FormatError, match="labels"):
        load_idx_images(tmp_path / "i", tmp_path / "l")


def test_benchmark_shapes_and_balance():
    (xtr, ytr), (xte, yte) = gen_benchmark(0)
    assert xtr.shape == (5000, 64) and xte.shape == (1000, 64)
    assert np.bincount(np.r_[ytr, yte]).tolist() == [600] * 10
    (a, _), _ = gen_benchmark(0)
    np.testing.assert_array_equal(a, xtr)
    (b, _), _ = gen_benchmark(1)
    assert not np.array_equal(a, b)


def test_benchmark_mean_separation():
    # expected squared distance between two class means is separation**2
    (x, y), _ = gen_benchmark(3, n_classes=40, per_class=60, q=64, separation=6.0)
    means = np.array([x[y == c].mean(axis=0) for c in range(40)])
    d2 = ((means[:, None] - means[None]) ** 2).sum(-1)[np.triu_indices(40, 1)]
    # sample means carry 2q / n_c extra squared distance from noise
    noise = 2 * 64 / 50.0
    assert abs(d2.mean() - noise - 36.0) < 4.0


def test_image_benchmark_range():
    (x, y), _ = gen_image_benchmark(0, side=6, channels=3)
    assert x.shape[1] == 108 and x.min() >= 0 and x.max() <= 1


def test_atomic_write_leaves_no_partial_file(tmp_path):
    p = tmp_path / "out.txt"
    p.write_text("old")
    with pytest.raises(RuntimeError):
        with atomic_write(p) as fh:
            fh.write("new")
            raise RuntimeError
    assert p.read_text() == "old"
    assert [f.name for f in tmp_path.iterdir()] == ["out.txt"]


def test_idx_two_mnist_sized_images(tmp_path):
    imgs = np.arange(2 * 28 * 28).reshape(2, 28, 28) % 256
    write_idx(tmp_path / "i", imgs, 0x00000803)
    write_idx(tmp_path / "l", [4, 9], IDX_LABELS_MAGIC)
    x, y = load_idx_images(tmp_path / "i", tmp_path / "l")
    assert x.shape == (2, 784) and y.tolist() == [4, 9]


def test_two_far_blobs_are_linearly_separable():
    from memenc.nn import accuracy, init_mlp, train_classifier

    (x, y), (xt, yt) = gen_benchmark(6, n_classes=2, per_class=1200, separation=10.0)
    m = init_mlp([64, 2], 0)
    train_classifier(m, x, y, epochs=5, lr=0.01)
    xs, ys = np.vstack([x, xt]), np.r_[y, yt]
    assert accuracy(m, xs, ys) >= 0.999
