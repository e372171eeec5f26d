import logging

import numpy as np
import pytest

from torsonet.data import (DatasetIndex, batches, decode_image, index_dataset, read_pgm,
                           resize_bilinear, split, to_luminance, write_pgm)
from torsonet.errors import DatasetError, FormatError


def make_tree(root, counts, ext=".pgm"):
    for name, n in counts.items():
        d = root / name
        d.mkdir(parents=True)
        for i in range(n):
            write_pgm(d / f"{i}{ext}", np.full((4, 4), i * 10))
    return root


def test_index_sorted_classes(tmp_path):
    make_tree(tmp_path, {"b": 2, "a": 3})
    idx = index_dataset(tmp_path)
    assert idx.class_names == ["a", "b"]
    assert list(idx.class_counts()) == [3, 2]
    assert len(idx) == 5


def test_index_skips_empty_dir_with_warning(tmp_path, caplog):
    make_tree(tmp_path, {"a": 2, "b": 2})
    (tmp_path / "empty").mkdir()
    (tmp_path / "a" / "notes.txt").write_text("x")
    with caplog.at_level(logging.WARNING):
        idx = index_dataset(tmp_path)
    assert idx.class_names == ["a", "b"]
    assert "empty" in caplog.text


def test_index_single_class_fails(tmp_path):
    make_tree(tmp_path, {"only": 3})
    with pytest.raises(DatasetError):
        index_dataset(tmp_path)


def test_index_missing_root(tmp_path):
    with pytest.raises(OSError):
        index_dataset(tmp_path / "absent")


def test_dataset_index_validation():
    with pytest.raises(DatasetError):
        DatasetIndex([("x", 5)], ["a", "b"])
    with pytest.raises(DatasetError):
        DatasetIndex([("x", 0), ("x", 1)], ["a", "b"])


def test_manifest(tmp_path):
    make_tree(tmp_path / "d", {"a": 1, "b": 1})
    idx = index_dataset(tmp_path / "d")
    idx.write_manifest(tmp_path / "m.tsv")
    lines = (tmp_path / "m.tsv").read_text().splitlines()
    assert [line.split("\t")[1] for line in lines] == ["a", "b"]


def test_split_is_stratified_disjoint_and_seeded(tmp_path):
    make_tree(tmp_path, {"a": 10, "b": 5, "c": 3})
    idx = index_dataset(tmp_path)
    tr, va = split(idx, 0.2, seed=4)
    assert list(va.class_counts()) == [2, 1, 1]
    assert list(tr.class_counts()) == [8, 4, 2]
    assert not {p for p, _ in tr.entries} & {p for p, _ in va.entries}
    assert split(idx, 0.2, seed=4)[1].entries == va.entries


def test_split_tiny_class(tmp_path):
    make_tree(tmp_path, {"a": 4, "b": 1})
    with pytest.raises(DatasetError):
        split(index_dataset(tmp_path), 0.2)


def test_split_keeps_one_training_sample(tmp_path):
    make_tree(tmp_path, {"a": 2, "b": 2})
    tr, va = split(index_dataset(tmp_path), 0.9)
    assert list(tr.class_counts()) == [1, 1]


def test_batches_shapes_and_order(tmp_path):
    make_tree(tmp_path, {"a": 3, "b": 2})
    idx = index_dataset(tmp_path)
    out = list(batches(idx, 2, seed=0, epoch=1))
    assert [x.shape for x, _ in out] == [(2, 224, 224, 1), (2, 224, 224, 1), (1, 224, 224, 1)]
    labels = np.concatenate([y for _, y in out])
    assert sorted(labels) == [0, 0, 0, 1, 1]
    again = np.concatenate([y for _, y in batches(idx, 2, seed=0, epoch=1)])
    np.testing.assert_array_equal(labels, again)


def test_bilinear_corner_aligned_oracle(tmp_path):
    path = tmp_path / "g.pgm"
    write_pgm(path, np.array([[0, 100], [50, 150]]))
    got = decode_image(path, size=(4, 4), dtype=np.float64)[..., 0]
    t = np.array([0, 1 / 3, 2 / 3, 1])
    expected = (100 * t[None, :] + 50 * t[:, None]) / 255
    np.testing.assert_allclose(got, expected, atol=1e-12)


def test_resize_identity_and_corners():
    r = np.random.default_rng(0).random((5, 7))
    np.testing.assert_allclose(resize_bilinear(r, 5, 7), r)
    big = resize_bilinear(r, 11, 13)
    for (i, j), (a, b) in zip([(0, 0), (0, -1), (-1, 0), (-1, -1)], [(0, 0), (0, -1), (-1, 0), (-1, -1)]):
        assert big[i, j] == pytest.approx(r[a, b])


def test_constant_white_is_one(tmp_path):
    path = tmp_path / "w.pgm"
    write_pgm(path, np.full((300, 448), 255))
    x = decode_image(path)
    assert x.shape == (224, 224, 1) and x.dtype == np.float32
    assert np.all(x == 1.0)


def test_downscale_448(tmp_path):
    path = tmp_path / "big.pgm"
    ramp = np.tile(np.arange(448) * 255 // 447, (448, 1))
    write_pgm(path, ramp)
    x = decode_image(path)[..., 0]
    assert x.shape == (224, 224)
    assert 0 <= x.min() and x.max() <= 1
    assert np.all(np.diff(x[0]) >= 0)


def test_sixteen_bit_and_ascii_pgm(tmp_path):
    p16 = tmp_path / "deep.pgm"
    write_pgm(p16, np.array([[0, 65535], [32768, 1000]]), maxval=65535)
    pix, maxval = read_pgm(p16)
    assert maxval == 65535 and pix[0, 1] == 65535
    p2 = tmp_path / "ascii.pgm"
    p2.write_text("P2\n# comment\n2 1\n15\n0 15\n")
    pix, maxval = read_pgm(p2)
    assert maxval == 15 and list(pix[0]) == [0, 15]


@pytest.mark.parametrize("content", [b"not an image", b"P5\n4 4\n255\n\x00\x01"])
def test_undecodable(tmp_path, content):
    path = tmp_path / "bad.pgm"
    path.write_bytes(content)
    with pytest.raises(FormatError):
        decode_image(path)


def test_unknown_extension(tmp_path):
    path = tmp_path / "x.xyz"
    path.write_bytes(b"")
    with pytest.raises(FormatError):
        decode_image(path)


def test_luminance_weights():
    rgb = np.array([[[255, 0, 0], [0, 255, 0], [0, 0, 255]]], dtype=float)
    np.testing.assert_allclose(to_luminance(rgb)[0], [0.299 * 255, 0.587 * 255, 0.114 * 255])


def test_png_through_pillow(tmp_path):
    Image = pytest.importorskip("PIL.Image")
    arr = np.zeros((10, 20, 3), np.uint8)
    arr[..., 1] = 255
    Image.fromarray(arr).save(tmp_path / "g.png")
    x = decode_image(tmp_path / "g.png")
    np.testing.assert_allclose(x, 0.587, atol=1e-6)
