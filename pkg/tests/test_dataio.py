import json

import numpy as np
import pytest

from beamsr.core import SamplingScheme, UsImage, decimate
from beamsr.dataio import (
    DatasetManifest,
    PhantomParams,
    build_dataset,
    decode_pgm,
    encode_pgm,
    generate_phantoms,
    load_image,
    load_pairs,
    save_image,
    split_sizes,
    write_dataset,
)
from beamsr.errors import DataError, FormatError


def test_pgm_round_trip(tmp_path, rng):
    img = UsImage(rng.random((7, 11)), district="cardiac")
    save_image(img, tmp_path / "a.pgm")
    back = load_image(tmp_path / "a.pgm")
    assert back.shape == (7, 11)
    assert np.abs(back.pixels - img.pixels).max() <= 1 / 510 + 1e-12
    assert back.district == "cardiac"
    meta = json.loads((tmp_path / "a.json").read_text())
    assert meta == {"district": "cardiac", "L": 7, "D": 11}


def test_pgm_layout(tmp_path):
    img = UsImage(np.arange(12).reshape(3, 4) / 255)
    save_image(img, tmp_path / "b.pgm")
    data = (tmp_path / "b.pgm").read_bytes()
    header = b"P5\n4 3\n255\n"
    assert data.startswith(header)
    assert len(data) - len(header) == 12
    assert list(data[len(header):]) == list(range(12))


def test_pgm_quantization_rule():
    img = UsImage(np.array([[0.0, 0.5, 1.0, 0.999]] * 2))
    raster = decode_pgm(encode_pgm(np.clip(np.rint(img.pixels * 255), 0, 255).astype(np.uint8)))
    assert raster[0].tolist() == [0, 128, 255, 255]


def test_pgm_rejects_bad_files(tmp_path):
    with pytest.raises(FormatError, match="unsupported maxval"):
        decode_pgm(b"P5\n2 2\n65535\n" + bytes(8))
    with pytest.raises(FormatError):
        decode_pgm(b"P2\n2 2\n255\n" + bytes(4))
    with pytest.raises(FormatError, match="truncated"):
        decode_pgm(b"P5\n2 2\n255\n" + bytes(3))
    with pytest.raises(FormatError, match="overflow"):
        decode_pgm(b"P5\n99999999 2\n255\n" + bytes(4))
    with pytest.raises(FormatError):
        decode_pgm(b"P5\n2")
    with pytest.raises(FormatError):
        decode_pgm(b"P5\nx 2\n255\n" + bytes(4))


def test_pgm_accepts_comments():
    raster = decode_pgm(b"P5\n# made by hand\n2 1\n255\n\x00\xff")
    assert raster.tolist() == [[0, 255]]


def test_sidecar_mismatch(tmp_path):
    save_image(UsImage(np.zeros((4, 4))), tmp_path / "c.pgm")
    (tmp_path / "c.json").write_text(json.dumps({"district": "", "L": 5, "D": 4}))
    with pytest.raises(FormatError):
        load_image(tmp_path / "c.pgm")


def test_phantoms_deterministic_and_bounded():
    p = PhantomParams(seed=3, count=4, lines=32, depth=48)
    a, b = generate_phantoms(p), generate_phantoms(p)
    assert a == b
    assert generate_phantoms(PhantomParams(seed=4, count=4, lines=32, depth=48)) != a
    for img in a:
        assert img.shape == (32, 48)
        assert img.pixels.min() >= 0 and img.pixels.max() <= 1


# band frozen after first generation: default corpus means sat near 0.28
def test_phantom_corpus_mean_band():
    images = generate_phantoms(PhantomParams(seed=0, count=16))
    mean = np.mean([img.pixels.mean() for img in images])
    assert 0.05 < mean < 0.6


def test_phantom_params_validation():
    with pytest.raises(DataError):
        PhantomParams(lines=8)
    with pytest.raises(DataError):
        PhantomParams(count=0)


def test_phantom_speckle_is_laterally_and_axially_structured():
    img = generate_phantoms(PhantomParams(seed=1, count=1, lines=128, depth=128))[0].pixels
    d = img - img.mean()
    lag_axial = np.mean(d[:, 1:] * d[:, :-1]) / d.var()
    assert lag_axial > 0.3


@pytest.mark.parametrize("n, sizes", [(21, (15, 4, 2)), (2100, (1500, 400, 200)), (3, (1, 1, 1)),
                                      (64, (46, 12, 6)), (12, (9, 2, 1))])
def test_split_sizes(n, sizes):
    assert split_sizes(n) == sizes


def test_split_sizes_largest_remainder():
    # 10 * (1500, 400, 200) / 2100 = (7.14, 1.90, 0.95): remainders favour val, then test
    assert split_sizes(10) == (7, 2, 1)
    with pytest.raises(DataError, match="smaller than 3"):
        split_sizes(2)


def test_build_dataset_contract(rng):
    targets = generate_phantoms(PhantomParams(seed=2, count=21, lines=20, depth=16))
    s = SamplingScheme(2)
    manifest, pairs = build_dataset(targets, s, seed=1)
    assert {k: len(v) for k, v in pairs.items()} == {"train": 15, "val": 4, "test": 2}
    names = [e.name for e in manifest.entries]
    assert len(set(names)) == 21
    assert sorted(p.name for v in pairs.values() for p in v) == sorted(names)
    for split in pairs.values():
        for p in split:
            assert p.input.shape == p.target.shape
            assert np.array_equal(p.input.pixels[::2], p.target.pixels[::2])
            assert decimate(p.input, s) == decimate(p.target, s)
    train_mean = np.concatenate([p.target.pixels.ravel() for p in pairs["train"]]).mean()
    assert manifest.corpus_mean == pytest.approx(train_mean)
    again, _ = build_dataset(targets, s, seed=1)
    assert again.entries == manifest.entries
    other, _ = build_dataset(targets, s, seed=2)
    assert [e.split for e in other.entries] != [e.split for e in manifest.entries]


def test_build_dataset_rejects_small_corpus():
    targets = generate_phantoms(PhantomParams(seed=2, count=2, lines=16, depth=16))
    with pytest.raises(DataError, match="smaller than 3"):
        build_dataset(targets, SamplingScheme(2))


def test_manifest_round_trip(tmp_path):
    targets = generate_phantoms(PhantomParams(seed=5, count=5, lines=17, depth=16))
    manifest, pairs = build_dataset(targets, SamplingScheme(4), seed=0, district="phantom-cardiac")
    path = write_dataset(manifest, pairs, tmp_path / "ds")
    loaded = DatasetManifest.load(path)
    assert loaded.scheme == SamplingScheme(4)
    assert loaded.entries == manifest.entries
    assert loaded.district_label == "phantom-cardiac"
    for split in ("train", "val", "test"):
        for p in load_pairs(loaded, split):
            assert p.input.shape == (17, 16)
            assert np.array_equal(p.input.pixels[::4], p.target.pixels[::4])
    raw = json.loads(path.read_text())
    assert set(raw) >= {"district_label", "scheme", "entries", "corpus_mean"}


def test_manifest_malformed(tmp_path):
    (tmp_path / "m.json").write_text("{}")
    with pytest.raises(FormatError):
        DatasetManifest.load(tmp_path / "m.json")
