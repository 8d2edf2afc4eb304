import math

import numpy as np
import pytest

from salguide.annotations import BBox
from salguide.errors import DatasetError, InvalidParameterError, UnsupportedFormatError
from salguide.synthdata import (SynthConfig, generate_dataset, load_dataset, load_splits, pgm_read,
                                pgm_read_bytes, pgm_write)


def _tree_bytes(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_same_seed_same_bytes(tmp_path):
    cfg = SynthConfig(image_size=32, n_samples=12, lesion_sigma_min=1.0, lesion_sigma_max=2.0, tag_size=4, seed=9)
    generate_dataset(cfg, tmp_path / "a")
    generate_dataset(cfg, tmp_path / "b")
    assert _tree_bytes(tmp_path / "a") == _tree_bytes(tmp_path / "b")


def test_exact_positive_count(tmp_path):
    cfg = SynthConfig(image_size=32, n_samples=100, lesion_sigma_min=1.0, lesion_sigma_max=2.0, tag_size=4)
    man = generate_dataset(cfg, tmp_path / "d")
    labels = [s.label for s in load_dataset(tmp_path / "d")]
    assert man.n_positive == 50 and sum(labels) == 50 and len(labels) == 100


def test_tag_rate_is_binomial(tmp_path):
    cfg = SynthConfig(image_size=32, n_samples=1000, lesion_sigma_min=1.0, lesion_sigma_max=2.0,
                      tag_size=4, confounder_rate=0.9, seed=1)
    man = generate_dataset(cfg, tmp_path / "d")
    assert man.n_positive == 500
    assert abs(len(man.tagged) - 450) <= 3 * math.sqrt(500 * 0.9 * 0.1)


def test_default_layout(small_dataset):
    path, cfg = small_dataset
    assert (path / "labels.csv").read_bytes().startswith(b"filename,label,split\n")
    assert (path / "boxes.csv").read_bytes().startswith(b"filename,x0,y0,x1,y1\n")
    assert b"\r" not in (path / "labels.csv").read_bytes()
    assert len(list((path / "images").glob("*.pgm"))) == cfg.n_samples


def test_round_trip_and_structure(small_dataset):
    path, cfg = small_dataset
    splits = load_splits(path)
    assert sum(len(v) for v in splits.values()) == cfg.n_samples
    rows = (path / "boxes.csv").read_text().splitlines()[1:]
    from_csv = {}
    for r in rows:
        name, *c = r.split(",")
        from_csv.setdefault(name, []).append(BBox(*map(int, c)))
    tag = cfg.tag_box
    for s in load_dataset(path):
        assert s.image.shape == (1, 32, 32)
        assert s.boxes == from_csv.get(s.filename, [])
        if s.label == 0:
            assert s.boxes == []
        else:
            assert 1 <= len(s.boxes) <= 2
        for b in s.boxes:
            assert b.x1 < tag.x0 or b.x0 > tag.x1 or b.y1 < tag.y0 or b.y0 > tag.y1
            inner = s.image[0, b.y0 + 2:b.y1 - 1, b.x0 + 2:b.x1 - 1]
            assert s.image[0, b.y0:b.y1 + 1, b.x0:b.x1 + 1].max() == inner.max()


def test_splits_are_stratified(small_dataset):
    path, _ = small_dataset
    splits = load_splits(path)
    assert [len(splits[k]) for k in ("train", "val", "test")] == [42, 8, 10]
    for samples in splits.values():
        pos = sum(s.label for s in samples)
        assert abs(2 * pos - len(samples)) <= 1


def _copy(src, dst):
    import shutil
    shutil.copytree(src, dst)
    return dst


def test_out_of_bounds_box(small_dataset, tmp_path):
    path, _ = small_dataset
    d = _copy(path, tmp_path / "d")
    name = (d / "labels.csv").read_text().splitlines()[1].split(",")[0]
    with open(d / "boxes.csv", "a") as fh:
        fh.write(f"{name},70,0,80,5\n")
    with pytest.raises(DatasetError, match=r"boxes.csv:\d+"):
        load_dataset(d)


def test_bad_rows(small_dataset, tmp_path):
    path, _ = small_dataset
    d = _copy(path, tmp_path / "d")
    lines = (d / "labels.csv").read_text().splitlines()
    (d / "labels.csv").write_text("\n".join(lines[:1] + [lines[1].replace(",train", ",holdout")
                                                          .replace(",val", ",holdout")
                                                          .replace(",test", ",holdout")] + lines[2:]) + "\n")
    with pytest.raises(DatasetError, match="labels.csv:2"):
        load_dataset(d)
    with pytest.raises(DatasetError, match="unknown split"):
        load_dataset(path, "dev")


def test_missing_parent(tmp_path):
    with pytest.raises(DatasetError):
        generate_dataset(SynthConfig(n_samples=2),
                         tmp_path / "nope" / "d")


def test_pgm_round_trip(tmp_path, rng):
    img = rng.random((5, 7))
    img[0, 0], img[0, 1] = 1.0, 0.0
    pgm_write(tmp_path / "a.pgm", img)
    raw = pgm_read_bytes(tmp_path / "a.pgm")
    assert raw.shape == (5, 7) and raw[0, 0] == 255 and raw[0, 1] == 0
    back = pgm_read(tmp_path / "a.pgm")
    pgm_write(tmp_path / "b.pgm", back)
    assert (tmp_path / "a.pgm").read_bytes() == (tmp_path / "b.pgm").read_bytes()
    assert np.abs(back - img).max() <= 0.5 / 255 + 1e-12


def test_pgm_header_comments(tmp_path):
    (tmp_path / "c.pgm").write_bytes(b"P5\n# made by hand\n2 1\n255\n\x00\xff")
    np.testing.assert_array_equal(pgm_read_bytes(tmp_path / "c.pgm"), [[0, 255]])


@pytest.mark.parametrize("blob", [b"P2\n2 1\n255\n0 255\n", b"P5\n2 1\n65535\n\x00\x00\x00\x00",
                                  b"P5\n4 4\n255\n\x00"])
def test_pgm_rejects(tmp_path, blob):
    (tmp_path / "x.pgm").write_bytes(blob)
    with pytest.raises(UnsupportedFormatError):
        pgm_read(tmp_path / "x.pgm")


@pytest.mark.parametrize("kw", [dict(train_fraction=0.8), dict(confounder_rate=1.5),
                                dict(image_size=16), dict(lesion_sigma_min=0.0)])
def test_invalid_synth_config(kw):
    with pytest.raises(InvalidParameterError):
        SynthConfig(**kw)
