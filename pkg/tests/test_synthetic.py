import numpy as np

from clipita import synthetic as S
from clipita.data.manifest import load_manifest
from clipita.encoders import split_words


def test_pairs_shape_and_caption_length():
    ids, images, captions = S.make_pairs(256, seed=0)
    assert images.shape == (256, 32, 32, 3) and images.dtype == np.uint8
    assert len(set(ids)) == 256
    assert all(3 <= len(split_words(c)) <= 6 for c in captions)
    # every attribute combination appears exactly twice
    assert len(set(captions)) == 128


def test_caption_is_determined_by_attributes():
    assert S.caption_for("cerchio", "rosso", "grande", "chiaro") == "un cerchio rosso"
    assert S.caption_for("anello", "blu", "piccolo", "scuro") == "un anello blu piccolo al buio"


def test_shape_color_visible_in_pixels():
    img = S.render("cerchio", "rosso", "grande", "chiaro", np.random.default_rng(0))
    assert tuple(img[16, 16]) == S.COLORS["rosso"]
    assert tuple(img[0, 0]) == S.BACKGROUNDS["chiaro"]


def test_generation_is_deterministic(tmp_path):
    a = S.write_dataset(tmp_path / "a", 16, seed=4)
    b = S.write_dataset(tmp_path / "b", 16, seed=4)
    assert a.read_bytes() == b.read_bytes()
    for rec in load_manifest(a):
        assert (a.parent / rec.image_ref).read_bytes() == (b.parent / rec.image_ref).read_bytes()
        assert 0 <= rec.extra["label"] < 32
    assert len((tmp_path / "a" / "classes.tsv").read_text().splitlines()) == 32
