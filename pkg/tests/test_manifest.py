import json

import pytest
from hypothesis import given, settings, strategies as st

from clipita.data.manifest import (CaptionRecord, ManifestError, load_manifest, parse_record,
                                   split_dataset, write_manifest)


def _write(tmp_path, lines):
    path = tmp_path / "m.jsonl"
    path.write_text("".join(l + "\n" for l in lines), encoding="utf-8")
    return path


def test_empty_file(tmp_path):
    assert load_manifest(_write(tmp_path, [])) == []


def test_three_valid_lines(tmp_path):
    lines = [json.dumps({"id": str(i), "image_ref": f"{i}.ppm", "caption": "un gatto"}) for i in range(3)]
    records = load_manifest(_write(tmp_path, ['{"schema_version": 1}', ""] + lines))
    assert [r.id for r in records] == ["0", "1", "2"]
    assert records[0].source == "custom"


def test_missing_caption_reports_line(tmp_path):
    lines = [json.dumps({"id": "a", "image_ref": "a.ppm", "caption": "ok"}),
             json.dumps({"id": "b", "image_ref": "b.ppm"})]
    with pytest.raises(ManifestError) as info:
        load_manifest(_write(tmp_path, lines))
    assert info.value.line == 2


def test_malformed_json_and_duplicates(tmp_path):
    with pytest.raises(ManifestError, match="line 1"):
        load_manifest(_write(tmp_path, ["{nope"]))
    rec = json.dumps({"id": "a", "image_ref": "a.ppm", "caption": "x"})
    with pytest.raises(ManifestError, match="first seen on line 1") as info:
        load_manifest(_write(tmp_path, [rec, rec]))
    assert info.value.line == 2


def test_blank_caption_and_bad_source():
    with pytest.raises(ManifestError):
        parse_record({"id": "a", "image_ref": "a", "caption": "  "})
    with pytest.raises(ManifestError):
        parse_record({"id": "a", "image_ref": "a", "caption": "x", "source": "flickr"})


@pytest.mark.parametrize("raw,source", [
    ({"id": 1, "image_url": "http://x/a.jpg", "caption_reference_description": "Duomo"}, "wit"),
    ({"id": 2, "file_name": "a.jpg", "caption_it": "un gatto"}, "mscoco-it"),
    ({"id": 3, "url": "http://x/b.jpg", "caption_it": "un cane"}, "cc"),
    ({"id": 4, "foto": "c.jpg", "didascalia": "la piazza"}, "ilpost"),
])
def test_source_adapters(raw, source):
    rec = parse_record(raw, source=source)
    assert rec.source == source and rec.caption and rec.image_ref and rec.extra == {}


def test_round_trip_keeps_extra_fields(tmp_path):
    recs = [CaptionRecord("a", "a.ppm", "città è bella", lang="it", pos_tags=["NOUN"], extra={"label": 3})]
    path = write_manifest(tmp_path / "out.jsonl", recs)
    assert load_manifest(path) == recs
    assert "città" in path.read_text(encoding="utf-8")


def _records(n):
    return [CaptionRecord(str(i), f"{i}.ppm", "x") for i in range(n)]


def test_split_examples():
    train, held = split_dataset(_records(10), 0.0, 1)
    assert held == [] and len(train) == 10
    assert split_dataset(_records(10), 0.3, 5) == split_dataset(_records(10), 0.3, 5)
    with pytest.raises(ValueError):
        split_dataset(_records(3), 1.5)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 60), st.floats(0, 1), st.integers(0, 1000))
def test_split_partitions(n, frac, seed):
    train, held = split_dataset(_records(n), frac, seed)
    ids_t, ids_h = {r.id for r in train}, {r.id for r in held}
    assert not ids_t & ids_h
    assert ids_t | ids_h == {str(i) for i in range(n)}
    assert len(held) == round(frac * n)
