import json

import numpy as np
import pytest

from promptseg import (
    BinaryMask,
    DatasetManifest,
    MaskFormatError,
    encode_rle,
    load_manifest,
    load_samples,
    rasterize_polygon,
    write_samples_jsonl,
)
from promptseg.dataset import RESample, convert_coco_refs

from oracles import point_in_ring
from worldgen import random_mask


def write_fixture(tmp_path, records, source="grefcoco"):
    ann = tmp_path / "data.jsonl"
    with open(ann, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
    manifest = tmp_path / "manifest.json"
    manifest.write_text(
        json.dumps({"name": "fixture", "source": source, "annotations": "data.jsonl"})
    )
    return manifest


def rle_record(sample_id, mask, **extra):
    rec = {
        "id": sample_id,
        "image_id": f"img-{sample_id}",
        "width": mask.width,
        "height": mask.height,
        "expression": "something",
        "masks": [encode_rle(mask).to_json()],
        "no_target": False,
    }
    rec.update(extra)
    return rec


class TestLoadSamples:
    def test_minimal_fixture(self, tmp_path):
        rng = np.random.default_rng(0)
        mask = random_mask(rng, 8, 6)
        manifest = load_manifest(write_fixture(tmp_path, [rle_record("a", mask)]))
        samples = list(load_samples(manifest))
        assert len(samples) == 1
        assert samples[0].targets[0] == mask

    def test_no_target_entry(self, tmp_path):
        rec = {
            "id": "nt",
            "image_id": "img-nt",
            "width": 8,
            "height": 8,
            "expression": "missing",
            "masks": [],
            "no_target": True,
        }
        manifest = load_manifest(write_fixture(tmp_path, [rec]))
        samples = list(load_samples(manifest))
        assert samples[0].no_target
        assert samples[0].targets == ()

    def test_bad_rle_skipped_and_logged(self, tmp_path, caplog):
        rng = np.random.default_rng(1)
        good = rle_record("good", random_mask(rng, 8, 8))
        bad = rle_record("bad", random_mask(rng, 8, 8))
        bad["masks"][0]["counts"] = [3]  # sums to 3, not 64
        manifest = load_manifest(write_fixture(tmp_path, [bad, good]))
        with caplog.at_level("WARNING"):
            samples = list(load_samples(manifest))
        assert [s.sample_id for s in samples] == ["good"]
        assert any("data.jsonl:1" in rec.message for rec in caplog.records)

    def test_undecodable_line_skipped(self, tmp_path, caplog):
        ann = tmp_path / "data.jsonl"
        rng = np.random.default_rng(2)
        good = rle_record("good", random_mask(rng, 4, 4))
        ann.write_text("this is not json\n" + json.dumps(good) + "\n")
        manifest_path = tmp_path / "manifest.json"
        manifest_path.write_text(
            json.dumps({"name": "x", "source": "grefcoco", "annotations": "data.jsonl"})
        )
        with caplog.at_level("WARNING"):
            samples = list(load_samples(load_manifest(manifest_path)))
        assert len(samples) == 1

    def test_missing_file_is_hard_error(self, tmp_path):
        manifest = DatasetManifest(
            name="x", source="grefcoco", annotations=tmp_path / "nope.jsonl"
        )
        with pytest.raises(OSError):
            list(load_samples(manifest))

    def test_single_target_family_enforced(self, tmp_path):
        rng = np.random.default_rng(3)
        mask = random_mask(rng, 6, 6)
        rec = rle_record("two", mask)
        rec["masks"].append(encode_rle(mask).to_json())
        manifest = load_manifest(write_fixture(tmp_path, [rec], source="refcoco"))
        assert list(load_samples(manifest)) == []  # skipped, not raised

    def test_order_stable(self, tmp_path):
        rng = np.random.default_rng(4)
        records = [rle_record(f"s{i}", random_mask(rng, 6, 6)) for i in range(10)]
        manifest = load_manifest(write_fixture(tmp_path, records))
        first = [s.sample_id for s in load_samples(manifest)]
        second = [s.sample_id for s in load_samples(manifest)]
        assert first == second == [f"s{i}" for i in range(10)]

    def test_polygon_entry(self, tmp_path):
        rec = {
            "id": "poly",
            "image_id": "img-poly",
            "width": 8,
            "height": 8,
            "expression": "square",
            "masks": [{"polygon": [[1, 1], [5, 1], [5, 5], [1, 5]]}],
            "no_target": False,
        }
        manifest = load_manifest(write_fixture(tmp_path, [rec]))
        samples = list(load_samples(manifest))
        assert samples[0].targets[0].area == 16  # pixels 1..4 x 1..4


class TestRasterize:
    def test_rectangle_matches_filled_box(self):
        mask = rasterize_polygon([(1, 1), (5, 1), (5, 4), (1, 4)], 8, 8)
        expected = np.zeros((8, 8), dtype=bool)
        expected[1:4, 1:5] = True  # centers inside [1,5)x[1,4)
        assert mask == BinaryMask(expected)

    def test_triangle_matches_point_in_polygon_oracle(self):
        ring = [(0.5, 0.5), (11.5, 1.0), (6.0, 9.5)]
        mask = rasterize_polygon(ring, 12, 12)
        for y in range(12):
            for x in range(12):
                assert bool(mask.bits[y, x]) == point_in_ring(ring, x + 0.5, y + 0.5)

    def test_random_convex_polygons_match_oracle(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            # convex ring: sorted angles around a center
            n = int(rng.integers(3, 8))
            angles = np.sort(rng.random(n) * 2 * np.pi)
            radius = rng.random(n) * 5 + 2
            ring = [
                (8 + r * np.cos(a), 8 + r * np.sin(a)) for r, a in zip(radius, angles)
            ]
            mask = rasterize_polygon(ring, 16, 16)
            for y in range(16):
                for x in range(16):
                    assert bool(mask.bits[y, x]) == point_in_ring(ring, x + 0.5, y + 0.5)

    def test_two_disjoint_rings_union(self):
        a = [(0.0, 0.0), (3.0, 0.0), (3.0, 3.0), (0.0, 3.0)]
        b = [(5.0, 5.0), (8.0, 5.0), (8.0, 8.0), (5.0, 8.0)]
        union = rasterize_polygon([a, b], 10, 10)
        assert union == BinaryMask(
            rasterize_polygon(a, 10, 10).bits | rasterize_polygon(b, 10, 10).bits
        )

    def test_too_few_vertices(self):
        with pytest.raises(MaskFormatError):
            rasterize_polygon([(0, 0), (1, 1)], 4, 4)


class TestWriteAndConvert:
    def test_jsonl_round_trip(self, tmp_path):
        rng = np.random.default_rng(6)
        samples = [
            RESample(
                sample_id=f"s{i}",
                image_id=f"img-{i}",
                width=7,
                height=5,
                expression="thing",
                targets=(random_mask(rng, 7, 5),),
                source="grefcoco",
            )
            for i in range(4)
        ]
        out = tmp_path / "round.jsonl"
        write_samples_jsonl(samples, out)
        manifest = tmp_path / "m.json"
        manifest.write_text(
            json.dumps({"name": "r", "source": "grefcoco", "annotations": "round.jsonl"})
        )
        loaded = list(load_samples(load_manifest(manifest)))
        assert [s.sample_id for s in loaded] == [s.sample_id for s in samples]
        for a, b in zip(loaded, samples):
            assert a.targets == b.targets

    def test_convert_coco_refs(self, tmp_path):
        dump = {
            "images": [{"id": 1, "width": 8, "height": 8}],
            "annotations": [
                {
                    "id": 10,
                    "image_id": 1,
                    "segmentation": [[1, 1, 5, 1, 5, 5, 1, 5]],
                }
            ],
            "refs": [
                {
                    "ref_id": "r1",
                    "image_id": 1,
                    "ann_ids": [10],
                    "sentences": [{"sent": "the square"}],
                },
                {"ref_id": "r2", "image_id": 1, "no_target": True, "expression": "ghost"},
            ],
        }
        src = tmp_path / "dump.json"
        src.write_text(json.dumps(dump))
        out = tmp_path / "native.jsonl"
        assert convert_coco_refs(src, out) == 2
        manifest = tmp_path / "m.json"
        manifest.write_text(
            json.dumps({"name": "c", "source": "grefcoco", "annotations": "native.jsonl"})
        )
        samples = list(load_samples(load_manifest(manifest)))
        assert samples[0].expression == "the square"
        assert samples[0].targets[0].area == 16
        assert samples[1].no_target
