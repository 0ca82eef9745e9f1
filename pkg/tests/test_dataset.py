"""Manifest parsing, split selection, and upsampling."""

import numpy as np
import pytest

from coughgate.dataset import (
    DatasetManifest,
    DatasetRecord,
    ManifestError,
    balance_upsample,
    parse_manifest,
    select_split,
    write_manifest,
)

HEADER = "id,audio_path,label,split,source"


def make_manifest(tmp_path, rows):
    path = tmp_path / "manifest.csv"
    path.write_text("\n".join([HEADER] + rows) + "\n")
    return path


class TestParse:
    def test_three_rows_in_order(self, tmp_path):
        path = make_manifest(
            tmp_path,
            [
                "a,x.wav,positive,train,src",
                "b,y.wav,negative,validation,src",
                "c,z.wav,unlabeled,train,src",
            ],
        )
        manifest = parse_manifest(path)
        assert [r.id for r in manifest.records] == ["a", "b", "c"]
        assert manifest.records[0].label == "positive"

    def test_duplicate_id_names_both_rows(self, tmp_path):
        rows = [
            "a1,x.wav,positive,train,src",
            "b,y.wav,negative,train,src",
            "c,z.wav,negative,train,src",
            "a1,w.wav,positive,train,src",
        ]
        path = make_manifest(tmp_path, rows)
        with pytest.raises(ManifestError, match=r"rows 2 and 5"):
            parse_manifest(path)

    def test_unknown_label(self, tmp_path):
        path = make_manifest(tmp_path, ["a,x.wav,covid,train,src"])
        with pytest.raises(ManifestError, match="unknown label"):
            parse_manifest(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ManifestError, match="not found"):
            parse_manifest(tmp_path / "absent.csv")

    def test_missing_column(self, tmp_path):
        path = tmp_path / "m.csv"
        path.write_text("id,audio_path,label,split\na,x.wav,positive,train\n")
        with pytest.raises(ManifestError, match="missing required column"):
            parse_manifest(path)

    def test_unlabeled_only_in_train(self, tmp_path):
        path = make_manifest(tmp_path, ["a,x.wav,unlabeled,test,src"])
        with pytest.raises(ManifestError, match="unlabeled"):
            parse_manifest(path)

    def test_metadata_columns(self, tmp_path):
        path = tmp_path / "m.csv"
        path.write_text(HEADER + ",age\n" + "a,x.wav,positive,train,src,42\n")
        manifest = parse_manifest(path)
        assert manifest.records[0].metadata == {"age": "42"}

    def test_roundtrip(self, tmp_path):
        path = make_manifest(
            tmp_path,
            ["a,x.wav,positive,train,src", "b,y.wav,negative,test,other"],
        )
        manifest = parse_manifest(path)
        out = tmp_path / "copy.csv"
        write_manifest(manifest, out)
        again = parse_manifest(out)
        assert again == manifest


class TestSelectSplit:
    def manifest(self):
        return DatasetManifest(
            [
                DatasetRecord("a", "a.wav", "positive", "train", "s"),
                DatasetRecord("b", "b.wav", "unlabeled", "train", "s"),
                DatasetRecord("c", "c.wav", "negative", "train", "s"),
                DatasetRecord("d", "d.wav", "negative", "validation", "s"),
            ]
        )

    def test_filter(self):
        assert [r.id for r in select_split(self.manifest(), "validation")] == ["d"]

    def test_labeled_only(self):
        out = select_split(self.manifest(), "train", labeled_only=True)
        assert [r.id for r in out] == ["a", "c"]

    def test_empty_manifest(self):
        assert select_split(DatasetManifest([]), "test") == []

    def test_partition_property(self):
        manifest = self.manifest()
        parts = [select_split(manifest, s) for s in ("train", "validation", "test")]
        ids = [r.id for part in parts for r in part]
        assert sorted(ids) == sorted(r.id for r in manifest.records)
        assert len(ids) == len(set(ids))


class TestBalanceUpsample:
    def records(self, n_neg, n_pos):
        recs = [DatasetRecord(f"n{i}", "x.wav", "negative", "train", "s") for i in range(n_neg)]
        recs += [DatasetRecord(f"p{i}", "x.wav", "positive", "train", "s") for i in range(n_pos)]
        return recs

    def test_ratio_four(self):
        out = balance_upsample(self.records(10, 2), ratio=4, rng_seed=0)
        assert len(out) == 18
        assert sum(1 for r in out if r.is_positive) == 8

    def test_ratio_one_identity_multiset(self):
        recs = self.records(3, 2)
        out = balance_upsample(recs, ratio=1, rng_seed=3)
        assert sorted(r.id for r in out) == sorted(r.id for r in recs)

    def test_ratio_five(self):
        out = balance_upsample(self.records(3, 1), ratio=5, rng_seed=1)
        assert len(out) == 8
        assert sum(1 for r in out if r.id == "p0") == 5

    def test_copy_indices_distinct(self):
        out = balance_upsample(self.records(0, 1), ratio=4, rng_seed=2)
        assert sorted(r.copy_index for r in out) == [0, 1, 2, 3]

    def test_seeded_determinism(self):
        recs = self.records(6, 3)
        a = balance_upsample(recs, ratio=4, rng_seed=9)
        b = balance_upsample(recs, ratio=4, rng_seed=9)
        assert [(r.id, r.copy_index) for r in a] == [(r.id, r.copy_index) for r in b]

    def test_count_formula(self):
        for n_neg, n_pos, ratio in [(5, 3, 2), (0, 4, 7), (9, 0, 3)]:
            out = balance_upsample(self.records(n_neg, n_pos), ratio, rng_seed=0)
            assert len(out) == n_neg + ratio * n_pos

    def test_rejects_ratio_zero(self):
        with pytest.raises(ValueError):
            balance_upsample(self.records(1, 1), ratio=0, rng_seed=0)

    def test_rejects_unlabeled(self):
        recs = self.records(1, 1) + [DatasetRecord("u", "x.wav", "unlabeled", "train", "s")]
        with pytest.raises(ValueError):
            balance_upsample(recs, ratio=2, rng_seed=0)
