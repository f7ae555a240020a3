from __future__ import annotations

import json

import numpy as np
import pytest
from PIL import Image

from demoaudit.cli import main
from demoaudit.store import load as load_shard, record_line

from conftest import synthetic_manifest, write_hierarchy_files, write_manifest


def run_cli(capsys, argv):
    code = main(argv)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def last_json(out: str) -> dict:
    return json.loads(out.strip().splitlines()[-1])


@pytest.fixture
def audit_tree(tmp_path):
    """A 6-synset hierarchy with a 60-image manifest, stub-ready."""
    edges = [(f"n{k:02d}", "n00") for k in range(1, 6)]
    glosses = {f"n{k:02d}": f"synset {k}" for k in range(6)}
    write_hierarchy_files(tmp_path, edges, glosses)
    synthetic_manifest(tmp_path, 60, [f"n{k:02d}" for k in range(1, 6)])
    return tmp_path


def base_args(tree, out="out", extra=()):
    return [
        "--manifest",
        str(tree / "manifest.tsv"),
        "--out",
        str(tree / out),
        *extra,
    ]


class TestAnnotate:
    def test_stub_run_processes_all(self, audit_tree, capsys):
        code, out, _ = run_cli(
            capsys, ["annotate", *base_args(audit_tree), "--seed", "5"]
        )
        assert code == 0
        summary = last_json(out)
        assert summary["processed"] == 60
        assert summary["skipped"] == 0
        records, _ = load_shard(audit_tree / "out" / "shard-0000.jsonl")
        assert all(r.confidence >= 0.9 for r in records)

    def test_empty_manifest(self, tmp_path, capsys):
        write_manifest(tmp_path, [])
        code, out, _ = run_cli(capsys, ["annotate", *base_args(tmp_path)])
        assert code == 0
        assert last_json(out)["processed"] == 0

    def test_unreachable_worker(self, audit_tree, capsys, monkeypatch):
        monkeypatch.setenv("AUDIT_WORKER_ENDPOINT", "tcp:127.0.0.1:1")
        code, _, err = run_cli(capsys, ["annotate", *base_args(audit_tree)])
        assert code != 0
        assert json.loads(err.strip())["error"] == "AnnotatorUnavailable"

    def test_sharded_run_covers_manifest_once(self, audit_tree, capsys):
        code, out, _ = run_cli(
            capsys, ["annotate", *base_args(audit_tree), "--shards", "4", "--seed", "5"]
        )
        assert code == 0
        assert last_json(out)["processed"] == 60
        shard_dir = audit_tree / "out"
        image_ids = []
        for shard in sorted(shard_dir.glob("*.jsonl")):
            records, _ = load_shard(shard)
            image_ids.extend(r.image_id for r in records)
        assert len(image_ids) == len(set((i, k) for k, i in enumerate(image_ids)))

    def test_resume_processes_exactly_the_rest(self, audit_tree, capsys):
        # Seed 8 makes manifest image 29 carry gated records, so a kill right
        # after the 30th image leaves a usable resume boundary.
        args = ["annotate", *base_args(audit_tree), "--seed", "8"]
        run_cli(capsys, args)
        full_records, _ = load_shard(audit_tree / "out" / "shard-0000.jsonl")
        assert any(r.image_id == "img00029" for r in full_records)

        first_30 = {f"img{i:05d}" for i in range(30)}
        kept = [r for r in full_records if r.image_id in first_30]
        shard = audit_tree / "out" / "shard-0000.jsonl"
        shard.write_text("".join(record_line(r) + "\n" for r in kept), encoding="utf-8")

        code, out, _ = run_cli(capsys, args)
        assert code == 0
        summary = last_json(out)
        assert summary["processed"] == 30
        assert summary["skipped"] == 30
        resumed_records, _ = load_shard(shard, dedup=True)
        assert {r.dedup_key for r in resumed_records} == {r.dedup_key for r in full_records}

    def test_resume_after_mid_line_truncation(self, audit_tree, capsys):
        args = ["annotate", *base_args(audit_tree), "--seed", "5"]
        run_cli(capsys, args)
        shard = audit_tree / "out" / "shard-0000.jsonl"
        full_records, _ = load_shard(shard)

        data = shard.read_bytes()
        cut = data[: int(len(data) * 0.4)]
        cut = cut[: cut.rfind(b"\n") + 1] + b'{"image_id": "img000'  # dangling partial line
        shard.write_bytes(cut)

        code, _, _ = run_cli(capsys, args)
        assert code == 0
        resumed_records, _ = load_shard(shard, dedup=True)
        assert {r.dedup_key for r in resumed_records} == {r.dedup_key for r in full_records}


class TestAggregate:
    def annotate_then_aggregate(self, tree, capsys, agg_extra=()):
        run_cli(capsys, ["annotate", *base_args(tree), "--seed", "5"])
        code, out, err = run_cli(
            capsys,
            [
                "aggregate",
                str(tree / "out"),
                *base_args(tree, out="reports"),
                *agg_extra,
            ],
        )
        return code, out, err

    def test_outputs_written(self, audit_tree, capsys):
        code, out, _ = self.annotate_then_aggregate(audit_tree, capsys)
        assert code == 0
        summary = last_json(out)
        report_dir = audit_tree / "reports"
        for name in ("top_level.csv", "top_level.md", "ranking_male.csv", "ranking_female.md"):
            assert (report_dir / name).exists()
        assert summary["faces"] > 0

    def test_markdown_column_order(self, audit_tree, capsys):
        self.annotate_then_aggregate(audit_tree, capsys)
        lines = (audit_tree / "reports" / "top_level.md").read_text().splitlines()
        header = next(l for l in lines if l.startswith("| Age"))
        assert header == "| Age group | Male | Female | All |"

    def test_all_all_cell_is_100(self, audit_tree, capsys):
        self.annotate_then_aggregate(audit_tree, capsys)
        rows = (audit_tree / "reports" / "top_level.csv").read_text().splitlines()
        all_row = next(r for r in rows if r.startswith("All,"))
        assert all_row.split(",")[3] == "100.00"

    def test_byte_identical_reruns(self, audit_tree, capsys):
        self.annotate_then_aggregate(audit_tree, capsys)
        report_dir = audit_tree / "reports"
        first = {p.name: p.read_bytes() for p in report_dir.iterdir()}
        code, _, _ = run_cli(
            capsys,
            ["aggregate", str(audit_tree / "out"), *base_args(audit_tree, out="reports")],
        )
        assert code == 0
        second = {p.name: p.read_bytes() for p in report_dir.iterdir()}
        assert first == second

    def test_empty_shards_fail_cleanly(self, audit_tree, capsys):
        shard_dir = audit_tree / "empty"
        shard_dir.mkdir()
        (shard_dir / "shard-0000.jsonl").write_text("")
        code, _, err = run_cli(
            capsys,
            ["aggregate", str(shard_dir), *base_args(audit_tree, out="reports")],
        )
        assert code == 2
        assert json.loads(err.strip())["error"] == "EmptyAudit"

    def test_provenance_header_present(self, audit_tree, capsys):
        self.annotate_then_aggregate(audit_tree, capsys)
        text = (audit_tree / "reports" / "top_level.csv").read_text()
        assert text.startswith("# tool: demoaudit")
        assert "# config: sha256:" in text
        assert "stub-v1-seed5" in text


class TestEvaluateCli:
    def write_eval_fixture(self, tmp_path):
        labels = tmp_path / "labels.jsonl"
        entries = [
            {"image_id": "a", "boxes": [{"x": 0, "y": 0, "w": 10, "h": 10}], "age": 20, "gender": "male", "skin_type": "II"},
            {"image_id": "b", "boxes": [{"x": 5, "y": 5, "w": 12, "h": 12}], "age": 40, "gender": "female", "skin_type": "V"},
        ]
        labels.write_text("".join(json.dumps(e) + "\n" for e in entries))
        det = tmp_path / "det.jsonl"
        det.write_text(
            json.dumps({"image_id": "a", "boxes": [{"x": 0, "y": 0, "w": 10, "h": 10, "conf": 0.9}]})
            + "\n"
            + json.dumps({"image_id": "b", "boxes": [{"x": 5, "y": 5, "w": 12, "h": 12, "conf": 0.8}]})
            + "\n"
        )
        ages = tmp_path / "ages.jsonl"
        ages.write_text(
            json.dumps({"image_id": "a", "expected_age": 22.0})
            + "\n"
            + json.dumps({"image_id": "b", "expected_age": 35.0})
            + "\n"
        )
        genders = tmp_path / "genders.jsonl"
        genders.write_text(
            json.dumps({"image_id": "a", "gender_score": 0.2})
            + "\n"
            + json.dumps({"image_id": "b", "gender_label": "female"})
            + "\n"
        )
        return labels, det, ages, genders

    def test_all_tables(self, tmp_path, capsys):
        labels, det, ages, genders = self.write_eval_fixture(tmp_path)
        code, out, _ = run_cli(
            capsys,
            [
                "evaluate",
                "--labels", str(labels),
                "--pred-detect", str(det),
                "--pred-age", str(ages),
                "--pred-gender", str(genders),
                "--strata", "age,skin",
                "--out", str(tmp_path / "eval"),
            ],
        )
        assert code == 0
        out_dir = tmp_path / "eval"
        for name in ("detection_ap.csv", "age_mae.csv", "gender_accuracy_age.csv", "gender_accuracy_skin.csv"):
            assert (out_dir / name).exists()
        mae_rows = (out_dir / "age_mae.csv").read_text().splitlines()
        all_row = next(r for r in mae_rows if r.startswith("All,"))
        assert all_row.split(",")[3] == "3.50"  # (|22-20| + |35-40|) / 2

    def test_missing_prediction_exits_nonzero(self, tmp_path, capsys):
        labels, det, ages, genders = self.write_eval_fixture(tmp_path)
        ages.write_text(json.dumps({"image_id": "a", "expected_age": 22.0}) + "\n")
        code, _, err = run_cli(
            capsys,
            ["evaluate", "--labels", str(labels), "--pred-age", str(ages), "--out", str(tmp_path / "eval")],
        )
        assert code == 2
        assert json.loads(err.strip())["error"] == "MissingPrediction"


class TestDiversityCli:
    def test_csv_columns(self, tmp_path, capsys):
        edges = [("n01", "n00"), ("n02", "n00")]
        glosses = {"n00": "root", "n01": "one", "n02": "two"}
        write_hierarchy_files(tmp_path, edges, glosses)
        rng = np.random.default_rng(0)
        (tmp_path / "images").mkdir()
        entries = []
        for k, wnid in enumerate(["n01", "n01", "n02"]):
            name = f"images/img{k}.png"
            Image.fromarray(rng.integers(0, 256, (16, 16, 3), dtype=np.uint8)).save(tmp_path / name)
            entries.append((f"img{k}", wnid, name))
        write_manifest(tmp_path, entries)
        code, out, _ = run_cli(
            capsys,
            ["diversity", *base_args(tmp_path), "--dims", "16x16"],
        )
        assert code == 0
        lines = (tmp_path / "out" / "diversity.csv").read_text().splitlines()
        header = next(l for l in lines if not l.startswith("#"))
        assert header == "wnid,n_images,compressed_bytes,codec_id"
        data_rows = [l for l in lines if l.startswith("n0")]
        assert len(data_rows) == 2
        assert data_rows[0].startswith("n01,2,")


class TestConfigPlumbing:
    def test_config_file_with_cli_override(self, audit_tree, capsys):
        config = audit_tree / "audit.cfg"
        config.write_text(
            "\n".join(
                [
                    "# audit config",
                    f"manifest = {audit_tree / 'manifest.tsv'}",
                    f"out = {audit_tree / 'cfg_out'}",
                    "seed = 9",
                    "shards = 2",
                ]
            )
            + "\n"
        )
        code, out, _ = run_cli(capsys, ["annotate", "--config", str(config), "--seed", "5"])
        assert code == 0
        assert (audit_tree / "cfg_out" / "shard-0001.jsonl").exists()
        # CLI seed overrides the config seed: version string says seed5
        records, _ = load_shard(audit_tree / "cfg_out" / "shard-0000.jsonl")
        assert records[0].annotator_version == "stub-v1-seed5"

    def test_unknown_config_key(self, audit_tree, capsys):
        config = audit_tree / "audit.cfg"
        config.write_text("bogus.key = 1\n")
        code, _, err = run_cli(capsys, ["annotate", "--config", str(config)])
        assert code == 2
        assert json.loads(err.strip())["error"] == "ConfigError"

    def test_bad_threshold_rejected(self, audit_tree, capsys):
        code, _, err = run_cli(
            capsys, ["annotate", *base_args(audit_tree), "--min-conf", "1.5"]
        )
        assert code == 2
        assert json.loads(err.strip())["error"] == "ConfigError"

    def test_cli_subset_replaces_config_subset(self, tmp_path, capsys):
        edges = [("n01", "n00"), ("n02", "n00")]
        glosses = {f"n{k:02d}": f"s{k}" for k in range(3)}
        edges_path, gloss_path = write_hierarchy_files(tmp_path, edges, glosses)
        write_manifest(tmp_path, [("a", "n01", "a.jpg"), ("b", "n02", "b.jpg")])
        subset_file = tmp_path / "only-n02.txt"
        subset_file.write_text("n02\n")
        config = tmp_path / "audit.cfg"
        config.write_text(
            f"hierarchy.edges = {edges_path}\nhierarchy.glosses = {gloss_path}\n"
            "subset.root = n01\n"
        )
        code, out, _ = run_cli(
            capsys,
            [
                "annotate",
                "--config", str(config),
                *base_args(tmp_path),
                "--subset", f"@{subset_file}",
                "--seed", "1",
            ],
        )
        assert code == 0
        assert last_json(out)["images"] == 1  # the list file wins over subset.root

    def test_subset_root_restricts(self, tmp_path, capsys):
        edges = [("n01", "n00"), ("n02", "n00"), ("n03", "n01")]
        glosses = {f"n{k:02d}": f"s{k}" for k in range(4)}
        edges_path, gloss_path = write_hierarchy_files(tmp_path, edges, glosses)
        entries = [("a", "n01", "a.jpg"), ("b", "n02", "b.jpg"), ("c", "n03", "c.jpg")]
        write_manifest(tmp_path, entries)
        config = tmp_path / "audit.cfg"
        config.write_text(
            f"hierarchy.edges = {edges_path}\nhierarchy.glosses = {gloss_path}\n"
        )
        code, out, _ = run_cli(
            capsys,
            [
                "annotate",
                "--config", str(config),
                *base_args(tmp_path),
                "--subset", "n01",
                "--seed", "1",
            ],
        )
        assert code == 0
        summary = last_json(out)
        assert summary["images"] == 2  # n01 and its child n03
