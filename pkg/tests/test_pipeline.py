import json
from pathlib import Path

import pytest

from revisit_lab import pipeline
from revisit_lab.pipeline import PipelineConfig, PipelineError, run_pipeline, verify_manifest, worker_count

TINY = """\
n_users = 80
n_days = 14
n_pins = 600
planted_signal_strength = 1.0
rng_seed = 3

[pipeline]
out_dir = out
eval_days = 2
analysis_horizon = 3

[train]
learning_rate = 0.01
batch_size = 128
hidden = [8, 4]
"""


def tiny(tmp_path, name="out", extra=""):
    text = TINY.replace("out_dir = out", f"out_dir = {name}") + extra
    return PipelineConfig.from_text(text, base_dir=tmp_path)


def snapshot(out_dir: Path) -> dict:
    return {str(p.relative_to(out_dir)): p.read_bytes() for p in sorted(out_dir.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def reference_run(tmp_path_factory):
    base = tmp_path_factory.mktemp("ref")
    result = run_pipeline(tiny(base), workers=1)
    assert result.ok, result.error
    return base / "out", result


class TestRun:
    def test_manifest(self, reference_run):
        out, result = reference_run
        names = [s["name"] for s in result.manifest["stages"]]
        assert names == ["generate", "perf_features", "action_labels", "revisit_join", "labels", "assemble",
                         "train", "evaluate", "analyze"]
        for stage in result.manifest["stages"]:
            assert stage["status"] == "ok"
            for name, digest in stage["outputs"].items():
                assert digest == pipeline.file_digest(out / name)
        on_disk = json.loads((out / "manifest.json").read_text())
        assert on_disk == result.manifest
        verify_manifest(on_disk)

    def test_artifacts(self, reference_run):
        out, _ = reference_run
        for name in ("events.csv", "features.csv", "labels.csv", "dataset_train.csv", "dataset_eval.csv",
                     "model.txt", "baseline_model.txt", "lift_report.csv", "analysis/table3.csv"):
            assert (out / name).is_file(), name

    def test_permuted_parallel_stages_identical(self, reference_run, tmp_path):
        out, _ = reference_run
        expected = snapshot(out)
        for order in (["revisit_join", "action_labels", "perf_features"],
                      ["action_labels", "perf_features", "revisit_join"]):
            d = tmp_path / "_".join(order)
            cfg = tiny(tmp_path, d.name)
            assert run_pipeline(cfg, parallel_order=order, workers=1).ok
            assert snapshot(d) == expected

    def test_thread_env_does_not_change_bytes(self, reference_run, tmp_path, monkeypatch):
        out, _ = reference_run
        for n in ("1", "3", "0"):
            monkeypatch.setenv("REVISIT_LAB_THREADS", n)
            cfg = tiny(tmp_path, f"t{n}")
            assert run_pipeline(cfg).ok
            assert snapshot(tmp_path / f"t{n}") == snapshot(out)

    def test_bad_parallel_order(self, tmp_path):
        result = run_pipeline(tiny(tmp_path), parallel_order=["labels"], workers=1)
        assert not result.ok

    def test_training_disabled(self, tmp_path):
        result = run_pipeline(tiny(tmp_path, extra="\n[pipeline]\ntrain = false\n"), workers=1)
        assert result.ok
        out = tmp_path / "out"
        assert (out / "dataset_train.csv").is_file()
        assert not (out / "model.txt").exists()
        assert "train" not in [s["name"] for s in result.manifest["stages"]]

    def test_failure_recorded(self, tmp_path):
        cfg = tiny(tmp_path)
        cfg.eval_days = 50
        result = run_pipeline(cfg, workers=1)
        assert not result.ok
        assert "assemble" in result.error
        status = {s["name"]: s["status"] for s in json.loads(result.manifest_path.read_text())["stages"]}
        assert status["labels"] == "ok"
        assert status["assemble"] == "failed"
        assert status["train"] == status["evaluate"] == "skipped"

    def test_ingest_external_log(self, reference_run, tmp_path):
        out, _ = reference_run
        extra = (f"\n[pipeline]\nevent_log = {out / 'events.csv'}\nfeature_sidecar = {out / 'features.csv'}\n")
        result = run_pipeline(tiny(tmp_path, extra=extra), workers=1)
        assert result.ok
        assert result.manifest["stages"][0]["name"] == "ingest"
        assert set(result.manifest["external_inputs"]) == {"events.csv", "features.csv"}
        assert (tmp_path / "out" / "dataset_train.csv").read_bytes() == (out / "dataset_train.csv").read_bytes()


class TestManifestCheck:
    def test_consumes_before_produced(self):
        data = {"stages": [{"name": "b", "status": "ok", "inputs": {"x": None}, "outputs": {}},
                           {"name": "a", "status": "ok", "inputs": {}, "outputs": {"x": "d"}}]}
        with pytest.raises(PipelineError):
            verify_manifest(data)


class TestWorkers:
    def test_env(self, monkeypatch):
        monkeypatch.setenv("REVISIT_LAB_THREADS", "3")
        assert worker_count() == 3
        monkeypatch.setenv("REVISIT_LAB_THREADS", "0")
        assert worker_count(default=5) == 5

    @pytest.mark.parametrize("raw", ["x", "-1"])
    def test_bad_env(self, monkeypatch, raw):
        monkeypatch.setenv("REVISIT_LAB_THREADS", raw)
        with pytest.raises(PipelineError):
            worker_count()
