"""End-to-end orchestration as a stage DAG.

Steps 1-3 (perf features, action labels, revisit join) only read the event
log and run concurrently; label construction (4) and the dataset join (5)
follow in order, then training, evaluation and analyses.  Stages hand off
through files only, and the manifest records each stage's input and output
digests.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional, Sequence

from . import analyzer, attribution, dataset, evaluator, loggen, perf_features, ranker
from .config import ConfigError, load_config, parse_config_text
from .events import TaskId, day_index, read_event_log_file, write_event_log_file

log = logging.getLogger(__name__)

THREADS_ENV = "REVISIT_LAB_THREADS"
MANIFEST_NAME = "manifest.json"

PARALLEL_STAGES = ("perf_features", "action_labels", "revisit_join")


class PipelineError(RuntimeError):
    pass


def worker_count(default: Optional[int] = None) -> int:
    raw = os.environ.get(THREADS_ENV, "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError:
        raise PipelineError(f"{THREADS_ENV} must be an integer (got {raw!r})") from None
    if n < 0:
        raise PipelineError(f"{THREADS_ENV} must be >= 0")
    if n == 0:
        n = default or os.cpu_count() or 1
    return n


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class PipelineConfig:
    out_dir: Path
    gen: loggen.GenConfig
    train: ranker.TrainConfig
    loss_weights: dict[TaskId, float]
    utilities: dict[TaskId, float]
    event_log: Optional[Path] = None
    feature_sidecar: Optional[Path] = None
    eval_days: int = 3
    k: int = 3
    analysis_horizon: int = 28
    plot_data: bool = True
    stages: dict[str, bool] = field(default_factory=lambda: {
        "train": True, "evaluate": True, "analyze": True})

    @classmethod
    def from_sections(cls, sections: Mapping[str, Mapping[str, Any]], base_dir: Path = Path(".")) -> "PipelineConfig":
        known = {"gen", "pipeline", "train", "weights"}
        unknown = set(sections) - known
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        gen = loggen.GenConfig.from_mapping(sections.get("gen", {}))
        pipe = dict(sections.get("pipeline", {}))
        tr = dict(sections.get("train", {}))
        weights = dict(sections.get("weights", {}))

        def path_or_none(key):
            value = pipe.pop(key, None)
            if value in (None, ""):
                return None
            p = Path(str(value))
            return p if p.is_absolute() else base_dir / p

        out_dir = path_or_none("out_dir") or base_dir / "out"
        event_log = path_or_none("event_log")
        sidecar = path_or_none("feature_sidecar")
        stages = {name: bool(pipe.pop(name, True)) for name in ("train", "evaluate", "analyze")}
        cfg = cls(
            out_dir=out_dir,
            gen=gen,
            train=ranker.TrainConfig(
                learning_rate=float(tr.pop("learning_rate", 1e-3)),
                batch_size=int(tr.pop("batch_size", 1024)),
                epochs=int(tr.pop("epochs", 1)),
                momentum=float(tr.pop("momentum", 0.9)),
                hidden=tuple(int(h) for h in tr.pop("hidden", list(ranker.DEFAULT_HIDDEN))),
                rng_seed=int(tr.pop("seed", gen.rng_seed)),
            ),
            loss_weights=ranker.default_loss_weights(),
            utilities=ranker.default_utilities(float(weights.pop("u_rp_rv_ratio", ranker.UTILITY_RATIO))),
            event_log=event_log,
            feature_sidecar=sidecar,
            eval_days=int(pipe.pop("eval_days", 3)),
            k=int(pipe.pop("k", 3)),
            analysis_horizon=int(pipe.pop("analysis_horizon", 28)),
            plot_data=bool(pipe.pop("plot_data", True)),
            stages=stages,
        )
        if tr:
            raise ConfigError(f"unknown [train] keys: {sorted(tr)}")
        if pipe:
            raise ConfigError(f"unknown [pipeline] keys: {sorted(pipe)}")
        for key, value in weights.items():
            kind, _, task = key.partition(".")
            try:
                task_id = TaskId(task)
            except ValueError:
                raise ConfigError(f"unknown task in [weights] key {key!r}") from None
            if kind == "loss":
                cfg.loss_weights[task_id] = float(value)
            elif kind == "utility":
                cfg.utilities[task_id] = float(value)
            else:
                raise ConfigError(f"unknown [weights] key {key!r}")
        cfg.train.validate()
        if cfg.event_log is not None and cfg.feature_sidecar is None:
            raise ConfigError("an input event_log needs a matching feature_sidecar")
        return cfg

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        path = Path(path)
        return cls.from_sections(load_config(path), base_dir=path.parent)

    @classmethod
    def from_text(cls, text: str, base_dir: Path = Path(".")) -> "PipelineConfig":
        return cls.from_sections(parse_config_text(text), base_dir=base_dir)


@dataclass
class StageRecord:
    name: str
    inputs: list[str]
    outputs: list[str]
    status: str = "pending"
    error: Optional[str] = None


class Manifest:
    def __init__(self, out_dir: Path):
        self.out_dir = out_dir
        self.stages: list[StageRecord] = []
        self.external: dict[str, str] = {}

    def digest(self, name: str) -> Optional[str]:
        p = self.out_dir / name
        return file_digest(p) if p.exists() else None

    def to_json(self) -> dict:
        return {
            "external_inputs": self.external,
            "stages": [
                {
                    "name": s.name,
                    "status": s.status,
                    **({"error": s.error} if s.error else {}),
                    "inputs": {n: self.digest(n) for n in s.inputs},
                    "outputs": {n: self.digest(n) if s.status == "ok" else None for n in s.outputs},
                }
                for s in self.stages
            ],
        }

    def write(self) -> Path:
        path = self.out_dir / MANIFEST_NAME
        path.write_text(json.dumps(self.to_json(), indent=2, sort_keys=False) + "\n", encoding="utf-8")
        return path


def verify_manifest(data: Mapping) -> None:
    """Check that every stage input was produced by an earlier stage or supplied externally."""
    produced = set(data.get("external_inputs", {}))
    for stage in data["stages"]:
        for name in stage["inputs"]:
            if name not in produced:
                raise PipelineError(f"stage {stage['name']} consumes {name} before it is produced")
        if stage["status"] == "ok":
            produced.update(stage["outputs"])


# ---------------------------------------------------------------------------
# Stage bodies: each reads its inputs from out_dir and writes its outputs there.
# ---------------------------------------------------------------------------

EVENTS = "events.csv"
SIDECAR = "features.csv"
PERF = "perf_features.csv"
ACTION_LABELS = "action_labels.csv"
SAVES = "saves.csv"
PAIRS = "revisit_pairs.csv"
LABELS = "labels.csv"
FINAL_LABELS = "final_labels.csv"
TRAIN_SET = "dataset_train.csv"
EVAL_SET = "dataset_eval.csv"
MODEL = "model.txt"
BASELINE_MODEL = "baseline_model.txt"
EVAL_REPORT = "eval_report.csv"
BASELINE_REPORT = "baseline_eval_report.csv"
LIFT_REPORT = "lift_report.csv"
ANALYSIS_DIR = "analysis"


class _Run:
    def __init__(self, cfg: PipelineConfig, workers: int):
        self.cfg = cfg
        self.out = cfg.out_dir
        self.workers = workers
        self._events = None

    def events(self):
        if self._events is None:
            self._events = read_event_log_file(self.out / EVENTS)
        return self._events

    def day_span(self) -> tuple[int, int]:
        days = [day_index(e.timestamp) for e in self.events()]
        if not days:
            raise PipelineError("event log is empty")
        return min(days), max(days)

    # -- stages --------------------------------------------------------------

    def generate(self):
        events = loggen.generate_log(self.cfg.gen, workers=self.workers)
        write_event_log_file(self.out / EVENTS, events)
        loggen.write_sidecar(self.out / SIDECAR, loggen.emit_feature_sidecar(self.cfg.gen, events))
        self._events = events

    def ingest(self):
        data = Path(self.cfg.event_log).read_bytes()
        (self.out / EVENTS).write_bytes(data)
        (self.out / SIDECAR).write_bytes(Path(self.cfg.feature_sidecar).read_bytes())

    def perf_features(self):
        events = self.events()
        saves = attribution.derive_saves(events)
        pairs = attribution.join_revisits(saves, attribution.derive_revisit_events(events))
        first, last = self.day_span()
        tables = perf_features.build_perf_tables(events, pairs, range(first, last + 1))
        perf_features.write_perf_tables(self.out / PERF, tables)

    def action_labels(self):
        dataset.write_action_labels(self.out / ACTION_LABELS, dataset.extract_action_labels(self.events()))

    def revisit_join(self):
        events = self.events()
        saves = attribution.derive_saves(events)
        pairs = attribution.join_revisits(saves, attribution.derive_revisit_events(events))
        attribution.write_saves(self.out / SAVES, saves)
        attribution.write_pairs(self.out / PAIRS, pairs)

    def labels(self):
        saves = attribution.read_saves(self.out / SAVES)
        pairs = attribution.read_pairs(self.out / PAIRS)
        labels = attribution.build_labels(pairs, saves)
        attribution.write_labels(self.out / LABELS, labels)
        action = dataset.read_action_labels(self.out / ACTION_LABELS)
        dataset.write_action_labels(self.out / FINAL_LABELS, dataset.attach_revisit_label(action, labels))

    def assemble(self):
        first, last = self.day_span()
        usable = dataset.usable_request_days(first, last)
        if len(usable) <= self.cfg.eval_days:
            raise PipelineError(
                f"log has {len(usable)} label-mature request days; need more than eval_days={self.cfg.eval_days}")
        split = usable.stop - self.cfg.eval_days
        sidecar = loggen.read_sidecar(self.out / SIDECAR)
        perf = perf_features.read_perf_tables(self.out / PERF, first, last)
        labeled = dataset.read_action_labels(self.out / FINAL_LABELS)
        dataset.write_dataset(self.out / TRAIN_SET,
                              dataset.assemble(sidecar, perf, labeled, range(usable.start, split)))
        dataset.write_dataset(self.out / EVAL_SET,
                              dataset.assemble(sidecar, perf, labeled, range(split, usable.stop)))

    def train(self):
        ds = dataset.read_dataset(self.out / TRAIN_SET)
        if ds.dim == 0 or len(ds) == 0:
            raise PipelineError("training set is empty or has no features")
        treat = ranker.train(ds.features, ds.labels, self.cfg.train,
                             self.cfg.loss_weights, self.cfg.utilities)
        ranker.save_model(self.out / MODEL, treat.params)
        base_w = dict(self.cfg.loss_weights)
        base_w[TaskId.REPIN_AND_REVISIT] = 0.0
        base_u = dict(self.cfg.utilities)
        base_u[TaskId.REPIN_AND_REVISIT] = 0.0
        base = ranker.train(ds.features, ds.labels, self.cfg.train, base_w, base_u)
        ranker.save_model(self.out / BASELINE_MODEL, base.params)

    def evaluate(self):
        ds = dataset.read_dataset(self.out / EVAL_SET)
        a = evaluator.eval_feed(evaluator.build_feeds(ds, ranker.load_model(self.out / MODEL)), self.cfg.k)
        b = evaluator.eval_feed(evaluator.build_feeds(ds, ranker.load_model(self.out / BASELINE_MODEL)), self.cfg.k)
        evaluator.write_report(self.out / EVAL_REPORT, a)
        evaluator.write_report(self.out / BASELINE_REPORT, b)
        evaluator.write_lift_report(self.out / LIFT_REPORT, a, b)

    def analyze(self):
        feeds_a = feeds_b = None
        if (self.out / MODEL).exists() and (self.out / EVAL_SET).exists():
            ds = dataset.read_dataset(self.out / EVAL_SET)
            if len(ds):
                feeds_a = evaluator.build_feeds(ds, ranker.load_model(self.out / MODEL))
                feeds_b = evaluator.build_feeds(ds, ranker.load_model(self.out / BASELINE_MODEL))
        analyzer.run_analyses(self.events(), attribution.read_labels(self.out / LABELS),
                              self.out / ANALYSIS_DIR, feeds_a, feeds_b,
                              horizon=self.cfg.analysis_horizon, plot_data=self.cfg.plot_data)


ANALYSIS_FILES = ("topic_report.csv", "fig3a.csv", "fig3b.csv", "fig4.csv", "fig5.csv",
                  "fig8.csv", "fig9.csv", "table3.csv")


def _stage_table(cfg: PipelineConfig) -> list[tuple[str, list[str], list[str]]]:
    """(name, inputs, outputs) in canonical DAG order."""
    stages = [
        ("generate" if cfg.event_log is None else "ingest", [], [EVENTS, SIDECAR]),
        ("perf_features", [EVENTS], [PERF]),
        ("action_labels", [EVENTS], [ACTION_LABELS]),
        ("revisit_join", [EVENTS], [SAVES, PAIRS]),
        ("labels", [SAVES, PAIRS, ACTION_LABELS], [LABELS, FINAL_LABELS]),
        ("assemble", [EVENTS, SIDECAR, PERF, FINAL_LABELS], [TRAIN_SET, EVAL_SET]),
    ]
    if cfg.stages.get("train", True):
        stages.append(("train", [TRAIN_SET], [MODEL, BASELINE_MODEL]))
        if cfg.stages.get("evaluate", True):
            stages.append(("evaluate", [EVAL_SET, MODEL, BASELINE_MODEL],
                           [EVAL_REPORT, BASELINE_REPORT, LIFT_REPORT]))
    if cfg.stages.get("analyze", True):
        inputs = [EVENTS, LABELS]
        if cfg.stages.get("train", True):
            inputs += [EVAL_SET, MODEL, BASELINE_MODEL]
        stages.append(("analyze", inputs, [f"{ANALYSIS_DIR}/{n}" for n in ANALYSIS_FILES]))
    return stages


@dataclass
class PipelineResult:
    ok: bool
    manifest_path: Path
    manifest: dict
    error: Optional[str] = None


def run_pipeline(cfg: PipelineConfig, parallel_order: Optional[Sequence[str]] = None,
                 workers: Optional[int] = None) -> PipelineResult:
    """Run every enabled stage and write the manifest.

    ``parallel_order`` forces steps 1-3 to run sequentially in the given
    order instead of concurrently (scheduling tests).
    """
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    workers = worker_count() if workers is None else workers
    run = _Run(cfg, workers)
    manifest = Manifest(cfg.out_dir)
    if cfg.event_log is not None:
        manifest.external = {p.name: file_digest(p) for p in (cfg.event_log, cfg.feature_sidecar)}
    table = _stage_table(cfg)
    records = {name: StageRecord(name, ins, outs) for name, ins, outs in table}
    manifest.stages = [records[name] for name, _, _ in table]

    def call(name: str) -> None:
        log.info("stage %s", name)
        try:
            getattr(run, name)()
        except Exception as exc:
            records[name].status = "failed"
            records[name].error = f"{type(exc).__name__}: {exc}"
            raise
        records[name].status = "ok"

    try:
        call(table[0][0])
        if parallel_order is not None:
            if sorted(parallel_order) != sorted(PARALLEL_STAGES):
                raise PipelineError(f"parallel_order must permute {PARALLEL_STAGES}")
            for name in parallel_order:
                call(name)
        else:
            run.events()  # load once before fanning out
            with ThreadPoolExecutor(max_workers=max(1, min(workers, len(PARALLEL_STAGES)))) as pool:
                futures = [pool.submit(call, name) for name in PARALLEL_STAGES]
                errors = [f.exception() for f in futures if f.exception() is not None]
                if errors:
                    raise errors[0]
        for name, _, _ in table[1 + len(PARALLEL_STAGES):]:
            call(name)
    except Exception as exc:  # noqa: BLE001 - recorded in the manifest, then reported
        for rec in manifest.stages:
            if rec.status == "pending":
                rec.status = "skipped"
        failed = next((r.name for r in manifest.stages if r.status == "failed"), "unknown")
        path = manifest.write()
        return PipelineResult(False, path, manifest.to_json(), f"stage {failed} failed: {exc}")
    path = manifest.write()
    data = manifest.to_json()
    verify_manifest(data)
    return PipelineResult(True, path, data)
