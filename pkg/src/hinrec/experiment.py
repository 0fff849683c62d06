"""Experiment configuration, the end-to-end pipeline, sweeps and recommendation."""
from __future__ import annotations

import csv
import io
import itertools
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .checkpoint import Checkpoint, load_checkpoint, make_checkpoint
from .data import DatasetBundle, atomic_write_text, ingest_dir
from .features import features_from_source
from .graph import EntityType, MetaPathError, catalog_lookup, concept_meta_path_catalog, user_meta_path_catalog
from .metrics import HR_KS, NDCG_KS, REPORT_KEYS, MetricReport, build_eval_instances, evaluate
from .ranker import top_n_from_scores
from .trainer import MODE_ALIASES, TrainConfig, TrainResult, build_model, train

log = logging.getLogger(__name__)

WORKERS_ENV = "HINREC_WORKERS"

DEFAULTS: Dict[str, str] = {
    "data.dir": "data",
    "data.boundary": "2018-01-01",
    "data.split": "temporal",
    "features.user.source": "one_hot",
    "features.concept.source": "hashed:100:0",
    "meta_paths.user": "MP1,MP2,MP3,MP4",
    "meta_paths.concept": "KK,KUK,KCK",
    "encoder.d": "100",
    "encoder.layers": "3",
    "encoder.hidden": "",
    "encoder.global_attention": "false",
    "mf.D": "30",
    "mf.beta": "1.0",
    "mf.init_scale": "0.1",
    "train.learning_rate": "0.01",
    "train.lambda": "0.0001",
    "train.epochs": "20",
    "train.batch_size": "256",
    "train.negatives_per_positive": "1",
    "train.mode": "content_plus_context",
    "train.clip_norm": "5.0",
    "train.freeze_beta": "false",
    "train.log1p_targets": "false",
    "train.squared_norm": "false",
    "train.checkpoint_every": "0",
    "eval.negatives": "99",
    "seed": "0",
    "out": "runs/default",
}

SWEEP_AXES = {
    "D": ("mf.D", ["10", "20", "30", "40"]),
    "d": ("encoder.d", ["20", "50", "100", "150", "200"]),
    "layers": ("encoder.layers", ["1", "2", "3", "4"]),
    "meta_paths": ("meta_paths.user", None),
}


class ConfigError(ValueError):
    pass


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off", ""):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def parse_config_text(text: str) -> Dict[str, str]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def meta_path_subsets(names: Sequence[str] = ("MP1", "MP2", "MP3", "MP4")) -> List[str]:
    """All non-empty subsets, singles first, in catalog order within a size."""
    out = []
    for r in range(1, len(names) + 1):
        out += [",".join(c) for c in itertools.combinations(names, r)]
    return out


@dataclass
class ExperimentConfig:
    values: Dict[str, str]

    @classmethod
    def load(cls, path: Optional[Union[str, Path]] = None,
             overrides: Optional[Dict[str, str]] = None) -> "ExperimentConfig":
        values = dict(DEFAULTS)
        if path is not None:
            values.update(parse_config_text(Path(path).read_text(encoding="utf-8")))
        values.update(overrides or {})
        cfg = cls(values)
        cfg.validate()
        return cfg

    def with_overrides(self, **kw: str) -> "ExperimentConfig":
        vals = dict(self.values)
        vals.update(kw)
        cfg = ExperimentConfig(vals)
        cfg.validate()
        return cfg

    def __getitem__(self, key: str) -> str:
        return self.values[key]

    def int(self, key: str) -> int:
        try:
            return int(self.values[key])
        except ValueError:
            raise ConfigError(f"{key}: not an integer: {self.values[key]!r}") from None

    def float(self, key: str) -> float:
        try:
            return float(self.values[key])
        except ValueError:
            raise ConfigError(f"{key}: not a number: {self.values[key]!r}") from None

    def bool(self, key: str) -> bool:
        return _bool(self.values[key])

    def list(self, key: str) -> List[str]:
        return [p.strip() for p in self.values[key].split(",") if p.strip()]

    def validate(self) -> None:
        unknown = sorted(set(self.values) - set(DEFAULTS) - {k for k in self.values if k.startswith("features.")})
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        try:
            catalog_lookup(self.list("meta_paths.user"), user_meta_path_catalog())
            catalog_lookup(self.list("meta_paths.concept"), concept_meta_path_catalog())
        except MetaPathError as exc:
            raise ConfigError(str(exc)) from None
        if not self.list("meta_paths.user") or not self.list("meta_paths.concept"):
            raise ConfigError("each side needs at least one meta-path")
        if not 1 <= self.int("encoder.d") <= 1024:
            raise ConfigError("encoder.d out of range 1..1024")
        if not 1 <= self.int("encoder.layers") <= 4:
            raise ConfigError("encoder.layers out of range 1..4")
        if not 1 <= self.int("mf.D") <= 1024:
            raise ConfigError("mf.D out of range 1..1024")
        if self.int("eval.negatives") < 1:
            raise ConfigError("eval.negatives must be positive")
        self.train_config()

    def train_config(self) -> TrainConfig:
        try:
            return TrainConfig(
                learning_rate=self.float("train.learning_rate"), lam=self.float("train.lambda"),
                epochs=self.int("train.epochs"), batch_size=self.int("train.batch_size"),
                negatives_per_positive=self.int("train.negatives_per_positive"),
                seed=self.int("seed"), mode=self["train.mode"], clip_norm=self.float("train.clip_norm"),
                freeze_beta=self.bool("train.freeze_beta"),
                log1p_targets=self.bool("train.log1p_targets"),
                squared_norm=self.bool("train.squared_norm"))
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from None

    def hidden(self) -> Optional[List[int]]:
        text = self["encoder.hidden"].strip()
        return [int(x) for x in text.split(",")] if text else None

    def resolved_text(self) -> str:
        return "".join(f"{k} = {self.values[k]}\n" for k in sorted(self.values))


# --------------------------------------------------------------- pipeline --

class StageError(RuntimeError):
    def __init__(self, stage: str, exc: BaseException):
        super().__init__(f"{stage}: {exc}")
        self.stage = stage


def load_bundle(cfg: ExperimentConfig) -> DatasetBundle:
    return ingest_dir(cfg["data.dir"], cfg["data.boundary"], cfg["data.split"])


def _features(cfg: ExperimentConfig, bundle: DatasetBundle):
    uf = features_from_source(cfg["features.user.source"], EntityType.USER, bundle.hin)
    kf = features_from_source(cfg["features.concept.source"], EntityType.CONCEPT, bundle.hin)
    return uf, kf


def build_from_config(cfg: ExperimentConfig, bundle: DatasetBundle):
    uf, kf = _features(cfg, bundle)
    return build_model(
        bundle.hin, uf, kf,
        catalog_lookup(cfg.list("meta_paths.user"), user_meta_path_catalog()),
        catalog_lookup(cfg.list("meta_paths.concept"), concept_meta_path_catalog()),
        mode=cfg["train.mode"], d=cfg.int("encoder.d"), layers=cfg.int("encoder.layers"),
        D=cfg.int("mf.D"), seed=cfg.int("seed"), hidden=cfg.hidden(),
        global_attention=cfg.bool("encoder.global_attention"), beta=cfg.float("mf.beta"),
        init_scale=cfg.float("mf.init_scale"))


def eval_instances(cfg: ExperimentConfig, bundle: DatasetBundle):
    interacted: Dict[int, set] = {}
    for u, k in zip(bundle.events.users, bundle.events.concepts):
        interacted.setdefault(int(u), set()).add(int(k))
    return build_eval_instances(bundle.test.users, bundle.test.concepts, bundle.n_concepts,
                                interacted, cfg.int("eval.negatives"), cfg.int("seed"))


def _provenance(cfg: ExperimentConfig) -> Dict[str, str]:
    # the output location does not influence the model, so checkpoints omit it
    return {k: v for k, v in cfg.values.items() if k != "out"}


def _exclusions(bundle: DatasetBundle) -> Dict[str, List[int]]:
    users = bundle.hin.entities[EntityType.USER]
    m = bundle.train.matrix
    return {users[u]: [int(k) for k in m.indices[m.indptr[u]:m.indptr[u + 1]]]
            for u in range(m.shape[0]) if m.indptr[u + 1] > m.indptr[u]}


@dataclass
class ExperimentResult:
    report: MetricReport
    train: TrainResult
    checkpoint: Checkpoint
    bundle: DatasetBundle


def run_experiment(cfg: ExperimentConfig, out_dir: Optional[Union[str, Path]] = None,
                   bundle: Optional[DatasetBundle] = None, write: bool = True) -> ExperimentResult:
    """ingest -> features -> encode -> train -> evaluate, then write outputs.

    Outputs (report.json, report.tsv, checkpoint.json, train.log,
    config.resolved) are only written once every stage has succeeded.
    """
    out = Path(out_dir if out_dir is not None else cfg["out"])
    stage = "ingest"
    try:
        if bundle is None:
            bundle = load_bundle(cfg)
        stage = "features"
        model = build_from_config(cfg, bundle)
        stage = "train"
        tcfg = cfg.train_config()
        every = cfg.int("train.checkpoint_every")
        users = bundle.hin.entities[EntityType.USER]
        concepts = bundle.hin.entities[EntityType.CONCEPT]
        excl = _exclusions(bundle)

        def on_epoch(epoch, value, wall, m):
            if write and every > 0 and epoch % every == 0:
                make_checkpoint(m, users, concepts, tcfg.seed, _provenance(cfg), excl).save(
                    out / f"checkpoint_epoch{epoch:04d}.json")

        result = train(model, bundle.train, tcfg, on_epoch=on_epoch)
        stage = "evaluate"
        rec = model.freeze()
        instances = eval_instances(cfg, bundle)
        report = evaluate(rec, instances)
        ckpt = make_checkpoint(model, users, concepts, tcfg.seed, _provenance(cfg), excl)
    except Exception as exc:
        raise StageError(stage, exc) from exc
    if write:
        atomic_write_text(out / "config.resolved", cfg.resolved_text())
        atomic_write_text(out / "train.log",
                          "epoch\tloss\twall_ms\n" + "".join(l + "\n" for l in result.log_lines()))
        ckpt.save(out / "checkpoint.json")
        atomic_write_text(out / "report.tsv", report.to_tsv())
        atomic_write_text(out / "report.json", report.to_json())
    return ExperimentResult(report, result, ckpt, bundle)


def evaluate_checkpoint(cfg: ExperimentConfig, checkpoint_path: Union[str, Path]) -> MetricReport:
    ckpt = load_checkpoint(checkpoint_path)
    bundle = load_bundle(cfg)
    if ckpt.users != bundle.hin.entities[EntityType.USER] or \
            ckpt.concepts != bundle.hin.entities[EntityType.CONCEPT]:
        raise ConfigError("checkpoint entities do not match the dataset")
    return evaluate(ckpt.recommender(), eval_instances(cfg, bundle))


# ------------------------------------------------------------------ sweep --

SWEEP_COLUMNS = ("axis", "value", "status") + REPORT_KEYS + ("final_loss", "error")


def _sweep_row(args):
    cfg_values, axis, value, row_out, data_dir = args
    cfg = ExperimentConfig(cfg_values)
    row = {"axis": axis, "value": value}
    try:
        res = run_experiment(cfg, row_out)
        row.update(res.report.as_dict())
        row["status"] = "ok"
        row["final_loss"] = res.train.losses[-1] if res.train.losses else ""
        row["error"] = ""
    except Exception as exc:  # failed rows are recorded, the sweep goes on
        row["status"] = "failed"
        row["error"] = str(exc).replace("\t", " ").replace("\n", " ")
    return row


def sweep_values(axis: str, values: Optional[Sequence[str]] = None) -> Tuple[str, List[str]]:
    if axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}; choose from {sorted(SWEEP_AXES)}")
    key, default = SWEEP_AXES[axis]
    vals = list(values) if values else (default if default is not None else meta_path_subsets())
    return key, vals


def sweep(cfg: ExperimentConfig, axis: str, out_dir: Union[str, Path],
          values: Optional[Sequence[str]] = None, workers: Optional[int] = None) -> List[dict]:
    """One experiment per axis value with a shared seed; writes sweep.csv."""
    key, vals = sweep_values(axis, values)
    out = Path(out_dir)
    jobs = []
    for i, v in enumerate(vals):
        row_cfg = dict(cfg.values)
        row_cfg[key] = v.replace("&", ",").replace("+", ",")
        ExperimentConfig(row_cfg).validate()
        jobs.append((row_cfg, axis, v, out / f"row{i:02d}", cfg["data.dir"]))
    if workers is None:
        workers = int(os.environ.get(WORKERS_ENV, "1") or 1)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_row, jobs))
    else:
        rows = [_sweep_row(j) for j in jobs]
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=SWEEP_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    atomic_write_text(out / "sweep.csv", buf.getvalue())
    return rows


# -------------------------------------------------------------- recommend --

RECOMMEND_HEADER = "user_external_id\trank\tconcept_external_id\tscore"


def recommend(checkpoint: Union[str, Path, Checkpoint], user_ids: Sequence[str], n: int):
    """Top-N rows per user, training clicks excluded.

    Returns (tsv text, list of user ids that could not be scored).
    """
    ckpt = checkpoint if isinstance(checkpoint, Checkpoint) else load_checkpoint(checkpoint)
    rec = ckpt.recommender()
    index = {u: i for i, u in enumerate(ckpt.users)}
    lines = [RECOMMEND_HEADER]
    errors = []
    for uid in user_ids:
        if uid not in index:
            lines.append(f"{uid}\tERROR\tunknown user\t")
            errors.append(uid)
            continue
        u = index[uid]
        scores = rec.predict_all_for_user(u, np.arange(rec.n_concepts))
        top = top_n_from_scores(scores, n, ckpt.exclude.get(uid, []))
        for rank, (k, s) in enumerate(zip(top.concepts, top.scores), 1):
            lines.append(f"{uid}\t{rank}\t{ckpt.concepts[k]}\t{s!r}")
    return "\n".join(lines) + "\n", errors
