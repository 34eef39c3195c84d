"""File-level analysis and run aggregation used by the CLI."""

from __future__ import annotations

import logging
from dataclasses import asdict, replace
from pathlib import Path
from typing import Mapping

from . import storage
from .analysis import analyze
from .criteria import (DEFAULT_THRESHOLDS, SCHEMA_VERSION, CriteriaReport, EpochCriteria,
                       Thresholds, assess, delta_criteria, qs_baseline, _check_schema)
from .data import DatasetConfig, make_dataset
from .train import AnalysisConfig, Checkpoint, RunConfig, analysis_batch
from .errors import CheckpointError, SchemaError

log = logging.getLogger(__name__)

TAGS = ("train", "generalization")
ROW_COLUMNS = [
    "epoch", "checkpoint_id", "train_acc", "gen_acc",
    "c_t", "r_e", "k_h05", "lambda_min_neg", "lambda_max_pos", "hesd_type",
    "gen_c_t", "gen_r_e", "gen_k_h05", "gen_lambda_min_neg", "gen_lambda_max_pos",
    "gen_hesd_type", "delta_re", "delta_kh05", "applicable", "generalization",
]


def checkpoint_name(epoch: int) -> str:
    return f"epoch-{epoch:06d}.ckpt"


def checkpoint_metadata(ck: Checkpoint, config: RunConfig) -> dict:
    return {
        "epoch": ck.epoch, "seed": ck.seed, "run_id": ck.run_id, "optimizer": ck.optimizer,
        "train_acc": ck.train_acc, "gen_acc": ck.gen_acc, "loss": ck.loss,
        "config_hash": ck.config_hash, "checkpoint_id": ck.checkpoint_id,
        "dataset": config.dataset.to_dict(), "analysis": config.to_dict()["analysis"],
    }


def output_stem(ckpt_path: Path, tag: str, out_dir: Path | None) -> Path:
    base = out_dir if out_dir is not None else ckpt_path.parent
    return base / f"{ckpt_path.stem}.{tag}"


def analyze_file(ckpt_path, tag: str, overrides: Mapping | None = None,
                 out_dir=None, thresholds: Thresholds = DEFAULT_THRESHOLDS) -> CriteriaReport:
    """Analyze one checkpoint file and write ``<stem>.<tag>.report.json``,
    ``.density.csv`` and ``.density.json`` next to it (or in ``out_dir``)."""
    ckpt_path = Path(ckpt_path)
    model, params, meta = storage.load_checkpoint(ckpt_path)
    if "dataset" not in meta:
        raise CheckpointError("checkpoint metadata lacks the dataset config")
    acfg = AnalysisConfig(**meta.get("analysis", {}))
    if overrides:
        acfg = replace(acfg, **{k: v for k, v in overrides.items() if v is not None})
    data = make_dataset(DatasetConfig.from_dict(meta["dataset"]))
    batch = analysis_batch(data, tag, acfg.batch_size, acfg.seed)
    provenance = {
        "analysis_seed": acfg.seed, "train_seed": meta.get("seed"),
        "config_hash": meta.get("config_hash", ""), "checkpoint_id": meta.get("checkpoint_id", ""),
        "dataset_tag": tag,
    }
    res = analyze(model, params, batch, acfg, checkpoint_id=meta.get("checkpoint_id", ""),
                  dataset_tag=tag, thresholds=thresholds,
                  meta={"epoch": meta.get("epoch"), "train_acc": meta.get("train_acc"),
                        "gen_acc": meta.get("gen_acc"), "optimizer": meta.get("optimizer"),
                        "train_seed": meta.get("seed"),
                        "config_hash": meta.get("config_hash", "")})
    stem = output_stem(ckpt_path, tag, Path(out_dir) if out_dir else None)
    storage.atomic_write_bytes(f"{stem}.density.csv",
                               storage.density_csv(res.density, provenance).encode())
    storage.write_json(f"{stem}.density.json", storage.density_sidecar(res.density, provenance))
    storage.write_json(f"{stem}.report.json", res.report.to_dict())
    return res.report


def load_report(path) -> CriteriaReport:
    doc = storage.read_json(path)
    return CriteriaReport.from_dict(doc)


def _report_columns(rep: CriteriaReport | None, prefix: str = "") -> dict:
    if rep is None:
        return {}
    return {f"{prefix}c_t": rep.c_t, f"{prefix}r_e": rep.r_e, f"{prefix}k_h05": rep.k_h05,
            f"{prefix}lambda_min_neg": rep.lambda_min_neg,
            f"{prefix}lambda_max_pos": rep.lambda_max_pos, f"{prefix}hesd_type": rep.hesd_type}


def build_run_report(run_dir, reports_dir=None, thresholds: Thresholds = DEFAULT_THRESHOLDS
                     ) -> tuple[dict, list[str]]:
    """Per-epoch criteria table for a run directory.

    Missing analyses are listed and leave blanks in their rows. Spectrum types
    are re-derived against the first epoch's extremes so QS detection has a
    baseline.
    """
    run_dir = Path(run_dir)
    ckpt_dir = run_dir / "checkpoints"
    ckpts = sorted(ckpt_dir.glob("*.ckpt"))
    if not ckpts:
        raise CheckpointError(f"no checkpoints under {ckpt_dir}")
    rdir = Path(reports_dir) if reports_dir else ckpt_dir
    entries, missing = [], []
    seeds, hashes = set(), set()
    for path in ckpts:
        _, _, meta = storage.load_checkpoint(path)
        seeds.add(meta.get("seed"))
        hashes.add(meta.get("config_hash", ""))
        reps = {}
        for tag in TAGS:
            rp = rdir / f"{path.stem}.{tag}.report.json"
            if rp.exists():
                reps[tag] = load_report(rp)
            else:
                missing.append(str(rp))
        entries.append((meta, reps))
    entries.sort(key=lambda e: e[0]["epoch"])
    base = {tag: qs_baseline([e[1][tag] for e in entries if tag in e[1]][:1]) for tag in TAGS}
    rows = []
    for meta, reps in entries:
        reps = {t: r.reclassified(base[t], thresholds) for t, r in reps.items()}
        row = {"epoch": meta["epoch"], "checkpoint_id": meta.get("checkpoint_id", ""),
               "train_acc": meta.get("train_acc"), "gen_acc": meta.get("gen_acc")}
        row.update(_report_columns(reps.get("train")))
        row.update(_report_columns(reps.get("generalization"), "gen_"))
        if len(reps) == 2:
            d_re, d_kh = delta_criteria(reps["train"], reps["generalization"])
            verdict = assess(reps["train"], reps["generalization"], thresholds)
            row.update(delta_re=d_re, delta_kh05=d_kh, applicable=verdict.applicable,
                       generalization=verdict.generalization)
        rows.append(row)
    first_meta = entries[0][0]
    doc = {
        "schema_version": SCHEMA_VERSION,
        "run_id": first_meta.get("run_id", ""),
        "config_hash": sorted(hashes)[0] if len(hashes) == 1 else sorted(hashes),
        "seed": sorted(seeds, key=str)[0] if len(seeds) == 1 else sorted(seeds, key=str),
        "thresholds": asdict(thresholds),
        "missing": [Path(m).name for m in missing],
        "rows": rows,
    }
    return doc, missing


def run_report_rows(doc: Mapping) -> list[EpochCriteria]:
    """Rows usable by checkpoint selection (train-split criteria)."""
    _check_schema(doc)
    out = []
    for r in doc.get("rows", []):
        if r.get("c_t") is None or r.get("train_acc") is None:
            continue
        ct = float(r["c_t"])
        lam = r.get("lambda_max_pos")
        out.append(EpochCriteria(int(r["epoch"]), ct, None if lam is None else float(lam),
                                 float(r["train_acc"]),
                                 None if r.get("gen_acc") is None else float(r["gen_acc"])))
    if not out and doc.get("rows"):
        raise SchemaError("run report rows lack c_t / train_acc")
    return out
