"""Command-line front end: ``hesd train|analyze|sweep|select|assess``.

Exit codes: 0 success, 1 runtime/IO failure, 2 bad input (config, schema,
mismatched reports). Output locations follow ``--out``, then the
``HESD_OUTPUT_DIR`` environment variable, then the per-command default.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import storage
from .criteria import DEFAULT_THRESHOLDS, STRATEGIES, MismatchError, Thresholds, assess, \
    select_checkpoint
from .errors import CheckpointError, ConfigError, HesdError, SchemaError
from .reporting import (ROW_COLUMNS, TAGS, analyze_file, build_run_report, checkpoint_metadata,
                        checkpoint_name, load_report, run_report_rows)
from .train import RunConfig, train

log = logging.getLogger("hesd")
ENV_OUT = "HESD_OUTPUT_DIR"


class UsageError(HesdError):
    pass


def _out_dir(flag: str | None, default: Path | None) -> Path | None:
    if flag:
        return Path(flag)
    if os.environ.get(ENV_OUT):
        return Path(os.environ[ENV_OUT])
    return default


def _thresholds(args) -> Thresholds:
    return Thresholds(
        ct=getattr(args, "ct_threshold", DEFAULT_THRESHOLDS.ct),
        delta_re=getattr(args, "delta_re", DEFAULT_THRESHOLDS.delta_re),
        delta_kh05=getattr(args, "delta_kh05", DEFAULT_THRESHOLDS.delta_kh05),
    )


def load_config(path) -> RunConfig:
    try:
        doc = storage.read_json(path)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}", field="path") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}", field="path") from None
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object", field="path")
    try:
        return RunConfig.from_dict(doc)
    except TypeError as exc:
        raise ConfigError(f"bad config value: {exc}", field="config") from None


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    root = _out_dir(args.out, Path("runs"))
    run_dir = root / cfg.run_id
    ckpt_dir = run_dir / "checkpoints"
    storage.write_json(run_dir / "config.json", cfg.to_dict())

    def save(ck):
        storage.save_checkpoint(ckpt_dir / checkpoint_name(ck.epoch), ck.model, ck.params,
                                checkpoint_metadata(ck, cfg))

    result = train(cfg, on_checkpoint=save)
    prov = {"seed": cfg.seed, "config_hash": cfg.config_hash()}
    storage.atomic_write_bytes(
        run_dir / "metrics.csv",
        storage.rows_csv(result.metrics, ["epoch", "loss", "train_acc", "gen_acc"], prov).encode())
    print(f"wrote {len(result.checkpoints)} checkpoints to {ckpt_dir}")
    if result.diverged:
        print("warning: training diverged; later checkpoints were not written", file=sys.stderr)
    return 0


def _analysis_overrides(args) -> dict:
    return {"n_probes": args.probes, "steps": args.steps, "sigma_factor": args.sigma_factor,
            "seed": args.seed, "power_iters": args.power_iters, "batch_size": args.batch_size}


def cmd_analyze(args) -> int:
    ckpt = Path(args.checkpoint)
    out = _out_dir(args.out, None)
    tags = TAGS if args.tag == "both" else (args.tag,)
    for tag in tags:
        rep = analyze_file(ckpt, tag, _analysis_overrides(args), out, _thresholds(args))
        print(f"{rep.checkpoint_id} [{tag}] C_t={rep.c_t:.6g} type={rep.hesd_type} "
              f"lambda_min_neg={rep.lambda_min_neg} lambda_max_pos={rep.lambda_max_pos}")
    return 0


def cmd_sweep(args) -> int:
    run_dir = Path(args.run_dir)
    reports_dir = Path(args.reports) if args.reports else None
    if args.analyze:
        for path in sorted((run_dir / "checkpoints").glob("*.ckpt")):
            rdir = reports_dir or path.parent
            for tag in TAGS:
                if not (rdir / f"{path.stem}.{tag}.report.json").exists():
                    analyze_file(path, tag, _analysis_overrides(args), reports_dir,
                                 _thresholds(args))
    doc, missing = build_run_report(run_dir, reports_dir, _thresholds(args))
    out = _out_dir(args.out, run_dir)
    storage.write_json(out / "run_report.json", doc)
    prov = {"seed": doc["seed"], "config_hash": doc["config_hash"]}
    storage.atomic_write_bytes(out / "run_report.csv",
                               storage.rows_csv(doc["rows"], ROW_COLUMNS, prov).encode())
    for m in missing:
        print(f"warning: missing analysis {m}", file=sys.stderr)
    print(f"{len(doc['rows'])} rows -> {out / 'run_report.json'}")
    return 0


def cmd_select(args) -> int:
    try:
        doc = storage.read_json(args.report)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read run report {args.report}: {exc}") from None
    rows = run_report_rows(doc)
    if not rows:
        raise UsageError("run report has no analyzed rows")
    picks = select_checkpoint(rows, args.tie_band / 100.0)
    by_epoch = {r.epoch: r for r in rows}
    for strategy in STRATEGIES:
        r = by_epoch[picks[strategy]]
        gen = "n/a" if r.gen_acc is None else f"{100 * r.gen_acc:.1f}%"
        lam = "n/a" if r.lambda_max_pos is None else f"{r.lambda_max_pos:.6g}"
        print(f"{strategy}: epoch {r.epoch} (C_t={r.c_t:.6g}, lambda_max={lam}, "
              f"train acc {100 * r.train_acc:.1f}%, gen acc {gen})")
    chosen = picks["max-ct"] if args.strategy == "both" else picks[args.strategy]
    print(f"selected epoch: {chosen}")
    if args.json:
        storage.write_json(args.json, {"schema_version": doc["schema_version"],
                                       "picks": picks, "selected": chosen,
                                       "strategy": args.strategy, "tie_band_pp": args.tie_band})
    return 0


def cmd_assess(args) -> int:
    try:
        train_rep, gen_rep = load_report(args.train_report), load_report(args.gen_report)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read report: {exc}") from None
    verdict = assess(train_rep, gen_rep, _thresholds(args))
    text = storage.dumps(verdict.to_dict())
    if args.out:
        storage.atomic_write_bytes(args.out, text.encode())
    else:
        sys.stdout.write(text)
    print(verdict.summary())
    return 0


def _add_analysis_flags(p):
    p.add_argument("--probes", type=int, help="SLQ probe vectors (default 10)")
    p.add_argument("--steps", type=int, help="Lanczos steps per probe (default 64)")
    p.add_argument("--sigma-factor", type=float, help="kernel width / spectrum span (0.01)")
    p.add_argument("--seed", type=int, help="analysis seed")
    p.add_argument("--power-iters", type=int, help="power-iteration cap, 0 disables")
    p.add_argument("--batch-size", type=int, help="analysis subset size (default: whole split)")
    p.add_argument("--ct-threshold", type=float, default=DEFAULT_THRESHOLDS.ct)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hesd", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a toy model and write checkpoints")
    p.add_argument("config", help="JSON run config")
    p.add_argument("--out", help="runs root directory (default ./runs)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("analyze", help="HESD + criteria for one checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--tag", choices=[*TAGS, "both"], default="train")
    p.add_argument("--out", help="output directory (default: next to the checkpoint)")
    _add_analysis_flags(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("sweep", help="aggregate per-epoch criteria of a run")
    p.add_argument("run_dir")
    p.add_argument("--reports", help="directory holding analyze outputs")
    p.add_argument("--analyze", action="store_true", help="run missing analyses first")
    p.add_argument("--out", help="where to write run_report.{json,csv}")
    p.add_argument("--delta-re", type=float, default=DEFAULT_THRESHOLDS.delta_re)
    p.add_argument("--delta-kh05", type=float, default=DEFAULT_THRESHOLDS.delta_kh05)
    _add_analysis_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("select", help="pick a checkpoint by max C_t vs min max-eigenvalue")
    p.add_argument("report", help="run_report.json from sweep")
    p.add_argument("--strategy", choices=[*STRATEGIES, "both"], default="both")
    p.add_argument("--tie-band", type=float, default=1.0,
                   help="train-accuracy band in percentage points (default 1)")
    p.add_argument("--json", help="also write the picks to this file")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("assess", help="generalization verdict from train/gen reports")
    p.add_argument("train_report")
    p.add_argument("gen_report")
    p.add_argument("--out", help="write verdict JSON here instead of stdout")
    p.add_argument("--ct-threshold", type=float, default=DEFAULT_THRESHOLDS.ct)
    p.add_argument("--delta-re", type=float, default=DEFAULT_THRESHOLDS.delta_re)
    p.add_argument("--delta-kh05", type=float, default=DEFAULT_THRESHOLDS.delta_kh05)
    p.set_defaults(func=cmd_assess)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        where = f" (field: {exc.field})" if exc.field else ""
        print(f"error: {exc}{where}", file=sys.stderr)
        return 2
    except (UsageError, MismatchError, SchemaError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except CheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (HesdError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
