"""Desk-scale runs shared by ``scripts/`` and the acceptance suite.

Every run is a small tanh MLP on well separated Gaussian blobs, trained full
batch. Results are plain dicts so scripts can dump them as JSON.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from .analysis import analyze
from .criteria import DEFAULT_THRESHOLDS
from .data import DatasetConfig
from .models import HessianOperator, ModelSpec
from .optim import OptimizerConfig
from .spectral import extreme_eigenvalues
from .train import AnalysisConfig, RunConfig, train

# learning rates picked by hand so every optimizer fits the blobs within ~100 epochs
LEARNING_RATES = {"sgd": 0.5, "sgd-momentum": 0.05, "adamw": 0.01, "adahessian": 0.05}
BLOB_MLP = (4, 16, 16, 3)


def blobs(seed: int, **overrides) -> DatasetConfig:
    base = dict(n_samples=120, input_dim=4, n_classes=3, separation=4.0, noise=0.7, seed=seed)
    base.update(overrides)
    return DatasetConfig(**base)


def blob_run(kind: str, seed: int, epochs: int, checkpoint_every: int | None = None,
             sizes=BLOB_MLP, lr: float | None = None, **opt) -> RunConfig:
    return RunConfig(
        model=ModelSpec("mlp", tuple(sizes)), dataset=blobs(seed),
        optimizer=OptimizerConfig(kind, lr=lr or LEARNING_RATES[kind], **opt),
        epochs=epochs, checkpoint_every=checkpoint_every or epochs, seed=seed,
        run_id=f"{kind}-s{seed}")


def mp_emergence(kind: str, seeds=range(5), epochs: int = 300,
                 analysis: AnalysisConfig = AnalysisConfig()) -> list[dict]:
    """Final-epoch C_t on the train split, one entry per seed."""
    out = []
    for seed in seeds:
        r = train(blob_run(kind, seed, epochs))
        ck = r.checkpoints[-1]
        rep = analyze(ck.model, ck.params, r.dataset.train, analysis, ck.checkpoint_id).report
        out.append({"seed": seed, "optimizer": kind, "epoch": ck.epoch, "c_t": rep.c_t,
                    "hesd_type": rep.hesd_type, "train_acc": ck.train_acc,
                    "gen_acc": ck.gen_acc, "mp": rep.c_t > DEFAULT_THRESHOLDS.ct})
    return out


def top_eigenvalue(model, params, batch, seed: int = 0) -> float:
    op = HessianOperator(model, params, batch)
    return extreme_eigenvalues(op, op.dim, seed=seed, max_iters=500, tol=1e-8)[1].eigenvalue


def qs_drift(seeds=range(5), kind: str = "sgd", factor: int = 10, max_epochs: int = 400
             ) -> list[dict]:
    """Top eigenvalue at the first 100%-accuracy epoch versus ``factor`` times later."""
    out = []
    for seed in seeds:
        r = train(blob_run(kind, seed, max_epochs, checkpoint_every=1))
        accs = [ck.train_acc for ck in r.checkpoints]
        row = {"seed": seed, "optimizer": kind, "plateau_epoch": None, "final_epoch": None,
               "lambda_plateau": None, "lambda_final": None, "stays_100": False, "drift": False}
        if 1.0 in accs:
            p = accs.index(1.0) + 1
            final = factor * p
            row["plateau_epoch"], row["final_epoch"] = p, final
            if final <= len(r.checkpoints):
                plateau_ck, final_ck = r.checkpoints[p - 1], r.checkpoints[final - 1]
                lam_p = top_eigenvalue(plateau_ck.model, plateau_ck.params, r.dataset.train)
                lam_f = top_eigenvalue(final_ck.model, final_ck.params, r.dataset.train)
                stays = all(a == 1.0 for a in accs[p - 1:final])
                row.update(lambda_plateau=lam_p, lambda_final=lam_f, stays_100=stays,
                           drift=bool(stays and lam_f < 0.5 * lam_p))
        out.append(row)
    return out


def re_trace(seed: int = 0, kind: str = "adamw", epochs: int = 200, sizes=(4, 8, 3)) -> dict:
    """Per-epoch r_e on the train split from the dense Hessian."""
    r = train(blob_run(kind, seed, epochs, checkpoint_every=1, sizes=sizes))
    re = []
    for ck in r.checkpoints:
        ev = np.linalg.eigvalsh(HessianOperator(ck.model, ck.params, r.dataset.train).dense())
        re.append(-ev[0] / ev[-1])
    steps = np.diff(re)
    return {"seed": seed, "optimizer": kind, "r_e": re,
            "fraction_decreasing": float(np.mean(steps < 0))}


def adahessian_ct_trace(seed: int, block_size: int, width: int = 16, epochs: int = 40,
                        batch_size: int | None = 30, lr: float = 0.2) -> list[float]:
    """Per-epoch dense C_t of a wide-dense model trained with AdaHessian."""
    cfg = RunConfig(model=ModelSpec("wide-dense", (4, 8, 3), width=width),
                    dataset=blobs(seed, separation=3.0, noise=1.0),
                    optimizer=OptimizerConfig("adahessian", lr=lr, block_size=block_size),
                    epochs=epochs, checkpoint_every=1, batch_size=batch_size, seed=seed,
                    run_id=f"adahessian-b{block_size}-s{seed}")
    r = train(cfg)
    cts = []
    for ck in r.checkpoints:
        ev = np.linalg.eigvalsh(HessianOperator(ck.model, ck.params, r.dataset.train).dense())
        cts.append(float(ev[0] / ev[-1]))
    return cts


def adahessian_block_comparison(seeds=range(5), width: int = 16, **kw) -> list[dict]:
    out = []
    for seed in seeds:
        narrow = adahessian_ct_trace(seed, 1, width, **kw)
        wide = adahessian_ct_trace(seed, width, width, **kw)
        sd = lambda t: float(np.std(np.diff(t)))
        out.append({"seed": seed, "std_step_block1": sd(narrow), "std_step_wide": sd(wide),
                    "mn_epochs_block1": sum(c <= DEFAULT_THRESHOLDS.ct for c in narrow),
                    "mn_epochs_wide": sum(c <= DEFAULT_THRESHOLDS.ct for c in wide),
                    "wide_more_variable": sd(wide) > sd(narrow)})
    return out


def kh05_direction(seeds=range(5), kind: str = "adamw", epochs: int = 100,
                   analysis: AnalysisConfig = AnalysisConfig(), **dataset) -> list[dict]:
    """K_H05 on the train split versus the shifted generalization split."""
    out = []
    for seed in seeds:
        cfg = blob_run(kind, seed, epochs)
        cfg = replace(cfg, dataset=blobs(seed, **dataset))
        r = train(cfg)
        ck = r.checkpoints[-1]
        tr = analyze(ck.model, ck.params, r.dataset.train, analysis, ck.checkpoint_id).report
        ge = analyze(ck.model, ck.params, r.dataset.generalization, analysis, ck.checkpoint_id,
                     "generalization").report
        out.append({"seed": seed, "k_h05_train": tr.k_h05, "k_h05_gen": ge.k_h05,
                    "gen_not_lower": ge.k_h05 >= tr.k_h05})
    return out
