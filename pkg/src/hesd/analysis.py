"""Checkpoint -> spectrum -> criteria report."""

from __future__ import annotations

from dataclasses import dataclass

from .criteria import DEFAULT_THRESHOLDS, CriteriaReport, Thresholds, build_report
from .models import Batch, HessianOperator, Model
from .params import ParameterVector
from .spectral import PowerResult, RitzSet, SpectralDensity, density_from_ritz, \
    extreme_eigenvalues, slq
from .train import AnalysisConfig


@dataclass(frozen=True, eq=False)
class AnalysisResult:
    report: CriteriaReport
    density: SpectralDensity
    ritz: RitzSet
    power: tuple[PowerResult, PowerResult] | None


def analyze(model: Model, params: ParameterVector, batch: Batch,
            cfg: AnalysisConfig = AnalysisConfig(), checkpoint_id: str = "",
            dataset_tag: str = "train", thresholds: Thresholds = DEFAULT_THRESHOLDS,
            baseline: float | None = None, meta: dict | None = None) -> AnalysisResult:
    """SLQ density plus C_t-family criteria for one checkpoint and split.

    Extremes come from the Ritz nodes, widened by power iteration when
    ``cfg.power_iters > 0``.
    """
    op = HessianOperator(model, params, batch)
    ritz, _ = slq(op, op.dim, cfg.n_probes, cfg.steps, cfg.seed)
    density = density_from_ritz(ritz, cfg.sigma_factor, steps=cfg.steps, seed=cfg.seed)
    power = None
    extremes = None
    if cfg.power_iters > 0:
        power = extreme_eigenvalues(op, op.dim, seed=cfg.seed, max_iters=cfg.power_iters)
        extremes = (power[0].eigenvalue, power[1].eigenvalue)
    info = {
        "n_params": op.dim, "n_samples": len(batch), "loss": op.loss.item(),
        "n_probes": cfg.n_probes, "steps": cfg.steps, "sigma_factor": cfg.sigma_factor,
        "seed": cfg.seed, "ritz_min": ritz.lambda_min, "ritz_max": ritz.lambda_max,
        "first_moment": ritz.first_moment(),
    }
    if power is not None:
        info.update(power_min=power[0].eigenvalue, power_max=power[1].eigenvalue,
                    power_converged=bool(power[0].converged and power[1].converged))
    info.update(meta or {})
    report = build_report(ritz, density, checkpoint_id, dataset_tag, extremes, baseline,
                          thresholds, meta=info)
    return AnalysisResult(report, density, ritz, power)
