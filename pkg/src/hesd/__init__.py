"""Hessian eigenvalue spectral density (HESD) analysis for small networks."""

from .criteria import (CriteriaReport, Thresholds, Verdict, assess, classify_hesd, compute_ct,
                       compute_kh05, compute_re, delta_criteria, select_checkpoint)
from .data import DatasetConfig, make_dataset
from .models import (Batch, HessianOperator, Model, ModelSpec, build_model, gradient, hvp,
                     loss_forward)
from .params import ParameterVector, flatten, unflatten
from .spectral import RitzSet, SpectralDensity, lanczos, power_extreme, slq_density

__version__ = "0.1.0"
