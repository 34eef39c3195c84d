"""HESD type criterion, generalization criteria and the assessment flow.

Spectrum type is decided from the ratio of the most negative to the largest
positive eigenvalue:

    C_t = min(lambda_neg) / max(lambda_pos)

``C_t > -0.6`` means a mainly-positive spectrum (MP). Anything at or below
the threshold is mainly-negative (MN) and, since MN spectra come from
optimizers that distort gradients, the generalization criteria are not
evaluated for them. A spectrum whose extremes collapsed towards zero is
quasi-singular (QS); the ratio criteria still apply there.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import HesdError, SchemaError
from .spectral import RitzSet, SpectralDensity

SCHEMA_VERSION = "1.0"
HESD_TYPES = ("MP", "MN", "QS")
REASONS = ("mp-ok", "mn-gradient-manipulation", "qs-spectrum")
GENERALIZATION = ("good", "poor", "not-assessed")
RITZ_EPS = 1e-4


@dataclass(frozen=True)
class Thresholds:
    ct: float = -0.6
    delta_re: float = 1.5
    delta_kh05: float = 1.2
    qs_relative: float = 1e-3
    qs_absolute: float = 1e-6


DEFAULT_THRESHOLDS = Thresholds()


@dataclass(frozen=True)
class CtResult:
    c_t: float
    lambda_min_neg: float | None
    lambda_max_pos: float | None
    flags: tuple[str, ...] = ()

    @property
    def has_negative(self) -> bool:
        return self.lambda_min_neg is not None

    @property
    def has_positive(self) -> bool:
        return self.lambda_max_pos is not None


def compute_ct(ritz: RitzSet, extremes: tuple[float, float] | None = None,
               eps_rel: float = RITZ_EPS) -> CtResult:
    """Signed-extreme ratio over Ritz nodes.

    A node counts as negative below ``-eps`` and positive above ``+eps`` with
    ``eps = eps_rel * max|node|``. ``extremes`` (e.g. from power iteration)
    may widen the Ritz extremes but never narrow them.
    Missing negatives give ``C_t = 0``; missing positives give ``-inf``.
    """
    if len(ritz) == 0:
        raise HesdError("cannot compute C_t from an empty Ritz set")
    nodes = ritz.nodes
    lo, hi = float(nodes.min()), float(nodes.max())
    if extremes is not None:
        lo, hi = min(lo, extremes[0]), max(hi, extremes[1])
    eps = eps_rel * max(abs(lo), abs(hi))
    neg = lo if lo < -eps else None
    pos = hi if hi > eps else None
    flags = []
    if neg is None:
        flags.append("no-negative")
    if pos is None:
        flags.append("no-positive")
    if pos is None:
        c_t = 0.0 if neg is None else -math.inf
    elif neg is None:
        c_t = 0.0
    else:
        c_t = neg / pos
    return CtResult(c_t, neg, pos, tuple(flags))


def classify_hesd(c_t: float, lambda_min_neg: float | None, lambda_max_pos: float | None,
                  baseline: float | None = None,
                  thresholds: Thresholds = DEFAULT_THRESHOLDS) -> str:
    """``QS`` if the spectrum collapsed, else ``MP`` iff ``c_t > thresholds.ct``.

    ``baseline`` is the largest absolute extreme at the first analyzed epoch
    of the run; without it an absolute floor is used.
    """
    magnitude = max(abs(lambda_min_neg or 0.0), abs(lambda_max_pos or 0.0))
    if baseline is not None and baseline > 0:
        bound = thresholds.qs_relative * baseline
    else:
        bound = thresholds.qs_absolute
    if magnitude < bound:
        return "QS"
    return "MP" if c_t > thresholds.ct else "MN"


def compute_re(ct: CtResult | float) -> float | None:
    """``r_e = -C_t``; undefined (None) without negative eigenvalues."""
    if isinstance(ct, CtResult):
        if not ct.has_negative or not ct.has_positive:
            return None
        return -ct.c_t
    if ct == 0.0 or not math.isfinite(ct):
        return None
    return -ct


def kh05_half_max_mass_ratio(density: SpectralDensity) -> float:
    """Negative-to-positive mass ratio over the part of the curve at or above
    half its peak.

    Stand-in definition: the original criterion is defined elsewhere, so
    callers can swap it through :data:`KH05_DEFINITIONS`.
    """
    grid, dens = density.grid, density.density
    if grid.size < 2:
        raise HesdError("density grid needs at least two points")
    dx = np.diff(grid)
    w = np.zeros_like(grid)
    w[:-1] += 0.5 * dx
    w[1:] += 0.5 * dx
    kept = dens * (dens >= 0.5 * dens.max()) * w
    neg = float(kept[grid < 0].sum())
    pos = float(kept[grid >= 0].sum())
    if pos <= 0.0:
        raise HesdError("K_H05 undefined: no positive mass above half maximum")
    return neg / pos


KH05_DEFINITIONS: dict[str, Callable[[SpectralDensity], float]] = {
    "half-max-mass-ratio": kh05_half_max_mass_ratio,
}


def compute_kh05(density: SpectralDensity,
                 definition: str | Callable[[SpectralDensity], float] = "half-max-mass-ratio"
                 ) -> float:
    fn = KH05_DEFINITIONS[definition] if isinstance(definition, str) else definition
    return fn(density)


def _num(x):
    if x is None:
        return None
    x = float(x)
    if math.isnan(x):
        return None
    if math.isinf(x):
        return "-inf" if x < 0 else "inf"
    return x


def _unnum(x):
    if x is None:
        return None
    if isinstance(x, str):
        return float(x)
    return float(x)


def _check_schema(d: Mapping) -> None:
    version = str(d.get("schema_version", ""))
    if not version:
        raise SchemaError("missing schema_version")
    major = version.split(".")[0]
    if not major.isdigit() or int(major) > int(SCHEMA_VERSION.split(".")[0]):
        raise SchemaError(f"unsupported schema_version {version!r}")


@dataclass
class CriteriaReport:
    c_t: float
    r_e: float | None
    k_h05: float | None
    lambda_min_neg: float | None
    lambda_max_pos: float | None
    hesd_type: str
    checkpoint_id: str
    dataset_tag: str
    flags: list[str] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("c_t", "r_e", "k_h05", "lambda_min_neg", "lambda_max_pos"):
            d[key] = _num(d[key])
        return {"schema_version": SCHEMA_VERSION, **d}

    @classmethod
    def from_dict(cls, d: Mapping) -> CriteriaReport:
        _check_schema(d)
        kw = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        for key in ("c_t", "r_e", "k_h05", "lambda_min_neg", "lambda_max_pos"):
            kw[key] = _unnum(kw.get(key))
        if kw["hesd_type"] not in HESD_TYPES:
            raise SchemaError(f"unknown hesd_type {kw['hesd_type']!r}")
        return cls(**kw)

    def reclassified(self, baseline: float | None,
                     thresholds: Thresholds = DEFAULT_THRESHOLDS) -> CriteriaReport:
        t = classify_hesd(self.c_t, self.lambda_min_neg, self.lambda_max_pos, baseline, thresholds)
        return CriteriaReport(**{**asdict(self), "hesd_type": t})

    @property
    def extreme_magnitude(self) -> float:
        return max(abs(self.lambda_min_neg or 0.0), abs(self.lambda_max_pos or 0.0))


def build_report(ritz: RitzSet, density: SpectralDensity | None, checkpoint_id: str,
                 dataset_tag: str, extremes: tuple[float, float] | None = None,
                 baseline: float | None = None, thresholds: Thresholds = DEFAULT_THRESHOLDS,
                 kh05_definition="half-max-mass-ratio", meta: dict | None = None
                 ) -> CriteriaReport:
    ct = compute_ct(ritz, extremes)
    flags = list(ct.flags)
    kh = None
    if density is not None:
        try:
            kh = compute_kh05(density, kh05_definition)
        except HesdError:
            flags.append("k_h05-undefined")
    if density is not None and density.degenerate:
        flags.append("degenerate-spectrum")
    return CriteriaReport(
        c_t=ct.c_t, r_e=compute_re(ct), k_h05=kh,
        lambda_min_neg=ct.lambda_min_neg, lambda_max_pos=ct.lambda_max_pos,
        hesd_type=classify_hesd(ct.c_t, ct.lambda_min_neg, ct.lambda_max_pos, baseline,
                                thresholds),
        checkpoint_id=checkpoint_id, dataset_tag=dataset_tag, flags=flags,
        meta=dict(meta or {}))


class MismatchError(HesdError, ValueError):
    pass


def _ratio(num: float | None, den: float | None) -> float | None:
    if num is None or den is None or den == 0.0:
        return None
    return num / den


def delta_criteria(train: CriteriaReport, gen: CriteriaReport
                   ) -> tuple[float | None, float | None]:
    """``(r_e.gen / r_e.train, k_h05.gen / k_h05.train)``; None where undefined."""
    if train.checkpoint_id != gen.checkpoint_id:
        raise MismatchError(
            f"checkpoint ids differ: {train.checkpoint_id!r} vs {gen.checkpoint_id!r}")
    if train.dataset_tag == gen.dataset_tag:
        raise MismatchError(f"both reports are tagged {train.dataset_tag!r}")
    return _ratio(gen.r_e, train.r_e), _ratio(gen.k_h05, train.k_h05)


@dataclass
class Verdict:
    applicable: bool
    reason: str
    delta_re: float | None
    delta_kh05: float | None
    generalization: str
    note: str = ""
    checkpoint_id: str = ""

    def to_dict(self) -> dict:
        d = asdict(self)
        d["delta_re"], d["delta_kh05"] = _num(self.delta_re), _num(self.delta_kh05)
        return {"schema_version": SCHEMA_VERSION, **d}

    @classmethod
    def from_dict(cls, d: Mapping) -> Verdict:
        _check_schema(d)
        kw = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        kw["delta_re"], kw["delta_kh05"] = _unnum(kw.get("delta_re")), _unnum(
            kw.get("delta_kh05"))
        return cls(**kw)

    def summary(self) -> str:
        if not self.applicable:
            return ("HESD is mainly negative: Hessian methodology not applicable "
                    "(gradients were likely manipulated during training); "
                    "generalization not assessed.")
        head = "quasi-singular HESD, ratio criteria still applied. " \
            if self.reason == "qs-spectrum" else ""
        dr = "undefined" if self.delta_re is None else f"{self.delta_re:.4g}"
        dk = "undefined" if self.delta_kh05 is None else f"{self.delta_kh05:.4g}"
        tail = f"(delta r_e = {dr}, delta K_H05 = {dk})"
        if self.generalization == "good":
            return f"{head}good generalization expected {tail}"
        if self.generalization == "poor":
            return f"{head}poor generalization {tail}"
        return f"{head}generalization not assessed: {self.note} {tail}"


def assess(train: CriteriaReport, gen: CriteriaReport,
           thresholds: Thresholds = DEFAULT_THRESHOLDS) -> Verdict:
    """Type check on the train spectrum, then the two ratio conditions."""
    d_re, d_kh = delta_criteria(train, gen)
    cid = train.checkpoint_id
    if train.hesd_type == "MN":
        return Verdict(False, "mn-gradient-manipulation", d_re, d_kh, "not-assessed",
                       "mainly-negative HESD", cid)
    reason = "qs-spectrum" if train.hesd_type == "QS" else "mp-ok"
    if d_re is None or d_kh is None:
        missing = [n for n, v in (("delta r_e", d_re), ("delta K_H05", d_kh)) if v is None]
        return Verdict(True, reason, d_re, d_kh, "not-assessed",
                       f"{' and '.join(missing)} undefined", cid)
    good = d_re < thresholds.delta_re and d_kh < thresholds.delta_kh05
    return Verdict(True, reason, d_re, d_kh, "good" if good else "poor", "", cid)


@dataclass(frozen=True)
class EpochCriteria:
    epoch: int
    c_t: float
    lambda_max_pos: float | None
    train_acc: float
    gen_acc: float | None = None


STRATEGIES = ("max-ct", "min-max-eigenvalue")


def select_checkpoint(rows: Sequence[EpochCriteria], tie_band: float = 0.01
                      ) -> dict[str, int]:
    """Epoch picked by each strategy among near-best training accuracy.

    Candidates are epochs whose train accuracy is within ``tie_band`` of the
    best (accuracies are fractions, so 0.01 is one percentage point). Ties
    go to the earliest epoch.
    """
    if not rows:
        raise HesdError("no checkpoints to select from")
    if tie_band < 0:
        raise ValueError("tie_band must be non-negative")
    best = max(r.train_acc for r in rows)
    cands = sorted((r for r in rows if r.train_acc >= best - tie_band), key=lambda r: r.epoch)
    by_ct = max(cands, key=lambda r: (r.c_t, -r.epoch))
    with_pos = [r for r in cands if r.lambda_max_pos is not None]
    if not with_pos:
        raise HesdError("no candidate has a positive eigenvalue")
    by_eig = min(with_pos, key=lambda r: (r.lambda_max_pos, r.epoch))
    return {"max-ct": by_ct.epoch, "min-max-eigenvalue": by_eig.epoch}


def qs_baseline(reports: Iterable[CriteriaReport]) -> float | None:
    """Largest absolute extreme of the first report, the QS reference scale."""
    for r in reports:
        return r.extreme_magnitude or None
    return None
