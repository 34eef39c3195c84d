import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hesd.analysis import analyze
from hesd.criteria import (DEFAULT_THRESHOLDS, KH05_DEFINITIONS, CriteriaReport, EpochCriteria,
                           MismatchError, Thresholds, Verdict, assess, build_report,
                           classify_hesd, compute_ct, compute_kh05, compute_re, delta_criteria,
                           qs_baseline, select_checkpoint)
from hesd.data import DatasetConfig
from hesd.errors import HesdError, SchemaError
from hesd.models import ModelSpec
from hesd.optim import OptimizerConfig
from hesd.spectral import RitzSet, SpectralDensity, density_from_ritz
from hesd.train import AnalysisConfig, RunConfig, train

from decision_fixtures import (SELECTION_PICKS, SELECTION_TRACE, mn_transformer_pair,
                               report_from_nodes)


def ritz(*nodes):
    return RitzSet.from_nodes(np.array(nodes, dtype=float))


def report(r_e=0.4, k=0.5, tag="train", hesd_type="MP", cid="run/epoch-000010"):
    c_t = -r_e if r_e is not None else 0.0
    return CriteriaReport(c_t=c_t, r_e=r_e, k_h05=k, lambda_min_neg=c_t * 2.0,
                          lambda_max_pos=2.0, hesd_type=hesd_type, checkpoint_id=cid,
                          dataset_tag=tag)


def pair(re_train, re_gen, k_train, k_gen, hesd_type="MP"):
    return (report(re_train, k_train, "train", hesd_type),
            report(re_gen, k_gen, "generalization", hesd_type))


# -- C_t -------------------------------------------------------------------

def test_ct_mixed_signs():
    res = compute_ct(ritz(-2.0, 1.0, 4.0))
    assert res.c_t == -0.5 and res.lambda_min_neg == -2.0 and res.lambda_max_pos == 4.0
    assert res.flags == ()


@pytest.mark.parametrize("a", [1e-8, 0.3, 1.0, 7.5, 1e6])
def test_ct_symmetric_is_minus_one(a):
    assert compute_ct(ritz(-a, a)).c_t == -1.0


def test_ct_without_negatives():
    res = compute_ct(ritz(0.5, 1.0, 3.0))
    assert res.c_t == 0.0 and res.flags == ("no-negative",) and res.lambda_min_neg is None


def test_ct_without_positives():
    res = compute_ct(ritz(-3.0, -1.0))
    assert res.c_t == -math.inf and res.flags == ("no-positive",)


def test_ct_all_zero():
    res = compute_ct(ritz(0.0, 0.0))
    assert res.c_t == 0.0 and set(res.flags) == {"no-negative", "no-positive"}


def test_ct_tiny_nodes_are_not_signed():
    # |node| below 1e-4 of the largest magnitude is treated as zero
    res = compute_ct(ritz(-1e-6, 0.0, 2.0))
    assert res.c_t == 0.0 and res.flags == ("no-negative",)
    assert compute_ct(ritz(-1e-3, 2.0)).c_t == -5e-4


def test_ct_extremes_widen_but_never_narrow():
    r = ritz(-1.0, 0.5, 2.0)
    assert compute_ct(r, extremes=(-3.0, 4.0)).c_t == -0.75
    assert compute_ct(r, extremes=(-0.1, 0.1)).c_t == -0.5


def test_ct_empty_raises():
    with pytest.raises(HesdError):
        compute_ct(RitzSet(np.array([]), np.array([]), np.array([], dtype=int), 0))


def test_worked_ct_above_symmetric_value_is_still_mn():
    # a trained evaluation-mode network with C_t = -0.73 sits above the
    # symmetric -1 but below the margin-carrying threshold
    c = -0.73
    assert -1.0 < c < DEFAULT_THRESHOLDS.ct
    assert classify_hesd(c, -0.73, 1.0) == "MN"


@pytest.fixture(scope="module")
def trained_batchnorm_mlp():
    cfg = RunConfig(model=ModelSpec("mlp", (4, 16, 16, 3), use_batchnorm=True),
                    dataset=DatasetConfig(n_samples=120, input_dim=4, n_classes=3,
                                          separation=4.0, noise=0.7, seed=0),
                    optimizer=OptimizerConfig("sgd", lr=0.3), epochs=100, checkpoint_every=100)
    return train(cfg)


def test_batchnorm_mlp_in_eval_mode_is_mp(trained_batchnorm_mlp):
    r = trained_batchnorm_mlp
    ck = r.checkpoints[-1]
    res = analyze(ck.model, ck.params, r.dataset.train, AnalysisConfig(), ck.checkpoint_id,
                  "train")
    assert -1.0 < res.report.c_t
    assert res.report.hesd_type == "MP"


# -- classification --------------------------------------------------------

@pytest.mark.parametrize("c_t,expected", [(-0.5, "MP"), (-0.8, "MN"), (-0.6, "MN"),
                                          (np.nextafter(-0.6, 0.0), "MP"), (0.0, "MP"),
                                          (-math.inf, "MN")])
def test_classify_threshold(c_t, expected):
    assert classify_hesd(c_t, -1.0 if c_t < 0 else None, 1.0) == expected


def test_classify_qs():
    assert classify_hesd(-1.0, -1e-9, 1e-9) == "QS"
    # relative bound against the first-epoch scale
    assert classify_hesd(-0.1, -1e-5, 1e-4, baseline=1.0) == "QS"
    assert classify_hesd(-0.1, -1e-4, 2e-3, baseline=1.0) == "MP"
    # without a baseline the absolute floor applies
    assert classify_hesd(-0.1, -1e-5, 1e-4) == "MP"
    assert classify_hesd(0.0, None, None) == "QS"


def test_custom_threshold():
    t = Thresholds(ct=-0.9)
    assert classify_hesd(-0.8, -0.8, 1.0, thresholds=t) == "MP"


@settings(max_examples=200, deadline=None)
@given(st.floats(allow_nan=False, allow_infinity=True, max_value=0.0),
       st.one_of(st.none(), st.floats(-1e6, 0.0)), st.one_of(st.none(), st.floats(0.0, 1e6)),
       st.one_of(st.none(), st.floats(0.0, 1e6)))
def test_classify_is_total(c_t, neg, pos, baseline):
    assert classify_hesd(c_t, neg, pos, baseline) in ("MP", "MN", "QS")


# -- r_e -------------------------------------------------------------------

def test_re_examples():
    assert compute_re(-0.5) == 0.5
    assert compute_re(-1.0) == 1.0
    assert compute_re(0.0) is None
    assert compute_re(compute_ct(ritz(-2.0, 1.0, 4.0))) == 0.5
    assert compute_re(compute_ct(ritz(1.0, 4.0))) is None
    assert compute_re(compute_ct(ritz(-1.0, -4.0))) is None


# -- K_H05 -----------------------------------------------------------------

def test_kh05_symmetric_density_is_one():
    d = density_from_ritz(ritz(-2.0, -1.0, 1.0, 2.0))
    assert compute_kh05(d) == pytest.approx(1.0, abs=1e-9)


def test_kh05_all_positive_is_zero():
    assert compute_kh05(density_from_ritz(ritz(1.0, 2.0, 5.0))) == 0.0


def test_kh05_only_counts_half_maximum_region():
    # a low negative tail below half the peak does not count
    grid = np.linspace(-2, 2, 401)
    dens = np.where(grid > 0, 1.0, 0.3)
    d = SpectralDensity(grid, dens, 0.1, 1, 1, 0, -2.0, 2.0)
    assert compute_kh05(d) == 0.0


def test_kh05_without_positive_mass_raises():
    with pytest.raises(HesdError):
        compute_kh05(density_from_ritz(ritz(-3.0, -1.0)))


def test_kh05_is_pluggable():
    d = density_from_ritz(ritz(-1.0, 2.0))
    assert compute_kh05(d, lambda dens: 42.0) == 42.0
    assert "half-max-mass-ratio" in KH05_DEFINITIONS


# -- deltas and assessment -------------------------------------------------

def test_delta_re_passes():
    d_re, _ = delta_criteria(*pair(0.4, 0.5, 1.0, 1.0))
    assert d_re == pytest.approx(1.25) and d_re < DEFAULT_THRESHOLDS.delta_re


def test_delta_kh05_fails():
    _, d_k = delta_criteria(*pair(0.4, 0.4, 0.5, 0.7))
    assert d_k == pytest.approx(1.4) and not d_k < DEFAULT_THRESHOLDS.delta_kh05


def test_identical_reports_give_unit_deltas():
    tr, ge = pair(0.37, 0.37, 0.81, 0.81)
    assert delta_criteria(tr, ge) == (1.0, 1.0)
    assert assess(tr, ge).generalization == "good"


def test_delta_undefined_on_zero_denominator():
    assert delta_criteria(*pair(None, 0.3, 0.0, 0.5)) == (None, None)


def test_delta_requires_matching_checkpoint():
    tr = report(cid="a/epoch-000001")
    ge = report(tag="generalization", cid="a/epoch-000002")
    with pytest.raises(MismatchError):
        delta_criteria(tr, ge)
    with pytest.raises(MismatchError):
        delta_criteria(tr, report(cid="a/epoch-000001"))


@pytest.mark.parametrize("d_re,d_k,expected", [
    (1.2, 1.1, "good"), (1.6, 1.1, "poor"), (1.2, 1.3, "poor"),
    (1.5, 1.1, "poor"), (np.nextafter(1.5, 0.0), 1.1, "good"),
    (1.2, 1.2, "poor"), (1.2, np.nextafter(1.2, 0.0), "good"),
])
def test_assess_thresholds_exact(d_re, d_k, expected):
    tr, ge = pair(1.0, d_re, 1.0, d_k)
    v = assess(tr, ge)
    assert v.applicable and v.reason == "mp-ok"
    assert v.delta_re == d_re and v.delta_kh05 == d_k
    assert v.generalization == expected


def test_assess_mn_is_not_applicable():
    v = assess(*pair(1.5, 1.6, 1.0, 3.0, hesd_type="MN"))
    assert not v.applicable and v.reason == "mn-gradient-manipulation"
    assert v.generalization == "not-assessed"
    assert "not applicable" in v.summary()


def test_assess_mn_transformer_fixture():
    tr, ge = mn_transformer_pair()
    assert tr.hesd_type == "MN" and tr.c_t == -2.5
    v = assess(tr, ge)
    assert (v.applicable, v.generalization) == (False, "not-assessed")


def test_assess_qs_still_applies_criteria():
    v = assess(*pair(0.3, 0.33, 0.5, 0.5, hesd_type="QS"))
    assert v.applicable and v.reason == "qs-spectrum" and v.generalization == "good"


def test_assess_undefined_delta_is_not_assessed():
    v = assess(*pair(0.3, 0.3, None, 0.5))
    assert v.applicable and v.generalization == "not-assessed"
    assert "K_H05" in v.note


@settings(max_examples=100, deadline=None)
@given(st.floats(0.01, 3), st.floats(0.01, 3), st.floats(0.01, 3), st.floats(0.01, 3))
def test_assess_never_rates_mn(a, b, c, d):
    assert assess(*pair(a, b, c, d, hesd_type="MN")).generalization == "not-assessed"


def test_summaries():
    assert assess(*pair(1.0, 1.2, 1.0, 1.1)).summary().startswith("good generalization expected")
    assert assess(*pair(1.0, 1.6, 1.0, 1.1)).summary().startswith("poor generalization")


# -- serialization ---------------------------------------------------------

def test_report_round_trip_with_sentinels():
    r = build_report(ritz(-1.0, -0.5), None, "x/epoch-000001", "train")
    d = r.to_dict()
    assert d["schema_version"] == "1.0" and d["c_t"] == "-inf" and d["r_e"] is None
    back = CriteriaReport.from_dict(d)
    assert back.c_t == -math.inf and back.hesd_type == r.hesd_type


def test_report_rejects_newer_major():
    d = report().to_dict()
    d["schema_version"] = "2.0"
    with pytest.raises(SchemaError):
        CriteriaReport.from_dict(d)
    d["schema_version"] = "1.7"
    CriteriaReport.from_dict(d)


def test_verdict_round_trip():
    v = assess(*pair(1.0, 1.2, 1.0, 1.1))
    assert Verdict.from_dict(v.to_dict()) == v


def test_qs_baseline_uses_first_report():
    reps = [report_from_nodes([-1.0, 3.0]), report_from_nodes([-10.0, 1.0])]
    assert qs_baseline(reps) == 3.0
    assert qs_baseline([]) is None


# -- checkpoint selection --------------------------------------------------

def test_selection_strategies_disagree():
    picks = select_checkpoint(SELECTION_TRACE)
    assert picks == SELECTION_PICKS
    gen = {r.epoch: r.gen_acc for r in SELECTION_TRACE}
    assert gen[picks["max-ct"]] == 0.569 and gen[picks["min-max-eigenvalue"]] == 0.554
    assert gen[picks["max-ct"]] > gen[picks["min-max-eigenvalue"]]


def test_single_checkpoint():
    row = EpochCriteria(7, -0.3, 1.0, 0.9)
    assert select_checkpoint([row]) == {"max-ct": 7, "min-max-eigenvalue": 7}


def test_monotone_fixture():
    rows = [EpochCriteria(e, -1.0 / e, 10.0 / e, 1.0) for e in (5, 1, 3, 2, 4)]
    assert select_checkpoint(rows) == {"max-ct": 5, "min-max-eigenvalue": 5}
    rows = [EpochCriteria(e, -e / 10, e / 10, 1.0) for e in (5, 1, 3)]
    assert select_checkpoint(rows) == {"max-ct": 1, "min-max-eigenvalue": 1}


def test_tie_band_zero_keeps_only_best_accuracy():
    rows = [EpochCriteria(1, -0.01, 0.1, 0.995), EpochCriteria(2, -0.5, 2.0, 1.0)]
    assert select_checkpoint(rows, tie_band=0.0) == {"max-ct": 2, "min-max-eigenvalue": 2}
    assert select_checkpoint(rows) == {"max-ct": 1, "min-max-eigenvalue": 1}


def test_ties_go_to_earliest_epoch():
    rows = [EpochCriteria(9, -0.2, 1.0, 1.0), EpochCriteria(4, -0.2, 1.0, 1.0)]
    assert select_checkpoint(rows) == {"max-ct": 4, "min-max-eigenvalue": 4}


def test_selection_errors():
    with pytest.raises(HesdError):
        select_checkpoint([])
    with pytest.raises(HesdError):
        select_checkpoint([EpochCriteria(1, -math.inf, None, 1.0)])


# -- scale invariance ------------------------------------------------------

ULP = np.finfo(float).eps


@settings(max_examples=100, deadline=None)
@given(st.floats(1e-6, 1e6), st.integers(0, 2**31))
def test_scale_invariance(c, seed):
    rng = np.random.default_rng(seed)
    nodes = rng.normal(size=12) * rng.uniform(0.1, 10)
    base, scaled = RitzSet.from_nodes(nodes), RitzSet.from_nodes(nodes).scaled(c)
    # the QS bound is relative to the run's own first-epoch scale, which scales too
    ref = 2.0 * np.abs(nodes).max()
    a = build_report(base, density_from_ritz(base), "r/epoch-000001", "train", baseline=ref)
    b = build_report(scaled, density_from_ritz(scaled), "r/epoch-000001", "train",
                     baseline=c * ref)
    # each scaled node carries one rounding, so the ratio moves by at most 2 ulp;
    # sentinels (0, -inf) must match exactly
    if math.isfinite(a.c_t) and a.c_t != 0.0:
        assert abs(a.c_t - b.c_t) <= 2 * ULP * abs(a.c_t)
    else:
        assert a.c_t == b.c_t
    assert a.hesd_type == b.hesd_type and a.flags == b.flags
    if a.r_e is not None:
        assert abs(a.r_e - b.r_e) <= 2 * ULP * a.r_e
    # selection over a trace of spectra, before and after scaling
    spectra = [rng.normal(size=8) + rng.uniform(0, 2) for _ in range(5)]
    accs = rng.choice([0.99, 1.0], size=5)

    def rows(scale):
        out = []
        for e, (sp, acc) in enumerate(zip(spectra, accs)):
            ct = compute_ct(RitzSet.from_nodes(sp).scaled(scale))
            out.append(EpochCriteria(e, ct.c_t, ct.lambda_max_pos, float(acc)))
        return out

    assert select_checkpoint(rows(1.0)) == select_checkpoint(rows(c))


@settings(max_examples=100, deadline=None)
@given(st.floats(1e-3, 1e3), st.floats(1e-3, 1e3), st.floats(1e-3, 1e3))
def test_delta_re_scale_invariance(c, re_train, re_gen):
    tr = build_report(ritz(-re_train, 1.0), None, "r/e", "train")
    ge = build_report(ritz(-re_gen, 1.0), None, "r/e", "generalization")
    trs = build_report(ritz(-re_train, 1.0).scaled(c), None, "r/e", "train")
    ges = build_report(ritz(-re_gen, 1.0).scaled(c), None, "r/e", "generalization")
    d, ds = delta_criteria(tr, ge)[0], delta_criteria(trs, ges)[0]
    assert abs(d - ds) <= 4 * ULP * d


def test_absolute_qs_fallback_is_not_scale_free():
    r = RitzSet.from_nodes(np.array([-0.5, 1.0]))
    assert build_report(r, None, "x", "train").hesd_type == "MP"
    assert build_report(r.scaled(1e-7), None, "x", "train").hesd_type == "QS"
    assert build_report(r.scaled(1e-7), None, "x", "train", baseline=2e-7).hesd_type == "MP"


@pytest.mark.parametrize("c", [2.0**k for k in range(-20, 21, 5)])
def test_power_of_two_scaling_is_bit_exact(c):
    nodes = np.random.default_rng(0).normal(size=20)
    a = compute_ct(RitzSet.from_nodes(nodes))
    b = compute_ct(RitzSet.from_nodes(nodes).scaled(c))
    assert a.c_t == b.c_t


@pytest.mark.slow
@pytest.mark.xfail(strict=True, reason="the half-maximum stand-in for K_H05 is dominated by "
                   "the near-zero bulk and shows no train/generalization ordering on blobs")
def test_kh05_generalization_not_below_train():
    from hesd import experiments
    rows = experiments.kh05_direction(seeds=range(3), shift=2.5, noise_scale=1.5)
    assert all(r["gen_not_lower"] for r in rows)
