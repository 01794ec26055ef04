"""Statistical reproduction checks on the cached benchmark runs.

These read the same replication caches as the acceptance suite, plus the two
configs in ``configs/reference/``; missing replications are computed.
"""

import numpy as np
import pytest

from rpretrain.bench import ExperimentConfig, run_experiment

from test_acceptance import ROOT, median, records

pytestmark = pytest.mark.acceptance


def reference(name):
    cfg = ExperimentConfig.load(ROOT / "configs" / "reference" / f"{name}.yaml")
    res = run_experiment(cfg, output_dir=ROOT / "results" / "reference" / name, render=False)
    assert not [r for r in res.records if r["error"]]
    return res.records


def mean(recs, estimator, metric):
    return float(np.mean([r[metric] for r in recs if r["estimator"] == estimator]))


def paired(recs, a, b, metric):
    by = {}
    for r in recs:
        by.setdefault((r["setting"], r["rep_id"]), {})[r["estimator"]] = r[metric]
    rows = [v for v in by.values() if a in v and b in v]
    return np.array([v[a] for v in rows]), np.array([v[b] for v in rows])


def test_pretraining_helps_only_with_overlap():
    recs = records("c3_overlap")
    full, zero = "overlap_fraction=1.0", "overlap_fraction=0.0"
    assert median(recs, "rlasso_pt", setting=full) < median(recs, "rlasso", setting=full)
    assert abs(median(recs, "rlasso_pt", setting=zero) / median(recs, "rlasso", setting=zero) - 1) <= 0.05


def test_unilasso_selection_profile():
    recs = records("c2_table1_spot")
    assert 0.10 <= mean(recs, "uni_rlasso", "fdr") <= 0.16
    assert abs(mean(recs, "rlasso", "fdr") - 0.5) <= 0.05
    assert mean(recs, "uni_rlasso_pt", "jaccard") > mean(recs, "rlasso", "jaccard")


def test_dr_pretraining_from_both_arms_helps():
    recs = records("c7_dr")
    assert median(recs, "dr_lasso_both") < median(recs, "dr_lasso")


def test_nonlinear_learners_beat_linear_rlasso():
    c = records("c6_setupC")
    assert median(c, "rboost") < median(c, "rlasso")
    b = records("c6_setupB")
    assert median(b, "grf") < median(b, "rlasso")


def test_pretraining_does_not_cost_power_or_size():
    power = records("c5_power")
    rate = {e: np.mean([r["reject"] for r in power if r["estimator"] == e]) for e in ("rlasso", "rlasso_pt")}
    assert rate["rlasso_pt"] >= rate["rlasso"]
    null = records("c5_null")
    assert np.mean([r["reject"] for r in null]) <= 0.10


def test_unilasso_is_sparser_in_paired_replications():
    recs = reference("uni_support")
    uni, rl = paired(recs, "uni_rlasso", "rlasso", "support_size")
    assert uni.size >= 100
    assert np.mean(uni < rl) >= 0.90


def test_pretrained_forest_not_worse():
    recs = reference("grf_pretrained")
    assert median(recs, "grf_pt") <= median(recs, "grf")
