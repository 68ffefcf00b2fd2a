import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hpcdetect.dataset import Dataset
from hpcdetect.errors import InvalidProfile, TooFewRows
from hpcdetect.events import SELECTED_FEATURES, ClassLabel
from hpcdetect.profiles import (
    TRAIN_COUNTS, VALIDATION_COUNTS, ProfileLibrary, build_corpus, calibrate_from_traces, scenario_trace,
)
from hpcdetect.synth import FeatureDist, ScenarioProfile, generate
from hpcdetect.tree import DecisionTree

REQUIRED_SCENARIOS = {"stress_c", "stress_m", "stress_i", "firefox", "video", "meltdown", "meltdown_fast",
                   "meltdown_nonull", "spectre_v1", "spectre_v2", "spectre_v4", "spectre_v1_alt"}


def _profile(family="lognormal", loc=1000.0, scale=200.0, seed=7):
    return ScenarioProfile("p", ClassLabel.Benign,
                           {"LL_ACCESS": FeatureDist(family, loc, scale), "PAGE_FAULTS": FeatureDist("gaussian", 5, 2)},
                           seed=seed, pid=42)


def test_zero_variance_profile_yields_identical_samples():
    p = ScenarioProfile("c", ClassLabel.Meltdown, {"LL_ACCESS": FeatureDist("lognormal", 300, 0),
                                                   "DTLB_READ": FeatureDist("gaussian", 12, 0)})
    ds = generate(p, 5)
    assert ds.feature_names == ["LL_ACCESS", "DTLB_READ"]
    assert ds.X.tolist() == [[300, 12]] * 5


def test_feature_order_follows_catalog():
    p = ScenarioProfile("c", ClassLabel.Meltdown, {"DTLB_READ": FeatureDist("gaussian", 1, 0),
                                                   "LL_ACCESS": FeatureDist("gaussian", 2, 0)})
    assert generate(p, 1).feature_names == ["LL_ACCESS", "DTLB_READ"]


def test_generation_is_deterministic():
    assert generate(_profile(), 1000, seed=7) == generate(_profile(), 1000, seed=7)
    assert not generate(_profile(), 1000, seed=7) == generate(_profile(), 1000, seed=8)


@pytest.mark.parametrize("family", ["lognormal", "gaussian"])
def test_sample_mean_within_three_standard_errors(family):
    loc, scale, n = 5000.0, 800.0, 10000
    ds = generate(_profile(family, loc, scale), n, seed=3)
    col = ds.X[:, ds.feature_names.index("LL_ACCESS")]
    assert abs(col.mean() - loc) <= 3 * scale / np.sqrt(n)


def test_values_are_non_negative_integers():
    ds = generate(_profile("gaussian", 1.0, 50.0), 2000, seed=1)
    assert ds.X.dtype.kind == "i" and ds.X.min() >= 0
    assert len(ds) == 2000 and set(ds.y.tolist()) == {0} and set(ds.pids.tolist()) == {42}


def test_invalid_profiles():
    with pytest.raises(InvalidProfile):
        ScenarioProfile("x", ClassLabel.Benign, {"LL_ACCESS": FeatureDist("lognormal", 10, -1)})
    with pytest.raises(InvalidProfile):
        ScenarioProfile("x", ClassLabel.Benign, {"LL_ACCESS": FeatureDist("cauchy", 10, 1)})
    with pytest.raises(ValueError):
        generate(_profile(), 0)


def test_library_names_and_counts(library):
    assert REQUIRED_SCENARIOS <= set(library.profiles)
    assert sum(TRAIN_COUNTS.values()) == 152156
    assert sum(VALIDATION_COUNTS.values()) == 34838
    assert library.corpus_spec["spectre_v1"] == 11024 and library.corpus_spec["spectre_v4"] == 14001


def test_library_json_round_trip(tmp_path, library):
    p = tmp_path / "lib.json"
    library.save(p)
    back = ProfileLibrary.load(p)
    assert back.to_dict() == library.to_dict()
    p.write_text('{"format": "x"}')
    with pytest.raises(InvalidProfile):
        ProfileLibrary.load(p)


def test_corpus_sizes_and_seed_independence(library):
    small = ProfileLibrary(library.profiles, {k: 50 for k in TRAIN_COUNTS}, {k: 30 for k in VALIDATION_COUNTS})
    tr, va = build_corpus(small, seed=1)
    assert len(tr) == 550 and len(va) == 120
    tr2, va2 = build_corpus(small, seed=1, validation_seed=99)
    assert tr == tr2 and not va == va2
    assert set(va.y.tolist()) == {0, 1}


def test_calibration_recovers_location():
    truth = _profile("lognormal", 4000.0, 900.0)
    ds = generate(truth, 10000, seed=5)
    lib = calibrate_from_traces(ds)
    fit = lib["p"].features
    assert fit["LL_ACCESS"].family == "lognormal"
    assert abs(fit["LL_ACCESS"].location - 4000.0) / 4000.0 < 0.05
    # the clipped gaussian emits zeros, so that feature falls back to gaussian
    assert fit["PAGE_FAULTS"].family == "gaussian"


def test_calibration_too_few_rows():
    ds = generate(_profile(), 50, seed=1)
    with pytest.raises(TooFewRows):
        calibrate_from_traces(ds)
    with pytest.raises(TooFewRows):
        calibrate_from_traces(ds, scenarios=["p", "missing"], min_rows=10)


def test_depth3_tree_separates_classes_on_selected_features(library):
    rng_parts = []
    for label in ClassLabel:
        names = [n for n, p in library.profiles.items() if p.label == label and n in TRAIN_COUNTS]
        per = 1000 // len(names) + 1
        part = Dataset.concat([scenario_trace(n, per, seed=21, library=library) for n in names])
        rng_parts.append(part.subset(np.arange(1000)))
    ds = Dataset.concat(rng_parts).select(list(SELECTED_FEATURES))
    rng = np.random.default_rng(0)
    perm = rng.permutation(len(ds))
    tr, te = perm[:4000], perm[4000:]
    t = DecisionTree(max_depth=3).fit(ds.X[tr], ds.y[tr], 5)
    assert np.mean(t.predict(ds.X[te]) == ds.y[te]) > 0.95


def _stump_accuracy(x, y):
    """Best single-threshold accuracy over every cut and both orientations."""
    o = np.argsort(x, kind="stable")
    xs, ys = x[o], y[o]
    cum = np.cumsum(ys)
    total = ys.sum()
    n = len(ys)
    cuts = np.r_[0, np.flatnonzero(xs[1:] != xs[:-1]) + 1, n]
    best = 0.0
    for c in cuts:
        left_pos = cum[c - 1] if c > 0 else 0
        # predict positive on the right, or on the left
        a = ((c - left_pos) + (total - left_pos)) / n
        best = max(best, a, 1 - a)
    return best


@pytest.mark.parametrize("feature", ["BPU_ACCESS", "BPU_MISS"])
def test_bpu_stumps_cannot_separate_benign_from_spectre(library, feature):
    benign = Dataset.concat([scenario_trace(n, 3000, seed=5, library=library) for n in ("firefox", "video")])
    spectre = Dataset.concat([scenario_trace(n, 2000, seed=5, library=library)
                              for n in ("spectre_v1", "spectre_v2", "spectre_v4")])
    x = np.r_[benign.select([feature]).X[:, 0], spectre.select([feature]).X[:, 0]].astype(float)
    y = np.r_[np.zeros(len(benign)), np.ones(len(spectre))]
    assert _stump_accuracy(x, y) <= 0.75


def test_page_fault_profiles(library):
    pf = {n: library[n].features["PAGE_FAULTS"] for n in ("meltdown", "meltdown_fast", "meltdown_nonull",
                                                           "firefox", "stress_m")}
    assert pf["meltdown"].location > 0
    assert pf["meltdown_fast"].location == 0 and pf["meltdown_nonull"].location == 0
    assert pf["firefox"].location > pf["meltdown"].location
    assert pf["stress_m"].location > pf["meltdown"].location
