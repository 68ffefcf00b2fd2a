"""Shipped scenario-profile library and corpus builder.

Parameters are invented to reproduce qualitative orderings, not measured:

* the four selected events separate every class, each with exactly one
  clean cut: LL_ACCESS splits benign from attack, L1D_WRITE splits
  {V1, V2} from {Meltdown, V4}, DTLB_WRITE splits Meltdown from V4 and
  DTLB_READ splits V1 from V2. Classes a feature does not split overlap on
  it, so greedy depth-3 trees find this structure; LL_ACCESS separates V1
  from V2 only partially;
* BPU_ACCESS / BPU_MISS of firefox and video spread over the spectre range;
* meltdown, firefox and stress_m fault pages, meltdown_fast and
  meltdown_nonull do not;
* every other event overlaps across scenarios.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import Dataset
from .errors import InvalidProfile, TooFewRows
from .events import ClassLabel, catalog
from .synth import FeatureDist, ScenarioProfile, generate

B, V1, V2, M, V4 = (ClassLabel.Benign, ClassLabel.SpectreV1, ClassLabel.SpectreV2,
                    ClassLabel.Meltdown, ClassLabel.SpectreV4)

TRAIN_COUNTS = {
    "stress_c": 15000, "stress_m": 15000, "stress_i": 15000,
    "firefox": 20000, "video": 20000,
    "spectre_v1": 11024, "spectre_v2": 10305,
    "meltdown": 10664, "meltdown_fast": 10598, "meltdown_nonull": 10564,
    "spectre_v4": 14001,
}
# benign rows sum to the first validation row (11089), spectre_v1_alt to the second (23749)
VALIDATION_COUNTS = {"stress_c": 2500, "stress_m": 2500, "mibench": 6089, "spectre_v1_alt": 23749}

# mean per 1 ms interval for events that carry no class signal
_BACKGROUND = {
    "CACHE_REFERENCES": 20000, "CACHE_MISSES": 2000, "CPU_CYCLES": 2400000,
    "INSTRUCTIONS": 3000000, "BUS_CYCLES": 100000, "REF_CPU_CYCLES": 2500000,
    "BRANCH_MISSES": 8000, "BRANCH_INSTRUCTIONS": 500000, "CPU_CLOCK": 950000,
    "TASK_CLOCK": 950000, "L1D_READ": 900000, "L1D_ACCESS": 1000000,
    "L1D_MISS": 15000, "L1I_MISS": 3000, "LL_READ": 1500, "LL_WRITE": 500,
    "LL_MISS": 400, "DTLB_ACCESS": 300000, "DTLB_MISS": 200, "ITLB_ACCESS": 200,
    "ITLB_MISS": 50, "BPU_READ": 500000,
}

# name: (label, background activity, background cv, pid)
_SCENARIOS = {
    "stress_c": (B, 1.00, 0.25, 2001),
    "stress_m": (B, 1.10, 0.25, 2002),
    "stress_i": (B, 0.55, 0.40, 2003),
    "firefox": (B, 0.90, 0.60, 2004),
    "video": (B, 0.80, 0.50, 2005),
    "mibench": (B, 0.85, 0.50, 2006),
    "spectre_v1": (V1, 0.90, 0.30, 3001),
    "spectre_v1_alt": (V1, 0.95, 0.30, 3002),
    "spectre_v2": (V2, 0.90, 0.30, 3003),
    "meltdown": (M, 0.85, 0.30, 3004),
    "meltdown_fast": (M, 0.90, 0.30, 3005),
    "meltdown_nonull": (M, 0.90, 0.30, 3006),
    "spectre_v4": (V4, 0.90, 0.30, 3007),
}

# lognormal (mean, cv) for LL_ACCESS, L1D_WRITE, DTLB_WRITE, DTLB_READ
_KEY = {
    "stress_c": ((300, .25), (40000, .20), (40000, .20), (150000, .20)),
    "stress_m": ((800, .25), (120000, .20), (110000, .20), (300000, .20)),
    "stress_i": ((500, .30), (20000, .30), (20000, .30), (60000, .30)),
    "firefox": ((900, .35), (90000, .40), (85000, .40), (250000, .40)),
    "video": ((700, .30), (70000, .35), (65000, .35), (200000, .35)),
    "mibench": ((600, .40), (60000, .50), (55000, .50), (180000, .50)),
    "spectre_v1": ((5500, .12), (30000, .10), (40000, .30), (100000, .10)),
    "spectre_v1_alt": ((5700, .12), (32000, .10), (42000, .30), (104000, .10)),
    "spectre_v2": ((6500, .12), (30000, .10), (40000, .30), (200000, .10)),
    "meltdown": ((6000, .12), (90000, .10), (20000, .10), (150000, .30)),
    "meltdown_fast": ((5900, .12), (92000, .10), (21000, .10), (148000, .30)),
    "meltdown_nonull": ((6100, .12), (88000, .10), (19000, .10), (152000, .30)),
    "spectre_v4": ((6000, .12), (90000, .10), (60000, .10), (150000, .30)),
}

# lognormal (mean, cv) for BPU_ACCESS, BPU_MISS
_BPU = {
    "stress_c": ((300000, .15), (500, .20)),
    "stress_m": ((250000, .20), (800, .20)),
    "stress_i": ((120000, .30), (1500, .40)),
    "firefox": ((200000, .80), (3000, .90)),
    "video": ((180000, .70), (2500, .80)),
    "mibench": ((190000, .60), (2200, .70)),
    "spectre_v1": ((200000, .30), (2000, .35)),
    "spectre_v1_alt": ((210000, .30), (2100, .35)),
    "spectre_v2": ((195000, .30), (2100, .35)),
    "meltdown": ((150000, .30), (1200, .30)),
    "meltdown_fast": ((150000, .30), (1200, .30)),
    "meltdown_nonull": ((150000, .30), (1200, .30)),
    "spectre_v4": ((205000, .30), (1900, .35)),
}

# clipped gaussian (mean, sd) for PAGE_FAULTS
_PAGE_FAULTS = {
    "stress_c": (0, 0.3), "stress_m": (80, 20), "stress_i": (0, 0.3),
    "firefox": (60, 25), "video": (0, 0.5), "mibench": (0, 0.5),
    "spectre_v1": (0, 0.3), "spectre_v1_alt": (0, 0.3), "spectre_v2": (0, 0.3),
    "meltdown": (40, 10), "meltdown_fast": (0, 0), "meltdown_nonull": (0, 0),
    "spectre_v4": (0, 0.3),
}

# a few runs of context switches per millisecond at most
_CONTEXT_SWITCHES = (0.2, 0.5)


def _shipped_profile(name, index):
    label, activity, cv, pid = _SCENARIOS[name]
    feats = {}
    for ev in catalog():
        n = ev.name
        if n in ("LL_ACCESS", "L1D_WRITE", "DTLB_WRITE", "DTLB_READ"):
            mean, c = _KEY[name][("LL_ACCESS", "L1D_WRITE", "DTLB_WRITE", "DTLB_READ").index(n)]
            feats[n] = FeatureDist("lognormal", float(mean), float(mean * c))
        elif n in ("BPU_ACCESS", "BPU_MISS"):
            mean, c = _BPU[name][0 if n == "BPU_ACCESS" else 1]
            feats[n] = FeatureDist("lognormal", float(mean), float(mean * c))
        elif n == "PAGE_FAULTS":
            feats[n] = FeatureDist("gaussian", *map(float, _PAGE_FAULTS[name]))
        elif n == "CONTEXT_SWITCHES":
            feats[n] = FeatureDist("gaussian", *_CONTEXT_SWITCHES)
        else:
            mean = _BACKGROUND[n] * activity
            feats[n] = FeatureDist("lognormal", float(round(mean)), float(round(mean * cv)))
    return ScenarioProfile(name, label, feats, seed=index + 1, pid=pid)


@dataclass
class ProfileLibrary:
    profiles: dict
    corpus_spec: dict = field(default_factory=lambda: dict(TRAIN_COUNTS))
    validation_spec: dict = field(default_factory=lambda: dict(VALIDATION_COUNTS))

    def __post_init__(self):
        for spec in (self.corpus_spec, self.validation_spec):
            missing = [n for n in spec if n not in self.profiles]
            if missing:
                raise InvalidProfile(f"corpus names unknown profiles: {missing}")
            if any(int(c) < 0 for c in spec.values()):
                raise InvalidProfile("negative scenario count")

    def __getitem__(self, name):
        return self.profiles[name]

    def to_dict(self):
        return {
            "format": "hpcdetect-profiles",
            "version": 1,
            "profiles": [p.to_dict() for p in self.profiles.values()],
            "corpus": dict(self.corpus_spec),
            "validation": dict(self.validation_spec),
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("format") != "hpcdetect-profiles":
            raise InvalidProfile("not a profile library file")
        profiles = {}
        for entry in d.get("profiles", []):
            p = ScenarioProfile.from_dict(entry)
            profiles[p.name] = p
        return cls(profiles, dict(d.get("corpus", {})), dict(d.get("validation", {})))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path):
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise InvalidProfile(f"{path}: {exc}") from None
        return cls.from_dict(doc)


def default_library():
    return ProfileLibrary({name: _shipped_profile(name, i) for i, name in enumerate(_SCENARIOS)})


def _build(library, spec, seed, stream):
    parts = []
    for name, count in spec.items():
        if count <= 0:
            continue
        prof = library[name]
        ss = np.random.SeedSequence([int(seed), stream, int(prof.seed)])
        parts.append(generate(prof, int(count), seed=ss))
    return Dataset.concat(parts)


def build_corpus(library=None, seed=1, validation_seed=None):
    """(train_test, validation) datasets with scenario provenance.

    The two draw from disjoint seed streams, so ``validation_seed`` never
    affects the training corpus.
    """
    library = default_library() if library is None else library
    vseed = seed if validation_seed is None else validation_seed
    return _build(library, library.corpus_spec, seed, 0), _build(library, library.validation_spec, vseed, 1)


def scenario_trace(name, n, seed=1, library=None):
    """``n`` samples of one scenario for replay; seed stream 2, disjoint from both corpora."""
    library = default_library() if library is None else library
    prof = library[name]
    return generate(prof, int(n), seed=np.random.SeedSequence([int(seed), 2, int(prof.seed)]))


def _majority_label(y):
    vals, counts = np.unique(y[y >= 0], return_counts=True)
    if not len(vals):
        raise InvalidProfile("scenario has no labeled rows")
    return ClassLabel(int(vals[np.argmax(counts)]))


def calibrate_from_traces(traces, min_rows=100, scenarios=None):
    """Fit one profile per scenario by the method of moments.

    Strictly positive columns get a lognormal fitted on log values; columns
    containing any zero fall back to a zero-clipped gaussian.
    """
    if traces.scenarios is None:
        raise InvalidProfile("traces carry no scenario provenance")
    names = scenarios if scenarios is not None else traces.scenario_names()
    profiles = {}
    for i, name in enumerate(names):
        mask = traces.scenarios == name
        n = int(mask.sum())
        if n < min_rows:
            raise TooFewRows(f"scenario {name} has {n} rows, need {min_rows}")
        X = traces.X[mask].astype(np.float64)
        feats = {}
        for j, fname in enumerate(traces.feature_names):
            col = X[:, j]
            if np.any(col <= 0):
                feats[fname] = FeatureDist("gaussian", float(col.mean()), float(col.std()))
            else:
                logs = np.log(col)
                mu, s2 = logs.mean(), logs.var()
                mean = float(np.exp(mu + s2 / 2.0))
                feats[fname] = FeatureDist("lognormal", mean, float(mean * np.sqrt(np.expm1(s2))))
        pid = int(traces.pids[mask][0])
        profiles[name] = ScenarioProfile(name, _majority_label(traces.y[mask]), feats, seed=i + 1, pid=pid)
    counts = {name: int((traces.scenarios == name).sum()) for name in names}
    return ProfileLibrary(profiles, counts, {})
