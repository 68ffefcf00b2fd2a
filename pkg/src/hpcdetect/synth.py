"""Seeded synthetic counter traces drawn from per-scenario distributions."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dataset import Dataset
from .errors import InvalidProfile
from .events import ClassLabel, catalog_id

FAMILIES = ("lognormal", "gaussian")


@dataclass(frozen=True)
class FeatureDist:
    """Value-space distribution of one counter.

    ``location`` and ``scale`` are the mean and standard deviation of the
    untruncated distribution. ``gaussian`` is clipped at zero (mass below
    zero lands on zero), so a zero location yields a median of zero.
    """

    family: str
    location: float
    scale: float

    def validate(self, name):
        if self.family not in FAMILIES:
            raise InvalidProfile(f"{name}: unknown family {self.family!r}")
        if not (math.isfinite(self.location) and math.isfinite(self.scale)):
            raise InvalidProfile(f"{name}: non-finite parameter")
        if self.scale < 0:
            raise InvalidProfile(f"{name}: negative scale {self.scale}")
        if self.family == "lognormal" and self.location <= 0:
            raise InvalidProfile(f"{name}: lognormal location must be positive")

    def draw(self, z):
        """Map standard normal draws ``z`` to rounded non-negative counts."""
        if self.scale == 0:
            vals = np.full(z.shape, float(self.location))
        elif self.family == "lognormal":
            s2 = math.log1p((self.scale / self.location) ** 2)
            mu = math.log(self.location) - s2 / 2.0
            vals = np.exp(mu + math.sqrt(s2) * z)
        else:
            vals = self.location + self.scale * z
        return np.rint(np.maximum(vals, 0.0)).astype(np.int64)


@dataclass
class ScenarioProfile:
    name: str
    label: ClassLabel
    features: dict = field(default_factory=dict)  # event name -> FeatureDist
    seed: int = 0
    pid: int = 0

    def __post_init__(self):
        self.label = ClassLabel(self.label)
        self.features = {
            k: v if isinstance(v, FeatureDist) else FeatureDist(*v) for k, v in self.features.items()
        }
        if not self.features:
            raise InvalidProfile(f"{self.name}: profile emits no features")
        for k, v in self.features.items():
            v.validate(f"{self.name}.{k}")

    @property
    def feature_names(self):
        return sorted(self.features, key=catalog_id)

    def to_dict(self):
        return {
            "name": self.name,
            "label": int(self.label),
            "seed": self.seed,
            "pid": self.pid,
            "features": {k: [v.family, v.location, v.scale] for k, v in
                         sorted(self.features.items(), key=lambda kv: catalog_id(kv[0]))},
        }

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(d["name"], d["label"], {k: FeatureDist(*v) for k, v in d["features"].items()},
                       int(d.get("seed", 0)), int(d.get("pid", 0)))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, InvalidProfile):
                raise
            raise InvalidProfile(f"bad profile entry: {exc}") from None


def generate(profile, n, seed=None, start_ms=0):
    """``n`` labeled i.i.d. samples, one per millisecond, from ``profile``.

    ``seed`` (int or ``numpy.random.SeedSequence``) defaults to ``profile.seed``.
    Features appear in catalog order.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = np.random.default_rng(profile.seed if seed is None else seed)
    names = profile.feature_names
    cols = [profile.features[name].draw(rng.standard_normal(n)) for name in names]
    X = np.column_stack(cols)
    return Dataset(
        names, X,
        y=np.full(n, int(profile.label)),
        timestamps=np.arange(start_ms, start_ms + n),
        pids=np.full(n, profile.pid),
        scenarios=np.full(n, profile.name, dtype=object),
    )
