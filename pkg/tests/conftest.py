import numpy as np
import pytest

from hpcdetect.dataset import Dataset
from hpcdetect.profiles import default_library, scenario_trace


@pytest.fixture(scope="session")
def library():
    return default_library()


@pytest.fixture(scope="session")
def small_corpus(library):
    """A few hundred rows of every training scenario (fast stand-in for the full corpus)."""
    parts = [scenario_trace(name, 300, seed=11, library=library) for name in library.corpus_spec]
    return Dataset.concat(parts)


def blobs(n=200, d=2, sep=8.0, seed=0, k=2):
    rng = np.random.default_rng(seed)
    centers = rng.normal(size=(k, d)) * sep
    y = np.repeat(np.arange(k), n // k)
    X = centers[y] + rng.normal(size=(len(y), d))
    return X, y


def make_dataset(X, y, names=None):
    X = np.asarray(X, dtype=np.float64)
    names = names or ["CACHE_REFERENCES", "CACHE_MISSES", "CPU_CYCLES", "INSTRUCTIONS",
                      "BUS_CYCLES", "REF_CPU_CYCLES", "BRANCH_MISSES", "BRANCH_INSTRUCTIONS"][: X.shape[1]]
    return Dataset(names, X, np.asarray(y))
