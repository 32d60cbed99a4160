import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from stackvad.features import LabeledDataset, extract_dataset, read_manifest  # noqa: E402
from stackvad.synth import SynthSpec, generate_corpus  # noqa: E402


def gaussian_blobs(n_per_class, dim=13, sep=2.0, seed=0, spread=1.0):
    """Two isotropic Gaussian classes whose means differ by ``sep`` along every axis / sqrt(dim)."""
    rng = np.random.default_rng(seed)
    shift = sep / np.sqrt(dim)
    pos = rng.normal(shift / 2, spread, size=(n_per_class, dim))
    neg = rng.normal(-shift / 2, spread, size=(n_per_class, dim))
    X = np.vstack([pos, neg])
    y = np.r_[np.ones(n_per_class), -np.ones(n_per_class)]
    perm = rng.permutation(2 * n_per_class)
    return LabeledDataset(X[perm], y[perm])


@pytest.fixture
def blobs():
    return gaussian_blobs


@pytest.fixture(scope="session")
def synthetic_corpus(tmp_path_factory):
    """Seeded train/test corpora (>= 3000 frames per class each) as feature datasets."""
    root = tmp_path_factory.mktemp("corpus")
    train_m = generate_corpus(root / "train", SynthSpec(16, 16, 2.0, seed=1))
    test_m = generate_corpus(root / "test", SynthSpec(16, 16, 2.0, seed=2))
    train, gate = extract_dataset(read_manifest(train_m))
    test, _ = extract_dataset(read_manifest(test_m), gate=gate, drop_silent=True)
    return train, test, gate


def pytest_terminal_summary(terminalreporter):
    import acceptance_log
    if acceptance_log.LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(acceptance_log.LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
