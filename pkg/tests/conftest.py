import gzip
import importlib.util
import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

REPO = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
CONFIG_DIR = os.path.join(REPO, "configs")

_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance():
    """Record one pass/fail line for an acceptance criterion.

    Lines are echoed in the terminal summary so they show up without ``-s``.
    """

    def record(name: str, passed: bool | None, detail: str) -> None:
        status = {True: "PASS", False: "FAIL", None: "SKIP"}[passed]
        line = f"[{status}] {name}: {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def _mlxtend_sample_path():
    spec = importlib.util.find_spec("mlxtend")
    if spec is None or spec.origin is None:
        return None
    path = os.path.join(os.path.dirname(spec.origin), "data", "data", "mnist_5k.csv.gz")
    return path if os.path.exists(path) else None


@pytest.fixture(scope="session")
def mnist_sample_dir(tmp_path_factory):
    """The 5,000-image MNIST sample bundled with mlxtend, as IDX files.

    Split per class into 400 training and 100 test images.  The CSV is read
    directly so mlxtend itself is never imported.
    """
    from batchot.data import write_idx_images, write_idx_labels

    path = _mlxtend_sample_path()
    if path is None:
        pytest.skip("MNIST sample unavailable: install the 'mnist-sample' extra (mlxtend)")
    with gzip.open(path, "rt") as fh:
        table = np.loadtxt(fh, delimiter=",", dtype=np.int64)
    images = table[:, :-1].astype(np.uint8).reshape(-1, 28, 28)
    labels = table[:, -1]
    rng = np.random.default_rng(0)
    test = np.zeros(labels.size, dtype=bool)
    for c in range(10):
        test[rng.permutation(np.flatnonzero(labels == c))[:100]] = True
    out = tmp_path_factory.mktemp("mnist_sample")
    write_idx_images(out / "train-images-idx3-ubyte", images[~test])
    write_idx_labels(out / "train-labels-idx1-ubyte", labels[~test])
    write_idx_images(out / "t10k-images-idx3-ubyte", images[test])
    write_idx_labels(out / "t10k-labels-idx1-ubyte", labels[test])
    return str(out)
