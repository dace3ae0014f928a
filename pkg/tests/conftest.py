import numpy as np
import pytest

from spme_soh.dataset import build_dataset, load_dataset
from spme_soh.normalization import default_spec
from spme_soh.ocp import default_ocps
from spme_soh.parameters import reference_cell
from spme_soh.surrogate import SurrogateEnsemble, TrainSettings, train_surrogate

TINY_K = 32


@pytest.fixture(scope="session")
def cell():
    return reference_cell()


@pytest.fixture(scope="session")
def ocps():
    return default_ocps()


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory, cell):
    out = tmp_path_factory.mktemp("tiny")
    build_dataset(16, out, cell, seed=1, k=TINY_K)
    return out, load_dataset(out)


@pytest.fixture(scope="session")
def tiny_ensemble(tiny_dataset, cell, tmp_path_factory):
    """A briefly trained surrogate saved to disk: (ensemble, directory)."""
    _, ds = tiny_dataset
    n = len(ds)
    train, val = ds.subset(np.arange(n - 3)), ds.subset(np.arange(n - 3, n))
    ens, _ = train_surrogate(train, val, cell, default_spec(cell), TrainSettings(epochs=3, batch=128, seed=5))
    d = tmp_path_factory.mktemp("sur")
    ens.save(d)
    return SurrogateEnsemble.load(d).freeze(), d


def pytest_terminal_summary(terminalreporter):
    import test_acceptance
    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(test_acceptance.RESULTS):
            terminalreporter.write_line(test_acceptance.RESULTS[n])
