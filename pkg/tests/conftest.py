import numpy as np
import pytest

from tumormap import synth
from tumormap.features import compute_histograms, fit_dictionaries, project_all
from tumormap.learn import Dataset, train
from tumormap.texture import LbpConfig

SMALL_TILE = 128


@pytest.fixture(scope="session")
def small_model():
    """Dictionaries and a k-NN trained on 24 small synthetic patches."""
    specs = synth.dataset_specs(24, 0)
    patches = [synth.make_patch(0, s.kind, s.index, SMALL_TILE)[0] for s in specs]
    cfg = LbpConfig()
    hists = compute_histograms(lambda i: patches[i], len(patches), ("H", "V"), cfg)
    dicts = fit_dictionaries(hists, ("H", "V"), cfg, 0.9)
    X, layout = project_all(hists, dicts)
    model = train(Dataset(X, [s.kind for s in specs], [s.patch_id for s in specs], layout), "KNN", k=5)
    return dicts, model


@pytest.fixture(scope="session")
def small_slide():
    return synth.make_slide(5, tile=SMALL_TILE)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
