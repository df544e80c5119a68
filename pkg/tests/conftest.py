import numpy as np
import pytest

from ivusnet import set_debug_checks, synth_phantoms
from ivusnet.data import load_frame


@pytest.fixture(autouse=True)
def _debug_guards():
    # every test runs with NaN/Inf guards on the forward ops
    set_debug_checks(True)
    yield
    set_debug_checks(False)


@pytest.fixture(scope="session")
def phantom_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("phantoms")
    synth_phantoms(seed=1234, count=8, size=48, out_dir=out)
    return out


@pytest.fixture(scope="session")
def phantom_frames(phantom_dir):
    from ivusnet.data import load_manifest
    records = load_manifest(phantom_dir / "manifest.tsv")
    return [load_frame(r) for r in records]


@pytest.fixture
def rng():
    return np.random.default_rng(0)
