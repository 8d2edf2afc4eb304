import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from salguide.model import ModelConfig, init_model  # noqa: E402
from salguide.synthdata import SynthConfig, generate_dataset  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


TOY_CONFIG = ModelConfig(input_size=8, channels=(2, 2, 2), dropout_p=0.0)


@pytest.fixture
def toy_model():
    return init_model(TOY_CONFIG, np.random.default_rng(7))


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """A 60-image 32 px dataset, generated once per session."""
    out = tmp_path_factory.mktemp("data") / "small"
    cfg = SynthConfig(image_size=32, n_samples=60, lesion_sigma_min=1.0, lesion_sigma_max=2.0,
                      tag_size=4, seed=3)
    generate_dataset(cfg, out)
    return out, cfg


# one line per acceptance criterion, printed after the run
acceptance_results: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not acceptance_results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(acceptance_results):
        ok, detail = acceptance_results[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
