import numpy as np
import pytest
from scipy.io import wavfile

from melstream import config as C
from melstream import random_init

_CRITERIA = {}


def small_config(frontend="mel", variant="separate-fcb-tsb", **bb):
    """Narrow model that keeps every structural feature of the default one."""
    backbone = dict(hidden=(8, 12, 12, 8), dims=(8, 8, 8, 8), n1=2, n2=1, context=2)
    backbone.update(bb)
    return C.PipelineConfig(
        frontend=frontend,
        n_mels=24,
        s2m=C.Stft2MelConfig(dim=8, blocks=2, variant=variant),
        backbone=C.BackboneConfig(**backbone),
    )


@pytest.fixture
def small_cfg():
    return small_config()


@pytest.fixture
def small_weights(small_cfg):
    return random_init(small_cfg, seed=3)


@pytest.fixture
def noise():
    def make(seconds, channels=6, seed=0, scale=0.1):
        rng = np.random.default_rng(seed)
        return (scale * rng.standard_normal((int(seconds * 16000), channels))).astype(np.float32)

    return make


@pytest.fixture
def write_wav(tmp_path):
    def write(name, data, rate=16000):
        path = tmp_path / name
        wavfile.write(path, rate, data)
        return path

    return write


# --------------------------------------------------------------------------
# one PASS / FAIL line per acceptance criterion


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or report.when != "call":
        return
    number, title = mark.args
    detail = dict(item.user_properties).get("detail", "")
    status = "PASS" if report.passed else "FAIL"
    _CRITERIA[number] = f"[{status}] criterion {number:>2}: {title}" + (f" -- {detail}" if detail else "")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        terminalreporter.write_line(_CRITERIA[number])
