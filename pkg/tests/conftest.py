import numpy as np
import pytest

from fusedfaces.fusion import FusionWeights, fuse_dataset
from fusedfaces.imageio import generate_synthetic_dataset

_acceptance = []


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): acceptance criterion")


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    marker = report.user_properties and dict(report.user_properties).get("acceptance")
    if marker:
        _acceptance.append((marker[0], marker[1], report.outcome))


@pytest.hookimpl(tryfirst=True)
def pytest_runtest_setup(item):
    m = item.get_closest_marker("acceptance")
    if m is not None:
        item.user_properties.append(("acceptance", m.args))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, outcome in sorted(_acceptance):
        status = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"criterion {number}: {status}  {title}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def synthetic_pairs(tmp_path_factory):
    """10 classes x 20 paired 16x16 images, noise 0.05."""
    root = tmp_path_factory.mktemp("synth")
    return generate_synthetic_dataset(10, 20, 16, 16, 0.05, seed=7, output_dir=root)


@pytest.fixture(scope="session")
def synthetic_fused(synthetic_pairs, tmp_path_factory):
    out = tmp_path_factory.mktemp("fused")
    return fuse_dataset(synthetic_pairs, FusionWeights(), out)


def pgm_bytes(width, height, maxval, samples, magic=b"P5"):
    header = magic + f"\n{width} {height}\n{maxval}\n".encode()
    if maxval < 256:
        payload = bytes(samples)
    else:
        payload = b"".join(int(s).to_bytes(2, "big") for s in samples)
    return header + payload
