import numpy as np
import pytest

from semcodec.codec import Frame, Sequence
from semcodec.dataset import PhantomConfig, gen_phantom


def textured(rng, h=128, w=128):
    """Smooth gradient plus noise; exercises both flat and busy blocks."""
    y, x = np.mgrid[0:h, 0:w]
    base = 128 + 60 * np.sin(x / 9.0) * np.cos(y / 13.0)
    return Frame(np.clip(base + rng.normal(0, 20, (h, w)), 0, 255).round().astype(np.uint8))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_phantoms():
    """Four tiny domain-B sequences (128x128, 3 frames)."""
    return [
        gen_phantom(PhantomConfig(seed=s, domain="B", width=128, height=128, n_frames=3))[0] for s in range(4)
    ]


@pytest.fixture(scope="session")
def phantom_b():
    seq, gt = gen_phantom(PhantomConfig(seed=3, domain="B", width=256, height=256, n_frames=3))
    return seq, gt


def random_sequence(rng, n=3, h=128, w=128, name="rnd"):
    frames = np.stack([textured(rng, h, w).samples for _ in range(n)])
    return Sequence(frames, name=name)


# criterion number -> (passed, detail); filled by test_acceptance and echoed at the end of the run
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'} ({detail})")
