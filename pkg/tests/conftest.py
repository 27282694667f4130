import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def write_noise_images(directory, n, size=16, channels=3, seed=0):
    from deblur.data import write_image

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    r = np.random.default_rng(seed)
    for k in range(n):
        img = r.integers(0, 256, size=(size, size, channels), dtype=np.uint8)
        write_image(img, directory / f"im{k:02d}.ppm")
    return directory


def smooth_images(directory, n, size=64, seed=0):
    """Smooth random colour fields: blur-sensitive but cheap to generate."""
    from deblur.data import write_image

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    r = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / size
    for k in range(n):
        img = np.zeros((size, size, 3))
        for c in range(3):
            for _ in range(4):
                fx, fy = r.uniform(1, 8, size=2)
                ph = r.uniform(0, 2 * np.pi)
                img[:, :, c] += np.sin(2 * np.pi * (fx * xx + fy * yy) + ph)
        img = (img - img.min()) / (img.max() - img.min())
        write_image(np.rint(img * 255).astype(np.uint8), directory / f"im{k:03d}.ppm")
    return directory


@pytest.fixture
def tiny_dataset(tmp_path):
    """Six 48x48 smooth-image pairs: 4 train, 2 val."""
    from deblur.data import BlurSpec, build_synthetic_dataset

    clean = smooth_images(tmp_path / "clean", 6, size=48)
    return build_synthetic_dataset(clean, tmp_path / "ds", BlurSpec(1.5, 9), (4 / 6, 2 / 6, 0.0), seed=0)


# acceptance criteria report one line each; collected here and echoed in the summary
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
