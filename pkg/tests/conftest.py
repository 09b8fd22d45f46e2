from pathlib import Path

import numpy as np
import pytest

GOLDEN_DIR = Path(__file__).parent / "golden"


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def golden():
    """Bitwise regression against a recorded array; records on first run."""

    def check(name: str, array: np.ndarray) -> None:
        GOLDEN_DIR.mkdir(exist_ok=True)
        path = GOLDEN_DIR / f"{name}.npy"
        if path.exists():
            np.testing.assert_array_equal(array, np.load(path))
        else:
            np.save(path, array)

    return check
