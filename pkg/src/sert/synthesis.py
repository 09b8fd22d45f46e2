"""Deterministic clean-cube generation for tests, demos, and training corpora.

Cubes are sums of a few random 2-D cosine waves whose amplitudes drift
smoothly across bands, rescaled into [0.05, 0.95]: spatially smooth, spectrally
correlated, and nowhere zero (so spectral-angle metrics stay defined).
"""

from __future__ import annotations

import numpy as np

from .degradation import derive_seed, generator
from .errors import ParameterError

_T_TEXTURE = 101


def texture_cube(height: int, width: int, bands: int, seed: int, waves: int = 6) -> np.ndarray:
    """An HxWxB clean cube in [0.05, 0.95], fully determined by the seed."""
    if height < 1 or width < 1 or bands < 1:
        raise ParameterError(f"extents must be positive, got {height}x{width}x{bands}")
    rng = generator(seed, _T_TEXTURE)
    ys = np.arange(height)[:, None] / max(height, 1)
    xs = np.arange(width)[None, :] / max(width, 1)
    cube = np.zeros((height, width, bands))
    band_axis = np.arange(bands) / max(bands, 1)
    for _ in range(waves):
        fy, fx = rng.uniform(0.5, 5.0, 2)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        amp = rng.uniform(0.3, 1.0)
        drift_freq = rng.uniform(0.25, 2.0)
        drift_phase = rng.uniform(0.0, 2.0 * np.pi)
        plane = np.cos(2.0 * np.pi * (fy * ys + fx * xs) + phase)
        per_band = amp * (1.0 + 0.5 * np.sin(2.0 * np.pi * drift_freq * band_axis + drift_phase))
        cube += plane[:, :, None] * per_band[None, None, :]
    lo, hi = cube.min(), cube.max()
    if hi - lo < 1e-12:
        return np.full((height, width, bands), 0.5)
    return 0.05 + 0.9 * (cube - lo) / (hi - lo)


def texture_patches(count: int, height: int, width: int, bands: int, seed: int) -> list[np.ndarray]:
    """A corpus of independent texture cubes; patch i depends only on (seed, i)."""
    return [texture_cube(height, width, bands, derive_seed(seed, _T_TEXTURE, i)) for i in range(count)]
