"""Spectral enhancement: cube squeeze, low-rank lookup, channel-wise gating.

Each PxPxC cube patch is pooled to a spectral vector, projected to rank K,
refined by a softmax lookup against a learnable memory bank of low-rank
spectral vectors, and expanded back to a per-channel gate that rescales the
patch. Alternating blocks shift the patch grid cyclically by half a patch so
neighbouring patches interact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .errors import ConfigError, DimensionError
from .numerics import Tensor


class SEWeights:
    """Rank projection, gate expansion, and optional memory bank."""

    def __init__(self, w_down: Tensor, w_gate: Tensor, memory: Tensor | None,
                 gate: str = "linear"):
        c, k = w_down.shape
        if not k < c:
            raise ConfigError(f"rank {k} must be strictly smaller than channels {c}")
        if w_gate.shape != (c, k):
            raise ConfigError(f"gate matrix must be {c}x{k}, got {w_gate.shape}")
        if memory is not None and memory.shape[0] != k:
            raise ConfigError(f"memory bank rows {memory.shape[0]} must equal rank {k}")
        if gate not in ("linear", "sigmoid"):
            raise ConfigError(f"unknown gate kind '{gate}'")
        self.w_down = w_down
        self.w_gate = w_gate
        self.memory = memory
        self.gate = gate


@dataclass(frozen=True)
class CubeGrid:
    """Bookkeeping for one partition: grid extents and the shift applied."""

    rows: int
    cols: int
    patch_h: int
    patch_w: int
    shift_h: int
    shift_w: int


def partition_cubes(z: Tensor, patch_h: int, patch_w: int, shifted: bool = False) -> tuple[Tensor, CubeGrid]:
    """Cut an HxWxC map into (N, ph, pw, C) patches, cyclically shifted when asked.

    The shift rolls the map by -floor(p/2) on each axis before cutting, so the
    shifted grid straddles the unshifted patch borders.
    """
    height, width, c = z.shape
    if patch_h > height or patch_w > width:
        raise ConfigError(f"patch {patch_h}x{patch_w} exceeds map extent {height}x{width}")
    if height % patch_h != 0 or width % patch_w != 0:
        raise ConfigError(f"map {height}x{width} not divisible by patch {patch_h}x{patch_w}; pad first")
    sh = patch_h // 2 if shifted else 0
    sw = patch_w // 2 if shifted else 0
    if shifted:
        z = nm.roll2d(z, -sh, -sw)
    rows, cols = height // patch_h, width // patch_w
    g = nm.reshape(z, (rows, patch_h, cols, patch_w, c))
    g = nm.transpose(g, (0, 2, 1, 3, 4))
    patches = nm.reshape(g, (rows * cols, patch_h, patch_w, c))
    return patches, CubeGrid(rows, cols, patch_h, patch_w, sh, sw)


def merge_cubes(patches: Tensor, grid: CubeGrid) -> Tensor:
    """Reassemble patches and undo the cyclic shift; exact inverse of partitioning."""
    n, ph, pw, c = patches.shape
    if (n, ph, pw) != (grid.rows * grid.cols, grid.patch_h, grid.patch_w):
        raise DimensionError(f"patch stack {patches.shape} does not match grid {grid}")
    g = nm.reshape(patches, (grid.rows, grid.cols, ph, pw, c))
    g = nm.transpose(g, (0, 2, 1, 3, 4))
    z = nm.reshape(g, (grid.rows * ph, grid.cols * pw, c))
    if grid.shift_h or grid.shift_w:
        z = nm.roll2d(z, grid.shift_h, grid.shift_w)
    return z


def squeeze(patches: Tensor) -> Tensor:
    """Spatial average pool of each patch: (N, ph, pw, C) -> (N, C)."""
    if patches.shape[1] < 1 or patches.shape[2] < 1:
        raise DimensionError(f"empty patch extent in {patches.shape}")
    return nm.reduce_mean(patches, axis=(1, 2))


def project_rank(zc: Tensor, w_down: Tensor) -> Tensor:
    """Project pooled spectra into the rank-K subspace: (N, C) @ (C, K)."""
    if zc.shape[-1] != w_down.shape[0]:
        raise DimensionError(f"projection shapes disagree: {zc.shape} @ {w_down.shape}")
    return nm.matmul(zc, w_down)


def memory_read(zk: Tensor, memory: Tensor) -> tuple[Tensor, Tensor]:
    """Softmax lookup of each rank vector against the bank columns.

    Returns the coefficients (N, E), each row summing to 1, and the retrieved
    vectors (N, K) as convex combinations of the bank columns.
    """
    if zk.shape[-1] != memory.shape[0]:
        raise DimensionError(f"rank vectors {zk.shape} do not match bank {memory.shape}")
    coeff = nm.softmax(nm.matmul(zk, memory), axis=-1)
    zl = nm.matmul(coeff, nm.transpose(memory, (1, 0)))
    return coeff, zl


def rescale(patches: Tensor, zl: Tensor, w_gate: Tensor, gate: str = "linear") -> Tensor:
    """Gate every patch channel-wise by the expanded low-rank vector.

    The gate g = zl @ w_gate^T is constant across the patch's spatial
    positions; ``sigmoid`` squashes it to (0, 1) when configured.
    """
    n = patches.shape[0]
    if zl.shape[0] != n:
        raise DimensionError(f"{n} patches but {zl.shape[0]} gate vectors")
    g = nm.matmul(zl, nm.transpose(w_gate, (1, 0)))  # (N, C)
    if gate == "sigmoid":
        g = nm.sigmoid(g)
    g = nm.reshape(g, (n, 1, 1, patches.shape[-1]))
    return nm.mul(patches, g)


def se_forward(
    z: Tensor,
    patch_h: int,
    patch_w: int,
    weights: SEWeights,
    shifted: bool = False,
    use_memory: bool = True,
    collector: list | None = None,
) -> Tensor:
    """Squeeze -> project -> (memory lookup) -> rescale, patch by patch.

    Maps whose extents do not divide the patch are reflect-padded and cropped
    back, so the output always matches the input shape. With the memory
    disabled the projected vector gates directly. When ``collector`` is given,
    (grid, zl-array) pairs are appended for diagnostics.
    """
    from .attention import pad_to_multiple  # local import breaks a module cycle

    padded, height, width = pad_to_multiple(z, patch_h, patch_w)
    patches, grid = partition_cubes(padded, patch_h, patch_w, shifted=shifted)
    zc = squeeze(patches)
    zk = project_rank(zc, weights.w_down)
    if use_memory:
        if weights.memory is None:
            raise ConfigError("memory lookup requested but no bank attached")
        _, zl = memory_read(zk, weights.memory)
    else:
        zl = zk
    if collector is not None:
        collector.append((grid, zl.data.copy()))
    gated = rescale(patches, zl, weights.w_gate, gate=weights.gate)
    merged = merge_cubes(gated, grid)
    if (merged.shape[0], merged.shape[1]) != (height, width):
        merged = nm.crop2d(merged, height, width)
    return merged
