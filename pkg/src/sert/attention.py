"""Rectangle self-attention over spectral halves with channel shuffle mixing.

The feature map is split into two channel halves; one half is attended over
tall [h, w] tiles, the other over the transposed [w, h] tiles, and the branch
outputs are interleaved channel-wise so information crosses branches. Tile
attention is multi-head scaled dot-product with a learnable relative position
bias table indexed Swin-style.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .errors import ConfigError, DimensionError, InternalError
from .numerics import Tensor


@dataclass(frozen=True)
class RectSpec:
    """Tile geometry for one network stage: long side ``h``, short side ``w``."""

    h: int
    w: int

    def __post_init__(self):
        if not (self.h >= self.w >= 1):
            raise ConfigError(f"rectangle must satisfy h >= w >= 1, got [{self.h}, {self.w}]")

    @property
    def lcm(self) -> int:
        return math.lcm(self.h, self.w)


def relative_index_map(tile_h: int, tile_w: int) -> np.ndarray:
    """(T, T) indices into a (2*tile_h-1)*(2*tile_w-1) relative-offset table.

    Every ordered token pair inside the tile maps to the table entry for its
    (dy, dx) offset; the map is precomputed once per geometry.
    """
    ys, xs = np.meshgrid(np.arange(tile_h), np.arange(tile_w), indexing="ij")
    coords = np.stack([ys.ravel(), xs.ravel()], axis=1)
    rel = coords[:, None, :] - coords[None, :, :]
    rel[..., 0] += tile_h - 1
    rel[..., 1] += tile_w - 1
    return (rel[..., 0] * (2 * tile_w - 1) + rel[..., 1]).astype(np.intp)


class AttentionWeights:
    """Learnable projections and position bias for one attention branch."""

    def __init__(self, w_q: Tensor, w_k: Tensor, w_v: Tensor, w_o: Tensor, pos_bias: Tensor,
                 heads: int, tile_h: int, tile_w: int):
        c = w_q.shape[0]
        for name, t in (("w_q", w_q), ("w_k", w_k), ("w_v", w_v), ("w_o", w_o)):
            if t.shape != (c, c):
                raise ConfigError(f"{name} must be {c}x{c}, got {t.shape}")
        if c % heads != 0:
            raise ConfigError(f"heads={heads} must divide branch channels {c}")
        table_size = (2 * tile_h - 1) * (2 * tile_w - 1)
        if pos_bias.shape != (heads, table_size):
            raise ConfigError(f"position bias must be {heads}x{table_size}, got {pos_bias.shape}")
        self.w_q, self.w_k, self.w_v, self.w_o = w_q, w_k, w_v, w_o
        self.pos_bias = pos_bias
        self.heads = heads
        self.tile_h = tile_h
        self.tile_w = tile_w
        self.head_dim = c // heads
        self.index_map = relative_index_map(tile_h, tile_w)


def split_spectral(z: Tensor) -> tuple[Tensor, Tensor]:
    """Split channels into contiguous halves [0, C/2) and [C/2, C)."""
    c = z.shape[-1]
    if c % 2 != 0:
        raise ConfigError(f"spectral split needs an even channel count, got {c}")
    half = c // 2
    return nm.slice_axis(z, -1, 0, half), nm.slice_axis(z, -1, half, c)


def partition_rect(z: Tensor, tile_h: int, tile_w: int) -> Tensor:
    """Cut an HxWxc map into (N, tile_h*tile_w, c) token groups, row-major tiles."""
    height, width, c = z.shape
    if height % tile_h != 0 or width % tile_w != 0:
        raise InternalError(
            f"map {height}x{width} not divisible by tile {tile_h}x{tile_w}; pad before partitioning"
        )
    g = nm.reshape(z, (height // tile_h, tile_h, width // tile_w, tile_w, c))
    g = nm.transpose(g, (0, 2, 1, 3, 4))
    n = (height // tile_h) * (width // tile_w)
    return nm.reshape(g, (n, tile_h * tile_w, c))


def merge_rect(tiles: Tensor, height: int, width: int, tile_h: int, tile_w: int) -> Tensor:
    """Exact inverse of :func:`partition_rect`."""
    n, t, c = tiles.shape
    if n != (height // tile_h) * (width // tile_w) or t != tile_h * tile_w:
        raise InternalError(
            f"tile stack {tiles.shape} does not cover a {height}x{width} map with {tile_h}x{tile_w} tiles"
        )
    g = nm.reshape(tiles, (height // tile_h, width // tile_w, tile_h, tile_w, c))
    g = nm.transpose(g, (0, 2, 1, 3, 4))
    return nm.reshape(g, (height, width, c))


def _to_heads(x: Tensor, heads: int, d: int) -> Tensor:
    n, t, _ = x.shape
    return nm.transpose(nm.reshape(x, (n, t, heads, d)), (0, 2, 1, 3))


def attention_probabilities(tiles: Tensor, weights: AttentionWeights) -> Tensor:
    """Softmax attention weights (N, heads, T, T); every row sums to one."""
    n, t, _ = tiles.shape
    if t != weights.tile_h * weights.tile_w:
        raise DimensionError(f"token count {t} does not match tile {weights.tile_h}x{weights.tile_w}")
    heads, d = weights.heads, weights.head_dim
    q = _to_heads(nm.matmul(tiles, weights.w_q), heads, d)
    k = _to_heads(nm.matmul(tiles, weights.w_k), heads, d)
    scores = nm.scale(nm.matmul(q, nm.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(d))
    bias = nm.position_bias(weights.pos_bias, weights.index_map)  # heads x T x T
    scores = nm.add(scores, nm.reshape(bias, (1, heads, t, t)))
    return nm.softmax(scores, axis=-1)


def rmsa(tiles: Tensor, weights: AttentionWeights) -> Tensor:
    """Multi-head self-attention over each tile independently (batched over N)."""
    n, t, c = tiles.shape
    heads, d = weights.heads, weights.head_dim
    attn = attention_probabilities(tiles, weights)
    v = _to_heads(nm.matmul(tiles, weights.w_v), heads, d)
    out = nm.matmul(attn, v)
    out = nm.transpose(out, (0, 2, 1, 3))
    out = nm.reshape(out, (n, t, c))
    return nm.matmul(out, weights.w_o)


def shuffle_spectral(zcat: Tensor) -> Tensor:
    """Interleave the two concatenated branch halves: (a0..ak, b0..bk) -> (a0, b0, a1, b1, ...)."""
    c = zcat.shape[-1]
    if c % 2 != 0:
        raise ConfigError(f"spectral shuffle needs an even channel count, got {c}")
    half = c // 2
    perm = np.empty(c, dtype=np.intp)
    perm[0::2] = np.arange(half)
    perm[1::2] = np.arange(half, c)
    return nm.take_channels(zcat, perm)


def inverse_shuffle_spectral(z: Tensor) -> Tensor:
    c = z.shape[-1]
    if c % 2 != 0:
        raise ConfigError(f"spectral shuffle needs an even channel count, got {c}")
    perm = np.concatenate([np.arange(0, c, 2), np.arange(1, c, 2)]).astype(np.intp)
    return nm.take_channels(z, perm)


def pad_to_multiple(z: Tensor, multiple_h: int, multiple_w: int) -> tuple[Tensor, int, int]:
    """Reflect-pad bottom/right so both extents divide; returns original extents."""
    height, width = z.shape[0], z.shape[1]
    pad_h = (-height) % multiple_h
    pad_w = (-width) % multiple_w
    if pad_h or pad_w:
        z = nm.pad_reflect2d(z, pad_h, pad_w)
    return z, height, width


def ra_forward(
    z: Tensor,
    spec: RectSpec,
    weights_h: AttentionWeights,
    weights_v: AttentionWeights,
    use_shuffle: bool = True,
) -> Tensor:
    """Full rectangle-attention pass: split, attend both orientations, merge, shuffle."""
    if z.shape[-1] % 2 != 0:
        raise ConfigError(f"rectangle attention needs an even channel count, got {z.shape[-1]}")
    padded, height, width = pad_to_multiple(z, spec.lcm, spec.lcm)
    ph, pw = padded.shape[0], padded.shape[1]

    z1, z2 = split_spectral(padded)
    out1 = merge_rect(rmsa(partition_rect(z1, spec.h, spec.w), weights_h), ph, pw, spec.h, spec.w)
    out2 = merge_rect(rmsa(partition_rect(z2, spec.w, spec.h), weights_v), ph, pw, spec.w, spec.h)
    merged = nm.concat([out1, out2], axis=-1)
    if use_shuffle:
        merged = shuffle_spectral(merged)
    if (ph, pw) != (height, width):
        merged = nm.crop2d(merged, height, width)
    return merged
