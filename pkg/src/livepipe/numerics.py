"""Deterministic float32 kernels shared by every engine.

Everything downstream (attention, Euler steps, the toy VAE) is built from the
four primitives here, and the flagship guarantee of the project -- pipelined
and sequential rollouts agree *bitwise* -- rests on two properties:

  * every kernel is a pure function: same inputs give bit-identical outputs
    regardless of which worker thread runs them, and
  * summation order is pinned, so no BLAS/thread-count variation can change
    the last ulp.

Vectors and matrices are plain ``np.float32`` ndarrays (1-D / 2-D row-major);
there is deliberately no wrapper class. ``as_vec`` / ``as_mat`` coerce and
validate at module boundaries.
"""

from __future__ import annotations

import numpy as np

F32 = np.float32


def as_vec(data, dim: int | None = None) -> np.ndarray:
    """Coerce to a finite 1-D float32 vector, optionally checking its length."""
    v = np.asarray(data, dtype=F32)
    if v.ndim != 1:
        raise ValueError(f"expected 1-D vector, got shape {v.shape}")
    if dim is not None and v.shape[0] != dim:
        raise ValueError(f"expected dim {dim}, got {v.shape[0]}")
    if not np.all(np.isfinite(v)):
        raise ValueError("vector has non-finite entries")
    return v


def as_mat(data, rows: int | None = None, cols: int | None = None) -> np.ndarray:
    """Coerce to a finite 2-D float32 matrix, optionally checking its shape."""
    m = np.asarray(data, dtype=F32)
    if m.ndim != 2:
        raise ValueError(f"expected 2-D matrix, got shape {m.shape}")
    if rows is not None and m.shape[0] != rows:
        raise ValueError(f"expected {rows} rows, got {m.shape[0]}")
    if cols is not None and m.shape[1] != cols:
        raise ValueError(f"expected {cols} cols, got {m.shape[1]}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix has non-finite entries")
    return m


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Float32 matrix product with a pinned summation order.

    Accumulates rank-1 updates over the inner index in ascending order, so the
    result is bit-identical to a scalar triple loop and, unlike BLAS ``@``,
    cannot change with thread count or blocking strategy.
    """
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"inner dims differ: {a.shape} x {b.shape}")
    out = np.zeros((a.shape[0], b.shape[1]), dtype=F32)
    for k in range(a.shape[1]):
        out += a[:, k : k + 1] * b[k : k + 1, :]
    return out


def softmax(v: np.ndarray) -> np.ndarray:
    """Numerically stable softmax over the last axis (max subtracted first).

    Accepts a vector or a matrix of row logits. ``-inf`` logits are allowed
    and come out as exact zeros, which is how attention masks are applied.
    """
    v = np.asarray(v, dtype=F32)
    if v.size == 0:
        raise ValueError("softmax of empty input")
    m = np.max(v, axis=-1, keepdims=True)
    e = np.exp(v - m)
    return e / np.sum(e, axis=-1, keepdims=True, dtype=F32)


def rope_frequencies(dim: int, base: float) -> np.ndarray:
    """Per-plane rotation frequencies base**(-2k/dim), k = 0..dim/2-1 (float64)."""
    if dim % 2 != 0:
        raise ValueError(f"RoPE needs an even dim, got {dim}")
    k = np.arange(dim // 2, dtype=np.float64)
    return base ** (-2.0 * k / dim)


def rope_rotate(v: np.ndarray, pos: int, base: float = 10000.0) -> np.ndarray:
    """Rotate consecutive pairs of ``v`` by angle pos * base**(-2k/dim).

    A rotation is an isometry, and dot products of jointly rotated
    query/key pairs depend only on the position *difference* -- the fact the
    sink-frame position shift leans on. Angles are computed in float64
    (positions reach ~4e4 in long rollouts, where float32 phase error would
    swamp the rotation), then the rotation itself is applied in float32.
    """
    v = np.asarray(v, dtype=F32)
    if v.ndim != 1:
        raise ValueError("rope_rotate expects a 1-D vector")
    return rope_rotate_rows(v[None, :], pos, base)[0]


def rope_rotate_rows(rows: np.ndarray, pos: int, base: float = 10000.0) -> np.ndarray:
    """Apply the same positional rotation to every row of an (n, dim) array."""
    rows = np.asarray(rows, dtype=F32)
    ang = pos * rope_frequencies(rows.shape[-1], base)
    cos = np.cos(ang).astype(F32)
    sin = np.sin(ang).astype(F32)
    x = rows[..., 0::2]
    y = rows[..., 1::2]
    out = np.empty_like(rows)
    out[..., 0::2] = x * cos - y * sin
    out[..., 1::2] = x * sin + y * cos
    return out


class Prng:
    """Counter-based random source: Philox keyed by (seed, stream).

    Any (seed, stream) pair addresses an independent, platform-stable sample
    sequence, so e.g. the noise for block i can be drawn as
    ``Prng(seed, stream=i)`` by whichever worker needs it, in any order, and
    still match a single-threaded rollout exactly.
    """

    def __init__(self, seed: int, stream: int = 0):
        if seed < 0 or stream < 0:
            raise ValueError("seed and stream must be non-negative")
        self.seed = seed
        self.stream = stream
        key = np.array([seed, stream], dtype=np.uint64)
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def gaussian(self, dim: int) -> np.ndarray:
        """Next ``dim`` standard-normal float32 samples from this stream."""
        if dim < 1:
            raise ValueError("dim must be >= 1")
        return self._gen.standard_normal(dim, dtype=F32)

    def normal(self, shape) -> np.ndarray:
        """Standard-normal float32 array of the given shape."""
        return self._gen.standard_normal(shape, dtype=F32)


def gaussian(prng: Prng, dim: int) -> np.ndarray:
    """Draw a dim-length standard-normal vector from ``prng``."""
    return prng.gaussian(dim)
