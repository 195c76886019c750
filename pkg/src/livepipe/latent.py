"""Latent-video value types, the flow-matching step, and the toy frame codec.

The generative model is flow matching on straight paths: a noisy state at
interpolation level s is ``(1-s)*clean + s*noise``, the regression target is
the constant velocity ``noise - clean``, and sampling is plain Euler
integration with a fixed negative step. The codec is a seeded linear
stand-in for a video VAE whose encode map is the pseudo-inverse of the first
decode sub-map, so re-encoding a decoded frame recovers its latent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import F32, Prng, matmul

# Prng stream namespaces (must not collide with per-block noise streams,
# which use the raw block index).
_CODEC_STREAM = 1 << 40
_AUDIO_STREAM = 1 << 41
_PROMPT_STREAM = 1 << 42
_REFERENCE_STREAM = 1 << 43


@dataclass(frozen=True)
class LatentBlock:
    """A block of F consecutive latent frames; the unit of denoising, caching
    and pipeline messaging."""

    values: np.ndarray  # (F, D) float32
    block_index: int

    def __post_init__(self):
        v = np.asarray(self.values, dtype=F32)
        if v.ndim != 2:
            raise ValueError(f"block values must be (F, D), got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("block has non-finite entries")
        if self.block_index < 0:
            raise ValueError("block_index must be non-negative")
        object.__setattr__(self, "values", v)

    @property
    def frames(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class TimestepSchedule:
    """Interpolation levels s_{t_T} .. s_{t_1}, descending, with s = 1 at the
    start and a constant Euler step dt = -1/T."""

    levels: tuple
    dt: float

    def __post_init__(self):
        if len(self.levels) < 1:
            raise ValueError("schedule needs at least one level")
        if self.levels[0] != 1.0:
            raise ValueError("schedule must start at level 1")
        if any(b >= a for a, b in zip(self.levels, self.levels[1:])):
            raise ValueError("levels must be strictly decreasing")
        if any(not (0.0 < s <= 1.0) for s in self.levels):
            raise ValueError("levels must lie in (0, 1]")

    @classmethod
    def uniform(cls, steps: int) -> "TimestepSchedule":
        """Uniform grid s_j = j/T for j = T..1, dt = -1/T."""
        if steps < 1:
            raise ValueError("steps must be >= 1")
        levels = tuple(j / steps for j in range(steps, 0, -1))
        return cls(levels=levels, dt=-1.0 / steps)

    @property
    def steps(self) -> int:
        return len(self.levels)

    def level(self, t_index: int) -> float:
        """Interpolation level for step index t_index (T..1, descending)."""
        if not 1 <= t_index <= self.steps:
            raise ValueError(f"t_index {t_index} outside [1, {self.steps}]")
        return self.levels[self.steps - t_index]


@dataclass(frozen=True)
class Conditions:
    """Per-run conditioning: one audio vector per block, a shared prompt
    vector, and the reference latent that seeds the sink slot."""

    audio: np.ndarray  # (M, audio_dim) float32
    prompt: np.ndarray  # (prompt_dim,) float32
    reference: np.ndarray  # (D,) float32 latent frame

    def audio_for(self, block_index: int) -> np.ndarray:
        return self.audio[block_index]


def synthetic_conditions(
    seed: int, blocks: int, audio_dim: int, prompt_dim: int, latent_dim: int
) -> Conditions:
    """Seeded stand-in conditioning (no real audio/text encoders here).

    Streams are addressed per block so any engine reproduces the same inputs
    without coordination.
    """
    audio = np.stack(
        [Prng(seed, _AUDIO_STREAM + i).gaussian(audio_dim) for i in range(blocks)]
    )
    prompt = Prng(seed, _PROMPT_STREAM).gaussian(prompt_dim)
    reference = Prng(seed, _REFERENCE_STREAM).gaussian(latent_dim)
    return Conditions(audio=audio, prompt=prompt, reference=reference)


def interpolate(x0: np.ndarray, x_noise: np.ndarray, s: float) -> np.ndarray:
    """Noisy state at level s: (1-s)*x0 + s*x_noise, elementwise."""
    if not 0.0 <= s <= 1.0:
        raise ValueError(f"s must be in [0, 1], got {s}")
    x0 = np.asarray(x0, dtype=F32)
    x_noise = np.asarray(x_noise, dtype=F32)
    if x0.shape != x_noise.shape:
        raise ValueError(f"shape mismatch: {x0.shape} vs {x_noise.shape}")
    return (F32(1.0) - F32(s)) * x0 + F32(s) * x_noise


def true_velocity(x0: np.ndarray, x_noise: np.ndarray) -> np.ndarray:
    """Straight-path target velocity: x_noise - x0."""
    x0 = np.asarray(x0, dtype=F32)
    x_noise = np.asarray(x_noise, dtype=F32)
    if x0.shape != x_noise.shape:
        raise ValueError(f"shape mismatch: {x0.shape} vs {x_noise.shape}")
    return x_noise - x0


def flow_step(block: LatentBlock, velocity: np.ndarray, dt: float) -> LatentBlock:
    """One Euler step x <- x + v*dt; keeps the block index."""
    velocity = np.asarray(velocity, dtype=F32)
    if velocity.shape != block.values.shape:
        raise ValueError(
            f"velocity shape {velocity.shape} != block shape {block.values.shape}"
        )
    return LatentBlock(block.values + velocity * F32(dt), block.block_index)


class ToyVideoCodec:
    """Seeded linear encoder/decoder pair standing in for the video VAE.

    Decoding a block of F latent frames yields F*r pixel frames (r is the
    temporal upsampling factor). The encoder is the float64 pseudo-inverse of
    the first decode sub-map, so ``encode(decode(block)[0])`` reproduces the
    block's first latent frame to float32 accuracy -- the property the
    sink-frame swap relies on.
    """

    def __init__(self, seed: int, latent_dim: int, pixel_dim: int, upsample: int):
        if pixel_dim < latent_dim:
            raise ValueError("pixel_dim must be >= latent_dim for a left inverse")
        if upsample < 1:
            raise ValueError("upsample must be >= 1")
        self.latent_dim = latent_dim
        self.pixel_dim = pixel_dim
        self.upsample = upsample
        prng = Prng(seed, _CODEC_STREAM)
        scale = F32(1.0 / np.sqrt(latent_dim))
        self._decode_maps = [
            prng.normal((pixel_dim, latent_dim)) * scale for _ in range(upsample)
        ]
        pinv = np.linalg.pinv(self._decode_maps[0].astype(np.float64))
        self._encode_map = pinv.astype(F32)

    def encode(self, frame: np.ndarray) -> np.ndarray:
        """Pixel frame (P,) -> latent frame (D,)."""
        frame = np.asarray(frame, dtype=F32)
        if frame.shape != (self.pixel_dim,):
            raise ValueError(f"expected pixel frame ({self.pixel_dim},), got {frame.shape}")
        return matmul(self._encode_map, frame[:, None])[:, 0]

    def decode_frame(self, latent: np.ndarray) -> np.ndarray:
        """Latent frame (D,) -> (r, P) pixel frames."""
        latent = np.asarray(latent, dtype=F32)
        if latent.shape != (self.latent_dim,):
            raise ValueError(f"expected latent ({self.latent_dim},), got {latent.shape}")
        col = latent[:, None]
        return np.stack([matmul(m, col)[:, 0] for m in self._decode_maps])

    def decode(self, block: LatentBlock) -> np.ndarray:
        """Latent block -> (F*r, P) pixel frames in temporal order."""
        return np.concatenate([self.decode_frame(f) for f in block.values])
