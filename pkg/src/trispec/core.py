"""Distribution-level primitives shared by every decoding component.

Everything downstream (drafting, verification, routing, metrics) works on
plain categorical distributions over a fixed token vocabulary. This module
pins down the numeric conventions once:

* distributions are float64 vectors, non-negative, summing to 1 within 1e-9;
* temperature acts on probabilities directly, ``p ** (1/T)`` renormalized,
  with T=0 meaning exact argmax (lowest index wins ties);
* sampling is inverse-CDF over ascending token index and consumes exactly
  one uniform draw;
* randomness comes from named streams addressed by (seed, label), so
  independent roles (draft sampling, acceptance coins, corrections) never
  share a generator.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "AllZeroError",
    "Context",
    "Distribution",
    "RandomStream",
    "Vocabulary",
    "apply_temperature",
    "normalize",
    "sample",
    "top2_margin",
]

SUM_TOL = 1e-9


class AllZeroError(ValueError):
    """Raised when asked to normalize a weight vector with no mass."""


@dataclass(frozen=True)
class Vocabulary:
    """A contiguous token id space ``0..size-1``, optionally with symbols."""

    size: int
    symbols: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        if self.size < 2:
            raise ValueError(f"vocabulary needs at least 2 tokens, got {self.size}")
        if self.symbols is not None and len(self.symbols) != self.size:
            raise ValueError("symbols length must match vocabulary size")

    def __len__(self) -> int:
        return self.size

    def decode(self, tokens: Iterable[int]) -> str:
        if self.symbols is None:
            raise ValueError("vocabulary has no symbol table")
        return "".join(self.symbols[t] for t in tokens)


class Distribution:
    """An immutable categorical distribution over token ids."""

    __slots__ = ("probs",)

    def __init__(self, probs: Sequence[float] | np.ndarray) -> None:
        arr = np.array(probs, dtype=np.float64, copy=True)
        if arr.ndim != 1 or arr.size == 0:
            raise ValueError("distribution must be a non-empty 1-d vector")
        if np.any(arr < 0.0) or not np.all(np.isfinite(arr)):
            raise ValueError("distribution entries must be finite and >= 0")
        total = float(arr.sum())
        if abs(total - 1.0) > SUM_TOL:
            raise ValueError(f"distribution sums to {total!r}, not 1")
        arr.setflags(write=False)
        object.__setattr__(self, "probs", arr)

    def __setattr__(self, name: str, value: object) -> None:
        raise AttributeError("Distribution is immutable")

    def __len__(self) -> int:
        return int(self.probs.size)

    def prob(self, token: int) -> float:
        return float(self.probs[token])

    def argmax(self) -> int:
        # np.argmax returns the first maximum: lowest index wins ties.
        return int(np.argmax(self.probs))

    def __repr__(self) -> str:
        return f"Distribution({np.array2string(self.probs, precision=4)})"


class Context:
    """Append-only sequence of committed tokens for one decode session."""

    __slots__ = ("_tokens",)

    def __init__(self, tokens: Iterable[int] = ()) -> None:
        self._tokens = [int(t) for t in tokens]

    def extend(self, tokens: Iterable[int]) -> None:
        self._tokens.extend(int(t) for t in tokens)

    def as_tuple(self) -> tuple[int, ...]:
        return tuple(self._tokens)

    def __len__(self) -> int:
        return len(self._tokens)

    def __getitem__(self, idx: int) -> int:
        return self._tokens[idx]


def normalize(weights: Sequence[float] | np.ndarray) -> Distribution:
    """Scale a non-negative weight vector to a Distribution.

    Raises AllZeroError when the vector carries no mass at all.
    """
    arr = np.asarray(weights, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError("weights must be a non-empty 1-d vector")
    if np.any(arr < 0.0) or not np.all(np.isfinite(arr)):
        raise ValueError("weights must be finite and >= 0")
    total = float(arr.sum())
    if total <= 0.0:
        raise AllZeroError("cannot normalize an all-zero weight vector")
    return Distribution(arr / total)


def apply_temperature(dist: Distribution, temperature: float) -> Distribution:
    """Reshape a distribution as ``p ** (1/T)`` renormalized.

    T=1 returns ``dist`` unchanged; T=0 is the exact argmax one-hot (lowest
    index on ties). Computed in log space so small temperatures do not
    underflow; the argmax is preserved for every T > 0.
    """
    if temperature < 0.0:
        raise ValueError("temperature must be >= 0")
    if temperature == 1.0:
        return dist
    if temperature == 0.0:
        hot = np.zeros(len(dist))
        hot[dist.argmax()] = 1.0
        return Distribution(hot)
    with np.errstate(divide="ignore"):
        scaled = np.log(dist.probs) / temperature
    scaled -= scaled.max()
    weights = np.exp(scaled)
    return Distribution(weights / weights.sum())


def sample(dist: Distribution, stream: "RandomStream") -> int:
    """Inverse-CDF draw over ascending token index; one uniform consumed."""
    u = stream.uniform()
    cdf = np.cumsum(dist.probs)
    idx = int(np.searchsorted(cdf, u, side="right"))
    if idx >= len(dist):
        # Float shortfall in the CDF tail: land on the last positive token.
        idx = int(np.flatnonzero(dist.probs > 0.0)[-1])
    return idx


def top2_margin(dist: Distribution) -> float:
    """Gap between the largest and second-largest probability."""
    if len(dist) < 2:
        return 0.0
    top_pair = np.partition(dist.probs, -2)[-2:]
    return float(top_pair.max() - top_pair.min())


def _label_entropy(label: str) -> list[int]:
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    return [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]


class RandomStream:
    """A deterministic uniform stream addressed by (seed, label).

    Streams with different labels are statistically independent, and the
    mapping is stable across platforms and processes (the label is folded
    into the seed via SHA-256, the generator is numpy PCG64). ``draws``
    counts consumed uniforms, which lets tests verify stopping-time claims.
    """

    __slots__ = ("seed", "label", "draws", "_gen")

    def __init__(self, seed: int, label: str = "") -> None:
        seed = int(seed)
        if seed < 0:
            raise ValueError("seed must be a non-negative integer")
        self.seed = seed
        self.label = label
        self.draws = 0
        entropy = [seed & 0xFFFFFFFFFFFFFFFF, *_label_entropy(label)]
        self._gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))

    def uniform(self) -> float:
        self.draws += 1
        return float(self._gen.random())

    def derive(self, label: str) -> "RandomStream":
        child = f"{self.label}/{label}" if self.label else label
        return RandomStream(self.seed, child)

    def __repr__(self) -> str:
        return f"RandomStream(seed={self.seed}, label={self.label!r}, draws={self.draws})"
