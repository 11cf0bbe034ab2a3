"""Regenerate the bundled reference corpus (src/trispec/fixtures/reference_corpus.txt).

The corpus is ~100 KB of synthetic English-like declarative sentences over a
small lexicon, one sentence per line, lowercase letters plus space, period
and newline. It is generated fully deterministically (hand-rolled LCG, no
library RNG) so the file can be reproduced bit-for-bit, and it is dedicated
to the public domain together with the rest of this repository.

The lexicon and sentence shapes are chosen so that character n-gram models
of ascending order form a sensible weak-to-strong family: within-word
continuations are predictable (high-margin), word boundaries are genuinely
uncertain (low-margin), and shared prefixes between words create positions
where a short-context model guesses wrong while a longer-context model is
confidently right.

Several singular/plural prefix pairs (gate/gates, gaze/gazes, quiz/quizzes,
stable/stables) carry hand-calibrated weights so that right after the shared
prefix the models are nearly tied between the plural letter and a word
boundary. Globally the boundary characters are far more frequent than the
plural letter, so mixing any contextual model with the corpus unigram can
flip its top choice exactly at these low-margin positions and nowhere else.
The long form's weight sits near 0.66x the short form's: the short form
splits its continuation mass between space and period (roughly 0.61/0.39),
and the tie should land at the top of that split.

Usage: python tools/make_reference_corpus.py [out_path]
"""

from __future__ import annotations

import sys
from pathlib import Path

TARGET_BYTES = 100_000
SEED = 20240917


def zipf(words: list[str]) -> list[tuple[str, float]]:
    return [(w, 1.0 / (i + 1.0)) for i, w in enumerate(words)]


ADJECTIVES = zipf([
    "old", "gray", "quiet", "small", "bright", "young", "tall", "warm", "pale", "windy",
    "jazzy", "jaded",
])
NOUNS = [
    ("miller", 1.0),
    ("river", 0.5),
    ("gates", 0.253),
    ("garden", 0.333),
    ("gate", 0.42),
    ("lantern", 0.25),
    ("gazes", 0.188),
    ("sparrow", 0.2),
    ("gaze", 0.30),
    ("bridge", 0.167),
    ("meadow", 0.143),
    ("quizzes", 0.147),
    ("harbor", 0.125),
    ("quiz", 0.25),
    ("orchard", 0.111),
    ("cottage", 0.1),
    ("stables", 0.062),
    ("valley", 0.091),
    ("stable", 0.10),
    ("willow", 0.083),
    ("market", 0.077),
]
VERBS = zipf([
    "watched", "crossed", "followed", "carried", "vexed", "veered",
    "guarded", "painted", "remembered", "sheltered", "passed", "found",
])
PREPS = zipf(["near", "over", "beside", "under", "beyond", "through"])


class Lcg:
    """Minimal 64-bit linear congruential generator; stable everywhere."""

    def __init__(self, seed: int) -> None:
        self.state = seed & 0xFFFFFFFFFFFFFFFF

    def next_u64(self) -> int:
        self.state = (self.state * 6364136223846793005 + 1442695040888963407) & 0xFFFFFFFFFFFFFFFF
        return self.state

    def uniform(self) -> float:
        return (self.next_u64() >> 11) / float(1 << 53)


def pick(rng: Lcg, weighted: list[tuple[str, float]]) -> str:
    total = sum(w for _, w in weighted)
    u = rng.uniform() * total
    acc = 0.0
    for word, w in weighted:
        acc += w
        if u < acc:
            return word
    return weighted[-1][0]


def noun_phrase(rng: Lcg) -> str:
    if rng.uniform() < 0.55:
        return f"the {pick(rng, ADJECTIVES)} {pick(rng, NOUNS)}"
    return f"the {pick(rng, NOUNS)}"


def sentence(rng: Lcg) -> str:
    parts = [noun_phrase(rng), pick(rng, VERBS), noun_phrase(rng)]
    if rng.uniform() < 0.6:
        parts.append(f"{pick(rng, PREPS)} {noun_phrase(rng)}")
    return " ".join(parts) + "."


def main() -> None:
    out = Path(sys.argv[1]) if len(sys.argv) > 1 else (
        Path(__file__).resolve().parent.parent / "src" / "trispec" / "fixtures" / "reference_corpus.txt"
    )
    rng = Lcg(SEED)
    lines: list[str] = []
    size = 0
    while size < TARGET_BYTES:
        line = sentence(rng)
        lines.append(line)
        size += len(line) + 1
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {out} ({out.stat().st_size} bytes, {len(lines)} lines)")


if __name__ == "__main__":
    main()
