"""Token-distribution oracles standing in for the three decoding models.

An oracle deterministically maps a context (tuple of token ids) to a
Distribution over the next token. Three kinds are provided:

* ``TableModel`` -- explicit context-suffix rows, for hand-built fixtures;
* ``NgramModel`` -- additive-smoothed n-gram with backoff to shorter
  orders, trained on a token corpus;
* ``MixtureProxy`` -- a controlled degradation of another oracle,
  ``(1 - eps) * base + eps * noise``, used to study proxy/target alignment.

Every oracle counts forward passes: ``next_dist`` is one pass, and a
batched scoring call over many positions is also exactly one pass (that is
the whole point of speculative verification). The counters are the sole
source for target-call accounting downstream.
"""

from __future__ import annotations

import hashlib
import json
import threading
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import Distribution, Vocabulary

__all__ = [
    "CorpusTooShortError",
    "MixtureProxy",
    "ModelOracle",
    "NGramSpec",
    "NgramModel",
    "ProxyDerivation",
    "TableModel",
    "derive_proxy",
    "load_oracle",
    "save_oracle",
    "train_ngram",
]

MODEL_FORMAT = "trispec-model"
MODEL_FORMAT_VERSION = 1


class CorpusTooShortError(ValueError):
    """Raised when a training corpus cannot support the requested order."""


class _Counter:
    """A monotone invocation counter, safe to bump from concurrent runs."""

    __slots__ = ("_lock", "_value")

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._value = 0

    def add(self, n: int = 1) -> None:
        with self._lock:
            self._value += n

    @property
    def value(self) -> int:
        return self._value


@dataclass(frozen=True)
class NGramSpec:
    """Training recipe for an n-gram oracle."""

    order: int
    alpha: float = 0.1
    fingerprint: str | None = None

    def __post_init__(self) -> None:
        if self.order < 1:
            raise ValueError("n-gram order must be >= 1")
        if self.alpha < 0.0:
            raise ValueError("additive smoothing constant must be >= 0")


@dataclass(frozen=True)
class ProxyDerivation:
    """How to degrade a target oracle into a synthetic proxy."""

    epsilon: float
    noise_kind: str = "unigram"  # "unigram" | "uniform"

    def __post_init__(self) -> None:
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")
        if self.noise_kind not in ("unigram", "uniform"):
            raise ValueError(f"unknown noise kind {self.noise_kind!r}")


class ModelOracle:
    """Base class: deterministic context -> next-token distribution."""

    kind = "abstract"

    def __init__(self, vocab: Vocabulary) -> None:
        self.vocab = vocab
        self._counter = _Counter()

    @property
    def vocab_size(self) -> int:
        return self.vocab.size

    @property
    def invocation_count(self) -> int:
        """Total forward passes so far (batched calls count once)."""
        return self._counter.value

    def _dist(self, ctx: tuple[int, ...]) -> Distribution:
        raise NotImplementedError

    def next_dist(self, ctx: Sequence[int]) -> Distribution:
        """Score one position. One forward pass."""
        self._counter.add()
        return self._dist(tuple(ctx))

    def batch_score(self, ctx: Sequence[int], drafted: Sequence[int]) -> list[Distribution]:
        """Score positions 1..k+1 of a drafted block in one forward pass.

        Entry ``i`` is the distribution after ``ctx + drafted[:i]``; the last
        entry conditions on the full block (the bonus position). Each entry
        is exactly what ``next_dist`` would return for that prefix.
        """
        self._counter.add()
        base = tuple(ctx)
        out = []
        for i in range(len(drafted) + 1):
            out.append(self._dist(base + tuple(drafted[:i])))
        return out

    def batch_score_paths(
        self, ctx: Sequence[int], paths: Sequence[tuple[int, ...]]
    ) -> list[Distribution]:
        """Score arbitrary continuation paths of ``ctx`` in one forward pass.

        The flattened-tree analogue of ``batch_score``: one distribution per
        path, conditioned on ``ctx + path``, a single counter bump for all.
        """
        self._counter.add()
        base = tuple(ctx)
        return [self._dist(base + tuple(p)) for p in paths]

    def fork(self) -> "ModelOracle":
        """A view sharing this oracle's tables but with a fresh counter."""
        raise NotImplementedError


class TableModel(ModelOracle):
    """Explicit lookup oracle for small hand-built fixtures.

    Rows are keyed by context suffixes; lookup tries the longest matching
    suffix first and falls back to the default row.
    """

    kind = "table"

    def __init__(
        self,
        vocab: Vocabulary,
        rows: dict[tuple[int, ...], Distribution],
        default: Distribution | None = None,
    ) -> None:
        super().__init__(vocab)
        for key, dist in rows.items():
            if len(dist) != vocab.size:
                raise ValueError(f"row {key!r} has wrong vocabulary size")
        if default is not None and len(default) != vocab.size:
            raise ValueError("default row has wrong vocabulary size")
        self.rows = dict(rows)
        self.default = default
        self._max_key = max((len(k) for k in rows), default=0)

    def _dist(self, ctx: tuple[int, ...]) -> Distribution:
        for n in range(min(self._max_key, len(ctx)), -1, -1):
            row = self.rows.get(ctx[len(ctx) - n :])
            if row is not None:
                return row
        if self.default is None:
            raise LookupError(f"no table row matches context {ctx!r} and no default row set")
        return self.default

    def fork(self) -> "TableModel":
        twin = TableModel.__new__(TableModel)
        ModelOracle.__init__(twin, self.vocab)
        twin.rows = self.rows
        twin.default = self.default
        twin._max_key = self._max_key
        return twin


class NgramModel(ModelOracle):
    """Additive-smoothed n-gram oracle with backoff to shorter orders.

    ``P(x | ctx) = (count(ctx, x) + alpha) / (count(ctx, .) + alpha * V)``
    using the last ``order - 1`` context tokens; a context never observed at
    some order backs off to the next shorter order, bottoming out at the
    unigram. ``alpha = 0`` is allowed (pure relative frequencies) but then
    unseen continuations of a seen context get probability zero.
    """

    kind = "ngram"

    def __init__(
        self,
        vocab: Vocabulary,
        spec: NGramSpec,
        counts: dict[int, dict[tuple[int, ...], dict[int, int]]],
    ) -> None:
        super().__init__(vocab)
        if set(counts) != set(range(1, spec.order + 1)):
            raise ValueError("counts must cover every order 1..n")
        self.spec = spec
        self._counts = counts
        self._totals = {
            j: {ctx: sum(table.values()) for ctx, table in counts[j].items()}
            for j in counts
        }
        self._memo: dict[tuple[int, ...], Distribution] = {}

    @property
    def order(self) -> int:
        return self.spec.order

    def unigram(self) -> Distribution:
        return self._smoothed((), 1)

    def _smoothed(self, key: tuple[int, ...], j: int) -> Distribution:
        table = self._counts[j][key]
        total = self._totals[j][key]
        weights = np.full(self.vocab.size, self.spec.alpha, dtype=np.float64)
        for token, count in table.items():
            weights[token] += count
        return Distribution(weights / (total + self.spec.alpha * self.vocab.size))

    def _dist(self, ctx: tuple[int, ...]) -> Distribution:
        tail = ctx[len(ctx) - min(len(ctx), self.order - 1) :] if self.order > 1 else ()
        hit = self._memo.get(tail)
        if hit is not None:
            return hit
        dist = None
        for j in range(self.order, 0, -1):
            need = j - 1
            if len(tail) < need:
                continue
            key = tail[len(tail) - need :] if need else ()
            if key in self._counts[j]:
                dist = self._smoothed(key, j)
                break
        if dist is None:  # pragma: no cover - unigram row always exists
            raise AssertionError("n-gram backoff fell through the unigram")
        self._memo[tail] = dist
        return dist

    def fork(self) -> "NgramModel":
        twin = NgramModel.__new__(NgramModel)
        ModelOracle.__init__(twin, self.vocab)
        twin.spec = self.spec
        twin._counts = self._counts
        twin._totals = self._totals
        twin._memo = self._memo
        return twin


class MixtureProxy(ModelOracle):
    """A base oracle blended toward a fixed noise distribution.

    ``dist(ctx) = (1 - eps) * base(ctx) + eps * noise``. Scoring through the
    proxy does not touch the base oracle's invocation counter: the proxy is
    its own model that merely shares the base's tables.
    """

    kind = "mixture"

    def __init__(self, base: ModelOracle, deriv: ProxyDerivation, noise: Distribution) -> None:
        super().__init__(base.vocab)
        if len(noise) != base.vocab_size:
            raise ValueError("noise distribution has wrong vocabulary size")
        self.base = base
        self.deriv = deriv
        self.noise = noise

    def _dist(self, ctx: tuple[int, ...]) -> Distribution:
        eps = self.deriv.epsilon
        mixed = (1.0 - eps) * self.base._dist(ctx).probs + eps * self.noise.probs
        return Distribution(mixed)

    def fork(self) -> "MixtureProxy":
        return MixtureProxy(self.base, self.deriv, self.noise)


def _fingerprint(corpus: Sequence[int], order: int, alpha: float) -> str:
    header = f"ngram|order={order}|alpha={alpha!r}|n={len(corpus)}|".encode()
    body = np.asarray(corpus, dtype=np.uint32).tobytes()
    return hashlib.sha256(header + body).hexdigest()


def train_ngram(corpus: Sequence[int], spec: NGramSpec, vocab: Vocabulary) -> NgramModel:
    """Count-train an n-gram oracle on a token sequence.

    Raises CorpusTooShortError when the corpus has fewer tokens than the
    requested order (no full window exists).
    """
    tokens = tuple(int(t) for t in corpus)
    if len(tokens) < spec.order:
        raise CorpusTooShortError(
            f"corpus of {len(tokens)} tokens cannot train order {spec.order}"
        )
    if tokens and (min(tokens) < 0 or max(tokens) >= vocab.size):
        raise ValueError("corpus contains token ids outside the vocabulary")
    counts: dict[int, dict[tuple[int, ...], dict[int, int]]] = {}
    for j in range(1, spec.order + 1):
        table: dict[tuple[int, ...], dict[int, int]] = {}
        for i in range(len(tokens) - j + 1):
            ctx = tokens[i : i + j - 1]
            nxt = tokens[i + j - 1]
            row = table.get(ctx)
            if row is None:
                row = table[ctx] = {}
            row[nxt] = row.get(nxt, 0) + 1
        counts[j] = table
    stamped = replace(spec, fingerprint=_fingerprint(tokens, spec.order, spec.alpha))
    return NgramModel(vocab, stamped, counts)


def derive_proxy(target: ModelOracle, deriv: ProxyDerivation) -> MixtureProxy:
    """Build a controlled-alignment proxy from a target oracle.

    ``eps = 0`` reproduces the target exactly; ``eps = 1`` is pure noise.
    Unigram noise requires an n-gram target (it reuses the trained unigram).
    """
    if deriv.noise_kind == "uniform":
        noise = Distribution(np.full(target.vocab_size, 1.0 / target.vocab_size))
    else:
        if not isinstance(target, NgramModel):
            raise ValueError("unigram noise needs an n-gram target oracle")
        noise = target.unigram()
    return MixtureProxy(target, deriv, noise)


# ---------------------------------------------------------------------------
# Serialization. One JSON document per oracle; nested for mixtures. Keys are
# sorted when dumping so identical oracles serialize byte-identically.
# ---------------------------------------------------------------------------


def _ctx_key(ctx: tuple[int, ...]) -> str:
    return ",".join(str(t) for t in ctx)


def _ctx_unkey(key: str) -> tuple[int, ...]:
    return tuple(int(part) for part in key.split(",")) if key else ()


def _oracle_payload(oracle: ModelOracle) -> dict:
    if isinstance(oracle, NgramModel):
        return {
            "kind": "ngram",
            "order": oracle.spec.order,
            "alpha": oracle.spec.alpha,
            "fingerprint": oracle.spec.fingerprint,
            "vocab_size": oracle.vocab_size,
            "symbols": list(oracle.vocab.symbols) if oracle.vocab.symbols else None,
            "counts": {
                str(j): {_ctx_key(ctx): {str(t): c for t, c in row.items()} for ctx, row in table.items()}
                for j, table in oracle._counts.items()
            },
        }
    if isinstance(oracle, TableModel):
        return {
            "kind": "table",
            "vocab_size": oracle.vocab_size,
            "symbols": list(oracle.vocab.symbols) if oracle.vocab.symbols else None,
            "rows": {_ctx_key(ctx): list(map(float, d.probs)) for ctx, d in oracle.rows.items()},
            "default": list(map(float, oracle.default.probs)) if oracle.default else None,
        }
    if isinstance(oracle, MixtureProxy):
        return {
            "kind": "mixture",
            "epsilon": oracle.deriv.epsilon,
            "noise_kind": oracle.deriv.noise_kind,
            "noise": list(map(float, oracle.noise.probs)),
            "base": _oracle_payload(oracle.base),
        }
    raise TypeError(f"cannot serialize oracle of type {type(oracle).__name__}")


def _oracle_from_payload(payload: dict) -> ModelOracle:
    kind = payload["kind"]
    if kind == "ngram":
        symbols = payload.get("symbols")
        vocab = Vocabulary(payload["vocab_size"], tuple(symbols) if symbols else None)
        spec = NGramSpec(payload["order"], payload["alpha"], payload.get("fingerprint"))
        counts = {
            int(j): {_ctx_unkey(k): {int(t): int(c) for t, c in row.items()} for k, row in table.items()}
            for j, table in payload["counts"].items()
        }
        return NgramModel(vocab, spec, counts)
    if kind == "table":
        symbols = payload.get("symbols")
        vocab = Vocabulary(payload["vocab_size"], tuple(symbols) if symbols else None)
        rows = {_ctx_unkey(k): Distribution(v) for k, v in payload["rows"].items()}
        default = Distribution(payload["default"]) if payload.get("default") else None
        return TableModel(vocab, rows, default)
    if kind == "mixture":
        base = _oracle_from_payload(payload["base"])
        deriv = ProxyDerivation(payload["epsilon"], payload["noise_kind"])
        return MixtureProxy(base, deriv, Distribution(payload["noise"]))
    raise ValueError(f"unknown oracle kind {kind!r}")


def save_oracle(oracle: ModelOracle, path: str | Path) -> None:
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_FORMAT_VERSION,
        "model": _oracle_payload(oracle),
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=None) + "\n", encoding="utf-8")


def load_oracle(path: str | Path) -> ModelOracle:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != MODEL_FORMAT:
        raise ValueError(f"not a {MODEL_FORMAT} file: {path}")
    if doc.get("version") != MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {doc.get('version')!r}")
    return _oracle_from_payload(doc["model"])
