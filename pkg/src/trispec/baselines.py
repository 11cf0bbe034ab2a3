"""Relaxed verification rules and alternative trust signals.

These are the lossy comparison points: deferral-style rules that accept a
drafted token on cheaper evidence than the exact acceptance test, hoping to
stretch the acceptance length, plus the alternative proxy-trust signals
(top-1 probability, normalized entropy) that can replace the margin gate in
ternary routing.

All decision rules here are pure functions of distributions, so any run
built from them is fully deterministic at temperature 0. Asymmetry worth
remembering: the Chow rule accepts at ``>=`` its threshold while the
confidence filter requires strictly ``>``, so the two coincide on the
argmax token at ``threshold = 1 - alpha`` except exactly at the boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import Distribution, apply_temperature, sample, top2_margin
from .drafting import draft_chain
from .models import ModelOracle
from .verification import (
    AcceptanceTrace,
    DecodeStreams,
    SDRoundResult,
)

__all__ = [
    "RelaxPolicy",
    "RoutingSignal",
    "chow_accept",
    "confidence_filter_accept",
    "relaxed_sd_round",
    "routing_signal_eval",
    "token_specific_accept",
    "topk_verify_accept",
]


def chow_accept(draft_dist: Distribution, token: int, alpha: float) -> bool:
    """Accept when the drafter itself is confident: ``p_d(x) >= 1 - alpha``."""
    return draft_dist.prob(token) >= 1.0 - alpha


def token_specific_accept(target_dist: Distribution, token: int, alpha: float) -> bool:
    """Accept when the token is nearly target-optimal:
    ``p_t(x) >= (1 - alpha) * max(p_t)``. Ignores the drafter entirely."""
    return target_dist.prob(token) >= (1.0 - alpha) * float(target_dist.probs.max())


def confidence_filter_accept(draft_dist: Distribution, threshold: float) -> bool:
    """Accept when the drafter's peak clears the threshold, strictly."""
    return float(draft_dist.probs.max()) > threshold


def topk_verify_accept(target_dist: Distribution, token: int, k: int) -> bool:
    """Accept when the token sits among the target's k most probable tokens
    (ties resolved toward the lower index). k=1 is exactly greedy."""
    if k < 1:
        raise ValueError("top-k verification needs k >= 1")
    order = np.lexsort((np.arange(len(target_dist)), -target_dist.probs))
    return token in order[:k]


@dataclass(frozen=True)
class RelaxPolicy:
    """A named relaxed acceptance rule with its one parameter.

    ``chow`` and ``confidence_filter`` grant a bypass and otherwise defer
    to the standard acceptance test; ``token_specific`` and ``topk``
    replace the test outright (both consult only the target distribution).
    """

    kind: str  # chow | token_specific | confidence_filter | topk
    alpha: float = 0.05
    threshold: float = 0.95
    k: int = 5

    _KINDS = ("chow", "token_specific", "confidence_filter", "topk")

    def __post_init__(self) -> None:
        if self.kind not in self._KINDS:
            raise ValueError(f"unknown relax policy {self.kind!r}; expected one of {self._KINDS}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError("threshold must lie in [0, 1]")
        if self.k < 1:
            raise ValueError("k must be >= 1")

    def decide(
        self, draft_dist: Distribution, target_dist: Distribution, token: int
    ) -> bool | None:
        """True/False is final; None defers to the standard test."""
        if self.kind == "chow":
            return True if chow_accept(draft_dist, token, self.alpha) else None
        if self.kind == "confidence_filter":
            return True if confidence_filter_accept(draft_dist, self.threshold) else None
        if self.kind == "token_specific":
            return token_specific_accept(target_dist, token, self.alpha)
        return topk_verify_accept(target_dist, token, self.k)


@dataclass(frozen=True)
class RoutingSignal:
    """A trust gate over proxy distributions, pluggable into the router.

    ``margin``: top1 - top2 gap at least ``threshold``.
    ``top1_prob``: peak probability at least ``threshold``.
    ``composite_entropy``: normalized Shannon entropy (H / log V) at most
    ``threshold`` -- low entropy means trusted.
    """

    kind: str  # margin | top1_prob | composite_entropy
    threshold: float

    _KINDS = ("margin", "top1_prob", "composite_entropy")

    def __post_init__(self) -> None:
        if self.kind not in self._KINDS:
            raise ValueError(f"unknown routing signal {self.kind!r}; expected one of {self._KINDS}")

    def trusted(self, dist: Distribution) -> bool:
        return routing_signal_eval(dist, self)


def _normalized_entropy(dist: Distribution) -> float:
    probs = dist.probs[dist.probs > 0.0]
    entropy = float(-(probs * np.log(probs)).sum())
    return entropy / math.log(len(dist))


def routing_signal_eval(dist: Distribution, signal: RoutingSignal) -> bool:
    if signal.kind == "margin":
        return top2_margin(dist) >= signal.threshold
    if signal.kind == "top1_prob":
        return float(dist.probs.max()) >= signal.threshold
    return _normalized_entropy(dist) <= signal.threshold


def relaxed_sd_round(
    drafter: ModelOracle,
    target: ModelOracle,
    ctx: Sequence[int],
    k: int,
    policy: RelaxPolicy,
    temperature: float,
    streams: DecodeStreams,
) -> SDRoundResult:
    """A standard SD round whose per-position acceptance is relaxed.

    The target still scores the whole draft every round (these baselines
    stretch the acceptance length, they do not skip verification passes).
    On rejection the correction comes from the target's shaped distribution
    at that position; relaxed rules void the residual construction's
    guarantees, so this is the deferral semantics instead.
    """
    drafter_before = drafter.invocation_count
    target_before = target.invocation_count
    base = tuple(ctx)
    draft = draft_chain(drafter, base, k, temperature, streams.draft)
    shaped = [apply_temperature(d, temperature) for d in target.batch_score(base, draft.tokens)]

    coins: list[int] = []
    tau = draft.k
    for i, token in enumerate(draft.tokens):
        decision = policy.decide(draft.dists[i], shaped[i], token)
        if decision is None:
            if temperature == 0.0:
                decision = shaped[i].argmax() == token
            else:
                ratio = min(1.0, shaped[i].prob(token) / draft.dists[i].prob(token))
                decision = streams.target_coins.uniform() < ratio
        coins.append(1 if decision else 0)
        if not decision:
            tau = i
            break

    dist = shaped[tau] if tau < draft.k else shaped[draft.k]
    token = dist.argmax() if temperature == 0.0 else sample(dist, streams.correction)
    trace = AcceptanceTrace(
        coins=tuple(coins),
        tau=tau,
        correction_token=token,
        correction_is_bonus=tau == draft.k,
        emitted=draft.tokens[:tau] + (token,),
    )
    return SDRoundResult(
        emitted=trace.emitted,
        trace=trace,
        drafter_passes=drafter.invocation_count - drafter_before,
        verifier_passes=target.invocation_count - target_before,
        verifier_role="target",
    )
