"""Draft verification: the lossless acceptance rule and its greedy variant.

A verifier scores a drafted block in one batched pass. Position i of the
draft is accepted with probability ``min(1, p_v(x_i) / p_d(x_i))``; at the
first rejection the replacement token is drawn from the positive residual
``norm(max(0, p_v - p_d))``, and a fully accepted block earns a bonus token
from the verifier's distribution at position k+1. That combination makes
the output distribution of a round exactly the verifier's own -- the
property the acceptance tests enumerate.

Greedy mode (temperature 0) replaces coin flips with exact argmax
comparison and consumes no randomness at all.

Randomness is split across named streams (draft sampling, proxy coins,
target coins, corrections) so that structurally different protocols remain
coin-for-coin comparable: a round consumes k draft draws, acceptance coins
only up to its first rejection, and exactly one correction draw.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import Distribution, RandomStream, apply_temperature, normalize, sample
from .drafting import DraftChain, DraftTree, draft_chain, draft_tree
from .models import ModelOracle

__all__ = [
    "AcceptanceTrace",
    "DecodeStreams",
    "DegenerateResidualError",
    "SDRoundResult",
    "TreeVerifyResult",
    "acceptance_coins",
    "draw_correction",
    "residual_dist",
    "sd_round",
    "sd_tree_round",
    "verify_chain",
    "verify_tree_greedy",
]


class DegenerateResidualError(AssertionError):
    """All-zero rejection residual; impossible for valid distributions."""


@dataclass(frozen=True)
class DecodeStreams:
    """The four independent random streams one decode session uses."""

    draft: RandomStream
    proxy_coins: RandomStream
    target_coins: RandomStream
    correction: RandomStream

    @classmethod
    def from_seed(cls, seed: int, scope: str = "") -> "DecodeStreams":
        prefix = f"{scope}/" if scope else ""
        return cls(
            draft=RandomStream(seed, prefix + "draft"),
            proxy_coins=RandomStream(seed, prefix + "coins/proxy"),
            target_coins=RandomStream(seed, prefix + "coins/target"),
            correction=RandomStream(seed, prefix + "correction"),
        )

    def coins_for(self, verifier_role: str) -> RandomStream:
        if verifier_role == "target":
            return self.target_coins
        if verifier_role == "proxy":
            return self.proxy_coins
        raise ValueError(f"unknown verifier role {verifier_role!r}")


@dataclass(frozen=True)
class AcceptanceTrace:
    """Outcome of verifying one draft block.

    ``coins`` holds the accept/reject indicator for every examined position
    (all 1s, then a single trailing 0 unless the block was fully accepted);
    ``tau`` is the acceptance length; exactly one correction token exists
    per round, a residual draw after a rejection or a verifier bonus after
    full acceptance.
    """

    coins: tuple[int, ...]
    tau: int
    correction_token: int
    correction_is_bonus: bool
    emitted: tuple[int, ...]

    def __post_init__(self) -> None:
        if self.coins and (0 in self.coins[:-1] or (self.coins[-1] == 0) != (self.tau < len(self.coins))):
            raise ValueError("coins must be all-ones with at most one trailing zero")
        if len(self.emitted) != self.tau + 1:
            raise ValueError("a round emits exactly tau accepted tokens plus one correction")


def _shape_all(dists: Sequence[Distribution], temperature: float) -> list[Distribution]:
    return [apply_temperature(d, temperature) for d in dists]


def acceptance_coins(
    draft: DraftChain,
    verifier_dists: Sequence[Distribution],
    temperature: float,
    coin_stream: RandomStream,
) -> tuple[tuple[int, ...], int]:
    """Left-to-right acceptance test; stops at the first rejection.

    ``verifier_dists`` must already carry the same temperature shaping as
    the draft's stored distributions. At temperature 0 the test is exact
    argmax agreement and no uniforms are consumed; otherwise one uniform is
    drawn per examined position.
    """
    coins: list[int] = []
    for i, token in enumerate(draft.tokens):
        if temperature == 0.0:
            accept = verifier_dists[i].argmax() == token
        else:
            ratio = min(1.0, verifier_dists[i].prob(token) / draft.dists[i].prob(token))
            accept = coin_stream.uniform() < ratio
        coins.append(1 if accept else 0)
        if not accept:
            return tuple(coins), i
    return tuple(coins), draft.k


def residual_dist(draft_dist: Distribution, verifier_dist: Distribution) -> Distribution:
    """The normalized positive part of ``p_v - p_d`` at a rejected position."""
    residual = np.maximum(0.0, verifier_dist.probs - draft_dist.probs)
    if float(residual.sum()) <= 0.0:
        raise DegenerateResidualError("rejection happened but the residual carries no mass")
    return normalize(residual)


def draw_correction(
    draft: DraftChain,
    verifier_dists: Sequence[Distribution],
    tau: int,
    temperature: float,
    correction_stream: RandomStream,
) -> tuple[int, bool]:
    """Draw the single correction token a verification round emits.

    After a rejection at position ``tau`` the token comes from the residual
    there; after full acceptance it is the verifier's bonus at position
    k+1. Greedy mode takes the argmax without consuming a draw.
    """
    if tau < draft.k:
        dist = residual_dist(draft.dists[tau], verifier_dists[tau])
        is_bonus = False
    else:
        dist = verifier_dists[draft.k]
        is_bonus = True
    token = dist.argmax() if temperature == 0.0 else sample(dist, correction_stream)
    return token, is_bonus


def verify_chain(
    draft: DraftChain,
    verifier_dists: Sequence[Distribution],
    temperature: float,
    coin_stream: RandomStream,
    correction_stream: RandomStream,
) -> AcceptanceTrace:
    """Verify a draft chain against k+1 raw verifier distributions."""
    if len(verifier_dists) != draft.k + 1:
        raise ValueError("need k+1 verifier distributions for a k-token draft")
    shaped = _shape_all(verifier_dists, temperature)
    coins, tau = acceptance_coins(draft, shaped, temperature, coin_stream)
    token, is_bonus = draw_correction(draft, shaped, tau, temperature, correction_stream)
    return AcceptanceTrace(
        coins=coins,
        tau=tau,
        correction_token=token,
        correction_is_bonus=is_bonus,
        emitted=draft.tokens[:tau] + (token,),
    )


@dataclass(frozen=True)
class SDRoundResult:
    """One draft-then-verify round of standard speculative decoding."""

    emitted: tuple[int, ...]
    trace: AcceptanceTrace
    drafter_passes: int
    verifier_passes: int
    verifier_role: str


def sd_round(
    drafter: ModelOracle,
    verifier: ModelOracle,
    ctx: Sequence[int],
    k: int,
    temperature: float,
    streams: DecodeStreams,
    verifier_role: str = "target",
) -> SDRoundResult:
    """Draft k tokens, verify once, emit tau accepted tokens plus one more.

    ``verifier_role`` selects which coin stream the acceptance test uses, so
    a proxy-verified run and the proxy phase of a ternary round stay
    coin-for-coin identical.
    """
    drafter_before = drafter.invocation_count
    verifier_before = verifier.invocation_count
    base = tuple(ctx)
    draft = draft_chain(drafter, base, k, temperature, streams.draft)
    verifier_dists = verifier.batch_score(base, draft.tokens)
    trace = verify_chain(
        draft, verifier_dists, temperature, streams.coins_for(verifier_role), streams.correction
    )
    return SDRoundResult(
        emitted=trace.emitted,
        trace=trace,
        drafter_passes=drafter.invocation_count - drafter_before,
        verifier_passes=verifier.invocation_count - verifier_before,
        verifier_role=verifier_role,
    )


@dataclass(frozen=True)
class TreeVerifyResult:
    """Greedy verification of a draft tree in one flattened pass.

    ``path_dists[i]`` is the verifier's distribution at accepted-path
    position i+1 (conditioned on the path so far); ``after_dist`` conditions
    on the full accepted path and is where the correction token comes from.
    """

    path_ids: tuple[int, ...]
    path_tokens: tuple[int, ...]
    path_dists: tuple[Distribution, ...]
    after_dist: Distribution
    correction_token: int
    exhausted: bool  # walk stopped at a childless node, not on a divergence

    @property
    def accepted_len(self) -> int:
        return len(self.path_tokens)

    @property
    def emitted(self) -> tuple[int, ...]:
        return self.path_tokens + (self.correction_token,)


def verify_tree_greedy(tree: DraftTree, verifier: ModelOracle) -> TreeVerifyResult:
    """Accept the longest root-anchored path of verifier argmaxes.

    The verifier scores every node of the tree in a single masked pass; the
    walk then descends from the root as long as some child carries the
    argmax token, and the correction is the argmax after the accepted path
    (which repairs the first divergence, or extends a fully accepted path).
    """
    paths = [()] + [tree.path_tokens(i) for i in range(len(tree))]
    scored = verifier.batch_score_paths(tree.ctx, paths)
    root_dist, node_dists = scored[0], scored[1:]

    path_ids: list[int] = []
    path_dists: list[Distribution] = []
    cur = -1
    cur_dist = root_dist
    while True:
        want = cur_dist.argmax()
        child = next((c for c in tree.children(cur) if tree.nodes[c].token == want), None)
        if child is None:
            exhausted = not tree.children(cur)
            break
        path_ids.append(child)
        path_dists.append(cur_dist)
        cur = child
        cur_dist = node_dists[child]
    return TreeVerifyResult(
        path_ids=tuple(path_ids),
        path_tokens=tuple(tree.nodes[i].token for i in path_ids),
        path_dists=tuple(path_dists),
        after_dist=cur_dist,
        correction_token=cur_dist.argmax(),
        exhausted=exhausted,
    )


def sd_tree_round(
    drafter: ModelOracle,
    verifier: ModelOracle,
    ctx: Sequence[int],
    depth: int,
    branch_topk: int,
    budget: int,
) -> tuple[tuple[int, ...], TreeVerifyResult, int, int]:
    """Greedy tree-drafted SD round: returns (emitted, result, pass deltas)."""
    drafter_before = drafter.invocation_count
    verifier_before = verifier.invocation_count
    tree = draft_tree(drafter, tuple(ctx), depth, branch_topk, budget)
    result = verify_tree_greedy(tree, verifier)
    return (
        result.emitted,
        result,
        drafter.invocation_count - drafter_before,
        verifier.invocation_count - verifier_before,
    )
