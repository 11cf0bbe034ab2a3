"""Ternary routing: a cheap proxy pre-verifies drafts, a margin decides.

Each round the proxy scores the whole draft once and produces two prefix
lengths:

* ``tau_a`` -- how far the proxy itself would accept the draft (the usual
  acceptance rule, run with the proxy's coins);
* ``tau_m`` -- how far the proxy's distributions are *trusted*, i.e. the
  longest prefix on which the top1-top2 margin clears a threshold.

If the proxy confidently rejects inside its trusted prefix
(``tau_a < tau_m``), the round resolves locally: the draft up to ``tau_a``
is emitted with a proxy-drawn correction and the target is never called.
Otherwise the first ``tau_m`` tokens are committed outright, the draft is
pruned to the remainder, and the target verifies only the suffix.

The threshold is a dial: ``lam <= 0`` trusts the proxy everywhere (the run
degrades to proxy-verified decoding), ``lam > 1`` trusts it nowhere (the
run is exactly standard target-verified decoding, coin for coin).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

from .core import Distribution, apply_temperature, sample, top2_margin
from .drafting import DraftChain, draft_chain, draft_tree, prune_tree_prefix
from .models import ModelOracle
from .verification import (
    AcceptanceTrace,
    DecodeStreams,
    acceptance_coins,
    draw_correction,
    verify_tree_greedy,
)

if TYPE_CHECKING:  # pragma: no cover
    from .metrics import RoundCost

__all__ = [
    "MarginRule",
    "RoundCase",
    "RoundOutcome",
    "TreeParams",
    "margin_predicate",
    "pruned_target_verify",
    "trispec_round",
    "trispec_tree_round",
    "trusted_prefix_len",
]


@dataclass(frozen=True)
class MarginRule:
    """Trust a distribution iff its top1-top2 gap reaches ``lam``.

    ``lam <= 0`` is the always-trust sentinel (margins are never negative),
    ``lam > 1`` the never-trust sentinel (margins never exceed 1).
    """

    lam: float

    def trusted(self, dist: Distribution) -> bool:
        return top2_margin(dist) >= self.lam


def margin_predicate(dist: Distribution, rule: MarginRule) -> int:
    """1 when the rule trusts the distribution, else 0."""
    return 1 if rule.trusted(dist) else 0


def trusted_prefix_len(proxy_dists: Sequence[Distribution], rule) -> int:
    """Length of the longest trusted prefix of k+1 per-position dists.

    Returns the index of the first untrusted position (0-based over
    positions 1..k+1), or k+1 when every position is trusted. Any rule
    object with a ``trusted(dist) -> bool`` method works here; margin is
    the default, the alternative routing signals plug in the same way.
    """
    for i, dist in enumerate(proxy_dists):
        if not rule.trusted(dist):
            return i
    return len(proxy_dists)


class RoundCase(enum.Enum):
    PROXY_ONLY = "ProxyOnly"
    TARGET_ESCALATED = "TargetEscalated"


@dataclass
class RoundOutcome:
    """Everything one ternary round did, for accounting and invariants."""

    case: RoundCase
    tau_a: int
    tau_m: int
    tau_t: int | None
    emitted: tuple[int, ...]
    proxy_called: bool
    target_called: bool
    drafter_passes: int
    proxy_passes: int
    target_passes: int
    proxy_coins: tuple[int, ...]
    margins: tuple[float, ...]
    correction_is_bonus: bool
    draft: DraftChain | None = None
    costs: "RoundCost | None" = None

    def validate(self) -> None:
        """Router postconditions; raises ValueError on violation."""
        if self.case is RoundCase.PROXY_ONLY:
            if not (self.tau_a < self.tau_m):
                raise ValueError("proxy-only round requires tau_a < tau_m")
            if self.target_called or self.target_passes != 0:
                raise ValueError("proxy-only round must not touch the target")
            if len(self.emitted) != self.tau_a + 1:
                raise ValueError("proxy-only round emits tau_a + 1 tokens")
        else:
            if not (self.tau_a >= self.tau_m):
                raise ValueError("escalated round requires tau_a >= tau_m")
            if not self.target_called or self.target_passes < 1 or self.tau_t is None:
                raise ValueError("escalated round must involve the target")
            if len(self.emitted) != self.tau_m + self.tau_t + 1:
                raise ValueError("escalated round emits tau_m + tau_t + 1 tokens")
        if not self.proxy_called or self.proxy_passes < 1:
            raise ValueError("every round pre-verifies through the proxy")


def pruned_target_verify(
    draft: DraftChain,
    tau_m: int,
    target: ModelOracle,
    ctx: Sequence[int],
    temperature: float,
    coin_stream,
    correction_stream,
) -> AcceptanceTrace:
    """Target-verify the draft suffix after committing ``tau_m`` tokens.

    The target conditions on the committed prefix and scores only positions
    ``tau_m+1..k`` (one batched pass). With ``tau_m == k`` there is nothing
    left to verify and the pass purely produces the bonus distribution at
    position k+1.
    """
    if not 0 <= tau_m <= draft.k:
        raise ValueError("tau_m must lie in [0, k]")
    base = tuple(ctx) + draft.tokens[:tau_m]
    if tau_m == draft.k:
        bonus = apply_temperature(target.next_dist(base), temperature)
        token = bonus.argmax() if temperature == 0.0 else sample(bonus, correction_stream)
        return AcceptanceTrace(
            coins=(), tau=0, correction_token=token, correction_is_bonus=True, emitted=(token,)
        )
    sub = draft.suffix(tau_m)
    target_dists = [apply_temperature(d, temperature) for d in target.batch_score(base, sub.tokens)]
    coins, tau_t = acceptance_coins(sub, target_dists, temperature, coin_stream)
    token, is_bonus = draw_correction(sub, target_dists, tau_t, temperature, correction_stream)
    return AcceptanceTrace(
        coins=coins,
        tau=tau_t,
        correction_token=token,
        correction_is_bonus=is_bonus,
        emitted=sub.tokens[:tau_t] + (token,),
    )


def trispec_round(
    drafter: ModelOracle,
    proxy: ModelOracle,
    target: ModelOracle,
    ctx: Sequence[int],
    k: int,
    rule,
    temperature: float,
    streams: DecodeStreams,
    raw_bonus: bool = False,
    margin_on_raw: bool = False,
) -> RoundOutcome:
    """One ternary round over a k-token draft chain.

    The trust signal sees the proxy's shaped distributions at temperature 1
    (where shaping is the identity) and the raw model distributions in
    greedy mode -- an argmax one-hot carries no margin information.
    ``margin_on_raw`` forces the raw view at any temperature. ``raw_bonus``
    switches the proxy-local correction to a direct draw from the proxy's
    distribution at the rejected position instead of the residual.
    """
    drafter_before = drafter.invocation_count
    proxy_before = proxy.invocation_count
    target_before = target.invocation_count

    base = tuple(ctx)
    draft = draft_chain(drafter, base, k, temperature, streams.draft)
    proxy_raw = proxy.batch_score(base, draft.tokens)
    proxy_shaped = [apply_temperature(d, temperature) for d in proxy_raw]
    coins, tau_a = acceptance_coins(draft, proxy_shaped, temperature, streams.proxy_coins)

    margin_view = proxy_raw if (temperature == 0.0 or margin_on_raw) else proxy_shaped
    margins = tuple(top2_margin(d) for d in margin_view)
    tau_m = trusted_prefix_len(margin_view, rule)

    if tau_a < tau_m:
        if raw_bonus and tau_a < k:
            dist = proxy_shaped[tau_a]
            token = dist.argmax() if temperature == 0.0 else sample(dist, streams.correction)
            is_bonus = False
        else:
            token, is_bonus = draw_correction(
                draft, proxy_shaped, tau_a, temperature, streams.correction
            )
        outcome = RoundOutcome(
            case=RoundCase.PROXY_ONLY,
            tau_a=tau_a,
            tau_m=tau_m,
            tau_t=None,
            emitted=draft.tokens[:tau_a] + (token,),
            proxy_called=True,
            target_called=False,
            drafter_passes=drafter.invocation_count - drafter_before,
            proxy_passes=proxy.invocation_count - proxy_before,
            target_passes=target.invocation_count - target_before,
            proxy_coins=coins,
            margins=margins,
            correction_is_bonus=is_bonus,
            draft=draft,
        )
    else:
        suffix_trace = pruned_target_verify(
            draft, tau_m, target, base, temperature, streams.target_coins, streams.correction
        )
        outcome = RoundOutcome(
            case=RoundCase.TARGET_ESCALATED,
            tau_a=tau_a,
            tau_m=tau_m,
            tau_t=suffix_trace.tau,
            emitted=draft.tokens[:tau_m] + suffix_trace.emitted,
            proxy_called=True,
            target_called=True,
            drafter_passes=drafter.invocation_count - drafter_before,
            proxy_passes=proxy.invocation_count - proxy_before,
            target_passes=target.invocation_count - target_before,
            proxy_coins=coins,
            margins=margins,
            correction_is_bonus=suffix_trace.correction_is_bonus,
            draft=draft,
        )
    outcome.validate()
    return outcome


@dataclass(frozen=True)
class TreeParams:
    """Draft-tree shape: expansion depth, per-node top-k, token budget."""

    depth: int = 6
    branch_topk: int = 10
    budget: int = 60


def trispec_tree_round(
    drafter: ModelOracle,
    proxy: ModelOracle,
    target: ModelOracle,
    ctx: Sequence[int],
    params: TreeParams,
    rule,
) -> RoundOutcome:
    """One greedy ternary round over a budgeted draft tree.

    The proxy greedily verifies the tree; ``tau_a`` is its accepted path
    length and the margin gate runs along that path (positions 1..tau_a+1,
    raw distributions -- tree rounds are greedy by construction). Case II
    commits the trusted prefix, prunes the tree below it, and hands every
    surviving branch to the target for greedy verification. The tree itself
    is expanded from the drafter's unshaped probabilities: collapsing them
    to argmax one-hots would leave nothing to branch on.
    """
    drafter_before = drafter.invocation_count
    proxy_before = proxy.invocation_count
    target_before = target.invocation_count

    tree = draft_tree(drafter, tuple(ctx), params.depth, params.branch_topk, params.budget)
    proxy_result = verify_tree_greedy(tree, proxy)
    tau_a = proxy_result.accepted_len
    margin_seq = list(proxy_result.path_dists) + [proxy_result.after_dist]
    margins = tuple(top2_margin(d) for d in margin_seq)
    tau_m = trusted_prefix_len(margin_seq, rule)

    if tau_a < tau_m:
        outcome = RoundOutcome(
            case=RoundCase.PROXY_ONLY,
            tau_a=tau_a,
            tau_m=tau_m,
            tau_t=None,
            emitted=proxy_result.emitted,
            proxy_called=True,
            target_called=False,
            drafter_passes=drafter.invocation_count - drafter_before,
            proxy_passes=proxy.invocation_count - proxy_before,
            target_passes=target.invocation_count - target_before,
            proxy_coins=(1,) * tau_a,
            margins=margins,
            correction_is_bonus=proxy_result.exhausted,
        )
    else:
        committed = proxy_result.path_tokens[:tau_m]
        remainder = prune_tree_prefix(tree, committed)
        target_result = verify_tree_greedy(remainder, target)
        outcome = RoundOutcome(
            case=RoundCase.TARGET_ESCALATED,
            tau_a=tau_a,
            tau_m=tau_m,
            tau_t=target_result.accepted_len,
            emitted=committed + target_result.emitted,
            proxy_called=True,
            target_called=True,
            drafter_passes=drafter.invocation_count - drafter_before,
            proxy_passes=proxy.invocation_count - proxy_before,
            target_passes=target.invocation_count - target_before,
            proxy_coins=(1,) * tau_a,
            margins=margins,
            correction_is_bonus=target_result.exhausted,
        )
    outcome.validate()
    return outcome
