"""Draft proposal structures: linear chains and budgeted token trees.

A draft chain is the classic speculative block: k tokens sampled
autoregressively from the drafter, each recorded together with the exact
(temperature-shaped) distribution it was sampled from, because the
verification rule needs those probabilities later.

A draft tree generalizes the chain: every frontier node proposes its
top-``branch_topk`` continuations, and the tree keeps the globally most
probable nodes (by drafter path probability) within a fixed token budget.
Trees verify greedily downstream, and carry the boolean ancestor mask a
tree-attention pass would use, so masks are part of the contract here.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import Distribution, apply_temperature, sample, RandomStream
from .models import ModelOracle

__all__ = [
    "DraftChain",
    "DraftTree",
    "PathNotInTreeError",
    "TreeNode",
    "draft_chain",
    "draft_tree",
    "prune_tree_prefix",
]


class PathNotInTreeError(ValueError):
    """Raised when a supposedly accepted path does not exist in the tree."""


@dataclass(frozen=True)
class DraftChain:
    """k drafted tokens plus the shaped distributions they were drawn from."""

    tokens: tuple[int, ...]
    dists: tuple[Distribution, ...]

    def __post_init__(self) -> None:
        if len(self.tokens) != len(self.dists) or not self.tokens:
            raise ValueError("chain needs one distribution per drafted token")
        for tok, dist in zip(self.tokens, self.dists):
            if dist.prob(tok) <= 0.0:
                raise ValueError("drafted token has zero probability in its own dist")

    @property
    def k(self) -> int:
        return len(self.tokens)

    def suffix(self, start: int) -> "DraftChain":
        """The sub-chain from position ``start`` (0-based) onward."""
        return DraftChain(self.tokens[start:], self.dists[start:])


def draft_chain(
    drafter: ModelOracle,
    ctx: tuple[int, ...] | list[int],
    k: int,
    temperature: float,
    stream: RandomStream,
) -> DraftChain:
    """Sample a k-token draft block autoregressively; k drafter passes."""
    if k < 1:
        raise ValueError("draft length k must be >= 1")
    base = tuple(ctx)
    tokens: list[int] = []
    dists: list[Distribution] = []
    for _ in range(k):
        shaped = apply_temperature(drafter.next_dist(base + tuple(tokens)), temperature)
        tokens.append(sample(shaped, stream))
        dists.append(shaped)
    return DraftChain(tuple(tokens), tuple(dists))


@dataclass(frozen=True)
class TreeNode:
    """One drafted token in a tree. ``parent`` is -1 for root children."""

    token: int
    parent: int
    depth: int
    prob: float       # shaped drafter probability of token given its path
    path_prob: float  # product of probs along the path from the root


@dataclass
class DraftTree:
    """A budgeted draft token tree rooted at the committed context tip.

    The root itself is implicit (it is the last committed token); ``nodes``
    holds drafted tokens only. ``mask[i][j]`` is True iff node j lies on the
    path from the root to node i, inclusive of i itself, which is exactly
    the attention-reachability a flattened scoring pass needs.
    """

    ctx: tuple[int, ...]
    nodes: list[TreeNode]
    mask: np.ndarray
    budget: int
    _children: dict[int, list[int]] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        n = len(self.nodes)
        if self.mask.shape != (n, n):
            raise ValueError("mask shape must match node count")
        children: dict[int, list[int]] = {-1: []}
        for i, node in enumerate(self.nodes):
            if node.parent >= i:
                raise ValueError("parents must precede children")
            children.setdefault(i, [])
            children[node.parent].append(i)
        self._children = children

    def __len__(self) -> int:
        return len(self.nodes)

    def children(self, node_id: int) -> list[int]:
        """Child node ids of ``node_id`` (-1 addresses the implicit root)."""
        return self._children.get(node_id, [])

    def path_ids(self, node_id: int) -> list[int]:
        out: list[int] = []
        cur = node_id
        while cur != -1:
            out.append(cur)
            cur = self.nodes[cur].parent
        out.reverse()
        return out

    def path_tokens(self, node_id: int) -> tuple[int, ...]:
        return tuple(self.nodes[i].token for i in self.path_ids(node_id))

    def validate(self) -> None:
        """Re-check structural invariants; raises on violation."""
        for i, node in enumerate(self.nodes):
            parent_depth = 0 if node.parent == -1 else self.nodes[node.parent].depth
            if node.depth != parent_depth + 1:
                raise ValueError(f"node {i} depth {node.depth} != parent depth + 1")
            if not 0.0 < node.prob <= 1.0:
                raise ValueError(f"node {i} probability {node.prob} out of (0, 1]")
            parent_pp = 1.0 if node.parent == -1 else self.nodes[node.parent].path_prob
            if abs(node.path_prob - parent_pp * node.prob) > 1e-12:
                raise ValueError(f"node {i} path probability is inconsistent")
            expect = np.zeros(len(self.nodes), dtype=bool)
            expect[self.path_ids(i)] = True
            if not np.array_equal(self.mask[i], expect):
                raise ValueError(f"mask row {i} is not the ancestor-or-self set")
        if len(self.nodes) > self.budget:
            raise ValueError("tree exceeds its token budget")


def _top_tokens(dist: Distribution, k: int) -> list[int]:
    # Highest probability first; ties broken toward the lower token index.
    order = np.lexsort((np.arange(len(dist)), -dist.probs))
    out = []
    for idx in order[:k]:
        if dist.prob(int(idx)) <= 0.0:
            break  # a drafter cannot propose mass-zero tokens
        out.append(int(idx))
    return out


def draft_tree(
    drafter: ModelOracle,
    ctx: tuple[int, ...] | list[int],
    depth: int,
    branch_topk: int,
    budget: int,
    temperature: float = 1.0,
) -> DraftTree:
    """Grow a static draft tree: expand level by level, keep the best.

    Each frontier node spawns its ``branch_topk`` most probable children;
    generation stops at ``depth``. The final tree keeps the ``budget``
    candidates with the highest path probability (an ancestor-closed set,
    since a child never outranks its parent). The whole frontier of a level
    is scored in one flattened drafter pass, so a tree costs one drafter
    pass per expanded level.
    """
    if depth < 1 or branch_topk < 1 or budget < 1:
        raise ValueError("depth, branch_topk and budget must all be >= 1")
    base = tuple(ctx)
    # Candidate pool: (token, parent candidate id, depth, prob, path_prob).
    pool: list[tuple[int, int, int, float, float]] = []
    frontier: list[tuple[int, tuple[int, ...], float]] = [(-1, (), 1.0)]
    for level in range(1, depth + 1):
        grown: list[tuple[int, tuple[int, ...], float]] = []
        level_dists = drafter.batch_score_paths(base, [path for _, path, _ in frontier])
        for (parent_id, path, path_prob), raw in zip(frontier, level_dists):
            dist = apply_temperature(raw, temperature)
            for tok in _top_tokens(dist, branch_topk):
                p = dist.prob(tok)
                cand_id = len(pool)
                pool.append((tok, parent_id, level, p, path_prob * p))
                grown.append((cand_id, path + (tok,), path_prob * p))
        if not grown:
            break
        # Only the `budget` most promising candidates can ever be kept, so
        # deeper exploration below the rest is wasted work.
        grown.sort(key=lambda item: (-item[2], item[0]))
        frontier = grown[:budget]

    # Global selection: best path probability first, creation order on ties
    # (a parent is created before and never outranked by its child).
    order = sorted(range(len(pool)), key=lambda i: (-pool[i][4], i))
    chosen: list[int] = []
    chosen_set: set[int] = set()
    for cand in order:
        if len(chosen) == budget:
            break
        parent = pool[cand][1]
        if parent != -1 and parent not in chosen_set:
            continue  # budget already exhausted along that branch
        chosen.append(cand)
        chosen_set.add(cand)

    chosen.sort()  # creation order: parents first, level by level
    renumber = {cand: i for i, cand in enumerate(chosen)}
    nodes = [
        TreeNode(
            token=pool[cand][0],
            parent=renumber[pool[cand][1]] if pool[cand][1] != -1 else -1,
            depth=pool[cand][2],
            prob=pool[cand][3],
            path_prob=pool[cand][4],
        )
        for cand in chosen
    ]
    return DraftTree(ctx=base, nodes=nodes, mask=_ancestor_mask(nodes), budget=budget)


def _ancestor_mask(nodes: list[TreeNode]) -> np.ndarray:
    n = len(nodes)
    mask = np.zeros((n, n), dtype=bool)
    for i, node in enumerate(nodes):
        if node.parent != -1:
            mask[i] = mask[node.parent]
        mask[i, i] = True
    return mask


def prune_tree_prefix(tree: DraftTree, accepted: tuple[int, ...] | list[int]) -> DraftTree:
    """Re-root a tree below an accepted root-anchored token path.

    Sibling branches of every accepted node are dropped, the accepted tokens
    move into the tree's context, and depths/path probabilities/mask are
    rebuilt relative to the new root. An empty path returns the tree as is;
    accepting a full root-to-leaf path leaves an empty remainder tree.
    """
    accepted = tuple(int(t) for t in accepted)
    if not accepted:
        return tree
    cur = -1
    for tok in accepted:
        nxt = next((c for c in tree.children(cur) if tree.nodes[c].token == tok), None)
        if nxt is None:
            raise PathNotInTreeError(f"path {accepted!r} is not root-anchored in the tree")
        cur = nxt

    keep: list[int] = []
    stack = list(tree.children(cur))
    while stack:
        node_id = stack.pop()
        keep.append(node_id)
        stack.extend(tree.children(node_id))
    keep.sort()
    renumber = {old: new for new, old in enumerate(keep)}

    cut_depth = tree.nodes[cur].depth
    nodes: list[TreeNode] = []
    for old in keep:
        node = tree.nodes[old]
        parent = renumber[node.parent] if node.parent in renumber else -1
        parent_pp = 1.0 if parent == -1 else nodes[parent].path_prob
        nodes.append(
            TreeNode(
                token=node.token,
                parent=parent,
                depth=node.depth - cut_depth,
                prob=node.prob,
                path_prob=parent_pp * node.prob,
            )
        )
    return DraftTree(
        ctx=tree.ctx + accepted,
        nodes=nodes,
        mask=_ancestor_mask(nodes),
        budget=tree.budget,
    )
