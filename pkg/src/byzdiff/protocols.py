"""Target selection: who each replica sends to in a round.

The single-replica functions (``random_targets``, ``ltree_targets``,
``round_robin_targets``) are thin wrappers over the batched selectors the
engine uses, so both paths share one sampler.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import InvalidParameter, Protocol, ProtocolKind


def sample_distinct(rng: np.random.Generator, pool_sizes: np.ndarray, k: int) -> np.ndarray:
    """Draw ``min(k, pool)`` distinct indices in ``[0, pool)`` for every row.

    Vectorized Floyd sampling: each row gets a uniformly random subset.
    Rows whose pool is not larger than ``k`` get the whole pool. Unused
    slots are -1.
    """
    pool_sizes = np.asarray(pool_sizes, dtype=np.int64)
    rows = pool_sizes.shape[0]
    out = np.full((rows, k), -1, dtype=np.int64)
    full = pool_sizes <= k
    if full.any():
        cols = np.arange(k)
        idx = np.nonzero(full)[0]
        take = cols[None, :] < pool_sizes[idx, None]
        out[idx] = np.where(take, cols[None, :], -1)
    part = np.nonzero(~full)[0]
    if part.size == 0:
        return out
    pool = pool_sizes[part]
    chosen = np.empty((part.size, k), dtype=np.int64)
    for step in range(k):
        j = pool - k + step
        draw = rng.integers(0, j + 1)
        if step:
            dup = (chosen[:, :step] == draw[:, None]).any(axis=1)
            draw = np.where(dup, j, draw)
        chosen[:, step] = draw
    out[part] = chosen
    return out


@dataclass(frozen=True)
class TreeLayout:
    """Blocks of ``block_size`` replicas placed on a level-order binary tree.

    ``candidates`` is an (n, 3ℓ) array of candidate ids padded with -1 and
    ``candidate_sizes`` the number of valid entries per row.
    """

    n: int
    block_size: int
    blocks: tuple[range, ...]
    candidates: np.ndarray
    candidate_sizes: np.ndarray

    @property
    def num_nodes(self) -> int:
        return len(self.blocks)

    def node_of(self, replica: int) -> int:
        return replica // self.block_size

    def candidate_set(self, replica: int) -> frozenset[int]:
        row = self.candidates[replica, : self.candidate_sizes[replica]]
        return frozenset(int(x) for x in row)

    def children(self, node: int) -> list[int]:
        return [c for c in (2 * node + 1, 2 * node + 2) if c < self.num_nodes]


def build_tree_layout(n: int, block_size: int) -> TreeLayout:
    if not 1 <= block_size <= n:
        raise InvalidParameter("block_size", "1 ≤ ℓ ≤ n")
    blocks = tuple(range(s, min(s + block_size, n)) for s in range(0, n, block_size))
    num_nodes = len(blocks)
    width = 3 * block_size
    candidates = np.full((n, width), -1, dtype=np.int64)
    sizes = np.zeros(n, dtype=np.int64)
    for node, block in enumerate(blocks):
        members = list(blocks[0])
        for child in (2 * node + 1, 2 * node + 2):
            if child < num_nodes:
                members.extend(blocks[child])
        members = np.array(sorted(set(members)), dtype=np.int64)
        for p in block:
            row = members[members != p]
            candidates[p, : row.size] = row
            sizes[p] = row.size
    return TreeLayout(n, block_size, blocks, candidates, sizes)


class TargetSelector:
    """Batched target selection for one protocol over ``n`` replicas."""

    def __init__(self, protocol: Protocol, n: int, fan_out: int):
        if fan_out > n - 1 and protocol.kind is not ProtocolKind.LTREE:
            raise InvalidParameter("fan_out", "fan_out ≤ n − 1")
        self.protocol = protocol
        self.n = n
        self.fan_out = fan_out
        self.layout = (
            build_tree_layout(n, protocol.block_size) if protocol.kind is ProtocolKind.LTREE else None
        )

    def select(
        self, rng: np.random.Generator, senders: np.ndarray, round_index: int
    ) -> tuple[np.ndarray, np.ndarray]:
        """Return flat ``(src, dst)`` arrays for every message sent by ``senders``."""
        senders = np.asarray(senders, dtype=np.int64)
        k = self.fan_out
        kind = self.protocol.kind
        if kind is ProtocolKind.RANDOM:
            idx = sample_distinct(rng, np.full(senders.size, self.n - 1), k)
            dst = idx + (idx >= senders[:, None])
        elif kind is ProtocolKind.LTREE:
            idx = sample_distinct(rng, self.layout.candidate_sizes[senders], k)
            dst = np.where(idx >= 0, self.layout.candidates[senders[:, None], np.maximum(idx, 0)], -1)
        else:
            offs = (round_index * k + np.arange(k)) % (self.n - 1)
            dst = (senders[:, None] + 1 + offs[None, :]) % self.n
        src = np.broadcast_to(senders[:, None], dst.shape)
        keep = dst >= 0
        return src[keep], dst[keep]


def _one(selector: TargetSelector, rng, self_id: int, round_index: int = 0) -> frozenset[int]:
    _, dst = selector.select(rng, np.array([self_id]), round_index)
    return frozenset(int(x) for x in dst)


def random_targets(rng: np.random.Generator, n: int, self_id: int, fan_out: int) -> frozenset[int]:
    """``fan_out`` distinct ids drawn uniformly from everyone but ``self_id``."""
    return _one(TargetSelector(Protocol.random(), n, fan_out), rng, self_id)


def ltree_targets(
    rng: np.random.Generator, layout: TreeLayout, self_id: int, fan_out: int
) -> frozenset[int]:
    idx = sample_distinct(rng, layout.candidate_sizes[[self_id]], fan_out)[0]
    return frozenset(int(layout.candidates[self_id, i]) for i in idx if i >= 0)


def round_robin_targets(round_index: int, n: int, self_id: int, fan_out: int) -> frozenset[int]:
    return _one(TargetSelector(Protocol.round_robin(), n, fan_out), None, self_id, round_index)
