"""Faulty-replica configurations and their behaviors."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping

import numpy as np

from .core import InvalidParameter, Message


class Behavior(str, Enum):
    SILENT = "silent"
    SPAM = "spam"
    CONFORMING = "conforming"


class SpamTarget(str, Enum):
    SINGLE = "single"
    SCATTER = "scatter"


@dataclass(frozen=True)
class FailureConfig:
    """The faulty replicas of one trial and how they misbehave.

    ``victim`` is the replica all spam lands on in SINGLE mode. Spam is
    not bounded by the fan-out; only correct replicas are.
    """

    faulty_set: frozenset[int] = frozenset()
    behaviors: Mapping[int, Behavior] = field(default_factory=dict)
    spam_budget: int = 1
    knows_genuine: bool = True
    spam_target: SpamTarget = SpamTarget.SINGLE
    victim: int | None = None

    def __post_init__(self):
        if set(self.behaviors) - set(self.faulty_set):
            raise InvalidParameter("behaviors", "behaviors only for faulty replicas")
        if self.spam_budget < 1:
            raise InvalidParameter("spam_budget", "spam_budget ≥ 1")

    @classmethod
    def uniform(cls, faulty: Iterable[int], behavior: Behavior, **kwargs) -> FailureConfig:
        faulty = frozenset(int(f) for f in faulty)
        return cls(faulty, {f: Behavior(behavior) for f in sorted(faulty)}, **kwargs)

    def behavior(self, replica: int) -> Behavior:
        return self.behaviors.get(replica, Behavior.SILENT)

    def with_behavior(self, behavior: Behavior) -> FailureConfig:
        return FailureConfig(
            self.faulty_set,
            {f: Behavior(behavior) for f in sorted(self.faulty_set)},
            self.spam_budget,
            self.knows_genuine,
            self.spam_target,
            self.victim,
        )

    def ids(self, behavior: Behavior) -> np.ndarray:
        return np.array(
            sorted(f for f in self.faulty_set if self.behavior(f) is behavior), dtype=np.int64
        )

    def check(self, n: int, t: int) -> None:
        if len(self.faulty_set) > t - 1:
            raise InvalidParameter("faulty_set", "|faulty_set| ≤ t − 1")
        if any(not 0 <= f < n for f in self.faulty_set):
            raise InvalidParameter("faulty_set", "ids in 0..n−1")
        if self.victim is not None and not 0 <= self.victim < n:
            raise InvalidParameter("victim", "victim in 0..n−1")


def sample_failure_config(
    rng: np.random.Generator,
    n: int,
    t: int,
    behavior: Behavior = Behavior.SILENT,
    size: int | None = None,
    **kwargs,
) -> FailureConfig:
    """Pick ``t − 1`` faulty replicas (or ``size``) uniformly without replacement.

    For spam the single victim is drawn uniformly from the correct replicas.
    """
    if t < 1:
        raise InvalidParameter("t", "t ≥ 1")
    size = t - 1 if size is None else size
    if not 0 <= size <= min(t - 1, n):
        raise InvalidParameter("size", "0 ≤ size ≤ t − 1")
    faulty = rng.choice(n, size=size, replace=False) if size else np.array([], dtype=np.int64)
    victim = kwargs.pop("victim", None)
    if victim is None and Behavior(behavior) is Behavior.SPAM and size < n:
        correct = np.setdiff1d(np.arange(n), faulty)
        victim = int(correct[rng.integers(correct.size)])
    return FailureConfig.uniform(faulty, behavior, victim=victim, **kwargs)


def spam_batch(
    failure: FailureConfig, rng: np.random.Generator, spammers: np.ndarray, n: int
) -> tuple[np.ndarray, np.ndarray]:
    """Flat ``(src, dst)`` arrays for one round of spam from ``spammers``."""
    budget = failure.spam_budget
    if spammers.size == 0:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    src = np.repeat(spammers, budget)
    if failure.spam_target is SpamTarget.SINGLE and failure.victim is not None:
        dst = np.full(src.size, failure.victim, dtype=np.int64)
        # a spammer that is itself the victim has nobody to spam
        keep = dst != src
        return src[keep], dst[keep]
    dst = rng.integers(0, n - 1, size=src.size)
    dst = dst + (dst >= src)
    return src, dst


def spam_payload(failure: FailureConfig, spurious_ids, genuine_known) -> frozenset:
    payload = set(spurious_ids)
    if failure.knows_genuine:
        payload.update(genuine_known)
    return frozenset(payload)


def faulty_sends(
    behavior: Behavior,
    rng: np.random.Generator,
    round_index: int,
    faulty_id: int,
    failure: FailureConfig,
    known_updates: Mapping[object, bool] | Iterable,
    n: int,
    conform=None,
) -> list[Message]:
    """Messages one faulty replica sends this round.

    ``known_updates`` maps update ids to ``True`` for genuine ones (or is a
    plain iterable of spurious ids). ``conform`` is a callable returning the
    targets a correct replica would pick; it is only used for CONFORMING.
    """
    if faulty_id not in failure.faulty_set:
        raise InvalidParameter("faulty_id", "must be in faulty_set")
    behavior = Behavior(behavior)
    if behavior is Behavior.SILENT:
        return []
    if not isinstance(known_updates, Mapping):
        known_updates = {u: False for u in known_updates}
    if behavior is Behavior.CONFORMING:
        if conform is None:
            return []
        payload = frozenset(u for u, genuine in known_updates.items() if genuine)
        return [Message(faulty_id, round_index, payload, int(d)) for d in sorted(conform())]
    spurious = [u for u, genuine in known_updates.items() if not genuine]
    genuine = [u for u, g in known_updates.items() if g]
    payload = spam_payload(failure, spurious, genuine)
    _, dst = spam_batch(failure, rng, np.array([faulty_id]), n)
    return [Message(faulty_id, round_index, payload, int(d)) for d in dst]
