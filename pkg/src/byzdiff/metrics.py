"""Delay and fan-in measurements over trial traces."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .adversary import FailureConfig
from .core import UpdateIntro
from .engine import TrialTrace


class UpdateNotFound(KeyError):
    pass


def _index(trace: TrialTrace, update_id) -> int:
    try:
        return trace.update_index(update_id)
    except KeyError:
        raise UpdateNotFound(update_id) from None


@dataclass(frozen=True)
class DelayStats:
    samples: tuple[int, ...]
    non_terminating: int = 0
    cap: int | None = None

    @property
    def trials(self) -> int:
        return len(self.samples) + self.non_terminating

    @property
    def mean(self) -> float:
        return float(np.mean(self.samples)) if self.samples else math.nan

    @property
    def stderr(self) -> float:
        if len(self.samples) < 2:
            return 0.0 if self.samples else math.nan
        return float(np.std(self.samples, ddof=1) / math.sqrt(len(self.samples)))

    def percentile(self, q: float) -> float:
        return float(np.percentile(self.samples, q)) if self.samples else math.nan

    @property
    def percentiles(self) -> dict[int, float]:
        return {q: self.percentile(q) for q in (5, 50, 95)}


def delay_sample(trace: TrialTrace, update_id) -> int | None:
    """Rounds from introduction until the last correct replica accepted, or None."""
    i = _index(trace, update_id)
    acc = trace.accept_round[i][trace.correct_mask]
    if acc.size == 0:
        return 0
    if (acc < 0).any():
        return None
    return int(acc.max() - trace.schedule[i].intro_round)


def compute_delay(traces, update_id) -> DelayStats:
    samples, missing, cap = [], 0, None
    for trace in traces:
        d = delay_sample(trace, update_id)
        if d is None:
            missing += 1
            cap = trace.final_round
        else:
            samples.append(d)
    return DelayStats(tuple(samples), missing, cap)


@dataclass(frozen=True)
class FanInStats:
    """Per-round fan-in of one trace plus any requested amortized windows.

    ``per_round_max[i]`` is the most messages any correct replica got from
    correct replicas in round i. ``amortized`` maps ``(l, k)`` to the max
    over correct replicas of the mean load in rounds l..l+k-1.
    """

    per_round_max: np.ndarray
    amortized: dict[tuple[int, int], float] = field(default_factory=dict)

    @property
    def peak(self) -> int:
        return int(self.per_round_max.max(initial=0))

    @property
    def mean_max(self) -> float:
        return float(self.per_round_max.mean()) if self.per_round_max.size else 0.0


def default_window(trace: TrialTrace, update_id=None) -> tuple[int, int]:
    eta = trace.schedule[_index(trace, update_id)].intro_round if update_id is not None else 0
    return eta + 1, max(1, math.ceil(math.log2(trace.n)))


def _loads(trace: TrialTrace, failure: FailureConfig | None, count_empty: bool) -> np.ndarray:
    loads = trace.recv_correct if count_empty else trace.recv_correct_nonempty
    if loads is None:
        raise ValueError("trace was run without record=True; per-replica loads unavailable")
    if failure is not None and failure.faulty_set != trace.failure.faulty_set:
        raise ValueError("failure config does not match the trace")
    return loads[:, trace.correct_mask]


def compute_fanin(
    trace: TrialTrace,
    failure_config: FailureConfig | None = None,
    windows=(),
    count_empty: bool = True,
) -> FanInStats:
    """Fan-in from correct senders only; faulty messages never count."""
    if trace.recv_correct is None and count_empty and not windows:
        return FanInStats(trace.max_fanin.copy())
    loads = _loads(trace, failure_config, count_empty)
    per_round = loads.max(axis=1, initial=0)
    amortized = {}
    for l, k in windows:
        if k < 1 or l < 0:
            raise ValueError("window needs l ≥ 0 and k ≥ 1")
        block = loads[l : l + k]
        # rounds past the end of the trial carry no load
        amortized[(l, k)] = float(block.sum(axis=0).max(initial=0) / k)
    return FanInStats(per_round, amortized)


@dataclass(frozen=True)
class FanInSummary:
    mean_of_max: float
    stderr: float
    overall_max: int
    trials: int


def aggregate_fanin(stats: list[FanInStats]) -> FanInSummary:
    """Mean over trials of each trial's mean per-round max.

    A sampled lower estimate: the maximum over all failure configurations
    is not computed, only over those sampled.
    """
    per_trial = np.array([s.mean_max for s in stats])
    stderr = float(per_trial.std(ddof=1) / math.sqrt(len(per_trial))) if len(per_trial) > 1 else 0.0
    return FanInSummary(
        float(per_trial.mean()) if len(per_trial) else math.nan,
        stderr,
        max((s.peak for s in stats), default=0),
        len(stats),
    )


def active_count_series(trace: TrialTrace, update_id) -> np.ndarray:
    """Correct replicas active for the update, one entry per round from its introduction."""
    i = _index(trace, update_id)
    eta = trace.schedule[i].intro_round
    acc = trace.accept_round[i][trace.correct_mask]
    acc = acc[acc >= 0]
    rounds = np.arange(eta, max(trace.final_round, eta) + 1)
    return np.searchsorted(np.sort(acc), rounds, side="right")


def all_active_round(trace: TrialTrace, update_id) -> int | None:
    d = delay_sample(trace, update_id)
    return None if d is None else trace.schedule[_index(trace, update_id)].intro_round + d


def mean_received(trace: TrialTrace, replicas) -> float:
    """Mean messages from correct senders per round per listed replica."""
    if trace.recv_correct is None:
        raise ValueError("trace was run without record=True")
    return float(trace.recv_correct[:, list(replicas)].mean())


def fraction_rounds_within(stats: list[FanInStats], limit: float) -> float:
    rounds = np.concatenate([s.per_round_max for s in stats])
    return float((rounds <= limit).mean()) if rounds.size else 1.0


def relabel_trace(trace: TrialTrace, perm) -> TrialTrace:
    """The same trace with replica p renamed ``perm[p]``."""
    perm = np.asarray(perm)
    inv = np.empty_like(perm)
    inv[perm] = np.arange(perm.size)
    f = trace.failure
    failure = FailureConfig(
        frozenset(int(perm[p]) for p in f.faulty_set),
        {int(perm[p]): b for p, b in f.behaviors.items()},
        f.spam_budget,
        f.knows_genuine,
        f.spam_target,
        None if f.victim is None else int(perm[f.victim]),
    )
    schedule = tuple(
        UpdateIntro(u.update_id, u.intro_round, frozenset(int(perm[p]) for p in u.initial_set), u.genuine)
        for u in trace.schedule
    )

    def cols(a):
        return None if a is None else a[:, inv]

    return replace(
        trace,
        failure=failure,
        schedule=schedule,
        accept_round=trace.accept_round[:, inv],
        sent=cols(trace.sent),
        recv_correct=cols(trace.recv_correct),
        recv_correct_nonempty=cols(trace.recv_correct_nonempty),
        recv_faulty=cols(trace.recv_faulty),
        messages=None,
    )
