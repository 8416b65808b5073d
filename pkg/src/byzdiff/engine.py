"""Synchronous round engine.

Each round has three phases: every participating replica picks targets and
sends its accepted updates; the channel delivers, delays or drops each
message; every replica folds what it received into its distinct-sender
sets and applies the acceptance rule. Updates introduced in round r are
accepted by their initial set in round r and forwarded from round r+1.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .adversary import Behavior, FailureConfig, spam_batch
from .analysis import counting_lower_bound
from .core import (
    InvalidParameter,
    PerturbationConfig,
    Protocol,
    ProtocolKind,
    SystemConfig,
    UpdateIntro,
    validate_config,
)
from .protocols import TargetSelector

NOT_ACCEPTED = -1

# perturb() outcomes: deliver now, deliver later, or drop
DELIVER = 0
DROP = -1

_STREAMS = ("protocol", "adversary", "perturb_correct", "perturb_faulty")


@dataclass(frozen=True)
class StopRule:
    """Stop once every correct replica accepted every genuine update.

    ``max_rounds`` guards divergence; ``None`` means 100x the counting
    bound (at least 100 rounds) past the last introduction.
    """

    max_rounds: int | None = None
    until_all_accepted: bool = True

    def limit(self, config: SystemConfig, schedule, failure: FailureConfig) -> int:
        if self.max_rounds is not None:
            return self.max_rounds
        n_correct = config.n - len(failure.faulty_set)
        genuine = [u for u in schedule if u.genuine]
        last = max((u.intro_round for u in schedule), default=0)
        if not genuine:
            return last + 100
        bound = max(
            counting_lower_bound(n_correct, min(u.alpha, n_correct), config.t, config.fan_out)
            for u in genuine
        )
        return last + max(100 * bound, 100)


def perturb(rng: np.random.Generator, count: int, pconfig: PerturbationConfig) -> np.ndarray:
    """Channel fate of ``count`` messages: 0 deliver now, d > 0 delay by d rounds, -1 drop."""
    fate = np.zeros(count, dtype=np.int64)
    if pconfig.perturb_prob == 0.0 or count == 0:
        return fate
    hit = np.nonzero(rng.random(count) < pconfig.perturb_prob)[0]
    if hit.size == 0:
        return fate
    drop = rng.random(hit.size) < pconfig.drop_fraction
    delay = rng.integers(1, pconfig.max_delay + 1, size=hit.size)
    fate[hit] = np.where(drop, DROP, delay)
    return fate


def perturb_one(rng: np.random.Generator, message, pconfig: PerturbationConfig) -> int:
    return int(perturb(rng, 1, pconfig)[0])


@dataclass
class TrialTrace:
    """Everything one trial produced.

    ``accept_round[u, p]`` is the round replica p accepted the u-th update of
    ``schedule`` or -1. The per-round (rounds, n) arrays are only kept when
    the trial ran with ``record=True``.
    """

    config: SystemConfig
    failure: FailureConfig
    schedule: tuple[UpdateIntro, ...]
    accept_round: np.ndarray
    final_round: int
    terminated: bool
    sent: np.ndarray | None = None
    recv_correct: np.ndarray | None = None
    recv_correct_nonempty: np.ndarray | None = None
    recv_faulty: np.ndarray | None = None
    max_fanin: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    messages: list | None = None

    @property
    def n(self) -> int:
        return self.config.n

    @property
    def correct_mask(self) -> np.ndarray:
        mask = np.ones(self.n, dtype=bool)
        mask[list(self.failure.faulty_set)] = False
        return mask

    @property
    def correct_ids(self) -> np.ndarray:
        return np.nonzero(self.correct_mask)[0]

    def update_index(self, update_id) -> int:
        for i, u in enumerate(self.schedule):
            if u.update_id == update_id:
                return i
        raise KeyError(update_id)

    def acceptance_events(self) -> list[tuple[int, object, int]]:
        """(replica, update_id, round) for every acceptance, ordered by round then replica."""
        events = []
        for i, u in enumerate(self.schedule):
            for p in np.nonzero(self.accept_round[i] >= 0)[0]:
                events.append((int(self.accept_round[i, p]), i, int(p), u.update_id))
        events.sort(key=lambda e: (e[0], e[1], e[2]))
        return [(p, uid, r) for r, _, p, uid in events]


def _seed_streams(seed: int) -> dict[str, np.random.Generator]:
    root = np.random.SeedSequence(seed)
    return {name: np.random.default_rng(child) for name, child in zip(_STREAMS, root.spawn(len(_STREAMS)))}


class _TrialState:
    def __init__(self, config: SystemConfig, schedule, failure: FailureConfig, record: bool, keep_messages: bool):
        self.config = config
        self.keep_messages = keep_messages
        self.schedule = tuple(schedule)
        self.failure = failure
        self.record = record
        n, t = config.n, config.t
        self.n, self.t = n, t
        self.rngs = _seed_streams(config.seed)
        self.selector = TargetSelector(config.protocol, n, config.fan_out)

        self.correct = np.ones(n, dtype=bool)
        self.correct[list(failure.faulty_set)] = False
        conforming = failure.ids(Behavior.CONFORMING)
        self.participants = np.sort(np.concatenate([np.nonzero(self.correct)[0], conforming]))
        self.is_participant = np.zeros(n, dtype=bool)
        self.is_participant[self.participants] = True
        self.spammers = failure.ids(Behavior.SPAM)

        num_u = len(self.schedule)
        self.genuine = np.array([u.genuine for u in self.schedule], dtype=bool)
        self.intro_round = np.array([u.intro_round for u in self.schedule], dtype=np.int64)
        self.accept_round = np.full((num_u, n), NOT_ACCEPTED, dtype=np.int64)
        # first t distinct senders per (update, replica); more are never needed
        self.seen = np.full((num_u, n, t), -1, dtype=np.int64)
        self.seen_count = np.zeros((num_u, n), dtype=np.int64)
        self.pending: dict[int, list[tuple[np.ndarray, np.ndarray, np.ndarray]]] = {}

        self.sent_rows: list[np.ndarray] = []
        self.recv_c_rows: list[np.ndarray] = []
        self.recv_cn_rows: list[np.ndarray] = []
        self.recv_f_rows: list[np.ndarray] = []
        self.max_fanin: list[int] = []
        self.messages: list = []

    def done(self, r: int) -> bool:
        if r < self.intro_round.max(initial=0):
            return False
        acc = self.accept_round[self.genuine][:, self.correct]
        return bool((acc >= 0).all())

    def step_round(self, r: int) -> None:
        n = self.n
        pconf = self.config.perturbation

        # send phase
        src, dst = self.selector.select(self.rngs["protocol"], self.participants, r)
        known = (self.accept_round >= 0) & (self.accept_round < r)
        payload = known[:, src].T
        fsrc, fdst = spam_batch(self.failure, self.rngs["adversary"], self.spammers, n)
        if fsrc.size:
            fpay = np.zeros((fsrc.size, len(self.schedule)), dtype=bool)
            spam_ids = ~self.genuine.copy()
            if self.failure.knows_genuine:
                spam_ids |= self.genuine & (self.intro_round < r)
            fpay[:] = spam_ids
        else:
            fpay = np.zeros((0, len(self.schedule)), dtype=bool)
        if self.record:
            self.sent_rows.append(np.bincount(np.concatenate([src, fsrc]), minlength=n))
        if self.keep_messages:
            self.messages.append(
                (np.concatenate([src, fsrc]), np.concatenate([dst, fdst]), np.concatenate([payload, fpay]))
            )

        # delivery phase
        batches = self.pending.pop(r, [])
        for s, d, pay, rng in ((src, dst, payload, "perturb_correct"), (fsrc, fdst, fpay, "perturb_faulty")):
            fate = perturb(self.rngs[rng], s.size, pconf)
            now = fate == DELIVER
            batches.append((s[now], d[now], pay[now]))
            for delay in np.unique(fate[fate > 0]):
                sel = fate == delay
                self.pending.setdefault(r + int(delay), []).append((s[sel], d[sel], pay[sel]))
        s = np.concatenate([b[0] for b in batches])
        d = np.concatenate([b[1] for b in batches])
        pay = np.concatenate([b[2] for b in batches])

        from_correct = self.correct[s]
        recv_c = np.bincount(d[from_correct], minlength=n)
        recv_c[~self.correct] = 0
        self.max_fanin.append(int(recv_c.max(initial=0)))
        if self.record:
            nonempty = from_correct & pay.any(axis=1)
            cn = np.bincount(d[nonempty], minlength=n)
            cn[~self.correct] = 0
            self.recv_c_rows.append(recv_c)
            self.recv_cn_rows.append(cn)
            self.recv_f_rows.append(np.bincount(d[~from_correct], minlength=n))

        # receive phase
        for u in range(len(self.schedule)):
            self._receive(u, s, d, pay[:, u], r)
        for u in np.nonzero(self.intro_round == r)[0]:
            members = np.fromiter(self.schedule[u].initial_set, dtype=np.int64)
            members = members[self.accept_round[u, members] < 0]
            self.accept_round[u, members] = r

    def _receive(self, u: int, s: np.ndarray, d: np.ndarray, carries: np.ndarray, r: int) -> None:
        acc = self.accept_round[u]
        keep = carries & (acc[d] < 0) & self.is_participant[d]
        if not keep.any():
            return
        codes = np.unique(d[keep] * self.n + s[keep])
        rd, rs = codes // self.n, codes % self.n
        seen = self.seen[u]
        fresh = ~(seen[rd] == rs[:, None]).any(axis=1)
        rd, rs = rd[fresh], rs[fresh]
        if rd.size == 0:
            return
        # rd is sorted; rank of each new sender within its receiver group
        starts = np.searchsorted(rd, rd, side="left")
        pos = self.seen_count[u, rd] + (np.arange(rd.size) - starts)
        ok = pos < self.t
        seen[rd[ok], pos[ok]] = rs[ok]
        np.add.at(self.seen_count[u], rd, 1)
        crossed = np.unique(rd)
        crossed = crossed[self.seen_count[u, crossed] >= self.t]
        acc[crossed] = r


def run_trial(
    config: SystemConfig,
    schedule,
    failure: FailureConfig | None = None,
    stop: StopRule | None = None,
    record: bool = True,
    keep_messages: bool = False,
) -> TrialTrace:
    """Run rounds from 0 until the stop rule fires.

    Identical arguments give identical traces. Hitting ``max_rounds`` is
    recorded as ``terminated=False`` rather than raised. ``record`` keeps
    per-round, per-replica send/receive counts; ``keep_messages`` also keeps
    every sent ``(src, dst, payload)`` batch per round, faulty ones included.
    """
    validate_config(config)
    failure = failure or FailureConfig()
    failure.check(config.n, config.t)
    stop = stop or StopRule()
    schedule = tuple(schedule)
    for u in schedule:
        if u.genuine:
            if u.alpha < config.t:
                raise InvalidParameter("initial_set", f"alpha={u.alpha} < t={config.t}")
            if u.initial_set & failure.faulty_set:
                raise InvalidParameter("initial_set", "genuine initial sets hold correct replicas only")
        elif u.initial_set:
            raise InvalidParameter("initial_set", "spurious updates have no initial set")
    if len({u.update_id for u in schedule}) != len(schedule):
        raise InvalidParameter("schedule", "update ids must be unique")

    state = _TrialState(config, schedule, failure, record, keep_messages)
    limit = stop.limit(config, schedule, failure)
    r = 0
    terminated = False
    while r <= limit:
        state.step_round(r)
        if stop.until_all_accepted and state.done(r):
            terminated = True
            break
        r += 1
    final = min(r, limit)

    def stack(rows):
        return np.vstack(rows) if record and rows else None

    return TrialTrace(
        config=config,
        failure=failure,
        schedule=schedule,
        accept_round=state.accept_round,
        final_round=final,
        terminated=terminated,
        sent=stack(state.sent_rows),
        recv_correct=stack(state.recv_c_rows),
        recv_correct_nonempty=stack(state.recv_cn_rows),
        recv_faulty=stack(state.recv_f_rows),
        max_fanin=np.array(state.max_fanin, dtype=np.int64),
        messages=state.messages if keep_messages else None,
    )


# -- line-oriented trace format ------------------------------------------------


def _config_record(config: SystemConfig) -> dict:
    return {
        "n": config.n,
        "t": config.t,
        "fan_out": config.fan_out,
        "protocol": config.protocol.kind.value,
        "block_size": config.protocol.block_size,
        "perturb_prob": config.perturbation.perturb_prob,
        "drop_fraction": config.perturbation.drop_fraction,
        "max_delay": config.perturbation.max_delay,
        "seed": config.seed,
    }


def _config_from_record(rec: dict) -> SystemConfig:
    return SystemConfig(
        n=rec["n"],
        t=rec["t"],
        fan_out=rec["fan_out"],
        protocol=Protocol(ProtocolKind(rec["protocol"]), rec["block_size"]),
        perturbation=PerturbationConfig(rec["perturb_prob"], rec["drop_fraction"], rec["max_delay"]),
        seed=rec["seed"],
    )


def trace_to_jsonl(trace: TrialTrace) -> str:
    """One JSON object per line: config, failure, updates, rounds, accepts, end."""
    f = trace.failure
    lines = [
        {"type": "config", **_config_record(trace.config)},
        {
            "type": "failure",
            "faulty": sorted(f.faulty_set),
            "behaviors": {str(k): f.behavior(k).value for k in sorted(f.faulty_set)},
            "spam_budget": f.spam_budget,
            "knows_genuine": f.knows_genuine,
            "spam_target": f.spam_target.value,
            "victim": f.victim,
        },
    ]
    for u in trace.schedule:
        lines.append(
            {
                "type": "update",
                "id": u.update_id,
                "intro_round": u.intro_round,
                "initial_set": sorted(u.initial_set),
                "genuine": u.genuine,
            }
        )
    rounds = len(trace.max_fanin)
    for r in range(rounds):
        rec = {"type": "round", "round": r, "max_fanin": int(trace.max_fanin[r])}
        if trace.sent is not None:
            rec["sent"] = trace.sent[r].tolist()
            rec["recv_correct"] = trace.recv_correct[r].tolist()
            rec["recv_correct_nonempty"] = trace.recv_correct_nonempty[r].tolist()
            rec["recv_faulty"] = trace.recv_faulty[r].tolist()
        lines.append(rec)
    for p, uid, r in trace.acceptance_events():
        lines.append({"type": "accept", "replica": p, "update": uid, "round": r})
    lines.append({"type": "end", "final_round": trace.final_round, "terminated": trace.terminated})
    return "".join(json.dumps(rec, sort_keys=True, ensure_ascii=False) + "\n" for rec in lines)


def trace_from_jsonl(text: str) -> TrialTrace:
    from .adversary import SpamTarget

    config = failure = None
    schedule: list[UpdateIntro] = []
    rounds: list[dict] = []
    accepts: list[dict] = []
    end: dict = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        kind = rec.pop("type")
        if kind == "config":
            config = _config_from_record(rec)
        elif kind == "failure":
            failure = FailureConfig(
                frozenset(rec["faulty"]),
                {int(k): Behavior(v) for k, v in rec["behaviors"].items()},
                rec["spam_budget"],
                rec["knows_genuine"],
                SpamTarget(rec["spam_target"]),
                rec["victim"],
            )
        elif kind == "update":
            schedule.append(UpdateIntro(rec["id"], rec["intro_round"], frozenset(rec["initial_set"]), rec["genuine"]))
        elif kind == "round":
            rounds.append(rec)
        elif kind == "accept":
            accepts.append(rec)
        elif kind == "end":
            end = rec
    if config is None or failure is None:
        raise ValueError("trace is missing its config or failure record")
    index = {u.update_id: i for i, u in enumerate(schedule)}
    accept_round = np.full((len(schedule), config.n), NOT_ACCEPTED, dtype=np.int64)
    for a in accepts:
        accept_round[index[a["update"]], a["replica"]] = a["round"]
    detailed = bool(rounds) and "sent" in rounds[0]

    def col(key):
        return np.array([r[key] for r in rounds], dtype=np.int64) if detailed else None

    return TrialTrace(
        config=config,
        failure=failure,
        schedule=tuple(schedule),
        accept_round=accept_round,
        final_round=end.get("final_round", len(rounds) - 1),
        terminated=end.get("terminated", False),
        sent=col("sent"),
        recv_correct=col("recv_correct"),
        recv_correct_nonempty=col("recv_correct_nonempty"),
        recv_faulty=col("recv_faulty"),
        max_fanin=np.array([r["max_fanin"] for r in rounds], dtype=np.int64),
    )
