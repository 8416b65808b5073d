"""Domain types shared by the simulator, protocols and analysis code."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Hashable


class InvalidParameter(ValueError):
    """A parameter violates a model constraint.

    ``field`` names the offending parameter and ``constraint`` the rule it broke.
    """

    def __init__(self, field: str, constraint: str):
        self.field = field
        self.constraint = constraint
        super().__init__(f"{field}: {constraint}")


class ConfigError(ValueError):
    """Raised by :func:`validate_config` with every violation collected."""

    def __init__(self, errors: list[InvalidParameter]):
        self.errors = errors
        super().__init__("; ".join(str(e) for e in errors))


class ProtocolKind(str, Enum):
    RANDOM = "random"
    LTREE = "ltree"
    ROUND_ROBIN = "round_robin"


@dataclass(frozen=True)
class Protocol:
    """Target-selection strategy. ``block_size`` is only meaningful for LTREE."""

    kind: ProtocolKind = ProtocolKind.RANDOM
    block_size: int | None = None

    @classmethod
    def random(cls) -> Protocol:
        return cls(ProtocolKind.RANDOM)

    @classmethod
    def ltree(cls, block_size: int) -> Protocol:
        return cls(ProtocolKind.LTREE, block_size)

    @classmethod
    def tree(cls, t: int) -> Protocol:
        # Tree-Random is ℓ-Tree-Random with blocks of 4t replicas.
        return cls(ProtocolKind.LTREE, 4 * t)

    @classmethod
    def round_robin(cls) -> Protocol:
        return cls(ProtocolKind.ROUND_ROBIN)

    def label(self) -> str:
        if self.kind is ProtocolKind.LTREE:
            return f"ltree{self.block_size}"
        return self.kind.value


@dataclass(frozen=True)
class PerturbationConfig:
    perturb_prob: float = 0.0
    drop_fraction: float = 0.0
    max_delay: int = 1

    @property
    def synchronous(self) -> bool:
        return self.perturb_prob == 0.0


@dataclass(frozen=True)
class SystemConfig:
    n: int
    t: int
    fan_out: int = 1
    protocol: Protocol = field(default_factory=Protocol.random)
    perturbation: PerturbationConfig = field(default_factory=PerturbationConfig)
    seed: int = 0

    def with_seed(self, seed: int) -> SystemConfig:
        return replace(self, seed=seed)


@dataclass(frozen=True)
class UpdateIntro:
    update_id: Hashable
    intro_round: int
    initial_set: frozenset[int]
    genuine: bool = True

    @property
    def alpha(self) -> int:
        return len(self.initial_set)

    @classmethod
    def spurious(cls, update_id: Hashable, intro_round: int = 0) -> UpdateIntro:
        return cls(update_id, intro_round, frozenset(), genuine=False)


@dataclass(frozen=True)
class Message:
    sender: int
    send_round: int
    payload: frozenset
    receiver: int | None = None


@dataclass
class ReplicaState:
    """Per-replica view of one update (the engine keeps these in arrays)."""

    replica_id: int
    senders_seen: set[int] = field(default_factory=set)
    accepted: bool = False
    accept_round: int | None = None

    def receive(self, sender: int, round_index: int, t: int, initial_set=frozenset()) -> bool:
        if sender == self.replica_id:
            raise InvalidParameter("sender", "a replica never receives from itself")
        self.senders_seen.add(sender)
        if not self.accepted and accept_rule(self.replica_id, self.senders_seen, initial_set, t):
            self.accepted = True
            self.accept_round = round_index
        return self.accepted


def accept_rule(replica_id: int, senders_seen, initial_set, t: int) -> bool:
    """True iff the replica got the update at introduction or from ``t`` distinct others.

    Faulty and correct senders count the same; the rule cannot tell them apart.
    """
    return replica_id in initial_set or len(senders_seen) >= t


@dataclass(frozen=True)
class ValidatedConfig:
    config: SystemConfig
    advisories: tuple[str, ...] = ()


def validate_config(config: SystemConfig) -> ValidatedConfig:
    """Check every model constraint, collecting all violations.

    Raises ConfigError listing each violated invariant. Parameters outside
    the ranges covered by the delay analysis only produce advisories.
    """
    errors: list[InvalidParameter] = []
    advisories: list[str] = []
    n, t, f = config.n, config.t, config.fan_out

    if not isinstance(n, int) or n < 1:
        errors.append(InvalidParameter("n", "n ≥ 1"))
    if not isinstance(t, int) or t < 1:
        errors.append(InvalidParameter("t", "t ≥ 1"))
    elif isinstance(n, int) and t > n:
        errors.append(InvalidParameter("t", "t ≤ n"))
    if not isinstance(f, int) or f < 1:
        errors.append(InvalidParameter("fan_out", "fan_out ≥ 1"))
    elif isinstance(n, int) and f > n - 1:
        errors.append(InvalidParameter("fan_out", "fan_out ≤ n − 1"))

    proto = config.protocol
    if proto.kind is ProtocolKind.LTREE:
        ell = proto.block_size
        if not isinstance(ell, int) or ell < 1:
            errors.append(InvalidParameter("protocol.block_size", "1 ≤ ℓ"))
        elif isinstance(n, int) and ell > n:
            errors.append(InvalidParameter("protocol.block_size", "ℓ ≤ n"))
        elif isinstance(t, int) and ell < 4 * t:
            advisories.append(f"ℓ={ell} < 4t={4 * t}: outside the analyzed ℓ-Tree range")

    p = config.perturbation
    if not 0.0 <= p.perturb_prob <= 1.0:
        errors.append(InvalidParameter("perturbation.perturb_prob", "0 ≤ perturb_prob ≤ 1"))
    if not 0.0 <= p.drop_fraction <= 1.0:
        errors.append(InvalidParameter("perturbation.drop_fraction", "0 ≤ drop_fraction ≤ 1"))
    if not isinstance(p.max_delay, int) or p.max_delay < 1:
        errors.append(InvalidParameter("perturbation.max_delay", "max_delay ≥ 1"))

    if not isinstance(config.seed, int) or not 0 <= config.seed < 2**64:
        errors.append(InvalidParameter("seed", "0 ≤ seed < 2^64"))

    if errors:
        raise ConfigError(errors)

    if proto.kind is ProtocolKind.RANDOM and t > n / 4:
        advisories.append(f"t={t} > n/4={n / 4:g}: outside the Random delay bound range")
    return ValidatedConfig(config, tuple(advisories))
