import pytest
from hypothesis import given, strategies as st

from byzdiff.core import (
    ConfigError,
    PerturbationConfig,
    Protocol,
    ReplicaState,
    SystemConfig,
    accept_rule,
    validate_config,
)


def test_reference_simulation_parameters_are_valid():
    v = validate_config(SystemConfig(n=100, t=16, fan_out=1, protocol=Protocol.random()))
    assert v.config == SystemConfig(100, 16, 1)
    assert v.advisories == ()


def test_zero_threshold_is_rejected():
    with pytest.raises(ConfigError) as err:
        validate_config(SystemConfig(n=10, t=0))
    assert [e.field for e in err.value.errors] == ["t"]
    assert "t ≥ 1" in str(err.value)


def test_large_threshold_gets_advisory_not_error():
    v = validate_config(SystemConfig(n=100, t=30, fan_out=1))
    assert len(v.advisories) == 1
    assert "t=30 > n/4" in v.advisories[0]


def test_all_violations_are_collected():
    bad = SystemConfig(
        n=4, t=5, fan_out=4, protocol=Protocol.ltree(9), perturbation=PerturbationConfig(1.5, -0.1, 0)
    )
    with pytest.raises(ConfigError) as err:
        validate_config(bad)
    fields = {e.field for e in err.value.errors}
    assert fields == {
        "t",
        "fan_out",
        "protocol.block_size",
        "perturbation.perturb_prob",
        "perturbation.drop_fraction",
        "perturbation.max_delay",
    }


def test_small_block_size_is_advisory():
    v = validate_config(SystemConfig(n=100, t=4, protocol=Protocol.ltree(8)))
    assert any("ℓ=8" in a for a in v.advisories)


@given(
    n=st.integers(1, 300),
    t=st.integers(-2, 300),
    f=st.integers(0, 300),
)
def test_validation_is_deterministic_and_pure(n, t, f):
    cfg = SystemConfig(n, t, f)

    def outcome():
        try:
            return validate_config(cfg)
        except ConfigError as e:
            return str(e)

    assert outcome() == outcome()
    assert cfg == SystemConfig(n, t, f)


def test_accept_rule():
    assert accept_rule(3, set(), {3, 4}, t=5)
    assert not accept_rule(0, {"f1", "f2"}, set(), t=3)
    assert accept_rule(0, {"f1", "f2", "c1"}, set(), t=3)


def test_replica_state_counts_distinct_senders():
    s = ReplicaState(0)
    s.receive(1, 0, t=3)
    s.receive(2, 0, t=3)
    s.receive(2, 1, t=3)
    assert not s.accepted and s.senders_seen == {1, 2}
    s.receive(5, 2, t=3)
    assert s.accepted and s.accept_round == 2
    s.receive(7, 9, t=3)
    assert s.accept_round == 2
