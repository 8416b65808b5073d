"""Byzantine-tolerant update diffusion: round simulator, metrics and bounds."""

from .adversary import Behavior, FailureConfig, SpamTarget, faulty_sends, sample_failure_config
from .analysis import (
    BoundReport,
    counting_lower_bound,
    coupon_R,
    fanin_forms,
    random_delay_form,
    tradeoff_product,
    tree_delay_form,
)
from .core import (
    ConfigError,
    InvalidParameter,
    Message,
    PerturbationConfig,
    Protocol,
    ProtocolKind,
    ReplicaState,
    SystemConfig,
    UpdateIntro,
    accept_rule,
    validate_config,
)
from .engine import StopRule, TrialTrace, run_trial
from .metrics import DelayStats, FanInStats, active_count_series, compute_delay, compute_fanin
from .protocols import TreeLayout, build_tree_layout, ltree_targets, random_targets, round_robin_targets

__version__ = "0.1.0"
