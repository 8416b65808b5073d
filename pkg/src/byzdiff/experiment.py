"""Experiment sweeps: spec files, trial orchestration, CSV/JSON output.

Spec file grammar (read with :mod:`configparser`)::

    [fig2a]                    ; one section per experiment, name = section
    n = 1024                   ; base SystemConfig fields
    t = 16
    fan_out = 1
    seed = 1
    protocols = random, ltree:64   ; random | ltree:<ℓ> | tree | round_robin
    sweep = n                  ; n | t | ell | fan_out
    values = 128, 256, 512
    alpha = 17                 ; <int> | t_plus_1 | sqrt_2tn
    trials = 30
    metrics = delay, fanin, active
    behavior = silent          ; silent | spam | conforming
    faulty = t-1               ; t-1 or an integer count
    spam_budget = 1
    knows_genuine = true
    spam_target = single       ; single | scatter
    perturb_probs = 0          ; one run per listed probability
    drop_fraction = 0.5
    max_delay = 2
    max_rounds = auto          ; auto | <int>
    csv = out/fig2a.csv        ; optional output paths
    json = out/fig2a.json

Trial i of every sweep point uses the seed ``splitmix64(seed ^ i)``, so a
point's rows do not depend on where it sits in the sweep, and adding
trials never changes earlier ones.
"""

from __future__ import annotations

import configparser
import csv
import io
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .adversary import Behavior, FailureConfig, SpamTarget, sample_failure_config
from .analysis import counting_lower_bound, random_delay_form, tree_delay_form
from .core import (
    PerturbationConfig,
    Protocol,
    ProtocolKind,
    SystemConfig,
    UpdateIntro,
    validate_config,
)
from .engine import StopRule, run_trial
from .metrics import active_count_series, compute_fanin, default_window, delay_sample

log = logging.getLogger(__name__)

CSV_HEADER = ["experiment", "n", "t", "alpha", "ell", "fan_out", "protocol", "metric", "value", "stderr", "trials"]
SWEEP_AXES = ("n", "t", "ell", "fan_out")
METRICS = ("delay", "fanin", "active")
WORKERS_ENV = "BYZDIFF_WORKERS"
GENUINE_ID = "u"
SPURIOUS_ID = "spurious"

_MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def trial_seed(seed: int, trial_index: int) -> int:
    return splitmix64((seed ^ trial_index) & _MASK64)


@dataclass(frozen=True)
class AlphaRule:
    kind: str = "t_plus_1"  # fixed | t_plus_1 | sqrt_2tn
    value: int | None = None

    def __call__(self, n: int, t: int) -> int:
        if self.kind == "fixed":
            return self.value
        if self.kind == "t_plus_1":
            return t + 1
        if self.kind == "sqrt_2tn":
            return math.isqrt(2 * t * n - 1) + 1 if 2 * t * n > 1 else 1
        raise ValueError(f"unknown alpha rule {self.kind!r}")

    def text(self) -> str:
        return str(self.value) if self.kind == "fixed" else self.kind

    @classmethod
    def parse(cls, text: str) -> AlphaRule:
        text = text.strip()
        if text in ("t_plus_1", "sqrt_2tn"):
            return cls(text)
        return cls("fixed", int(text))


@dataclass(frozen=True)
class AdversarySpec:
    behavior: Behavior = Behavior.SILENT
    faulty: int | None = None  # None means t - 1
    spam_budget: int = 1
    knows_genuine: bool = True
    spam_target: SpamTarget = SpamTarget.SINGLE


@dataclass(frozen=True)
class ExperimentSpec:
    name: str
    base: SystemConfig
    sweep_axis: str = "n"
    values: tuple[int, ...] = ()
    alpha: AlphaRule = field(default_factory=AlphaRule)
    trials: int = 1
    adversary: AdversarySpec = field(default_factory=AdversarySpec)
    metrics: tuple[str, ...] = ("delay",)
    protocols: tuple[Protocol, ...] = ()
    perturb_probs: tuple[float, ...] = (0.0,)
    max_rounds: int | None = None
    csv_path: str | None = None
    json_path: str | None = None

    def __post_init__(self):
        if self.sweep_axis not in SWEEP_AXES:
            raise ValueError(f"sweep axis must be one of {SWEEP_AXES}")
        if list(self.values) != sorted(self.values):
            raise ValueError("sweep values must be sorted ascending")
        if self.trials < 1:
            raise ValueError("trials must be ≥ 1")
        bad = set(self.metrics) - set(METRICS)
        if bad:
            raise ValueError(f"unknown metrics {sorted(bad)}")

    @property
    def protocol_list(self) -> tuple[Protocol, ...]:
        return self.protocols or (self.base.protocol,)

    def points(self) -> list[tuple[SystemConfig, int]]:
        """Every (config, alpha) the experiment runs, in output order."""
        out = []
        for value in self.values or (None,):
            for proto in self.protocol_list:
                for p in self.perturb_probs:
                    cfg = replace(
                        self.base,
                        protocol=proto,
                        perturbation=replace(self.base.perturbation, perturb_prob=p),
                    )
                    if value is not None:
                        if self.sweep_axis == "ell":
                            if proto.kind is not ProtocolKind.LTREE:
                                continue
                            cfg = replace(cfg, protocol=Protocol.ltree(value))
                        else:
                            cfg = replace(cfg, **{self.sweep_axis: value})
                    out.append((cfg, self.alpha(cfg.n, cfg.t)))
        return out


# -- spec files ----------------------------------------------------------------


def format_protocol(p: Protocol) -> str:
    if p.kind is ProtocolKind.LTREE:
        return f"ltree:{p.block_size}"
    return p.kind.value


def parse_protocol(text: str, t: int) -> Protocol:
    text = text.strip()
    if text == "tree":
        return Protocol.tree(t)
    if text.startswith("ltree:"):
        return Protocol.ltree(int(text.split(":", 1)[1]))
    return Protocol(ProtocolKind(text))


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.replace(",", " ").split())


def spec_to_section(spec: ExperimentSpec) -> dict[str, str]:
    b = spec.base
    adv = spec.adversary
    return {
        "n": str(b.n),
        "t": str(b.t),
        "fan_out": str(b.fan_out),
        "seed": str(b.seed),
        "protocol": format_protocol(b.protocol),
        "protocols": ", ".join(format_protocol(p) for p in spec.protocols),
        "sweep": spec.sweep_axis,
        "values": ", ".join(str(v) for v in spec.values),
        "alpha": spec.alpha.text(),
        "trials": str(spec.trials),
        "metrics": ", ".join(spec.metrics),
        "behavior": adv.behavior.value,
        "faulty": "t-1" if adv.faulty is None else str(adv.faulty),
        "spam_budget": str(adv.spam_budget),
        "knows_genuine": str(adv.knows_genuine).lower(),
        "spam_target": adv.spam_target.value,
        "perturb_probs": ", ".join(repr(float(p)) for p in spec.perturb_probs),
        "base_perturb_prob": repr(float(b.perturbation.perturb_prob)),
        "drop_fraction": repr(float(b.perturbation.drop_fraction)),
        "max_delay": str(b.perturbation.max_delay),
        "max_rounds": "auto" if spec.max_rounds is None else str(spec.max_rounds),
        **({"csv": spec.csv_path} if spec.csv_path else {}),
        **({"json": spec.json_path} if spec.json_path else {}),
    }


def dump_specs(specs: list[ExperimentSpec]) -> str:
    parser = configparser.ConfigParser(interpolation=None)
    for spec in specs:
        parser[spec.name] = spec_to_section(spec)
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def spec_from_section(name: str, sec) -> ExperimentSpec:
    t = int(sec.get("t"))
    pert = PerturbationConfig(
        float(sec.get("base_perturb_prob", "0")),
        float(sec.get("drop_fraction", "0.5")),
        int(sec.get("max_delay", "2")),
    )
    base = SystemConfig(
        n=int(sec.get("n")),
        t=t,
        fan_out=int(sec.get("fan_out", "1")),
        protocol=parse_protocol(sec.get("protocol", "random"), t),
        perturbation=pert,
        seed=int(sec.get("seed", "0")),
    )
    protos = tuple(parse_protocol(p, t) for p in sec.get("protocols", "").split(",") if p.strip())
    faulty = sec.get("faulty", "t-1").strip()
    adv = AdversarySpec(
        behavior=Behavior(sec.get("behavior", "silent").strip()),
        faulty=None if faulty == "t-1" else int(faulty),
        spam_budget=int(sec.get("spam_budget", "1")),
        knows_genuine=sec.getboolean("knows_genuine", True),
        spam_target=SpamTarget(sec.get("spam_target", "single").strip()),
    )
    probs = sec.get("perturb_probs", "").replace(",", " ").split()
    max_rounds = sec.get("max_rounds", "auto").strip()
    return ExperimentSpec(
        name=name,
        base=base,
        sweep_axis=sec.get("sweep", "n").strip(),
        values=_ints(sec.get("values", "")),
        alpha=AlphaRule.parse(sec.get("alpha", "t_plus_1")),
        trials=int(sec.get("trials", "1")),
        adversary=adv,
        metrics=tuple(m.strip() for m in sec.get("metrics", "delay").split(",") if m.strip()),
        protocols=protos,
        perturb_probs=tuple(float(p) for p in probs) or (pert.perturb_prob,),
        max_rounds=None if max_rounds == "auto" else int(max_rounds),
        csv_path=sec.get("csv"),
        json_path=sec.get("json"),
    )


def load_specs(text: str) -> list[ExperimentSpec]:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    parser.read_string(text)
    return [spec_from_section(name, parser[name]) for name in parser.sections()]


# -- built-in experiments ------------------------------------------------------

POW2_SWEEP = tuple(2**k for k in range(7, 15))


def builtin(name: str, seed: int = 1) -> ExperimentSpec:
    if name == "fig1":
        return ExperimentSpec(
            "fig1",
            SystemConfig(100, 1, 1, Protocol.random(), seed=seed),
            sweep_axis="t",
            values=(1, 2, 4, 8, 16),
            alpha=AlphaRule("t_plus_1"),
            trials=50,
            metrics=("delay", "active"),
        )
    if name in ("fig2a", "fig2b"):
        return ExperimentSpec(
            name,
            SystemConfig(128, 16, 1, Protocol.random(), seed=seed),
            sweep_axis="n",
            values=POW2_SWEEP,
            alpha=AlphaRule("fixed", 17) if name == "fig2a" else AlphaRule("sqrt_2tn"),
            trials=30,
            metrics=("delay",),
            protocols=(Protocol.random(), Protocol.ltree(64)),
        )
    if name == "perturb":
        return replace(
            builtin("fig2a", seed),
            name="perturb",
            base=SystemConfig(128, 16, 1, perturbation=PerturbationConfig(0.0, 0.5, 2), seed=seed),
            perturb_probs=(0.0, 0.05),
        )
    raise KeyError(f"unknown built-in experiment {name!r}; choose from {BUILTINS}")


BUILTINS = ("fig1", "fig2a", "fig2b", "perturb")


# -- running -------------------------------------------------------------------


def pick_initial_set(rng: np.random.Generator, n: int, faulty: frozenset[int], alpha: int) -> frozenset[int]:
    correct = np.setdiff1d(np.arange(n), np.fromiter(faulty, dtype=np.int64, count=len(faulty)))
    if alpha > correct.size:
        raise ValueError(f"alpha={alpha} exceeds the {correct.size} correct replicas")
    return frozenset(int(x) for x in rng.choice(correct, size=alpha, replace=False))


def setup_trial(config: SystemConfig, alpha: int, adversary: AdversarySpec, index: int):
    """Config, schedule and failure config for trial ``index`` of a point."""
    seed = trial_seed(config.seed, index)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    failure = sample_failure_config(
        rng,
        config.n,
        config.t,
        adversary.behavior,
        size=adversary.faulty,
        spam_budget=adversary.spam_budget,
        knows_genuine=adversary.knows_genuine,
        spam_target=adversary.spam_target,
    )
    schedule = [UpdateIntro(GENUINE_ID, 0, pick_initial_set(rng, config.n, failure.faulty_set, alpha))]
    if adversary.behavior is Behavior.SPAM:
        schedule.append(UpdateIntro.spurious(SPURIOUS_ID))
    return config.with_seed(seed), schedule, failure


def _run_one(args) -> dict:
    config, alpha, adversary, index, metrics, max_rounds = args
    cfg, schedule, failure = setup_trial(config, alpha, adversary, index)
    record = "fanin" in metrics
    trace = run_trial(cfg, schedule, failure, StopRule(max_rounds), record=record)
    out: dict = {"delay": delay_sample(trace, GENUINE_ID), "final_round": trace.final_round}
    if record:
        l, k = default_window(trace, GENUINE_ID)
        fan = compute_fanin(trace, windows=[(l, k)])
        out["fanin"] = fan.mean_max
        out["fanin_peak"] = fan.peak
        out["fanin_amortized"] = fan.amortized[(l, k)]
    if "active" in metrics:
        out["active"] = active_count_series(trace, GENUINE_ID).tolist()
        out["n_correct"] = int(trace.correct_mask.sum())
    if any(u.genuine is False for u in schedule):
        j = trace.update_index(SPURIOUS_ID)
        out["spurious_accepts"] = int((trace.accept_round[j][trace.correct_mask] >= 0).sum())
    return out


def worker_count(workers: int | None = None) -> int:
    if workers is not None:
        return max(1, workers)
    return max(1, int(os.environ.get(WORKERS_ENV, "1")))


def run_trials(config: SystemConfig, alpha: int, spec: ExperimentSpec, workers: int = 1) -> list[dict]:
    jobs = [(config, alpha, spec.adversary, i, spec.metrics, spec.max_rounds) for i in range(spec.trials)]
    if workers <= 1:
        return [_run_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        # map preserves trial order, so output never depends on scheduling
        return list(pool.map(_run_one, jobs))


def _mean_se(values) -> tuple[float, float]:
    a = np.asarray(values, dtype=float)
    if a.size == 0:
        return math.nan, math.nan
    se = float(a.std(ddof=1) / math.sqrt(a.size)) if a.size > 1 else 0.0
    return float(a.mean()), se


def protocol_label(config: SystemConfig) -> str:
    label = config.protocol.label()
    p = config.perturbation.perturb_prob
    return label if p == 0 else f"{label}+p{p:g}"


def delay_form(config: SystemConfig, alpha: int) -> float | None:
    n, t, f = config.n, config.t, config.fan_out
    if alpha < t:
        return None
    if config.protocol.kind is ProtocolKind.LTREE:
        return tree_delay_form(n, alpha, t, f, config.protocol.block_size).value
    return random_delay_form(n, alpha, t, f).value


def summarize_point(spec: ExperimentSpec, config: SystemConfig, alpha: int, results: list[dict]):
    """CSV rows and a JSON point record for one sweep point."""
    ell = config.protocol.block_size if config.protocol.kind is ProtocolKind.LTREE else ""
    key = [spec.name, config.n, config.t, alpha, ell, config.fan_out, protocol_label(config)]
    rows: list[list] = []
    point: dict = {"n": config.n, "t": config.t, "alpha": alpha, "ell": ell or None,
                   "fan_out": config.fan_out, "protocol": protocol_label(config), "metrics": {}}

    def add(metric, value, stderr="", trials=len(results)):
        rows.append(key + [metric, _fmt(value), _fmt(stderr), trials])
        point["metrics"][metric] = {"value": value, "stderr": stderr if stderr != "" else None, "trials": trials}

    delays = [r["delay"] for r in results if r["delay"] is not None]
    if "delay" in spec.metrics:
        mean, se = _mean_se(delays)
        add("delay", mean, se, len(delays))
        add("delay_nonterminating", len(results) - len(delays))
    if "fanin" in spec.metrics:
        for metric in ("fanin", "fanin_amortized"):
            add(metric, *_mean_se([r[metric] for r in results]))
        add("fanin_peak", max(r["fanin_peak"] for r in results))
    if "active" in spec.metrics:
        width = max(len(r["active"]) for r in results)
        # a finished trial keeps its final count for the remaining rounds
        padded = np.array([r["active"] + r["active"][-1:] * (width - len(r["active"])) for r in results], dtype=float)
        for rnd in range(width):
            add(f"active_count@{rnd}", *_mean_se(padded[:, rnd]))
    if any("spurious_accepts" in r for r in results):
        add("spurious_accepts", sum(r["spurious_accepts"] for r in results))

    n_correct = config.n - (config.t - 1 if spec.adversary.faulty is None else spec.adversary.faulty)
    if 1 <= alpha <= n_correct:
        add("bound_counting", counting_lower_bound(n_correct, alpha, config.t, config.fan_out))
    form = delay_form(config, alpha)
    if form is not None:
        add("form_delay", form)
    return rows, point


def _fmt(value) -> str:
    if value == "" or value is None:
        return ""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, float) and math.isnan(value):
        return "nan"
    return f"{float(value):.6g}"


@dataclass
class ExperimentResult:
    rows: list[list]
    summary: dict

    def csv_text(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        writer.writerows(self.rows)
        return buf.getvalue()

    def json_text(self) -> str:
        return json.dumps(self.summary, indent=2, sort_keys=True, default=str) + "\n"


def run_experiment(
    spec: ExperimentSpec,
    workers: int | None = None,
    csv_path: str | os.PathLike | None = None,
    json_path: str | os.PathLike | None = None,
) -> ExperimentResult:
    """Run every sweep point; rows are written to ``csv_path`` as each point completes."""
    workers = worker_count(workers)
    csv_path = csv_path or spec.csv_path
    json_path = json_path or spec.json_path
    points = spec.points()
    advisories: list[str] = []
    for cfg, _ in points:
        for a in validate_config(cfg).advisories:
            if a not in advisories:
                advisories.append(a)

    rows: list[list] = []
    records: list[dict] = []
    out = None
    if csv_path:
        Path(csv_path).parent.mkdir(parents=True, exist_ok=True)
        out = open(csv_path, "w", newline="")
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(CSV_HEADER)
    try:
        for cfg, alpha in points:
            log.info("%s: n=%d t=%d alpha=%d %s", spec.name, cfg.n, cfg.t, alpha, protocol_label(cfg))
            results = run_trials(cfg, alpha, spec, workers)
            point_rows, record = summarize_point(spec, cfg, alpha, results)
            rows.extend(point_rows)
            records.append(record)
            if out:
                writer.writerows(point_rows)
                out.flush()
    finally:
        if out:
            out.close()

    summary = {
        "experiment": spec.name,
        "config": spec_to_section(spec),
        "advisories": advisories,
        "points": records,
    }
    result = ExperimentResult(rows, summary)
    if json_path:
        Path(json_path).parent.mkdir(parents=True, exist_ok=True)
        Path(json_path).write_text(result.json_text())
    return result


# -- plot data -----------------------------------------------------------------

DEFAULT_PLOT_METRICS = ("delay", "active_count", "form_delay")


def read_rows(text: str) -> list[dict]:
    return list(csv.DictReader(io.StringIO(text)))


def _sweep_axis(rows: list[dict]) -> str:
    for axis in SWEEP_AXES:
        if len({r[axis] for r in rows}) > 1:
            return axis
    return "n"


def emit_plot_data(rows, out_dir, metrics=DEFAULT_PLOT_METRICS) -> list[Path]:
    """Write whitespace-separated ``x y stderr`` files, one per series.

    Per-round active counts become one file per (protocol, sweep value)
    with the round as x. Every other selected metric becomes one file per
    protocol with the sweep value as x; ``form_*`` and ``bound_*`` metrics
    are written as ``*.overlay.dat``.
    """
    rows = [r if isinstance(r, dict) else dict(zip(CSV_HEADER, map(str, r))) for r in rows]
    if not rows:
        raise ValueError("empty result table")
    metrics = tuple(metrics)
    if not metrics:
        log.warning("no metrics selected; no plot files written")
        return []
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    axis = _sweep_axis(rows)
    series: dict[str, list[tuple[float, str, str]]] = {}
    for r in rows:
        metric = r["metric"]
        base, _, rnd = metric.partition("@")
        if base not in metrics:
            continue
        exp, proto = r["experiment"], r["protocol"]
        if rnd:
            name = f"{exp}_{proto}_{axis}{r[axis]}_{base}.dat"
            x = float(rnd)
        else:
            suffix = ".overlay.dat" if base.startswith(("form_", "bound_")) else ".dat"
            name = f"{exp}_{proto}_{base}{suffix}"
            x = float(r[axis])
        series.setdefault(name, []).append((x, r["value"], r["stderr"] or "0"))
    written = []
    for name in sorted(series):
        pts = sorted(series[name], key=lambda p: p[0])
        path = out_dir / name
        path.write_text("".join(f"{x:g} {y} {se}\n" for x, y, se in pts))
        written.append(path)
    return written
