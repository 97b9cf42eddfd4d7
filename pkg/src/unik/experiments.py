"""Experiment configuration, batch trial execution, and CSV persistence.

A run executes `trials` seeded episodes that differ only in the ground
truth and noise realizations (trial i derives every stream from
master_seed + i, so compared methods see identical worlds), then writes
the recovery-rate curve and the per-trial measurements-to-recovery table
as CSV with a sidecar echoing the exact resolved configuration.
"""

from __future__ import annotations

import dataclasses
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .environment import NoiseParams, make_ground_truth
from .errors import ConfigError
from .geometry import GridSpec
from .policy import ActionSpace
from .runtime import CommModel, DurationDist, TrialTrace, run_episode

__all__ = [
    "ExperimentConfig",
    "RecoveryCurve",
    "parse_config_text",
    "parse_distribution",
    "run_experiment",
    "run_sweep",
    "emit_csv",
]

log = logging.getLogger(__name__)


def parse_distribution(text: str) -> DurationDist:
    """Parse "kind:params" (for example "fixed:1", "uniform:0.5,1.5")."""
    kind, _, rest = text.partition(":")
    try:
        params = tuple(float(p) for p in rest.split(",")) if rest else ()
        return DurationDist(kind.strip(), params)
    except ValueError as exc:
        raise ConfigError(f"bad distribution {text!r}: {exc}") from exc


@dataclass(frozen=True)
class ExperimentConfig:
    """Resolved settings for one batch of trials.

    Defaults reproduce the reference setup: 16x16 grid, 500-measurement
    budget, 50 trials, unit prior variance and regularization, detection
    coefficient 0.02, radial location variance 0.4, 12 degree angular
    spread, candidate threshold 0.5.
    """

    rows: int = 16
    cols: int = 16
    k: int = 5
    agents: int = 1
    policy: str = "random"  # random | ts
    inference: str = "unik"  # unik | lu
    budget: int = 500
    trials: int = 50
    master_seed: int = 0
    detection_coeff: float = 0.02
    location_var: float = 0.4
    angular_spread: float = 12.0
    obs_threshold: float = 0.5
    radial_field_bound: float = 2.0
    decision_threshold: float = 0.5
    c_lu: float = -1.0  # -1 resolves to 2/3 when k == 1 else 3/4
    lu_density_fraction: float = 0.5
    lam: float = 1.0
    prior_var: float = 1.0
    reward_mode: str = "frobenius"  # frobenius | exact
    max_range: int = 5
    delivery_prob: float = 1.0
    delay: str = "fixed:0"
    duration: str = "fixed:1"
    workers: int = 1
    output: str = "results/run"

    def validated(self) -> "ExperimentConfig":
        cfg = self
        if cfg.c_lu < 0:
            cfg = dataclasses.replace(cfg, c_lu=(2.0 / 3.0 if cfg.k == 1 else 0.75))
        checks = [
            (cfg.rows >= 1 and cfg.cols >= 1, "grid dimensions must be >= 1"),
            (0 <= cfg.k <= cfg.rows * cfg.cols, "k out of range for the grid"),
            (cfg.agents >= 1, "agents must be >= 1"),
            (cfg.policy in ("random", "ts"), f"unknown policy {cfg.policy!r}"),
            (cfg.inference in ("unik", "lu"), f"unknown inference {cfg.inference!r}"),
            (cfg.budget >= 1, "budget must be >= 1"),
            (cfg.trials >= 1, "trials must be >= 1"),
            (cfg.reward_mode in ("frobenius", "exact"), f"unknown reward_mode {cfg.reward_mode!r}"),
            (cfg.max_range >= 1, "max_range must be >= 1"),
            (0.0 <= cfg.delivery_prob <= 1.0, "delivery_prob must lie in [0, 1]"),
            (cfg.workers >= 1, "workers must be >= 1"),
            (0.0 < cfg.c_lu < 1.0, "c_lu must lie in (0, 1)"),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigError(message)
        if cfg.policy == "ts" and cfg.inference != "unik":
            raise ConfigError("policy 'ts' requires inference 'unik'")
        try:
            cfg.noise_params()
            parse_distribution(cfg.delay)
            parse_distribution(cfg.duration)
        except (ValueError, ConfigError) as exc:
            raise ConfigError(str(exc)) from exc
        return cfg

    def noise_params(self) -> NoiseParams:
        return NoiseParams(
            detection_coeff=self.detection_coeff,
            location_var=self.location_var,
            angular_spread=self.angular_spread,
            obs_threshold=self.obs_threshold,
            radial_field_bound=self.radial_field_bound,
        )

    def grid(self) -> GridSpec:
        return GridSpec(self.rows, self.cols)

    def as_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            lines.append(f"{f.name} = {value!r}" if isinstance(value, float) else f"{f.name} = {value}")
        return "\n".join(lines) + "\n"


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}


def _parse_value(key: str, raw: str):
    if key not in _FIELD_TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    kind = _FIELD_TYPES[key]
    raw = raw.strip()
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r}: {raw!r}") from exc


def parse_config_text(
    text: str,
    base: ExperimentConfig | None = None,
    source: str = "<config>",
) -> ExperimentConfig:
    """Parse "key = value" lines (# comments) on top of the defaults."""
    values: dict[str, object] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        key, sep, raw = stripped.partition("=")
        if not sep:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key = key.strip()
        values[key] = _parse_value(key, raw)
    return dataclasses.replace(base or ExperimentConfig(), **values)


@dataclass
class RecoveryCurve:
    """Fraction of trials fully recovered by each global measurement count."""

    rates: np.ndarray  # (budget,), rates[t-1] is the rate at count t
    stderr: np.ndarray
    trials: int

    def __post_init__(self) -> None:
        if np.any(np.diff(self.rates) < 0):
            raise ValueError("recovery curve must be non-decreasing")


def _curve_from_records(records: list[int], budget: int) -> RecoveryCurve:
    n = len(records)
    rec = np.array(records)
    rates = np.empty(budget)
    stderr = np.empty(budget)
    for t in range(1, budget + 1):
        ind = ((rec >= 0) & (rec <= t)).astype(float)
        rates[t - 1] = ind.mean()
        stderr[t - 1] = ind.std(ddof=1) / np.sqrt(n) if n > 1 else 0.0
    return RecoveryCurve(rates=rates, stderr=stderr, trials=n)


def _format(value: float) -> str:
    return repr(float(value))


def emit_csv(curve: RecoveryCurve, records: list[int], stem: str | Path) -> tuple[Path, Path]:
    """Write `<stem>_curve.csv` and `<stem>_trials.csv` (UTF-8, LF).

    The trials file lists one row per trial with its global measurement
    count at first full recovery, -1 when the trial never recovered.
    """
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    curve_path = stem.parent / f"{stem.name}_curve.csv"
    trials_path = stem.parent / f"{stem.name}_trials.csv"
    try:
        with open(curve_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("t,recovery_rate,stderr\n")
            for t in range(1, len(curve.rates) + 1):
                fh.write(f"{t},{_format(curve.rates[t - 1])},{_format(curve.stderr[t - 1])}\n")
        with open(trials_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("trial,measurements_to_recovery\n")
            for i, r in enumerate(records):
                fh.write(f"{i},{r}\n")
    except OSError as exc:
        raise OSError(f"cannot write results to {stem}: {exc}") from exc
    return curve_path, trials_path


def _run_trial(config: ExperimentConfig, space: ActionSpace, trial: int) -> TrialTrace:
    seed_seq = np.random.SeedSequence(config.master_seed + trial)
    truth_stream, episode_stream = seed_seq.spawn(2)
    truth = make_ground_truth(config.grid(), config.k, np.random.default_rng(truth_stream))
    comm = CommModel(delivery_prob=config.delivery_prob, delay=parse_distribution(config.delay))
    return run_episode(
        truth,
        space,
        config.agents,
        config.policy,
        comm,
        config.budget,
        parse_distribution(config.duration),
        episode_stream,
        config.noise_params(),
        inference=config.inference,
        lam=config.lam,
        prior_var=config.prior_var,
        decision_threshold=config.decision_threshold,
        c_lu=config.c_lu,
        lu_density_fraction=config.lu_density_fraction,
        reward_mode=config.reward_mode,
    )


def run_experiment(
    config: ExperimentConfig,
    stem: str | Path | None = None,
    space: ActionSpace | None = None,
) -> tuple[RecoveryCurve, list[int]]:
    """Run all trials of a config, write CSVs, return curve and records."""
    config = config.validated()
    stem = Path(stem if stem is not None else config.output)
    # Fail on an unwritable output location before simulating anything.
    stem.parent.mkdir(parents=True, exist_ok=True)
    sidecar = stem.parent / f"{stem.name}_config.txt"
    sidecar.write_text(config.as_text(), encoding="utf-8")

    if space is None:
        space = ActionSpace(config.grid(), config.max_range)
    if config.policy == "ts":
        space.prepared(config.noise_params())  # build the cache before any pool
    records: list[int] = [0] * config.trials
    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            futures = {pool.submit(_run_trial, config, space, i): i for i in range(config.trials)}
            for future, i in futures.items():
                records[i] = future.result().first_recovery
    else:
        for i in range(config.trials):
            records[i] = _run_trial(config, space, i).first_recovery
            log.debug("trial %d: first_recovery=%d", i, records[i])
    curve = _curve_from_records(records, config.budget)
    emit_csv(curve, records, stem)
    return curve, records


def run_sweep(
    config: ExperimentConfig,
    agent_counts: list[int],
    target_counts: list[int],
    out_dir: str | Path,
) -> dict[tuple[int, int], tuple[RecoveryCurve, list[int]]]:
    """Cross-product sweep over team sizes and target counts."""
    out_dir = Path(out_dir)
    results = {}
    for j in agent_counts:
        for k in target_counts:
            combo = dataclasses.replace(config, agents=j, k=k)
            stem = out_dir / f"J{j}_k{k}"
            log.info("sweep combo J=%d k=%d -> %s", j, k, stem)
            results[(j, k)] = run_experiment(combo, stem=stem)
    return results
