"""Deterministic discrete-event simulation of decentralized agents.

Agents never wait on each other: when an action completes, the owner logs
its measurement, broadcasts it (each teammate delivery is dropped or
delayed independently), folds everything received since its last turn
into its belief in arrival order, picks its next action with only its own
belief, and immediately schedules the action's completion. The episode
ends once the team has taken a global measurement budget or some agent's
recovered support matches the truth exactly.

Event ordering is a (time, insertion sequence) heap, so identical seeds
replay bit-identically. Independent trials share nothing mutable.
"""

from __future__ import annotations

import heapq
import itertools
import logging
from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np

from .baseline_lu import LuState, lu_estimate, lu_recovered_support, lu_step
from .environment import GroundTruth, Measurement, NoiseParams, sense
from .geometry import GridSpec, Pose
from .inference import Belief, initial_belief, recovered_support, unik_step
from .policy import ActionSpace, random_action, select_action

__all__ = [
    "AgentState",
    "CommModel",
    "Event",
    "DurationDist",
    "UnikFilter",
    "LuFilter",
    "StepRecord",
    "TrialTrace",
    "run_episode",
    "recovery_status",
]

log = logging.getLogger(__name__)

ACTION_COMPLETE = "action_complete"
MESSAGE_DELIVERY = "message_delivery"


@dataclass(frozen=True)
class DurationDist:
    """Nonnegative duration distribution for task lengths and delays.

    kinds: "fixed" (params[0]), "uniform" (low, high), "exponential" (mean).
    """

    kind: str
    params: tuple[float, ...]

    def __post_init__(self) -> None:
        if self.kind not in ("fixed", "uniform", "exponential"):
            raise ValueError(f"unknown distribution kind {self.kind!r}")
        if any(p < 0 for p in self.params):
            raise ValueError("distribution parameters must be nonnegative")
        if self.kind == "uniform" and (len(self.params) != 2 or self.params[0] > self.params[1]):
            raise ValueError("uniform distribution needs low <= high")
        if self.kind in ("fixed", "exponential") and len(self.params) != 1:
            raise ValueError(f"{self.kind} distribution needs exactly one parameter")

    def sample(self, rng: np.random.Generator) -> float:
        if self.kind == "fixed":
            return self.params[0]
        if self.kind == "uniform":
            return float(rng.uniform(self.params[0], self.params[1]))
        return float(rng.exponential(self.params[0]))

    def __str__(self) -> str:
        return f"{self.kind}:{','.join(repr(p) for p in self.params)}"


FIXED_UNIT_DURATION = DurationDist("fixed", (1.0,))
NO_DELAY = DurationDist("fixed", (0.0,))


@dataclass(frozen=True)
class CommModel:
    """Unreliable broadcast channel: independent drops plus delivery delay."""

    delivery_prob: float = 1.0
    delay: DurationDist = NO_DELAY

    def __post_init__(self) -> None:
        if not 0.0 <= self.delivery_prob <= 1.0:
            raise ValueError("delivery_prob must lie in [0, 1]")


@dataclass(frozen=True, order=True)
class Event:
    """Queue entry; ordering is (time, insertion sequence), seq is unique."""

    time: float
    seq: int
    kind: str = field(compare=False)
    agent: int = field(compare=False)
    payload: object = field(compare=False)


class InferenceFilter(Protocol):
    def update(self, measurement: Measurement) -> None: ...
    def recovered(self) -> set[int]: ...
    def estimate(self) -> np.ndarray: ...


class UnikFilter:
    """Stateful wrapper around the Kalman posterior for one agent."""

    def __init__(
        self,
        grid: GridSpec,
        params: NoiseParams,
        lam: float,
        prior_var: float,
        decision_threshold: float,
    ):
        self.params = params
        self.lam = lam
        self.decision_threshold = decision_threshold
        self.belief = initial_belief(grid, prior_var)

    def update(self, measurement: Measurement) -> None:
        self.belief = unik_step(self.belief, measurement, self.params, self.lam)

    def recovered(self) -> set[int]:
        return recovered_support(self.belief, self.decision_threshold)

    def estimate(self) -> np.ndarray:
        return self.belief.mean


class LuFilter:
    """Stateful wrapper around the track-based baseline for one agent."""

    def __init__(
        self,
        grid: GridSpec,
        params: NoiseParams,
        c_lu: float,
        density_fraction: float,
    ):
        self.grid = grid
        self.params = params
        self.density_fraction = density_fraction
        self.state = LuState(tracks=[], c_lu=c_lu)

    def update(self, measurement: Measurement) -> None:
        self.state = lu_step(self.state, measurement, self.params)

    def recovered(self) -> set[int]:
        return lu_recovered_support(self.state, self.grid, self.density_fraction)

    def estimate(self) -> np.ndarray:
        return lu_estimate(self.state, self.grid)


@dataclass
class AgentState:
    """Per-agent runtime state; single writer, copy-safe values."""

    id: int
    filter: InferenceFilter
    policy_rng: np.random.Generator
    sense_rng: np.random.Generator
    measurement_log: list[Measurement] = field(default_factory=list)
    seen: set[tuple[int, int]] = field(default_factory=set)
    inbox: list[Measurement] = field(default_factory=list)
    busy_until: float = 0.0
    next_seq: int = 0
    is_recovered: bool = False
    own_count: int = 0


@dataclass
class StepRecord:
    """Trace entry for one completed sensing action (global order)."""

    t: int
    time: float
    agent: int
    pose: Pose
    observation: np.ndarray
    estimate: np.ndarray
    recovered: bool


@dataclass
class TrialTrace:
    steps: list[StepRecord]
    first_recovery: int  # global measurement count at first team recovery, -1 if never
    executed: int
    agents: list[AgentState]


def recovery_status(agents: list[AgentState], truth: GroundTruth) -> bool:
    """True when any single agent's recovered support matches the truth."""
    return any(a.filter.recovered() == set(truth.support) for a in agents)


def run_episode(
    truth: GroundTruth,
    space: ActionSpace,
    n_agents: int,
    policy: str,
    comm: CommModel,
    budget_t: int,
    durations: DurationDist,
    seed_seq: np.random.SeedSequence,
    params: NoiseParams,
    *,
    inference: str = "unik",
    lam: float = 1.0,
    prior_var: float = 1.0,
    decision_threshold: float = 0.5,
    c_lu: float = 0.75,
    lu_density_fraction: float = 0.5,
    reward_mode: str = "frobenius",
    score_workers: int = 1,
    on_step: Callable[[AgentState, StepRecord], None] | None = None,
) -> TrialTrace:
    """Simulate one seeded episode of decentralized active search."""
    if n_agents < 1:
        raise ValueError("need at least one agent")
    if budget_t < 1:
        raise ValueError("budget_t must be >= 1")
    if policy not in ("random", "ts"):
        raise ValueError(f"unknown policy {policy!r}")
    if inference not in ("unik", "lu"):
        raise ValueError(f"unknown inference {inference!r}")
    if policy == "ts" and inference != "unik":
        raise ValueError("the ts policy needs the Gaussian posterior (inference='unik')")

    grid = space.grid
    streams = seed_seq.spawn(2 * n_agents + 2)
    comm_rng = np.random.default_rng(streams[0])
    duration_rng = np.random.default_rng(streams[1])
    agents: list[AgentState] = []
    for j in range(n_agents):
        if inference == "unik":
            filt: InferenceFilter = UnikFilter(grid, params, lam, prior_var, decision_threshold)
        else:
            filt = LuFilter(grid, params, c_lu, lu_density_fraction)
        agents.append(
            AgentState(
                id=j,
                filter=filt,
                policy_rng=np.random.default_rng(streams[2 + 2 * j]),
                sense_rng=np.random.default_rng(streams[3 + 2 * j]),
            )
        )

    def choose(agent: AgentState):
        if policy == "random":
            return random_action(space, agent.policy_rng)
        return select_action(
            agent.filter.belief,  # type: ignore[union-attr]
            space,
            params,
            lam,
            agent.policy_rng,
            mode=reward_mode,
            workers=score_workers,
        )

    steps: list[StepRecord] = []
    first_recovery = -1
    count = 0

    # A k=0 truth is recovered by the fresh beliefs before any sensing.
    if recovery_status(agents, truth):
        for agent in agents:
            agent.is_recovered = True
        return TrialTrace(steps=[], first_recovery=0, executed=0, agents=agents)

    heap: list[Event] = []
    seq = itertools.count()
    for agent in agents:
        action = choose(agent)
        agent.busy_until = durations.sample(duration_rng)
        heapq.heappush(heap, Event(agent.busy_until, next(seq), ACTION_COMPLETE, agent.id, action))

    while heap:
        event = heapq.heappop(heap)
        time = event.time
        agent = agents[event.agent]
        if event.kind == MESSAGE_DELIVERY:
            meas: Measurement = event.payload  # type: ignore[assignment]
            if meas.key not in agent.seen:
                agent.seen.add(meas.key)
                agent.measurement_log.append(meas)
                agent.inbox.append(meas)
            continue

        # Completion: sense now, log, broadcast, infer, choose, reschedule.
        action = event.payload  # type: ignore[assignment]
        y = sense(truth, action, params, agent.sense_rng)
        meas = Measurement(action=action, observation=y, origin_agent=agent.id, seq=agent.next_seq)
        agent.next_seq += 1
        count += 1
        agent.seen.add(meas.key)
        agent.measurement_log.append(meas)
        agent.own_count += 1
        for other in agents:
            if other.id == agent.id:
                continue
            if comm_rng.random() < comm.delivery_prob:
                delay = comm.delay.sample(comm_rng)
                heapq.heappush(heap, Event(time + delay, next(seq), MESSAGE_DELIVERY, other.id, meas))

        for pending in agent.inbox:
            agent.filter.update(pending)
        agent.inbox.clear()
        agent.filter.update(meas)
        agent.is_recovered = agent.filter.recovered() == set(truth.support)
        team_recovered = any(a.is_recovered for a in agents)
        record = StepRecord(
            t=count,
            time=time,
            agent=agent.id,
            pose=action.pose,
            observation=y,
            estimate=agent.filter.estimate().copy(),
            recovered=team_recovered,
        )
        steps.append(record)
        if on_step is not None:
            on_step(agent, record)
        if team_recovered:
            first_recovery = count
            break
        if count >= budget_t:
            break
        next_action = choose(agent)
        duration = durations.sample(duration_rng)
        agent.busy_until = time + duration
        heapq.heappush(heap, Event(agent.busy_until, next(seq), ACTION_COMPLETE, agent.id, next_action))

    # Drain in-flight deliveries into logs so every sent measurement lands.
    while heap:
        event = heapq.heappop(heap)
        if event.kind != MESSAGE_DELIVERY:
            continue
        meas = event.payload  # type: ignore[assignment]
        agent = agents[event.agent]
        if meas.key not in agent.seen:
            agent.seen.add(meas.key)
            agent.measurement_log.append(meas)
            agent.inbox.append(meas)

    log.debug("episode done: %d measurements, first_recovery=%d", count, first_recovery)
    return TrialTrace(steps=steps, first_recovery=first_recovery, executed=count, agents=agents)
