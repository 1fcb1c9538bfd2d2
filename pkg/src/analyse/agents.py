"""Learning and scripted attacker agents under a brain/muscle split.

The muscle is a linear policy: sensor readings are normalized to [-1, 1],
mapped affinely, scaled by each actuator's half-span around its default, and
clipped to the declared range. The brain is a cross-entropy-method loop over
the flattened policy parameters.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from typing import Sequence


class AgentError(Exception):
    pass


@dataclass(frozen=True)
class SensorSpec:
    id: str  # dotted endpoint path simulator.model.attribute
    lo: float
    hi: float

    def __post_init__(self):
        if not (self.lo < self.hi):
            raise AgentError(f"sensor {self.id}: need lo < hi")

    def normalize(self, value: float) -> tuple[float, bool]:
        """Map into [-1, 1]; flags when the raw value had to be clamped."""
        clamped = min(max(value, self.lo), self.hi)
        x = 2.0 * (clamped - self.lo) / (self.hi - self.lo) - 1.0
        return x, clamped != value


@dataclass(frozen=True)
class ActuatorSpec:
    id: str
    lo: float
    hi: float
    default: float
    kind: str = "range"  # "range" or "binary"

    def __post_init__(self):
        if not (self.lo < self.hi):
            raise AgentError(f"actuator {self.id}: need lo < hi")
        if not (self.lo <= self.default <= self.hi):
            raise AgentError(f"actuator {self.id}: default outside range")

    def clip(self, value: float) -> float:
        return min(max(value, self.lo), self.hi)


@dataclass(frozen=True)
class Policy:
    """Linear map from normalized readings to actuator offsets.

    theta has shape n_actuators * (n_sensors + 1), laid out row-wise as
    [w_1..w_S, bias] per actuator. The zero policy returns every actuator's
    default.
    """

    n_sensors: int
    n_actuators: int
    theta: tuple[float, ...]

    def __post_init__(self):
        if len(self.theta) != self.n_actuators * (self.n_sensors + 1):
            raise AgentError("theta length does not match sensor/actuator counts")

    @classmethod
    def zeros(cls, n_sensors: int, n_actuators: int) -> "Policy":
        return cls(n_sensors, n_actuators, (0.0,) * (n_actuators * (n_sensors + 1)))


def muscle_act(
    policy: Policy,
    readings: Sequence[float],
    sensors: Sequence[SensorSpec],
    actuators: Sequence[ActuatorSpec],
) -> tuple[list[float], bool]:
    """Deterministic action for one readings vector.

    Returns (setpoints, any_reading_clamped). For each actuator the affine
    output scales the half-span around the declared default before clipping.
    """
    if len(readings) != policy.n_sensors or len(sensors) != policy.n_sensors:
        raise AgentError("readings length does not match the policy")
    if len(actuators) != policy.n_actuators:
        raise AgentError("actuator count does not match the policy")
    x = []
    clamped_any = False
    for value, spec in zip(readings, sensors):
        xi, clamped = spec.normalize(value)
        x.append(xi)
        clamped_any = clamped_any or clamped
    width = policy.n_sensors + 1
    setpoints = []
    for j, act in enumerate(actuators):
        row = policy.theta[j * width : (j + 1) * width]
        u = sum(w * xi for w, xi in zip(row[:-1], x)) + row[-1]
        half_span = (act.hi - act.lo) / 2.0
        setpoints.append(act.clip(act.default + u * half_span))
    return setpoints, clamped_any


ELITE_FRACTION = 0.2
SIGMA_FLOOR = 0.01


@dataclass
class CemDistribution:
    mean: list[float]
    sigma: list[float]

    @classmethod
    def initial(cls, dim: int, sigma0: float = 1.0) -> "CemDistribution":
        return cls(mean=[0.0] * dim, sigma=[sigma0] * dim)

    def sample(self, rng: random.Random) -> tuple[float, ...]:
        return tuple(rng.gauss(m, s) for m, s in zip(self.mean, self.sigma))


def cem_update(
    population: Sequence[tuple[Sequence[float], float]],
    elite_fraction: float = ELITE_FRACTION,
    sigma_floor: float = SIGMA_FLOOR,
) -> CemDistribution:
    """Refit the sampling distribution to the elite candidates.

    population is a list of (theta, episode return). Keeps the top
    ceil(elite_fraction * n) candidates by return (ties keep the lowest
    index), then returns their per-parameter mean and standard deviation,
    floored at sigma_floor.
    """
    n = len(population)
    if n < 4:
        raise AgentError(f"population size must be >= 4, got {n}")
    dim = len(population[0][0])
    order = sorted(range(n), key=lambda i: (-population[i][1], i))
    k = math.ceil(elite_fraction * n)
    elites = [population[i][0] for i in order[:k]]
    mean = [sum(theta[d] for theta in elites) / k for d in range(dim)]
    sigma = []
    for d in range(dim):
        var = sum((theta[d] - mean[d]) ** 2 for theta in elites) / k
        sigma.append(max(math.sqrt(var), sigma_floor))
    return CemDistribution(mean=mean, sigma=sigma)


@dataclass(frozen=True)
class Experience:
    """One agent step: what was read, what was done, what it earned."""

    episode: int
    step: int
    readings: tuple[float, ...]
    setpoints: tuple[float, ...]
    reward: float

    def check_shapes(self, n_sensors: int, n_actuators: int) -> None:
        if len(self.readings) != n_sensors or len(self.setpoints) != n_actuators:
            raise AgentError("experience vector lengths do not match the specs")


@dataclass(frozen=True)
class Objective:
    kind: str  # damage | profit | custom
    agents: tuple[str, ...] = ()  # market agent ids owned by this attacker
    cost_per_mvar: float = 0.0
    weights: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("damage", "profit", "custom"):
            raise AgentError(f"unknown objective kind {self.kind!r}")
        for name, w in self.weights.items():
            if not math.isfinite(w):
                raise AgentError(f"objective weight {name!r} is not finite")


DIVERGENCE_PENALTY = 10.0


def objective_eval(aggregates: dict, objective: Objective) -> float:
    """Reward for one agent step from the step's telemetry aggregates.

    damage: summed band excursions (pu) plus 10 per diverged power flow.
    profit: own market payments minus cost_per_mvar * own offered volume.
    custom: declared weighted sum over named scalar aggregates.
    """
    if objective.kind == "damage":
        return aggregates["violation_sum_pu"] + DIVERGENCE_PENALTY * aggregates["diverged"]
    if objective.kind == "profit":
        payments = aggregates["payments_eur"]
        offered = aggregates["offered_mvar"]
        earned = sum(payments.get(a, 0.0) for a in objective.agents)
        cost = objective.cost_per_mvar * sum(offered.get(a, 0.0) for a in objective.agents)
        return earned - cost
    value = 0.0
    for name, weight in objective.weights.items():
        if name not in aggregates or isinstance(aggregates[name], dict):
            raise AgentError(f"unknown objective aggregate {name!r}")
        value += weight * aggregates[name]
    return value


@dataclass(frozen=True)
class Schedule:
    phases: tuple["Phase", ...]

    def __post_init__(self):
        if not self.phases:
            raise AgentError("schedule needs at least one phase")


@dataclass(frozen=True)
class Phase:
    name: str
    mode: str  # train | test
    episodes: int
    episode_length: int

    def __post_init__(self):
        if self.mode not in ("train", "test"):
            raise AgentError(f"phase {self.name}: unknown mode {self.mode!r}")
        if self.episodes < 1:
            raise AgentError(f"phase {self.name}: episodes must be >= 1")
        if self.episode_length < 1:
            raise AgentError(f"phase {self.name}: episode_length must be >= 1")


class ScriptedAgent:
    """Non-learning baselines: "none", "random", and "replay"."""

    def __init__(self, kind: str, actuators: Sequence[ActuatorSpec],
                 replay: Sequence[Sequence[float]] = ()):
        if kind not in ("none", "random", "replay"):
            raise AgentError(f"unknown scripted agent kind {kind!r}")
        self.kind = kind
        self.actuators = list(actuators)
        self.replay = [list(row) for row in replay]
        if kind == "replay" and not self.replay:
            raise AgentError("replay agent needs setpoints")
        self._step = 0
        self._rng: random.Random | None = None

    def reset(self, rng: random.Random) -> None:
        self._step = 0
        self._rng = rng

    def act(self, readings: Sequence[float]) -> list[float]:
        if self.kind == "none":
            out = [a.default for a in self.actuators]
        elif self.kind == "random":
            assert self._rng is not None, "reset() before act()"
            out = [self._rng.uniform(a.lo, a.hi) for a in self.actuators]
        else:
            row = self.replay[self._step % len(self.replay)]
            out = [a.clip(v) for a, v in zip(self.actuators, row)]
        self._step += 1
        return out
