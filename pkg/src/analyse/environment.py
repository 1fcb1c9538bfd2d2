"""Sensor/actuator environment over an assembled co-simulation.

reset(seed) rebuilds every simulator from the scenario with the episode seed;
step(setpoints) applies actuator values, advances the kernel by one agent
interval (the market interval), and derives the reward from the telemetry
records the interval produced. Episode telemetry times are offset so t_sim
stays non-decreasing per source across episodes within one run log.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

from .agents import (
    ActuatorSpec,
    AgentError,
    CemDistribution,
    Experience,
    Objective,
    Phase,
    Policy,
    ScriptedAgent,
    SensorSpec,
    cem_update,
    muscle_act,
    objective_eval,
)
from .design import STREAM_CEM, STREAM_EPISODE, STREAM_SCRIPTED, derive_seed
from .kernel import Kernel
from .telemetry import RunSink


class EnvironmentError(Exception):
    pass


class Assembled(Protocol):
    kernel: Kernel
    interval_s: int


EmitFn = Callable[[str, str, float, dict], None]
Builder = Callable[[int, EmitFn], "Assembled"]


def _endpoint(dotted: str) -> tuple[str, str, str]:
    parts = dotted.split(".")
    if len(parts) != 3:
        raise EnvironmentError(f"endpoint id {dotted!r} is not simulator.model.attribute")
    return (parts[0], parts[1], parts[2])


class Environment:
    def __init__(
        self,
        builder: Builder,
        sensors: Sequence[SensorSpec],
        actuators: Sequence[ActuatorSpec],
        objective: Objective,
        sink: RunSink,
        band: tuple[float, float] = (0.95, 1.05),
        agent_id: str = "attacker",
        episode_length: int = 96,
    ):
        self.builder = builder
        self.sensors = list(sensors)
        self.actuators = list(actuators)
        self.objective = objective
        self.sink = sink
        self.band = band
        self.agent_id = agent_id
        self.episode_length = episode_length
        self._sensor_eps = [_endpoint(s.id) for s in self.sensors]
        self._actuator_eps = [_endpoint(a.id) for a in self.actuators]
        self._t_offset = 0.0
        self._sim: Assembled | None = None
        self._local_t = 0
        self._step_index = 0
        self._record_mark = 0
        self._episode_index = -1
        self.experiences: list[Experience] = []
        self._probe_build()

    def _probe_build(self) -> None:
        """Fail fast on unresolvable sensor/actuator ids."""
        sim = self.builder(0, lambda *a: None)
        for spec, ep in zip(self.sensors, self._sensor_eps):
            if not sim.kernel.has_output(ep):
                raise EnvironmentError(f"sensor id {spec.id!r} does not resolve to an output")
        for spec, ep in zip(self.actuators, self._actuator_eps):
            if not sim.kernel.has_input(ep):
                raise EnvironmentError(f"actuator id {spec.id!r} does not resolve to an input")

    def _emit_offset(self, source: str, kind: str, t_sim: float, payload: dict) -> None:
        self.sink.emit(source, kind, t_sim + self._t_offset, payload)

    @property
    def telemetry_time(self) -> float:
        """Current run-global telemetry time (offset plus episode-local time)."""
        return self._t_offset + self._local_t

    def reset(self, seed: int) -> list[float]:
        if self._sim is not None:
            # Keep later episodes' telemetry times above everything emitted so far.
            self._t_offset += self._local_t + self._sim.interval_s
        self._sim = self.builder(seed, self._emit_offset)
        self._local_t = 0
        self._step_index = 0
        self._episode_index += 1
        self.experiences = []
        self._sim.kernel.run_until(1)  # step everything due at t=0
        self._record_mark = len(self.sink.records)
        return self._readings()

    def _readings(self) -> list[float]:
        assert self._sim is not None
        values = []
        for spec, ep in zip(self.sensors, self._sensor_eps):
            raw = self._sim.kernel.get_output(ep)
            value = float(raw) if raw is not None else 0.0
            if not (spec.lo <= value <= spec.hi):
                self._emit_offset("agent", "agent.clamp", float(self._local_t), {
                    "sensor": spec.id, "value": value,
                    "clipped": min(max(value, spec.lo), spec.hi),
                })
            values.append(value)
        return values

    def step(self, setpoints: Sequence[float]) -> tuple[list[float], float, bool]:
        if self._sim is None:
            raise EnvironmentError("reset() before step()")
        if len(setpoints) != len(self.actuators):
            raise EnvironmentError("setpoint vector length mismatch")
        applied = {}
        for value, spec, ep in zip(setpoints, self.actuators, self._actuator_eps):
            clipped = spec.clip(float(value))
            if clipped != value:
                self._emit_offset("agent", "agent.clamp", float(self._local_t), {
                    "actuator": spec.id, "value": float(value), "clipped": clipped,
                })
            self._sim.kernel.set_input(ep, clipped)
            applied[spec.id] = clipped
        interval = self._sim.interval_s
        self._local_t += interval
        self._sim.kernel.run_until(self._local_t + 1)
        aggregates = self._window_aggregates()
        reward = objective_eval(aggregates, self.objective)
        self._step_index += 1
        self._emit_offset("agent", "agent.action", float(self._local_t), {
            "step": self._step_index, "setpoints": applied, "reward": reward,
        })
        self._record_mark = len(self.sink.records)
        done = self._step_index >= self.episode_length
        readings = self._readings()
        experience = Experience(
            episode=self._episode_index,
            step=self._step_index - 1,
            readings=tuple(float(v) for v in readings),
            setpoints=tuple(applied.values()),
            reward=reward,
        )
        experience.check_shapes(len(self.sensors), len(self.actuators))
        self.experiences.append(experience)
        if done:
            self._emit_offset("kernel", "kernel.step", float(self._local_t), {
                "episode": self._episode_index,
                "steps": self._sim.kernel.step_counts,
            })
        return readings, reward, done

    def _window_aggregates(self) -> dict:
        lo, hi = self.band
        agg: dict = {
            "violation_sum_pu": 0.0,
            "diverged": 0,
            "payments_eur": {},
            "offered_mvar": {},
            "accepted_mvar": {},
            "frames_dropped": 0,
            "clearing_cost_eur": 0.0,
            "resolution_failures": 0,
        }
        for record in self.sink.records[self._record_mark:]:
            if record.kind == "grid.step":
                violation = 0.0
                for vm in record.payload.get("vm", {}).values():
                    violation += max(lo - vm, 0.0) + max(vm - hi, 0.0)
                agg["violation_sum_pu"] = violation
                if not record.payload.get("converged", True):
                    agg["diverged"] = 1
            elif record.kind == "market.clearing":
                payload = record.payload
                agg["clearing_cost_eur"] += payload.get("total_cost_eur", 0.0)
                if not payload.get("resolved", True):
                    agg["resolution_failures"] += 1
                for agent, eur in payload.get("payments_eur", {}).items():
                    agg["payments_eur"][agent] = agg["payments_eur"].get(agent, 0.0) + eur
                for agent, q in payload.get("accepted_mvar", {}).items():
                    agg["accepted_mvar"][agent] = agg["accepted_mvar"].get(agent, 0.0) + q
                for offer in payload.get("offers", []):
                    agent = offer.get("agent_id", "?")
                    agg["offered_mvar"][agent] = (
                        agg["offered_mvar"].get(agent, 0.0) + abs(offer.get("q_mvar", 0.0))
                    )
            elif record.kind == "net.drop":
                agg["frames_dropped"] += 1
        for name in ("payments_eur", "offered_mvar", "accepted_mvar"):
            for agent, value in agg[name].items():
                agg[f"{name}.{agent}"] = value
        return agg


@dataclass
class PhaseReport:
    name: str
    mode: str
    returns: list[float] = field(default_factory=list)
    best_theta: tuple[float, ...] | None = None
    best_return: float | None = None

    @property
    def mean_return(self) -> float:
        return sum(self.returns) / len(self.returns) if self.returns else 0.0


@dataclass
class AgentRunState:
    """Carries the trained policy and episode counter across phases."""

    episode_counter: int = 0
    best_theta: tuple[float, ...] | None = None
    best_return: float = float("-inf")


@dataclass(frozen=True)
class LearnerConfig:
    kind: str = "none"  # none | random | replay | cem
    population: int = 16
    generations: int = 10
    sigma0: float = 1.0
    replay: tuple = ()


def run_phase(
    env: Environment,
    learner: LearnerConfig,
    phase: Phase,
    run_seed: int,
    state: AgentRunState,
) -> PhaseReport:
    """Execute one schedule phase.

    Train mode with the cem learner runs generations of sampled policies, one
    episode per candidate, and keeps the best candidate seen. Test mode runs
    the declared number of episodes with the frozen best policy (scripted
    agents just act). Per-episode returns are logged as agent.episode records.
    """
    env.episode_length = phase.episode_length
    report = PhaseReport(name=phase.name, mode=phase.mode)
    episode_stream = derive_seed(run_seed, STREAM_EPISODE)
    dim = len(env.actuators) * (len(env.sensors) + 1)

    def run_episode(actor, label: str) -> float:
        episode_seed = derive_seed(episode_stream, state.episode_counter)
        state.episode_counter += 1
        readings = env.reset(episode_seed)
        total = 0.0
        done = False
        while not done:
            readings, reward, done = env.step(actor(readings))
            total += reward
        env._emit_offset("agent", "agent.episode", float(env._local_t), {
            "agent": env.agent_id, "phase": phase.name, "mode": phase.mode,
            "episode": state.episode_counter - 1, "return": total, "label": label,
            "steps": env.episode_length, "seed": episode_seed,
        })
        report.returns.append(total)
        return total

    if learner.kind == "cem" and phase.mode == "train":
        rng = random.Random(derive_seed(run_seed, STREAM_CEM))
        dist = CemDistribution.initial(dim, sigma0=learner.sigma0)
        for gen in range(learner.generations):
            population: list[tuple[tuple[float, ...], float]] = []
            for _ in range(learner.population):
                theta = dist.sample(rng)
                policy = Policy(len(env.sensors), len(env.actuators), theta)
                ret = run_episode(
                    lambda obs, p=policy: muscle_act(p, obs, env.sensors, env.actuators)[0],
                    label=f"gen{gen}",
                )
                population.append((theta, ret))
                if ret > state.best_return:
                    state.best_return = ret
                    state.best_theta = theta
            dist = cem_update(population)
            returns = [r for _, r in population]
            env._emit_offset("agent", "agent.generation", float(env._local_t), {
                "generation": gen, "mean_return": sum(returns) / len(returns),
                "best_return": max(returns),
                "sigma_mean": sum(dist.sigma) / len(dist.sigma),
            })
    elif learner.kind == "cem":
        theta = state.best_theta or (0.0,) * dim
        policy = Policy(len(env.sensors), len(env.actuators), theta)
        for _ in range(phase.episodes):
            run_episode(
                lambda obs: muscle_act(policy, obs, env.sensors, env.actuators)[0],
                label="test",
            )
    else:
        agent = ScriptedAgent(learner.kind, env.actuators, learner.replay)
        scripted_stream = derive_seed(run_seed, STREAM_SCRIPTED)
        for episode in range(phase.episodes):
            agent.reset(random.Random(derive_seed(scripted_stream, state.episode_counter)))
            run_episode(lambda obs: agent.act(obs), label=learner.kind)

    if learner.kind == "cem":
        report.best_theta = state.best_theta
        report.best_return = state.best_return if state.best_theta else None
    return report


def objective_from_config(cfg: dict) -> Objective:
    return Objective(
        kind=cfg.get("kind", "damage"),
        agents=tuple(cfg.get("agents", ())),
        cost_per_mvar=float(cfg.get("cost_per_mvar", 0.0)),
        weights=dict(cfg.get("weights", {})),
    )


def check_cem_population(n: int) -> None:
    if n < 4:
        raise AgentError("cem population must be >= 4")
