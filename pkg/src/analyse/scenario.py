"""Scenario documents: parsing, validation, and co-simulation assembly.

A scenario YAML declares the grid, the data feeders, the PV units, the
reactive-power market with its scripted bidders, the communication network
(including pre-declared attack rules), the agent's sensors/actuators and
objective, and the schedule of train/test phases. This module turns such a
document into a wired kernel:

    weather --> pv --> grid --> market
    profiles ------^              ^  \\ (outbox, time-shifted)
    bidders --> net --------------+   --> net --> pv (inbox, time-shifted)

Offers and dispatch setpoints travel as application frames through the
network simulator; the market only sees offers whose frames arrived before
gate closure, which is exactly the denial-of-service attack surface.

Market timing: offers submitted at time t carry interval t/I + 2; the
clearing at time t settles interval t/I + 1 and its dispatch frames reach the
PV units in time for that interval's start at t + I.
"""

from __future__ import annotations

import dataclasses
import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import yaml

from . import feeders
from .agents import ActuatorSpec, Phase, Schedule, SensorSpec
from .design import STREAM_JITTER, STREAM_NET, derive_seed
from .feeders import LoadProfile, PvUnit, WeatherSeries, pv_output
from .grid import Bus, GridModel, Line, Load, Sgen, solve_power_flow
from .kernel import Kernel, ModelSpec, SimulatorDescriptor
from .market import (
    BidderAsset,
    BidStrategy,
    MarketError,
    Offer,
    VoltageBand,
    baseline_bid,
    clear_market,
    offer_from_payload,
)
from .network import AttackRule, Frame, MatchSpec, Network, NetworkTopology, NodeSpec, LinkSpec
from .telemetry import canonical_json

SCHEMA_VERSION = 1
ADVERSARY_MODEL = "adversary"


class ScenarioError(Exception):
    pass


# ---------------------------------------------------------------------------
# document loading


def load_document(path: str | Path) -> dict:
    with Path(path).open("r", encoding="utf-8") as fh:
        doc = yaml.safe_load(fh)
    if not isinstance(doc, dict):
        raise ScenarioError(f"{path}: document is not a mapping")
    return doc


def resolve_data_path(ref: str, base_dir: Path) -> Path:
    """Resolve a data file reference; "pkg:" points into the bundled data."""
    if ref.startswith("pkg:"):
        import importlib.resources as resources

        return Path(str(resources.files("analyse").joinpath("data", ref[4:])))
    p = Path(ref)
    return p if p.is_absolute() else base_dir / p


# ---------------------------------------------------------------------------
# typed configuration


@dataclass(frozen=True)
class LoadAttachment:
    name: str
    bus: int
    p_mw: float
    q_mvar: float
    profile: str | None = None


@dataclass(frozen=True)
class SgenConfig:
    name: str
    bus: int
    p_mw: float
    q_mvar: float
    q_min_mvar: float
    q_max_mvar: float


@dataclass(frozen=True)
class PvConfig:
    name: str
    sgen: str
    p_peak_mw: float
    temp_coeff: float
    host: str


@dataclass(frozen=True)
class BidderConfig:
    asset: str  # sgen name; also the model id and offer id prefix
    agent_id: str
    host: str
    strategy: BidStrategy


@dataclass(frozen=True)
class RuleConfig:
    rule: AttackRule
    enabled: bool


@dataclass(frozen=True)
class MarketConfig:
    band: VoltageBand
    interval_s: int
    gate_closure_s: float
    operator_host: str
    bidders: tuple[BidderConfig, ...]


@dataclass(frozen=True)
class NetworkConfig:
    step_s: int
    utilization_window_s: float
    topology: NetworkTopology
    rules: tuple[RuleConfig, ...]
    restartable: tuple[tuple[str, float], ...] = ()


@dataclass(frozen=True)
class AgentConfig:
    agent_id: str
    kind: str
    sensors: tuple[SensorSpec, ...]
    actuators: tuple[ActuatorSpec, ...]
    objective: dict
    population: int
    generations: int
    sigma0: float
    replay: tuple


@dataclass
class ScenarioConfig:
    name: str
    seed: int
    grid_step_s: int
    buses: tuple[Bus, ...]
    lines: tuple[Line, ...]
    loads: tuple[LoadAttachment, ...]
    sgens: tuple[SgenConfig, ...]
    base_mva: float
    profiles: dict[str, Path]
    weather_path: Path | None
    pv_units: tuple[PvConfig, ...]
    market: MarketConfig
    network: NetworkConfig
    agent: AgentConfig
    schedule: Schedule
    document: dict = field(default_factory=dict)

    def grid_model(self) -> GridModel:
        return GridModel(
            base_mva=self.base_mva,
            buses=self.buses,
            lines=self.lines,
            loads=tuple(Load(l.bus, l.p_mw, l.q_mvar) for l in self.loads),
            sgens=tuple(
                Sgen(s.bus, s.p_mw, s.q_mvar, s.q_min_mvar, s.q_max_mvar) for s in self.sgens
            ),
        )

    def sgen_by_name(self, name: str) -> SgenConfig:
        for s in self.sgens:
            if s.name == name:
                return s
        raise ScenarioError(f"unknown sgen {name!r}")


def _band(doc: dict) -> VoltageBand:
    return VoltageBand(
        v_min_pu=float(doc.get("v_min_pu", 0.95)),
        v_max_pu=float(doc.get("v_max_pu", 1.05)),
    )


def _rule_from_doc(doc: dict) -> AttackRule:
    match = doc.get("match", {})
    action = doc.get("action", {})
    kind = action.get("kind", "drop")
    contains = match.get("payload_contains")
    replacement = action.get("replacement", "")
    active_until = doc.get("active_until")
    return AttackRule(
        rule_id=str(doc["rule_id"]),
        at_node=str(doc["at_node"]),
        match=MatchSpec(
            src=match.get("src"),
            dst=match.get("dst"),
            payload_contains=contains.encode("utf-8") if contains is not None else None,
        ),
        action=kind,
        replacement=replacement.encode("utf-8") if isinstance(replacement, str) else replacement,
        extra_ms=float(action.get("extra_ms", 0.0)),
        active_from=float(doc.get("active_from", 0.0)),
        active_until=float("inf") if active_until is None else float(active_until),
    )


def parse_scenario(doc: dict, base_dir: Path) -> ScenarioConfig:
    """Typed configuration from a schema-valid scenario document."""
    grid = doc["grid"]
    buses = tuple(
        Bus(int(b["id"]), b.get("kind", "pq"), float(b.get("vm_setpoint_pu", 1.0)))
        for b in grid["buses"]
    )
    lines = tuple(
        Line(
            int(l["from"]), int(l["to"]), float(l["r_pu"]), float(l["x_pu"]),
            float(l.get("b_pu", 0.0)), float(l.get("rating_mva", 1.0)),
        )
        for l in grid["lines"]
    )
    loads = tuple(
        LoadAttachment(
            str(l["name"]), int(l["bus"]), float(l["p_mw"]),
            float(l.get("q_mvar", 0.0)), l.get("profile"),
        )
        for l in grid.get("loads", [])
    )
    sgens = tuple(
        SgenConfig(
            str(s["name"]), int(s["bus"]), float(s.get("p_mw", 0.0)),
            float(s.get("q_mvar", 0.0)), float(s.get("q_min_mvar", 0.0)),
            float(s.get("q_max_mvar", 0.0)),
        )
        for s in grid.get("sgens", [])
    )

    data = doc.get("data", {})
    profiles = {
        str(name): resolve_data_path(str(ref["path"]), base_dir)
        for name, ref in data.get("load_profiles", {}).items()
    }
    weather_ref = data.get("weather")
    weather_path = resolve_data_path(str(weather_ref["path"]), base_dir) if weather_ref else None

    pv_units = tuple(
        PvConfig(
            str(u["name"]), str(u["sgen"]), float(u["p_peak_mw"]),
            float(u.get("temp_coeff", 0.004)), str(u["host"]),
        )
        for u in doc.get("pv", {}).get("units", [])
    )

    mdoc = doc["market"]
    market = MarketConfig(
        band=_band(mdoc.get("band", {})),
        interval_s=int(mdoc.get("interval_s", 900)),
        gate_closure_s=float(mdoc.get("gate_closure_s", 0.0)),
        operator_host=str(mdoc["operator_host"]),
        bidders=tuple(
            BidderConfig(
                asset=str(b["asset"]),
                agent_id=str(b["agent"]),
                host=str(b["host"]),
                strategy=BidStrategy(
                    kind=b.get("strategy", "static"),
                    price_eur_per_mvar=float(b.get("price_eur_per_mvar", 10.0)),
                    side=b.get("side", "supply"),
                ),
            )
            for b in mdoc.get("bidders", [])
        ),
    )

    ndoc = doc["network"]
    topology = NetworkTopology(
        nodes=tuple(NodeSpec(str(n["id"]), n.get("kind", "host")) for n in ndoc["nodes"]),
        links=tuple(
            LinkSpec(
                str(l["a"]), str(l["b"]), float(l.get("latency_ms", 1.0)),
                None if l.get("bandwidth_kbps") in (None, 0) else float(l["bandwidth_kbps"]),
                float(l.get("loss_prob", 0.0)),
            )
            for l in ndoc["links"]
        ),
    )
    network = NetworkConfig(
        step_s=int(ndoc.get("step_s", 1)),
        utilization_window_s=float(ndoc.get("utilization_window_s", 900.0)),
        topology=topology,
        rules=tuple(
            RuleConfig(rule=_rule_from_doc(r), enabled=bool(r.get("enabled", False)))
            for r in ndoc.get("rules", [])
        ),
        restartable=tuple(
            (str(r["node"]), float(r.get("downtime_s", 30.0)))
            for r in ndoc.get("restartable", [])
        ),
    )

    adoc = doc["agents"][0]
    learner = adoc.get("learner", {})
    agent = AgentConfig(
        agent_id=str(adoc["agent_id"]),
        kind=str(adoc.get("kind", "none")),
        sensors=tuple(
            SensorSpec(str(s["id"]), float(s["lo"]), float(s["hi"]))
            for s in adoc.get("sensors", [])
        ),
        actuators=tuple(
            ActuatorSpec(
                str(a["id"]), float(a["lo"]), float(a["hi"]),
                float(a.get("default", a["lo"])), a.get("kind", "range"),
            )
            for a in adoc.get("actuators", [])
        ),
        objective=dict(adoc.get("objective", {"kind": "damage"})),
        population=int(learner.get("population", 16)),
        generations=int(learner.get("generations", 10)),
        sigma0=float(learner.get("sigma0", 1.0)),
        replay=tuple(tuple(row) for row in adoc.get("replay", [])),
    )

    schedule = Schedule(
        phases=tuple(
            Phase(
                str(p["name"]), str(p["mode"]), int(p["episodes"]), int(p["episode_length"])
            )
            for p in doc["schedule"]
        )
    )

    return ScenarioConfig(
        name=str(doc.get("name", "scenario")),
        seed=int(doc.get("seed", 0)),
        grid_step_s=int(grid.get("step_s", market.interval_s)),
        buses=buses,
        lines=lines,
        loads=loads,
        sgens=sgens,
        base_mva=float(grid["base_mva"]),
        profiles=profiles,
        weather_path=weather_path,
        pv_units=pv_units,
        market=market,
        network=network,
        agent=agent,
        schedule=schedule,
        document=doc,
    )


# ---------------------------------------------------------------------------
# simulator adapters


class GridSimulator:
    SIM_ID = "grid"

    def __init__(self, config: ScenarioConfig, emit: Callable):
        self.config = config
        self.emit = emit
        self.base = config.grid_model()

    def descriptor(self) -> SimulatorDescriptor:
        cfg = self.config
        models = [
            ModelSpec(f"bus_{b.bus_id}", outputs=("vm_pu", "va_rad")) for b in cfg.buses
        ]
        models += [ModelSpec(f"line_{i}", outputs=("loading",)) for i in range(len(cfg.lines))]
        models.append(ModelSpec("slack", outputs=("p_mw", "q_mvar")))
        models.append(ModelSpec("solver", outputs=("converged", "iterations", "model")))
        models += [
            ModelSpec(f"load_{l.name}", inputs={"p_mw": l.p_mw, "q_mvar": l.q_mvar})
            for l in cfg.loads
        ]
        models += [
            ModelSpec(f"sgen_{s.name}", inputs={"p_mw": s.p_mw, "q_mvar": s.q_mvar})
            for s in cfg.sgens
        ]
        return SimulatorDescriptor(self.SIM_ID, self.config.grid_step_s, tuple(models))

    def __call__(self, t: int, inputs: dict) -> dict:
        cfg = self.config
        loads = tuple(
            Load(l.bus, float(inputs[f"load_{l.name}"]["p_mw"]),
                 float(inputs[f"load_{l.name}"]["q_mvar"]))
            for l in cfg.loads
        )
        sgens = []
        for s in cfg.sgens:
            q = min(max(float(inputs[f"sgen_{s.name}"]["q_mvar"]), s.q_min_mvar), s.q_max_mvar)
            sgens.append(
                Sgen(s.bus, float(inputs[f"sgen_{s.name}"]["p_mw"]), q,
                     s.q_min_mvar, s.q_max_mvar)
            )
        model = GridModel(cfg.base_mva, cfg.buses, cfg.lines, loads, tuple(sgens))
        state = solve_power_flow(model)
        self.emit("grid", "grid.step", float(t), {
            "t": t,
            "vm": {str(b.bus_id): v for b, v in zip(cfg.buses, state.vm)},
            "converged": state.converged,
            "iterations": state.iterations,
            "slack_p_mw": state.slack_p_mw,
            "slack_q_mvar": state.slack_q_mvar,
            "max_line_loading": max(state.line_loading) if state.line_loading else 0.0,
        })
        outputs = {
            f"bus_{b.bus_id}": {"vm_pu": v, "va_rad": a}
            for b, v, a in zip(cfg.buses, state.vm, state.va)
        }
        for i, loading in enumerate(state.line_loading):
            outputs[f"line_{i}"] = {"loading": loading}
        outputs["slack"] = {"p_mw": state.slack_p_mw, "q_mvar": state.slack_q_mvar}
        outputs["solver"] = {
            "converged": 1.0 if state.converged else 0.0,
            "iterations": state.iterations,
            "model": model,
        }
        return outputs


class ProfilesSimulator:
    SIM_ID = "profiles"

    def __init__(self, config: ScenarioConfig, series: dict[str, LoadProfile]):
        self.config = config
        self.series = series  # profile key -> factors (base 1.0)

    def descriptor(self) -> SimulatorDescriptor:
        models = [
            ModelSpec(f"load_{l.name}", outputs=("p_mw", "q_mvar"))
            for l in self.config.loads
            if l.profile
        ]
        return SimulatorDescriptor(self.SIM_ID, self.config.grid_step_s, tuple(models))

    def __call__(self, t: int, inputs: dict) -> dict:
        outputs = {}
        for l in self.config.loads:
            if not l.profile:
                continue
            factor = feeders.load_profile_value(self.series[l.profile], t)
            outputs[f"load_{l.name}"] = {"p_mw": factor * l.p_mw, "q_mvar": factor * l.q_mvar}
        return outputs


class WeatherSimulator:
    SIM_ID = "weather"

    def __init__(self, config: ScenarioConfig, series: WeatherSeries):
        self.config = config
        self.series = series

    def descriptor(self) -> SimulatorDescriptor:
        return SimulatorDescriptor(
            self.SIM_ID,
            self.config.grid_step_s,
            (ModelSpec("station", outputs=("ghi_w_m2", "t_air_c")),),
        )

    def __call__(self, t: int, inputs: dict) -> dict:
        sample = self.series.at(t)
        return {"station": {"ghi_w_m2": sample.ghi_w_m2, "t_air_c": sample.t_air_c}}


class PvSimulator:
    SIM_ID = "pv"

    def __init__(self, config: ScenarioConfig):
        self.config = config
        self.units: dict[str, PvUnit] = {}
        for u in config.pv_units:
            sgen = config.sgen_by_name(u.sgen)
            self.units[u.name] = PvUnit(
                bus=sgen.bus, p_peak_mw=u.p_peak_mw, temp_coeff=u.temp_coeff,
                q_min_mvar=sgen.q_min_mvar, q_max_mvar=sgen.q_max_mvar,
            )
        self._q: dict[str, float] = {name: 0.0 for name in self.units}
        self._cursor: dict[str, int] = {name: 0 for name in self.units}

    def descriptor(self) -> SimulatorDescriptor:
        models = [
            ModelSpec(
                u.name,
                inputs={"ghi_w_m2": 0.0, "t_air_c": 15.0, "inbox": ()},
                outputs=("p_mw", "q_mvar"),
            )
            for u in self.config.pv_units
        ]
        return SimulatorDescriptor(self.SIM_ID, self.config.grid_step_s, tuple(models))

    def __call__(self, t: int, inputs: dict) -> dict:
        outputs = {}
        for name, unit in self.units.items():
            model_in = inputs[name]
            inbox = model_in["inbox"] or ()
            for arrival, src, payload in inbox[self._cursor[name]:]:
                try:
                    msg = json.loads(payload.decode("utf-8"))
                except (UnicodeDecodeError, json.JSONDecodeError):
                    continue
                if isinstance(msg, dict) and msg.get("type") == "dispatch" and msg.get("unit") == name:
                    q = float(msg.get("q_mvar", 0.0))
                    self._q[name] = min(max(q, unit.q_min_mvar), unit.q_max_mvar)
            self._cursor[name] = len(inbox)
            sample = feeders.WeatherSample(
                t=float(t), ghi_w_m2=max(float(model_in["ghi_w_m2"]), 0.0),
                t_air_c=float(model_in["t_air_c"]),
            )
            outputs[name] = {"p_mw": pv_output(unit, sample), "q_mvar": self._q[name]}
        return outputs


class BiddersSimulator:
    SIM_ID = "bidders"

    def __init__(self, config: ScenarioConfig, jitter_rng: random.Random):
        self.config = config
        self.rng = jitter_rng
        self.assets: dict[str, BidderAsset] = {}
        for b in config.market.bidders:
            sgen = config.sgen_by_name(b.asset)
            self.assets[b.asset] = BidderAsset(
                agent_id=b.agent_id, bus=sgen.bus,
                q_min_mvar=sgen.q_min_mvar, q_max_mvar=sgen.q_max_mvar,
            )

    def descriptor(self) -> SimulatorDescriptor:
        models = [
            ModelSpec(
                b.asset,
                inputs={"price": b.strategy.price_eur_per_mvar, "q_scale": 1.0},
                outputs=("outbox",),
            )
            for b in self.config.market.bidders
        ]
        return SimulatorDescriptor(self.SIM_ID, self.config.market.interval_s, tuple(models))

    def __call__(self, t: int, inputs: dict) -> dict:
        interval_s = self.config.market.interval_s
        # Offers bid for the interval cleared at t + interval_s (pipeline:
        # submit at t, clear at t+I, deliver from t+2I).
        interval = t // interval_s + 2
        op_host = self.config.market.operator_host
        outputs = {}
        for b in self.config.market.bidders:
            offer = baseline_bid(
                self.assets[b.asset],
                b.strategy,
                interval,
                self.rng,
                offer_id=f"{b.asset}-{interval:05d}",
                price_override=float(inputs[b.asset]["price"]),
                q_scale=float(inputs[b.asset]["q_scale"]),
            )
            messages = ()
            if offer is not None:
                payload = canonical_json(offer.wire_payload()).encode("utf-8")
                messages = ((op_host, payload),)
            outputs[b.asset] = {"outbox": (t, messages)}
        return outputs


class NetSimulator:
    SIM_ID = "net"

    def __init__(self, config: ScenarioConfig, rng: random.Random, emit: Callable):
        self.config = config
        net_cfg = config.network
        self.network = Network(
            net_cfg.topology, rng,
            emit=lambda kind, t, payload: emit("net", kind, t, payload),
            utilization_window_s=net_cfg.utilization_window_s,
        )
        self._rule_state: dict[str, bool] = {}
        for rc in net_cfg.rules:
            self._rule_state[rc.rule.rule_id] = rc.enabled
            if rc.enabled:
                self.network.install_rule(rc.rule)
        self._restart_state: dict[str, bool] = {node: False for node, _ in net_cfg.restartable}
        self._last_batch: dict[str, Any] = {}
        self._inbox_len: dict[str, int] = {
            n.node_id: -1 for n in net_cfg.topology.nodes
        }

    def descriptor(self) -> SimulatorDescriptor:
        net_cfg = self.config.network
        models = [
            ModelSpec(
                n.node_id,
                inputs={"outbox": None},
                outputs=("inbox", "bytes_in", "bytes_out", "frames_dropped", "utilization"),
            )
            for n in net_cfg.topology.nodes
        ]
        adversary_inputs: dict[str, Any] = {
            f"rule_{rc.rule.rule_id}": (1.0 if rc.enabled else 0.0) for rc in net_cfg.rules
        }
        for node, _ in net_cfg.restartable:
            adversary_inputs[f"restart_{node}"] = 0.0
        models.append(ModelSpec(ADVERSARY_MODEL, inputs=adversary_inputs, outputs=("rules_active",)))
        return SimulatorDescriptor(self.SIM_ID, net_cfg.step_s, tuple(models))

    def __call__(self, t: int, inputs: dict) -> dict:
        # Flush in-flight events first: they carry continuous timestamps from
        # (previous step, t], and telemetry must stay time-ordered. Frames
        # injected below are timestamped t and processed on the next step.
        self.network.advance(float(t))

        adversary = inputs[ADVERSARY_MODEL]
        for rc in self.config.network.rules:
            rid = rc.rule.rule_id
            want = float(adversary[f"rule_{rid}"]) > 0.5
            if want and not self._rule_state[rid]:
                self.network.install_rule(rc.rule)
            elif not want and self._rule_state[rid]:
                self.network.remove_rule(rid)
            self._rule_state[rid] = want
        for node, downtime in self.config.network.restartable:
            want = float(adversary[f"restart_{node}"]) > 0.5
            if want and not self._restart_state[node]:
                self.network.restart_node(node, downtime)
            self._restart_state[node] = want

        for node in self._inbox_len:
            batch = inputs[node]["outbox"]
            if not batch or batch == self._last_batch.get(node):
                continue
            self._last_batch[node] = batch
            _, messages = batch
            for dst, payload in messages:
                frame = Frame(
                    frame_id=self.network.next_frame_id(node),
                    src=node, dst=dst, sent_at=float(t),
                    size_bytes=len(payload), payload=payload,
                )
                self.network.send(frame)

        outputs: dict[str, dict] = {
            ADVERSARY_MODEL: {"rules_active": float(sum(self._rule_state.values()))}
        }
        for node in self._inbox_len:
            delivered = self.network.delivered(node)
            counters = self.network.read_counters(node)
            out = {
                "bytes_in": counters.bytes_in,
                "bytes_out": counters.bytes_out,
                "frames_dropped": counters.frames_dropped,
                "utilization": counters.utilization,
            }
            if len(delivered) != self._inbox_len[node]:
                self._inbox_len[node] = len(delivered)
                out["inbox"] = tuple(
                    (arrival, frame.src, frame.payload) for arrival, frame in delivered
                )
            outputs[node] = out
        return outputs


class MarketSimulator:
    SIM_ID = "market"

    def __init__(self, config: ScenarioConfig, emit: Callable):
        self.config = config
        self.emit = emit
        self.assets: dict[str, BidderAsset] = {}
        self.asset_host: dict[str, str] = {}
        self.asset_sgen_index: dict[str, int] = {}
        sgen_index = {s.name: i for i, s in enumerate(config.sgens)}
        for b in config.market.bidders:
            sgen = config.sgen_by_name(b.asset)
            self.assets[b.asset] = BidderAsset(
                agent_id=b.agent_id, bus=sgen.bus,
                q_min_mvar=sgen.q_min_mvar, q_max_mvar=sgen.q_max_mvar,
            )
            self.asset_host[b.asset] = b.host
            self.asset_sgen_index[b.asset] = sgen_index[b.asset]
        self._cursor = 0
        self._pending: dict[int, list[tuple[float, Offer]]] = {}

    def descriptor(self) -> SimulatorDescriptor:
        return SimulatorDescriptor(
            self.SIM_ID,
            self.config.market.interval_s,
            (
                ModelSpec(
                    "op",
                    inputs={"grid_model": None, "inbox": ()},
                    outputs=(
                        "outbox", "last_price", "last_cost", "last_resolved",
                        "last_accepted_mvar",
                    ),
                ),
            ),
        )

    def _headroom(self, agent_id: str, bus: int) -> tuple[float, float]:
        q_min = sum(a.q_min_mvar for a in self.assets.values()
                    if a.agent_id == agent_id and a.bus == bus)
        q_max = sum(a.q_max_mvar for a in self.assets.values()
                    if a.agent_id == agent_id and a.bus == bus)
        return q_min, q_max

    def __call__(self, t: int, inputs: dict) -> dict:
        cfg = self.config.market
        model_in = inputs["op"]
        inbox = model_in["inbox"] or ()
        rejected: list[dict] = []
        for arrival, src, payload in inbox[self._cursor:]:
            try:
                doc = json.loads(payload.decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError):
                rejected.append({"reason": "unparseable", "src": src})
                continue
            if not isinstance(doc, dict) or "offer_id" not in doc:
                continue  # not an offer (e.g. a looped-back dispatch)
            try:
                offer = offer_from_payload(doc)
            except MarketError as exc:
                rejected.append({"reason": str(exc), "src": src})
                continue
            known_bus = any(b.bus_id == offer.bus for b in self.config.buses)
            q_min, q_max = self._headroom(offer.agent_id, offer.bus)
            if not known_bus:
                rejected.append({"reason": "unknown bus", "offer_id": offer.offer_id})
            elif not (q_min <= offer.q_mvar <= q_max):
                rejected.append({"reason": "exceeds headroom", "offer_id": offer.offer_id})
            else:
                self._pending.setdefault(offer.interval, []).append((arrival, offer))
        self._cursor = len(inbox)

        interval = t // cfg.interval_s + 1
        gate = t - cfg.gate_closure_s
        book: list[Offer] = []
        late = 0
        for arrival, offer in self._pending.pop(interval, []):
            if arrival <= gate:
                book.append(offer)
            else:
                late += 1

        grid_model: GridModel = model_in["grid_model"]
        if grid_model is None:
            raise ScenarioError("market stepped before the grid produced a model")
        # Dispatch replaces each asset's setpoint, so the clearing baseline is
        # the grid with all market assets at zero committed reactive power.
        sgens = list(grid_model.sgens)
        for idx in self.asset_sgen_index.values():
            sgens[idx] = dataclasses.replace(sgens[idx], q_mvar=0.0)
        baseline = dataclasses.replace(grid_model, sgens=tuple(sgens))
        result = clear_market(book, baseline, cfg.band)
        result.interval = interval

        accepted_by_asset: dict[str, float] = {}
        for a in result.accepted:
            asset = a.offer_id.rsplit("-", 1)[0]
            accepted_by_asset[asset] = accepted_by_asset.get(asset, 0.0) + a.q_accepted_mvar
        messages = []
        for asset, host in self.asset_host.items():
            q = accepted_by_asset.get(asset, 0.0)
            payload = canonical_json({
                "type": "dispatch", "unit": asset, "q_mvar": q,
                "interval": interval, "accepted": q != 0.0,
            }).encode("utf-8")
            messages.append((host, payload))

        accepted_mvar = result.accepted_mvar_by_agent()
        self.emit("market", "market.clearing", float(t), {
            "t": t,
            "interval": interval,
            "offers": [
                {**o.wire_payload()} for o in sorted(book, key=lambda o: o.offer_id)
            ],
            "accepted": [
                {"offer_id": a.offer_id, "q_accepted_mvar": a.q_accepted_mvar,
                 "price_eur_per_mvar": a.price_eur_per_mvar}
                for a in result.accepted
            ],
            "payments_eur": result.payments_eur,
            "accepted_mvar": accepted_mvar,
            "resolved": result.resolved,
            "aborted": result.aborted,
            "iterations": result.iterations,
            "total_cost_eur": result.total_cost_eur,
            "final_vm": {str(k): v for k, v in result.final_vm.items()},
            "excursions": result.excursions,
            "rejected": rejected,
            "late": late,
        })
        prices = [a.price_eur_per_mvar for a in result.accepted]
        return {
            "op": {
                "outbox": (t, tuple(messages)),
                "last_price": sum(prices) / len(prices) if prices else 0.0,
                "last_cost": result.total_cost_eur,
                "last_resolved": 1.0 if result.resolved else 0.0,
                "last_accepted_mvar": sum(abs(a.q_accepted_mvar) for a in result.accepted),
            }
        }


# ---------------------------------------------------------------------------
# assembly


@dataclass
class AssembledRun:
    kernel: Kernel
    interval_s: int
    simulators: dict[str, Any] = field(default_factory=dict)


def planned_connections(config: ScenarioConfig) -> list[tuple[tuple, tuple, bool, Any]]:
    """(src, dst, time_shifted, default) tuples the assembly will create."""
    conns: list[tuple[tuple, tuple, bool, Any]] = []
    for l in config.loads:
        if l.profile:
            for attr in ("p_mw", "q_mvar"):
                conns.append(
                    (("profiles", f"load_{l.name}", attr), ("grid", f"load_{l.name}", attr),
                     False, None)
                )
    for u in config.pv_units:
        if config.weather_path is not None:
            for attr in ("ghi_w_m2", "t_air_c"):
                conns.append((("weather", "station", attr), ("pv", u.name, attr), False, None))
        for attr in ("p_mw", "q_mvar"):
            conns.append((("pv", u.name, attr), ("grid", f"sgen_{u.sgen}", attr), False, None))
        conns.append((("net", u.host, "inbox"), ("pv", u.name, "inbox"), True, ()))
    conns.append((("grid", "solver", "model"), ("market", "op", "grid_model"), False, None))
    conns.append(
        (("net", config.market.operator_host, "inbox"), ("market", "op", "inbox"), False, ())
    )
    for b in config.market.bidders:
        conns.append((("bidders", b.asset, "outbox"), ("net", b.host, "outbox"), False, None))
    conns.append(
        (("market", "op", "outbox"), ("net", config.market.operator_host, "outbox"), True, None)
    )
    return conns


def load_data_series(config: ScenarioConfig) -> tuple[dict[str, LoadProfile], WeatherSeries | None]:
    profiles = {
        key: feeders.read_load_profile_csv(path) for key, path in config.profiles.items()
    }
    weather = (
        feeders.read_weather_csv(config.weather_path) if config.weather_path is not None else None
    )
    return profiles, weather


def assemble(
    config: ScenarioConfig,
    seed: int,
    emit: Callable[[str, str, float, dict], None],
    data: tuple[dict[str, LoadProfile], WeatherSeries | None] | None = None,
) -> AssembledRun:
    """Build and wire a fresh kernel for one episode with the given seed."""
    profiles, weather = data if data is not None else load_data_series(config)
    net_rng = random.Random(derive_seed(seed, STREAM_NET))
    jitter_rng = random.Random(derive_seed(seed, STREAM_JITTER))

    kernel = Kernel()
    sims: dict[str, Any] = {}

    if weather is not None:
        sims["weather"] = WeatherSimulator(config, weather)
    if any(l.profile for l in config.loads):
        sims["profiles"] = ProfilesSimulator(config, profiles)
    if config.pv_units:
        sims["pv"] = PvSimulator(config)
    sims["grid"] = GridSimulator(config, emit)
    sims["bidders"] = BiddersSimulator(config, jitter_rng)
    sims["net"] = NetSimulator(config, net_rng, emit)
    sims["market"] = MarketSimulator(config, emit)

    for sim in sims.values():
        kernel.register_simulator(sim.descriptor(), sim)
    for src, dst, shifted, default in planned_connections(config):
        if src[0] in sims and dst[0] in sims:
            kernel.connect(src, dst, time_shifted=shifted, default=default)
    return AssembledRun(kernel=kernel, interval_s=config.market.interval_s, simulators=sims)


def endpoint_tables(config: ScenarioConfig) -> tuple[set, set]:
    """All (sim, model, attr) outputs and free (unconnected) inputs."""
    adapters = [
        GridSimulator(config, lambda *a: None),
        PvSimulator(config),
        BiddersSimulator(config, random.Random(0)),
        NetSimulator(config, random.Random(0), lambda *a: None),
        MarketSimulator(config, lambda *a: None),
    ]
    descriptors = [a.descriptor() for a in adapters]
    if config.weather_path is not None:
        descriptors.append(
            SimulatorDescriptor("weather", config.grid_step_s,
                                (ModelSpec("station", outputs=("ghi_w_m2", "t_air_c")),))
        )
    if any(l.profile for l in config.loads):
        descriptors.append(
            SimulatorDescriptor(
                "profiles", config.grid_step_s,
                tuple(ModelSpec(f"load_{l.name}", outputs=("p_mw", "q_mvar"))
                      for l in config.loads if l.profile),
            )
        )
    outputs: set = set()
    inputs: set = set()
    for desc in descriptors:
        for model in desc.models:
            for attr in model.outputs:
                outputs.add((desc.sim_id, model.model_id, attr))
            for attr in model.inputs:
                inputs.add((desc.sim_id, model.model_id, attr))
    connected = {dst for _, dst, _, _ in planned_connections(config)}
    return outputs, inputs - connected
