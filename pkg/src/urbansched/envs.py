"""Bus and bike scheduling MDPs.

Assembles the five-part agent state (predicted demand, station info, own
state, peer states, system features) plus the optional cross-system
observation O, and defines actions, rewards and stopping for both agents.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import world as W
from .demand import DemandProfile, DemandScript, sample_segment, scripted_demand
from .forecast_bike import encode_flow
from .rng import PortableRng


@dataclass
class RewardConfig:
    alpha: float = 0.2  # bus drive-time penalty per minute
    beta: float = 0.1  # bike repositioning cost per distance unit
    gamma_overflow: float = 1.0  # penalty per bike that could not dock
    patience: int = 4  # p, max passenger wait in segments

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma_overflow) < 0 or self.patience < 1:
            raise ValueError("reward weights must be >= 0 and patience >= 1")


class EpisodeDone(RuntimeError):
    """Raised when stepping a finished environment."""


# ---------------------------------------------------------------------------
# Observations

@dataclass
class BusObservation:
    b1: np.ndarray  # segments since last forward bus, per stop
    b2: np.ndarray  # segments since last backward bus, per stop
    c1: np.ndarray  # (L, n) forward demand forecast
    c2: np.ndarray  # (L, n) backward demand forecast
    self_state: np.ndarray  # (d1..., e1, f1, v1)
    others: np.ndarray  # flattened (d, e, f, v) per other bus
    H: np.ndarray
    O: np.ndarray | None

    def flatten(self) -> np.ndarray:
        parts = [self.b1, self.b2]
        for t in range(self.c1.shape[0]):
            parts += [self.c1[t], self.c2[t]]
        parts += [self.self_state, self.others, self.H]
        if self.O is not None:
            parts.append(self.O.reshape(-1))
        return np.concatenate([np.asarray(p, dtype=float).reshape(-1)
                               for p in parts])


@dataclass
class BikeObservation:
    b1: np.ndarray  # available bikes per station
    b2: np.ndarray  # available docks per station
    c1: np.ndarray  # (L, n) predicted departures
    c2: np.ndarray  # (L, n) predicted arrivals
    g: np.ndarray  # (L, 2n) flow encodings
    self_state: np.ndarray
    others: np.ndarray
    H: np.ndarray
    O: np.ndarray | None

    def flatten(self) -> np.ndarray:
        parts = [self.b1, self.b2]
        for t in range(self.c1.shape[0]):
            parts += [self.c1[t], self.c2[t]]
        for t in range(self.g.shape[0]):
            parts.append(self.g[t])
        parts += [self.self_state, self.others, self.H]
        if self.O is not None:
            parts.append(self.O.reshape(-1))
        return np.concatenate([np.asarray(p, dtype=float).reshape(-1)
                               for p in parts])


def _agent_block(agent: W.AgentState) -> np.ndarray:
    return np.concatenate([agent.location.astype(float),
                           [agent.occupied, agent.remaining, agent.operation]])


def bus_observe(world: W.WorldState, c1: np.ndarray, c2: np.ndarray,
                bus_id: int, other_system: np.ndarray | None,
                horizon: int) -> BusObservation:
    c1 = np.atleast_2d(np.asarray(c1, dtype=float))
    c2 = np.atleast_2d(np.asarray(c2, dtype=float))
    if c1.shape[0] < horizon or c2.shape[0] < horizon:
        raise ValueError("forecast horizon shorter than required L")
    buses = world.buses
    me = buses[bus_id]
    others = [b for i, b in enumerate(buses) if i != bus_id]
    return BusObservation(
        b1=np.array([s.last_bus_fwd for s in world.bus_stops], dtype=float),
        b2=np.array([s.last_bus_bwd for s in world.bus_stops], dtype=float),
        c1=c1[:horizon], c2=c2[:horizon],
        self_state=_agent_block(me),
        others=(np.concatenate([_agent_block(b) for b in others])
                if others else np.zeros(0)),
        H=world.env_features,
        O=other_system,
    )


def bike_observe(world: W.WorldState, c1: np.ndarray, c2: np.ndarray,
                 g: np.ndarray, vehicle_id: int,
                 other_system: np.ndarray | None,
                 horizon: int) -> BikeObservation:
    c1 = np.atleast_2d(np.asarray(c1, dtype=float))
    c2 = np.atleast_2d(np.asarray(c2, dtype=float))
    g = np.atleast_2d(np.asarray(g, dtype=float))
    if min(c1.shape[0], c2.shape[0], g.shape[0]) < horizon:
        raise ValueError("forecast horizon shorter than required L")
    vehicles = world.vehicles
    me = vehicles[vehicle_id]
    others = [v for i, v in enumerate(vehicles) if i != vehicle_id]
    return BikeObservation(
        b1=np.array([s.available for s in world.bike_stations], dtype=float),
        b2=np.array([s.free_docks for s in world.bike_stations], dtype=float),
        c1=c1[:horizon], c2=c2[:horizon], g=g[:horizon],
        self_state=_agent_block(me),
        others=(np.concatenate([_agent_block(v) for v in others])
                if others else np.zeros(0)),
        H=world.env_features,
        O=other_system,
    )


def joint_features(world: W.WorldState, for_agent: str, k: int,
                   outage: bool = False) -> np.ndarray:
    """Cross-system observation O.

    For the bike agent: per-bus-stop (last_bus_fwd, last_bus_bwd, queue
    lengths), truncated or zero-padded to k columns; under a bus outage the
    recency columns carry the episode-length sentinel. For the bus agent:
    per-bike-station (available, free docks) likewise.
    """
    if k < 1:
        raise ValueError("joint mode needs k >= 1")
    sentinel = world.clock.episode_length
    if for_agent == "vehicle":
        rows = []
        for stop in world.bus_stops:
            fwd = sentinel if outage else stop.last_bus_fwd
            bwd = sentinel if outage else stop.last_bus_bwd
            rows.append([fwd, bwd, len(stop.queue_fwd), len(stop.queue_bwd)])
        n = len(world.bus_stops)
    elif for_agent == "bus":
        rows = [[s.available, s.free_docks] for s in world.bike_stations]
        n = len(world.bike_stations)
    else:
        raise ValueError(f"unknown agent kind {for_agent!r}")
    if n == 0:
        return np.zeros((0, k))
    full = np.array(rows, dtype=float)
    out = np.zeros((n, k))
    cols = min(k, full.shape[1])
    out[:, :cols] = full[:, :cols]
    return out


# ---------------------------------------------------------------------------
# Demand/forecast channel shared by both envs

@dataclass
class _DemandChannel:
    """Per-episode realized and expected demand, indexed by 1-based segment."""

    trips: dict[int, list]  # realized bike trips
    bus_arrivals: dict[int, list]
    c1: np.ndarray  # (T, n) expected bike departures
    c2: np.ndarray  # (T, n) expected bike arrivals
    g: np.ndarray  # (T, 2n) expected flow encodings
    bus_c1: np.ndarray  # (T, n_stops) expected forward boardings
    bus_c2: np.ndarray

    def horizon_slice(self, arr: np.ndarray, current: int, start: int,
                      L: int) -> np.ndarray:
        """Forecast rows for segments current+1..current+L, zero-padded."""
        T = arr.shape[0]
        rows = []
        for t in range(current - start + 1, current - start + 1 + L):
            rows.append(arr[t] if 0 <= t < T else np.zeros(arr.shape[1]))
        return np.array(rows)


def _build_channel(scenario: W.ScenarioSpec, rng: PortableRng,
                   extra_trips: list[dict] | None = None) -> _DemandChannel:
    station_ids = scenario.station_ids()
    stop_ids = [sid for r in scenario.routes for sid in r["stops"]]
    n = len(station_ids)
    n_stops = len(stop_ids)
    T = scenario.episode_length
    trips: dict[int, list] = {}
    bus_arrivals: dict[int, list] = {}
    c1 = np.zeros((T, max(n, 1)))
    c2 = np.zeros((T, max(n, 1)))
    g = np.zeros((T, 2 * max(n, 1)))
    bus_c1 = np.zeros((T, max(n_stops, 1)))
    bus_c2 = np.zeros((T, max(n_stops, 1)))
    sindex = {sid: i for i, sid in enumerate(station_ids)}
    pindex = {sid: i for i, sid in enumerate(stop_ids)}

    def od_of(trip_list):
        od = np.zeros((max(n, 1), max(n, 1)))
        for origin, dest, count in trip_list:
            od[sindex[origin], sindex[dest]] += count
        return od

    if scenario.demand_script is not None:
        script = scripted_demand(scenario.demand_script, station_ids, T,
                                 stop_ids, scenario.bus_script)
        for seg in range(1, T + 1):
            trips[seg] = script.trips_at(seg)
            bus_arrivals[seg] = script.bus_at(seg)
            od = od_of(trips[seg])
            c1[seg - 1] = od.sum(axis=1)[:n] if n else 0
            c2[seg - 1] = od.sum(axis=0)[:n] if n else 0
            g[seg - 1] = encode_flow(od) if n else 0
            for origin, dest, count in bus_arrivals[seg]:
                if pindex[dest] > pindex[origin]:
                    bus_c1[seg - 1, pindex[origin]] += count
                else:
                    bus_c2[seg - 1, pindex[origin]] += count
    elif scenario.demand_profile is not None:
        profile = DemandProfile.from_dict(scenario.demand_profile, station_ids)
        clock = W.SegmentClock(0, T, 0, scenario.segment_minutes)
        for seg in range(1, T + 1):
            clock.current = seg - 1  # day position of the sampled segment
            drawn, bus_drawn = sample_segment(profile, clock, rng)
            trips[seg] = drawn
            bus_arrivals[seg] = bus_drawn
            expected = profile.expected_od(clock.current)
            c1[seg - 1] = expected.sum(axis=1)
            c2[seg - 1] = expected.sum(axis=0)
            g[seg - 1] = encode_flow(expected)
            for (origin, dest), rate in sorted(profile.bus_rates.items()):
                if origin in pindex and dest in pindex:
                    if pindex[dest] > pindex[origin]:
                        bus_c1[seg - 1, pindex[origin]] += rate
                    else:
                        bus_c2[seg - 1, pindex[origin]] += rate
    else:
        for seg in range(1, T + 1):
            trips[seg] = []
            bus_arrivals[seg] = []
    # extra demand injected by an active bus outage: realized but not
    # forecast, since the forecasters cannot anticipate an outage
    for entry in extra_trips or []:
        seg = int(entry["segment"])
        if 1 <= seg <= T:
            trips.setdefault(seg, []).append(
                (entry["origin"], entry["destination"], int(entry["count"])))
    return _DemandChannel(trips=trips, bus_arrivals=bus_arrivals, c1=c1, c2=c2,
                          g=g, bus_c1=bus_c1, bus_c2=bus_c2)


# ---------------------------------------------------------------------------
# Bike MDP

@dataclass
class BikeEnv:
    """Single dispatch-vehicle repositioning MDP with an episodic reward.

    Action: (station index, signed bike quantity). The reposition applies
    before the segment's demand flows. The reward is 0 until the episode
    ends, where it settles to served - beta * travel distance -
    gamma_overflow * undockable bikes; per-step accumulators are exposed in
    the step info for diagnostics.
    """

    scenario: W.ScenarioSpec
    reward: RewardConfig = field(default_factory=RewardConfig)
    horizon: int = 2  # L, forecast segments in the observation
    joint_enabled: bool | None = None  # None: take the scenario's toggle
    joint_k: int | None = None
    seed: int = 0
    bus_headway: int = 4  # scenery buses reset stop timers this often

    def __post_init__(self):
        joint = self.scenario.joint or {}
        if self.joint_enabled is None:
            self.joint_enabled = bool(joint.get("enabled", False))
        if self.joint_k is None:
            self.joint_k = int(joint.get("k", 2))
        self._outage_mode = joint.get("bus_outage", False)
        self._outage_trips = joint.get("outage_trips", [])
        self._episode_counter = 0
        self.world: W.WorldState | None = None

    @property
    def n_stations(self) -> int:
        return len(self.scenario.stations)

    @property
    def action_dim(self) -> int:
        return self.n_stations + 1

    def observation_dim(self) -> int:
        probe = self.reset(seed=self.seed)
        return probe.size

    def _outage_active(self, rng: PortableRng) -> bool:
        if self._outage_mode == "random":
            return rng.uniform() < 0.5
        return bool(self._outage_mode)

    def reset(self, seed: int | None = None,
              force_outage: bool | None = None) -> np.ndarray:
        if seed is not None:
            self.seed = seed
        self._episode_counter += 1
        rng = PortableRng((self.seed << 16) ^ self._episode_counter)
        self.outage = (self._outage_active(rng) if force_outage is None
                       else force_outage)
        extra = self._outage_trips if self.outage else None
        self.channel = _build_channel(self.scenario, rng, extra)
        self.world = W.build_world(self.scenario)
        self.done = False
        self.served = 0
        self.lost = 0
        self.distance = 0.0
        self.overflow = 0
        self.total_demand = sum(c for t in self.channel.trips.values()
                                for _, _, c in t)
        return self._observe()

    def _observe(self) -> np.ndarray:
        w = self.world
        cur = w.clock.current
        start = w.clock.episode_start
        c1 = self.channel.horizon_slice(self.channel.c1, cur, start, self.horizon)
        c2 = self.channel.horizon_slice(self.channel.c2, cur, start, self.horizon)
        g = self.channel.horizon_slice(self.channel.g, cur, start, self.horizon)
        O = (joint_features(w, "vehicle", self.joint_k, outage=self.outage)
             if self.joint_enabled else None)
        obs = bike_observe(w, c1, c2, g, 0, O, self.horizon)
        return obs.flatten()

    def step(self, action: tuple[int, int]):
        if self.done:
            raise EpisodeDone("episode already finished")
        station_idx, quantity = int(action[0]), int(action[1])
        w = self.world
        if w.vehicles:
            vehicle = w.vehicles[0]
            before = vehicle.position
            undockable = 0
            if quantity < 0:
                undockable = max(0, min(-quantity, vehicle.occupied)
                                 - w.bike_stations[station_idx].free_docks)
            W.apply_reposition(w, 0, station_idx, quantity)
            after = vehicle.position
            if before != after:
                a = np.array(w.bike_stations[before].coord)
                b = np.array(w.bike_stations[after].coord)
                self.distance += float(np.linalg.norm(a - b))
            self.overflow += undockable
        segment = w.clock.current - w.clock.episode_start + 1
        _, served, lost = W.step_bike_world(w, self.channel.trips.get(segment, []))
        self.served += served
        self.lost += lost
        self._tick_bus_scenery()
        self.done = w.clock.at_end
        reward = 0.0
        if self.done:
            reward = (self.served - self.reward.beta * self.distance
                      - self.reward.gamma_overflow * self.overflow)
        info = {"served": served, "lost": lost,
                "served_total": self.served, "lost_total": self.lost,
                "distance_total": self.distance,
                "overflow_total": self.overflow,
                "outage": self.outage}
        return self._observe(), reward, self.done, info

    def _tick_bus_scenery(self):
        w = self.world
        for stop in w.bus_stops:
            if self.outage:
                stop.last_bus_fwd = w.clock.episode_length
                stop.last_bus_bwd = w.clock.episode_length
            else:
                elapsed = w.clock.current - w.clock.episode_start
                stop.last_bus_fwd = elapsed % self.bus_headway
                stop.last_bus_bwd = elapsed % self.bus_headway


# ---------------------------------------------------------------------------
# Bus MDP

@dataclass
class BusEnv:
    """Single controlled bus on one route; other buses halt.

    Reward for a move is the boarded passengers' accumulated waiting time in
    minutes minus alpha times the driving time; halting is exactly 0. The
    episode fails when any passenger has waited the patience bound p, or
    ends with the clock.
    """

    scenario: W.ScenarioSpec
    reward: RewardConfig = field(default_factory=RewardConfig)
    horizon: int = 2
    joint_enabled: bool | None = None
    joint_k: int | None = None
    seed: int = 0

    def __post_init__(self):
        joint = self.scenario.joint or {}
        if self.joint_enabled is None:
            self.joint_enabled = bool(joint.get("enabled", False))
        if self.joint_k is None:
            self.joint_k = int(joint.get("k", 2))
        self._episode_counter = 0
        self.world: W.WorldState | None = None

    @property
    def action_dim(self) -> int:
        return 3

    def reset(self, seed: int | None = None) -> np.ndarray:
        if seed is not None:
            self.seed = seed
        self._episode_counter += 1
        rng = PortableRng((self.seed << 16) ^ self._episode_counter)
        self.channel = _build_channel(self.scenario, rng)
        self.world = W.build_world(self.scenario)
        self.done = False
        self.reduced_wait = 0.0
        self.drive_time = 0.0
        return self._observe()

    def _observe(self) -> np.ndarray:
        w = self.world
        cur = w.clock.current
        start = w.clock.episode_start
        c1 = self.channel.horizon_slice(self.channel.bus_c1, cur, start,
                                        self.horizon)
        c2 = self.channel.horizon_slice(self.channel.bus_c2, cur, start,
                                        self.horizon)
        O = (joint_features(w, "bus", self.joint_k)
             if self.joint_enabled else None)
        return bus_observe(w, c1, c2, 0, O, self.horizon).flatten()

    def _max_wait(self) -> int:
        w = self.world
        cur = w.clock.current
        waits = [p.wait_segments(cur)
                 for stop in w.bus_stops
                 for p in stop.queue_fwd + stop.queue_bwd]
        return max(waits, default=0)

    def step(self, action: int):
        if self.done:
            raise EpisodeDone("episode already finished")
        if action not in (W.OP_FORWARD, W.OP_HALT, W.OP_BACKWARD):
            raise ValueError(f"invalid bus action {action!r}")
        w = self.world
        segment = w.clock.current - w.clock.episode_start + 1
        arrivals = self.channel.bus_arrivals.get(segment, [])
        actions = [W.OP_HALT] * len(w.buses)
        actions[0] = action
        _, reduced, drive = W.step_bus_world(w, actions, arrivals)
        self.reduced_wait += reduced
        self.drive_time += drive
        reward = 0.0 if action == W.OP_HALT else (
            reduced - self.reward.alpha * drive)
        self.done = w.clock.at_end or self._max_wait() >= self.reward.patience
        info = {"reduced_wait": reduced, "drive_time": drive,
                "max_wait": self._max_wait()}
        return self._observe(), reward, self.done, info
