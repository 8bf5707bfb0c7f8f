"""Baseline schedulers, the exhaustive placement oracle, and evaluation."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import world as W
from .ddpg import Policy, run_episode
from .envs import BikeEnv, BusEnv, RewardConfig


class OracleTooLarge(ValueError):
    """Raised when the exhaustive placement space exceeds the refusal bound."""


PLACEMENT_BOUND = 10 ** 6


@dataclass
class MetricsReport:
    served: int
    lost: int
    mean_wait_minutes: float
    vehicle_distance: float
    bus_drive_time: float
    returns: list[float]
    seed: int
    total_demand: int = 0

    def as_row(self) -> dict:
        return {
            "seed": self.seed,
            "served": self.served,
            "lost": self.lost,
            "mean_wait_minutes": f"{self.mean_wait_minutes:.3f}",
            "vehicle_distance": f"{self.vehicle_distance:.3f}",
            "bus_drive_time": f"{self.bus_drive_time:.3f}",
            "mean_return": f"{np.mean(self.returns):.3f}" if self.returns else "0",
        }


def _dispatchable_bikes(scenario: W.ScenarioSpec) -> int:
    return (sum(v.get("initial_load", 0) for v in scenario.vehicles)
            + sum(s.get("initial_bikes", 0) for s in scenario.stations))


def _with_placement(scenario: W.ScenarioSpec,
                    placement: dict[str, int]) -> W.ScenarioSpec:
    """Scenario copy with all dispatchable bikes pre-placed at stations."""
    stations = []
    for s in scenario.stations:
        s = dict(s)
        s["initial_bikes"] = placement.get(s["id"], 0)
        stations.append(s)
    vehicles = [dict(v, initial_load=0) for v in scenario.vehicles]
    return replace(scenario, stations=stations, vehicles=vehicles)


def _simulate_passive(scenario: W.ScenarioSpec, seed: int = 0):
    """Run the episode with no repositioning; returns (served, lost)."""
    env = BikeEnv(scenario=scenario, seed=seed)
    env.reset(seed=seed)
    served = lost = 0
    done = False
    home = env.world.vehicles[0].position if env.world.vehicles else 0
    while not done:
        _, _, done, info = env.step((home, 0))
        served = info["served_total"]
        lost = info["lost_total"]
    return served, lost


def first_segment_departures(scenario: W.ScenarioSpec,
                             seed: int = 0) -> np.ndarray:
    env = BikeEnv(scenario=scenario, seed=seed)
    env.reset(seed=seed)
    return env.channel.c1[0].copy()


def run_greedy_bike(scenario: W.ScenarioSpec, seed: int = 0) -> MetricsReport:
    """Place every dispatchable bike at the station with the largest
    first-segment predicted departures (ties to lowest id), then never
    reposition again."""
    departures = first_segment_departures(scenario, seed)
    ids = scenario.station_ids()
    order = sorted(range(len(ids)), key=lambda i: (-departures[i], ids[i]))
    target = ids[order[0]] if ids else None
    placement = {target: _dispatchable_bikes(scenario)} if target else {}
    served, lost = _simulate_passive(_with_placement(scenario, placement), seed)
    return MetricsReport(served=served, lost=lost, mean_wait_minutes=0.0,
                         vehicle_distance=0.0, bus_drive_time=0.0,
                         returns=[float(served)], seed=seed,
                         total_demand=served + lost)


def run_no_reposition(scenario: W.ScenarioSpec, seed: int = 0) -> MetricsReport:
    served, lost = _simulate_passive(scenario, seed)
    return MetricsReport(served=served, lost=lost, mean_wait_minutes=0.0,
                         vehicle_distance=0.0, bus_drive_time=0.0,
                         returns=[float(served)], seed=seed,
                         total_demand=served + lost)


def _compositions(total: int, bins: int):
    """All nonnegative integer splits of total over bins."""
    if bins == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in _compositions(total - first, bins - 1):
            yield (first,) + rest


def placement_count(total: int, bins: int) -> int:
    return math.comb(total + bins - 1, bins - 1)


def run_exhaustive_bike(scenario: W.ScenarioSpec, seed: int = 0):
    """Enumerate every initial placement of the dispatchable bikes and
    return (best placement dict, best served). Independent oracle for the
    long-term planning claim; refuses instances beyond the bound."""
    ids = scenario.station_ids()
    total = _dispatchable_bikes(scenario)
    count = placement_count(total, max(len(ids), 1))
    if count > PLACEMENT_BOUND:
        raise OracleTooLarge(
            f"{count} placements exceed the bound {PLACEMENT_BOUND}")
    best_served = -1
    best_placement: dict[str, int] = {}
    for split in _compositions(total, len(ids)):
        feasible = all(c <= s["docks"]
                       for c, s in zip(split, scenario.stations))
        if not feasible:
            continue
        placement = dict(zip(ids, split))
        served, _ = _simulate_passive(_with_placement(scenario, placement),
                                      seed)
        if served > best_served:
            best_served = served
            best_placement = placement
    return best_placement, best_served


@dataclass
class StaticHeadwayPolicy:
    """Bus baseline: drive forward to the terminal, then back, forever."""

    direction: int = W.OP_FORWARD

    def begin_episode(self, obs):
        self.direction = W.OP_FORWARD

    def action_for(self, env: BusEnv) -> int:
        bus = env.world.buses[0]
        pos = bus.position
        if pos == len(env.world.bus_stops) - 1:
            self.direction = W.OP_BACKWARD
        elif pos == 0:
            self.direction = W.OP_FORWARD
        return self.direction


def run_static_headway(scenario: W.ScenarioSpec, seed: int = 0,
                       reward: RewardConfig | None = None) -> MetricsReport:
    env = BusEnv(scenario=scenario, seed=seed,
                 reward=reward or RewardConfig())
    env.reset(seed=seed)
    policy = StaticHeadwayPolicy()
    policy.begin_episode(None)
    done = False
    total = 0.0
    while not done:
        _, r, done, _ = env.step(policy.action_for(env))
        total += r
    return MetricsReport(served=0, lost=0,
                         mean_wait_minutes=0.0,
                         vehicle_distance=0.0,
                         bus_drive_time=env.drive_time,
                         returns=[total], seed=seed,
                         total_demand=0)


def evaluate_policy(policy: Policy, scenario: W.ScenarioSpec, episodes: int,
                    seed: int, force_outage: bool | None = None,
                    joint_enabled: bool | None = None) -> MetricsReport:
    """Noise-free evaluation of a trained bike policy."""
    kwargs = {}
    if joint_enabled is not None:
        kwargs["joint_enabled"] = joint_enabled
    env = BikeEnv(scenario=scenario, seed=seed, **kwargs)
    served = lost = 0
    distance = 0.0
    returns = []
    for ep in range(episodes):
        env.seed = seed
        total, info = run_episode(env, policy, force_outage=force_outage)
        returns.append(total)
        served += info["served_total"]
        lost += info["lost_total"]
        distance += info["distance_total"]
    return MetricsReport(served=served, lost=lost, mean_wait_minutes=0.0,
                         vehicle_distance=distance, bus_drive_time=0.0,
                         returns=returns, seed=seed,
                         total_demand=served + lost)


def evaluate(policy_kind: str, scenario: W.ScenarioSpec, episodes: int,
             seeds: list[int], policy: Policy | None = None) -> list[MetricsReport]:
    """Run a named baseline or a trained policy across seeds."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    reports = []
    for seed in seeds:
        if policy_kind == "greedy":
            reports.append(run_greedy_bike(scenario, seed))
        elif policy_kind == "none":
            reports.append(run_no_reposition(scenario, seed))
        elif policy_kind == "headway":
            reports.append(run_static_headway(scenario, seed))
        elif policy_kind == "trained":
            if policy is None:
                raise ValueError("trained evaluation needs a policy")
            reports.append(evaluate_policy(policy, scenario, episodes, seed))
        else:
            raise ValueError(f"unknown policy kind {policy_kind!r}")
    return reports


def save_reports_csv(path: str, reports: list[MetricsReport]):
    if not reports:
        return
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(reports[0].as_row()))
        writer.writeheader()
        for rep in reports:
            writer.writerow(rep.as_row())
