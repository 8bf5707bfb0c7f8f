import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from urbansched import world as W
from urbansched.world import (
    OP_BACKWARD, OP_FORWARD, OP_HALT, ScenarioError, ScenarioSpec,
    apply_reposition, build_world, step_bike_world, step_bus_world,
)


def make_scenario(initial_bikes=(0, 0, 0), docks=(20, 20, 20),
                  vehicle_load=0, episode_length=4, routes=None):
    return ScenarioSpec.from_dict({
        "clock": {"segment_minutes": 15, "episode_length": episode_length},
        "stations": [
            {"id": sid, "x": float(i), "y": 0.0, "docks": docks[i],
             "initial_bikes": initial_bikes[i]}
            for i, sid in enumerate(["A", "B", "C"])
        ],
        "routes": routes or [],
        "vehicles": [{"capacity": 10, "start": "A",
                      "initial_load": vehicle_load}],
        "environment": [0.0],
    })


def bus_scenario(n_stops=4, capacity=30, episode_length=8):
    return ScenarioSpec.from_dict({
        "clock": {"segment_minutes": 15, "episode_length": episode_length},
        "stations": [],
        "routes": [{"stops": [f"S{i}" for i in range(1, n_stops + 1)],
                    "bus_count": 1, "capacity": capacity}],
        "vehicles": [],
        "environment": [0.0],
    })


class TestBuildWorld:
    def test_three_empty_stations(self):
        world = build_world(make_scenario(vehicle_load=10))
        assert [s.available for s in world.bike_stations] == [0, 0, 0]
        assert world.vehicles[0].occupied == 10
        assert world.in_transit_bikes == 0
        assert world.clock.current == world.clock.episode_start

    def test_zero_dock_station_stays_empty(self):
        scenario = make_scenario(docks=(0, 20, 20))
        world = build_world(scenario)
        assert world.bike_stations[0].available == 0
        step_bike_world(world, [("B", "A", 3)])
        assert world.bike_stations[0].available == 0

    def test_duplicate_station_ids_rejected(self):
        doc = {
            "clock": {"segment_minutes": 15, "episode_length": 1},
            "stations": [
                {"id": "A", "x": 0, "y": 0, "docks": 5},
                {"id": "A", "x": 1, "y": 0, "docks": 5},
            ],
            "routes": [], "vehicles": [], "environment": [],
        }
        with pytest.raises(ScenarioError, match="duplicate"):
            ScenarioSpec.from_dict(doc)

    def test_nonfinite_coordinate_rejected(self):
        doc = {
            "clock": {"segment_minutes": 15, "episode_length": 1},
            "stations": [
                {"id": "A", "x": float("nan"), "y": 0, "docks": 5},
                {"id": "B", "x": 1, "y": 0, "docks": 5},
            ],
            "routes": [], "vehicles": [], "environment": [],
        }
        with pytest.raises(ScenarioError, match="coordinates"):
            ScenarioSpec.from_dict(doc)


def brute_force_segment(avail, docks, trips):
    """Unit-granularity re-simulation of one segment's settlement rule."""
    avail = dict(avail)
    reserved = {k: 0 for k in avail}
    served = lost = 0
    for origin, dest, count in trips:
        for _ in range(count):
            free = docks[dest] - avail[dest] - reserved[dest]
            if avail[origin] > 0 and free > 0:
                avail[origin] -= 1
                reserved[dest] += 1
                served += 1
            else:
                lost += 1
    for k in avail:
        avail[k] += reserved[k]
    return avail, served, lost


class TestStepBikeWorld:
    def test_fig1a_first_trip(self):
        world = build_world(make_scenario(initial_bikes=(10, 0, 0)))
        _, served, lost = step_bike_world(world, [("A", "B", 10)])
        assert (served, lost) == (10, 0)
        assert world.bike_stations[0].available == 0
        assert world.bike_stations[1].available == 10

    def test_empty_station_loses_demand(self):
        world = build_world(make_scenario())
        _, served, lost = step_bike_world(world, [("A", "B", 15)])
        assert (served, lost) == (0, 15)

    def test_segment_end_settlement(self):
        # inflow to B lands at segment end, so B->C in the same segment fails
        world = build_world(make_scenario(initial_bikes=(10, 0, 0)))
        trips = [("A", "B", 10), ("B", "C", 15)]
        _, served, lost = step_bike_world(world, trips)
        assert (served, lost) == (10, 15)
        avail, bf_served, bf_lost = brute_force_segment(
            {"A": 10, "B": 0, "C": 0}, {"A": 20, "B": 20, "C": 20}, trips)
        assert served == bf_served and lost == bf_lost
        assert {s.id: s.available for s in world.bike_stations} == avail

    def test_unknown_station_rejected(self):
        world = build_world(make_scenario())
        with pytest.raises(ScenarioError, match="unknown station"):
            step_bike_world(world, [("A", "Z", 1)])

    @given(st.lists(st.tuples(st.sampled_from("ABC"), st.sampled_from("ABC"),
                              st.integers(0, 8)), max_size=6),
           st.lists(st.integers(0, 10), min_size=3, max_size=3))
    @settings(max_examples=60, deadline=None)
    def test_settlement_matches_brute_force(self, raw_trips, initial):
        trips = [(o, d, c) for o, d, c in raw_trips if o != d]
        world = build_world(make_scenario(initial_bikes=tuple(initial),
                                          docks=(10, 10, 10)))
        before = world.total_bikes()
        _, served, lost = step_bike_world(world, trips)
        avail, bf_served, bf_lost = brute_force_segment(
            {"A": initial[0], "B": initial[1], "C": initial[2]},
            {"A": 10, "B": 10, "C": 10}, trips)
        assert served == bf_served and lost == bf_lost
        assert {s.id: s.available for s in world.bike_stations} == avail
        assert world.total_bikes() == before


def enumerate_best_boarding(waiters, capacity, minutes):
    best = 0.0
    for size in range(min(capacity, len(waiters)) + 1):
        for combo in itertools.combinations(waiters, size):
            best = max(best, sum(combo) * minutes)
    return best


class TestStepBusWorld:
    def test_all_halt(self):
        world = build_world(bus_scenario())
        _, reduced, drive = step_bus_world(world, [OP_HALT],
                                           [("S1", "S3", 2)])
        assert reduced == 0 and drive == 0
        assert len(world.bus_stops[0].queue_fwd) == 2

    def test_move_with_empty_queues(self):
        world = build_world(bus_scenario())
        _, reduced, drive = step_bus_world(world, [OP_FORWARD], [])
        assert reduced == 0
        assert drive == world.clock.segment_minutes
        assert world.buses[0].position == 1

    def test_fifo_boarding_maximizes_reduced_wait(self):
        world = build_world(bus_scenario(capacity=2))
        minutes = world.clock.segment_minutes
        # waiting ages 2, 1, 0 at stop S2, all heading forward
        stop = world.bus_stops[1]
        now = world.clock.current
        for age in (2, 1, 0):
            stop.queue_fwd.append(W.Passenger("S2", "S4", now - age))
        _, reduced, _ = step_bus_world(world, [OP_FORWARD], [])
        assert reduced == (2 + 1) * minutes
        assert reduced == enumerate_best_boarding([2, 1, 0], 2, minutes)
        assert len(stop.queue_fwd) == 1  # the youngest is left behind

    def test_alighting_frees_capacity(self):
        world = build_world(bus_scenario(capacity=1))
        bus = world.buses[0]
        now = world.clock.current
        pax = W.Passenger("S1", "S2", now)
        pax.boarded = True
        bus.onboard.append(pax)
        bus.occupied, bus.remaining = 1, 0
        world.bus_stops[1].queue_fwd.append(W.Passenger("S2", "S4", now))
        step_bus_world(world, [OP_FORWARD], [])
        assert bus.occupied == 1  # alighted one, boarded one
        assert bus.onboard[0].destination == "S4"

    def test_clipped_at_terminal_counts_as_halt(self):
        world = build_world(bus_scenario())
        _, _, drive = step_bus_world(world, [OP_BACKWARD], [])
        assert drive == 0
        assert world.buses[0].position == 0
        assert world.buses[0].operation == OP_HALT

    def test_timer_reset_on_visit(self):
        world = build_world(bus_scenario())
        step_bus_world(world, [OP_FORWARD], [])
        assert world.bus_stops[1].last_bus_fwd == 0
        assert world.bus_stops[0].last_bus_fwd == 1

    def test_bad_action_rejected(self):
        world = build_world(bus_scenario())
        with pytest.raises(ScenarioError, match="invalid bus action"):
            step_bus_world(world, [2], [])


class TestApplyReposition:
    def test_full_load(self):
        world = build_world(make_scenario(initial_bikes=(10, 0, 0)))
        apply_reposition(world, 0, 0, 10)
        assert world.bike_stations[0].available == 0
        assert world.vehicles[0].occupied == 10
        assert world.vehicles[0].operation == 10

    def test_zero_quantity_moves_only(self):
        world = build_world(make_scenario(initial_bikes=(5, 0, 0)))
        apply_reposition(world, 0, 2, 0)
        assert world.vehicles[0].position == 2
        assert world.bike_stations[0].available == 5
        assert world.vehicles[0].operation == 0

    def test_unload_clips_to_free_docks(self):
        scenario = make_scenario(initial_bikes=(0, 18, 0), docks=(20, 20, 20),
                                 vehicle_load=7)
        world = build_world(scenario)
        apply_reposition(world, 0, 1, -7)
        assert world.vehicles[0].operation == -2
        assert world.bike_stations[1].available == 20
        assert world.vehicles[0].occupied == 5

    def test_unknown_vehicle_rejected(self):
        world = build_world(make_scenario())
        with pytest.raises(ScenarioError, match="unknown vehicle"):
            apply_reposition(world, 3, 0, 1)


class TestInvariants:
    @given(st.integers(0, 2 ** 32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_random_operations_preserve_invariants(self, seed):
        rng = np.random.default_rng(seed)
        world = build_world(make_scenario(
            initial_bikes=(int(rng.integers(0, 10)), int(rng.integers(0, 10)),
                           int(rng.integers(0, 10))),
            docks=(10, 10, 10), vehicle_load=int(rng.integers(0, 10)),
            episode_length=10 ** 6))
        total = world.total_bikes()
        ids = ["A", "B", "C"]
        for _ in range(200):
            if rng.uniform() < 0.5:
                apply_reposition(world, 0, int(rng.integers(0, 3)),
                                 int(rng.integers(-12, 13)))
            else:
                trips = [(ids[rng.integers(0, 3)], ids[rng.integers(0, 3)],
                          int(rng.integers(0, 6))) for _ in range(3)]
                trips = [(o, d, c) for o, d, c in trips if o != d]
                step_bike_world(world, trips)
            assert world.total_bikes() == total
            for s in world.bike_stations:
                assert 0 <= s.available <= s.docks
            for a in world.agents:
                assert int(np.sum(a.location)) == 1
                assert a.occupied + a.remaining == a.capacity
                assert a.occupied >= 0 and a.remaining >= 0

    def test_determinism(self):
        results = []
        for _ in range(2):
            world = build_world(make_scenario(initial_bikes=(5, 3, 1)))
            apply_reposition(world, 0, 1, 2)
            _, served, lost = step_bike_world(
                world, [("A", "C", 4), ("B", "A", 2)])
            results.append((served, lost,
                            tuple(s.available for s in world.bike_stations)))
        assert results[0] == results[1]
