import numpy as np
import pytest
from scipy import stats

from vflsim.config import ConfigError
from vflsim.mobility import (ArrivalProcess, RoadGeometry, VehicleState, advance,
                             nearest_rsu_distance, remaining_sojourn, spawn_arrivals)


def make_vehicle(vid=0, lane=0, position=0.0, velocity=25.0, **kw):
    return VehicleState(id=vid, lane=lane, position=position, velocity=velocity,
                        spawn_time=0.0, **kw)


class TestGeometry:
    def test_rsu_positions_evenly_spaced(self):
        g = RoadGeometry()
        xs = [x for x, _ in g.rsu_positions]
        assert xs[0] == 50.0 and xs[-1] == 1950.0
        assert np.allclose(np.diff(xs), 100.0)
        assert all(y == 0.0 for _, y in g.rsu_positions)

    def test_lanes_split_about_center(self):
        g = RoadGeometry(lane_count=6, lane_width=4.0)
        ys = [g.lane_center_y(i) for i in range(6)]
        assert ys == [-10.0, -6.0, -2.0, 2.0, 6.0, 10.0]


class TestSpawnArrivals:
    def test_zero_rate_empty(self):
        rng = np.random.default_rng(0)
        assert spawn_arrivals(rng, 0.0, 10.0, RoadGeometry(), (16.0, 28.0)) == []

    def test_mean_count(self):
        rng = np.random.default_rng(1)
        g = RoadGeometry()
        total = sum(len(spawn_arrivals(rng, 0.2, 10.0, g, (16.667, 27.778)))
                    for _ in range(10_000))
        assert total / 10_000 == pytest.approx(12.0, rel=0.05)

    def test_speed_range(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            for v in spawn_arrivals(rng, 0.5, 10.0, RoadGeometry(), (16.667, 27.778)):
                assert 16.667 <= v.velocity <= 27.778
                assert v.position == 0.0

    def test_bad_speed_range_rejected(self):
        rng = np.random.default_rng(3)
        with pytest.raises(ConfigError):
            spawn_arrivals(rng, 0.2, 10.0, RoadGeometry(), (28.0, 16.0))
        with pytest.raises(ConfigError):
            spawn_arrivals(rng, 0.2, 10.0, RoadGeometry(), (0.0, 0.0))


class TestAdvance:
    def test_zero_dt_identity(self):
        vs = [make_vehicle(0, position=123.0), make_vehicle(1, position=99.0)]
        surv, gone = advance(vs, 0.0, RoadGeometry())
        assert gone == [] and [v.position for v in surv] == [123.0, 99.0]

    def test_departure(self):
        vs = [make_vehicle(7, position=1999.0, velocity=25.0)]
        surv, gone = advance(vs, 1.0, RoadGeometry())
        assert surv == [] and gone == [7]

    def test_count_conservation(self):
        rng = np.random.default_rng(4)
        vs = [make_vehicle(i, position=float(rng.uniform(0, 2000)),
                           velocity=float(rng.uniform(16, 28))) for i in range(300)]
        surv, gone = advance(vs, 30.0, RoadGeometry())
        assert len(surv) + len(gone) == 300


class TestSojourn:
    def test_midway(self):
        v = make_vehicle(position=1000.0, velocity=25.0)
        assert remaining_sojourn(v, RoadGeometry()) == 40.0

    def test_boundary(self):
        v = make_vehicle(position=2000.0, velocity=25.0)
        assert remaining_sojourn(v, RoadGeometry()) == 0.0

    def test_entry(self):
        v = make_vehicle(position=0.0, velocity=16.6667)
        assert remaining_sojourn(v, RoadGeometry()) == pytest.approx(120.0, rel=1e-4)

    def test_out_of_coverage_rejected(self):
        v = make_vehicle(position=2100.0)
        with pytest.raises(ValueError):
            remaining_sojourn(v, RoadGeometry())

    def test_decreases_exactly_with_motion(self):
        g = RoadGeometry()
        v = make_vehicle(position=0.0, velocity=23.4)
        start = remaining_sojourn(v, g)
        assert start == g.road_length / 23.4
        advance([v], 17.0, g)
        assert remaining_sojourn(v, g) == pytest.approx(start - 17.0, rel=1e-12)


class TestNearestRsu:
    def test_along_centerline(self):
        g = RoadGeometry(lane_count=1, lane_width=4.0)  # single lane sits at y=0
        v = make_vehicle(position=120.0, lane=0)
        assert nearest_rsu_distance(v, g) == pytest.approx(30.0)

    def test_lateral_only(self):
        g = RoadGeometry(lane_count=2, lane_width=4.0)  # lanes at y = -2, +2
        v = make_vehicle(position=50.0, lane=1)
        assert nearest_rsu_distance(v, g) == pytest.approx(2.0)

    def test_reflection_symmetry(self):
        g = RoadGeometry()
        for lane in range(6):
            a = make_vehicle(position=150.0 - 37.0, lane=lane)
            b = make_vehicle(position=150.0 + 37.0, lane=lane)
            assert nearest_rsu_distance(a, g) == pytest.approx(nearest_rsu_distance(b, g))

    def test_bounded_by_spacing_and_width(self):
        g = RoadGeometry()
        rng = np.random.default_rng(5)
        bound = g.rsu_spacing / 2 + g.lane_count * g.lane_width
        for _ in range(500):
            v = make_vehicle(position=float(rng.uniform(0, 2000)),
                             lane=int(rng.integers(0, 6)))
            assert nearest_rsu_distance(v, g) <= bound


class TestArrivalProcess:
    def test_interarrival_distribution(self):
        g = RoadGeometry(lane_count=1)
        proc = ArrivalProcess(g, 0.2, (16.0, 28.0),
                              np.random.default_rng(6), np.random.default_rng(7))
        times = [t for t, _, _ in proc.pop_until(60_000.0)]
        gaps = np.diff(times)
        assert len(gaps) > 9_000
        result = stats.kstest(gaps, "expon", args=(0.0, 1.0 / 0.2))
        assert result.pvalue > 0.01

    def test_slicing_invariance(self):
        g = RoadGeometry()
        args = (g, 0.3, (16.0, 28.0))
        a = ArrivalProcess(*args, np.random.default_rng(8), np.random.default_rng(9))
        b = ArrivalProcess(*args, np.random.default_rng(8), np.random.default_rng(9))
        whole = a.pop_until(100.0)
        sliced = []
        for t in (13.0, 27.5, 27.5, 64.0, 100.0):
            sliced.extend(b.pop_until(t))
        assert whole == sliced

    def test_zero_rate_never_arrives(self):
        g = RoadGeometry()
        proc = ArrivalProcess(g, 0.0, (16.0, 28.0),
                              np.random.default_rng(10), np.random.default_rng(11))
        assert proc.pop_until(1e9) == []
