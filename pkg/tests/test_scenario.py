import numpy as np
import pytest

from hybrid_predict.core import Trajectory
from hybrid_predict.scenario import (
    CURVED_C, ROUNDABOUT_A, ExperimentSpec, IdmParams, MapSpec, NoiseSpec, STOP_SPEED, VEHICLE_LENGTH,
    add_noise, build_experiment, default_experiment, generate_map, idm_acceleration, idm_desired_gap,
    ingest_csv, simulate_tracks,
)

P = IdmParams()


class TestIdm:
    def test_desired_gap(self):
        assert idm_desired_gap(0.0, 0.0, P) == 2.0
        assert idm_desired_gap(10.0, 0.0, P) == pytest.approx(17.0)
        assert idm_desired_gap(10.0, -100.0, P) == 2.0

    def test_acceleration(self):
        assert idm_acceleration(0.0, 1e9, 0.0, P) == pytest.approx(1.0)
        free = idm_acceleration(10.0, 1e9, 0.0, P)
        assert free <= 0 and free > -1e-12
        assert idm_acceleration(5.0, 20.0, 0.0, P) == pytest.approx(1 - 0.0625 - (9.5 / 20) ** 2, abs=1e-12)
        assert idm_acceleration(5.0, 0.0, 0.0, P) == -4 * P.b_comf

    def test_params_positive(self):
        with pytest.raises(ValueError):
            IdmParams(T=0.0)


class TestMaps:
    def test_roundabout_pairs(self):
        road = generate_map(MapSpec("roundabout", 20.0, 4), seed=0)
        assert len(road.paths) == 16
        no_u = generate_map(MapSpec("roundabout", 20.0, 4, include_uturns=False), seed=0)
        assert len(no_u.paths) == 12

    def test_vertex_spacing(self):
        road = generate_map(ROUNDABOUT_A, seed=2)
        for p in road.paths.values():
            assert np.max(np.diff(p.cumulative_arclength)) <= 0.5

    def test_deterministic(self):
        a, b = generate_map(ROUNDABOUT_A, 5), generate_map(ROUNDABOUT_A, 5)
        assert a.paths.keys() == b.paths.keys()
        for k in a.paths:
            assert np.array_equal(a.paths[k].polyline, b.paths[k].polyline)
        assert np.array_equal(a.stop_signs, b.stop_signs)

    def test_straight(self):
        assert len(generate_map(MapSpec("straight_road", 200.0), 0).paths) == 1

    def test_invalid_spec(self):
        with pytest.raises(ValueError):
            MapSpec("roundabout", 20.0, 1)
        with pytest.raises(ValueError):
            MapSpec("straight_road", -5.0)


class TestSimulation:
    def test_free_flow(self):
        road = generate_map(MapSpec("straight_road", 400.0, speed_limit=10.0), 0)
        tr = simulate_tracks(road, 1, 600, seed=0, speed_noise=0.0)[0]
        s = tr.frenet[:, 0]
        assert np.all(np.diff(s) >= -1e-9)
        v_end = (s[-1] - s[-2]) / tr.trajectory.dt
        assert abs(v_end - 10.0) <= 0.5

    def test_stop_sign(self):
        road = generate_map(MapSpec("straight_road", 300.0, stop_sign_positions=(120.0,)), 0)
        passing = [tr for tr in simulate_tracks(road, 4, 1500, seed=1) if tr.frenet[-1, 0] > 125.0]
        assert passing
        for tr in passing:
            s = tr.frenet[:, 0]
            v = np.diff(s) / tr.trajectory.dt
            near = np.abs(s[:-1] - 120.0) <= 2.0
            assert np.any(near & (v < STOP_SPEED))

    def test_following_gap(self):
        road = generate_map(MapSpec("straight_road", 400.0), 0)
        tracks = simulate_tracks(road, 6, 700, seed=3)
        by_step = {}
        for k, tr in enumerate(tracks):
            for i, s in enumerate(tr.frenet[:, 0]):
                by_step.setdefault(tr.start_step + i, []).append(s)
        gaps = [np.diff(np.sort(v)) - VEHICLE_LENGTH for v in by_step.values() if len(v) > 1]
        assert len(gaps) > 0
        assert min(g.min() for g in gaps) >= P.s0 - 1e-6

    def test_stays_on_road(self):
        road = generate_map(ROUNDABOUT_A, 0)
        for tr in simulate_tracks(road, 15, 500, seed=4):
            assert np.max(np.abs(tr.frenet[:, 1])) <= road.lane_width / 2 + 0.1

    def test_deterministic(self):
        road = generate_map(ROUNDABOUT_A, 0)
        a = simulate_tracks(road, 10, 300, seed=9)
        b = simulate_tracks(road, 10, 300, seed=9)
        assert all(x.trajectory == y.trajectory for x, y in zip(a, b))


class TestNoise:
    def test_identity_and_shift(self):
        h = Trajectory(np.arange(20.0).reshape(10, 2))
        assert add_noise(h, NoiseSpec(0.0, 0.0, 1)) == h
        assert np.array_equal(add_noise(h, NoiseSpec(0.5, 0.0, 1)).points, h.points + 0.5)

    def test_law_of_large_numbers(self):
        h = Trajectory(np.zeros((5000, 2)))
        off = add_noise(h, NoiseSpec(0.5, 0.1, 3)).points
        assert 0.49 <= off.mean() <= 0.51

    def test_sigma_nonnegative(self):
        with pytest.raises(ValueError):
            NoiseSpec(0.5, -0.1)


SMALL = dict(counts=(60, 20, 40), agents_per_episode=20, episode_steps=400, min_episodes=2)


class TestExperiments:
    def test_experiment_one_exit_filter(self):
        spec = default_experiment("I", 0, **SMALL)
        train, val, test = build_experiment(spec)
        assert (len(train), len(val), len(test)) == (60, 20, 40)
        road = generate_map(ROUNDABOUT_A, 0)
        road_exit = {p.path_id: road.path_exit[p.path_id] for p in road.paths.values()}
        train_exits = {road_exit[s.scene.reference_path.path_id] for s in train}
        test_exits = {road_exit[s.scene.reference_path.path_id] for s in test}
        assert train_exits == {spec.train_exit_filter}
        assert train_exits < test_exits

    def test_experiment_two_maps_differ(self):
        train, _, test = build_experiment(default_experiment("II", 0, **SMALL))
        assert {s.scene.map_id for s in train}.isdisjoint({s.scene.map_id for s in test})

    def test_experiment_three_noise_flag(self):
        train, val, test = build_experiment(default_experiment("III", 0, **SMALL))
        assert not any(s.scene.noisy for s in train) and not any(s.scene.noisy for s in val)
        assert all(s.scene.noisy for s in test)

    def test_deterministic(self):
        spec = default_experiment("I", 4, **SMALL)
        a, b = build_experiment(spec), build_experiment(spec)
        for da, db in zip(a, b):
            assert [s.segment_id for s in da] == [s.segment_id for s in db]
            assert all(x.label == y.label and x.scene.target_history == y.scene.target_history
                       for x, y in zip(da, db))

    def test_infeasible_counts(self):
        spec = default_experiment("I", 0, counts=(5000, 10, 10), agents_per_episode=5, episode_steps=200,
                                  max_episodes=2)
        with pytest.raises(ValueError, match="short by"):
            build_experiment(spec)

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            ExperimentSpec("IV", (ROUNDABOUT_A,), (CURVED_C,))


class TestIngest:
    HEADER = "track_id,frame_id,timestamp_ms,agent_type,x,y,vx,vy,psi_rad,length,width\n"

    def write(self, tmp_path, rows, header=HEADER):
        p = tmp_path / "tracks.csv"
        p.write_text(header + "".join(rows))
        return p

    def test_two_rows(self, tmp_path):
        p = self.write(tmp_path, ["1,1,100,car,0,0,0,0,0,4,2\n", "1,2,200,car,1,0,0,0,0,4,2\n"])
        out = ingest_csv(p)
        assert len(out["1"]) == 1 and len(out["1"][0]) == 2 and out["1"][0].dt == 0.1

    def test_sorted(self, tmp_path):
        p = self.write(tmp_path, ["1,2,200,car,1,0,0,0,0,4,2\n", "1,1,100,car,0,0,0,0,0,4,2\n"])
        assert ingest_csv(p)["1"][0].points[:, 0].tolist() == [0.0, 1.0]

    def test_gap_split(self, tmp_path):
        p = self.write(tmp_path, [f"7,{k},{t},car,{k},0,0,0,0,4,2\n" for k, t in enumerate((100, 200, 400))])
        assert [len(t) for t in ingest_csv(p)["7"]] == [2, 1]

    def test_missing_column(self, tmp_path):
        p = self.write(tmp_path, ["1,1,100,car,0,0\n"], header="track_id,frame_id,timestamp_ms,agent_type,x,y\n")
        with pytest.raises(ValueError, match="vx"):
            ingest_csv(p)

    def test_malformed_row(self, tmp_path):
        p = self.write(tmp_path, ["1,1,100,car,0,0,0,0,0,4,2\n", "1,2,abc,car,1,0,0,0,0,4,2\n"])
        with pytest.raises(ValueError, match="line 3"):
            ingest_csv(p)
