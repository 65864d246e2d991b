import math

import numpy as np
import pytest

from circletrack.circular import KAPPA_MAX, angular_distance, bessel_ratio
from circletrack.meeting import write_segments, write_truth
from circletrack.sim import (
    SimConfig,
    emit_embedding,
    emit_ssl_frame,
    passes_two_region_test,
    simulate_meeting,
    simulate_trajectory,
)
from circletrack.ssl import BinLayout, ssl_resultant

L360 = BinLayout(360)
SMALL = dict(meeting_seconds=120.0, n_speakers=3)


def test_config_validation():
    with pytest.raises(ValueError):
        SimConfig(moving_fraction=1.5)
    with pytest.raises(ValueError):
        SimConfig(n_speakers=0)
    with pytest.raises(ValueError):
        SimConfig(meeting_seconds=-1)
    with pytest.raises(ValueError):
        SimConfig(motion="teleport")
    cfg = SimConfig(meeting_seconds=3600)
    assert cfg.min_region_frames == 75  # 30 s at 0.4 s per frame
    assert SimConfig(meeting_seconds=360).min_region_frames == 8


def test_two_region_test():
    n = 40
    assert not passes_two_region_test(np.zeros(100), n)
    two = np.concatenate([np.full(50, 0.0), np.full(50, 2.0)])
    assert passes_two_region_test(two, n)
    # two clusters closer than an arc apart cannot be separated
    near = np.concatenate([np.full(50, 0.0), np.full(50, 0.2)])
    assert not passes_two_region_test(near, n)
    assert not passes_two_region_test(two, 60)


def test_stationary_trajectories_constant():
    cfg = SimConfig(moving_fraction=0.0, **SMALL)
    for i in range(cfg.n_speakers):
        traj = simulate_trajectory(cfg, i, i)
        assert len(traj) == cfg.n_frames and np.ptp(traj) == 0.0


def test_max_concentration_walk_is_still():
    cfg = SimConfig(meeting_seconds=400.0, moving_fraction=1.0, move_step_concentration=KAPPA_MAX)
    traj = simulate_trajectory(cfg, 0, 3, enforce_movement=False)
    assert len(traj) == 1000
    assert np.max(angular_distance(traj[1:], traj[:-1])) < 1e-2


def test_max_concentration_walk_hits_rejection_cap():
    cfg = SimConfig(meeting_seconds=40.0, moving_fraction=1.0, move_step_concentration=KAPPA_MAX)
    with pytest.raises(RuntimeError, match="move_step_concentration"):
        simulate_trajectory(cfg, 0, 3)


@pytest.mark.parametrize("motion", ["walk", "linear"])
def test_moving_trajectory_passes_movement_test(motion):
    cfg = SimConfig(moving_fraction=1.0, motion=motion, move_step_concentration=300.0, **SMALL)
    traj = simulate_trajectory(cfg, 0, 9)
    assert passes_two_region_test(traj, cfg.min_region_frames)
    assert np.all((traj > -math.pi) & (traj <= math.pi))


def test_emit_ssl_frame():
    assert np.allclose(emit_ssl_frame(0.3, 0.0, L360), 1 / 360)
    rng = np.random.default_rng(0)
    for true in (-3.0, 0.0, 0.77, 2.5):
        s = emit_ssl_frame(true, 20.0, L360)
        _, mu = ssl_resultant(s, L360)
        assert angular_distance(mu, true) <= L360.width
    mus = [ssl_resultant(emit_ssl_frame(1.0, 20.0, L360, rng, 0.5), L360)[1] for _ in range(1000)]
    assert angular_distance(np.angle(np.mean(np.exp(1j * np.array(mus)))), 1.0) < 0.02
    with pytest.raises(ValueError):
        emit_ssl_frame(0.0, 5.0, L360, None, 0.3)


def test_noise_free_resultant_matches_closed_form():
    # discretised von Mises on 360 bins has resultant ~ A(kappa)
    for kappa in (1.0, 5.0, 20.0, 100.0):
        r, _ = ssl_resultant(emit_ssl_frame(0.4, kappa, L360), L360)
        b = L360.angles
        w = np.exp(kappa * np.cos(b - 0.4))
        closed = abs((w * np.exp(1j * b)).sum() / w.sum())
        assert kappa * r == pytest.approx(kappa * closed, rel=0.05)
        assert r == pytest.approx(bessel_ratio(kappa), rel=0.05)


def test_emit_embedding():
    rng = np.random.default_rng(1)
    c = rng.standard_normal(128)
    c /= np.linalg.norm(c)
    assert np.allclose(emit_embedding(c, 0.0, rng), c)
    e = [emit_embedding(c, 0.5, rng) for _ in range(1000)]
    assert all(abs(np.linalg.norm(v) - 1) < 1e-9 for v in e)
    mean_cos = np.mean([v @ c for v in e])
    assert 0.7 < mean_cos < 0.99
    assert np.mean([v @ c for v in (emit_embedding(c, 3.0, rng) for _ in range(300))]) < mean_cos


def test_meeting_structure():
    cfg = SimConfig(seed=4, **SMALL)
    segments, truth = simulate_meeting(cfg, "t")
    assert truth.n_speakers == cfg.n_speakers
    assert set(truth.segment_speaker) == {s.id for s in segments}
    assert sum(truth.speaker_moving.values()) == cfg.n_moving
    for seg in segments:
        spk = truth.segment_speaker[seg.id]
        traj = truth.trajectories[spk]
        assert 0 <= seg.start_frame < seg.end_frame <= len(traj)
        assert [f.t_index for f in seg.frames] == list(range(seg.start_frame, seg.end_frame))
        assert truth.segment_info[seg.id][3] == seg.observed_frame_count


def test_no_overlap_means_no_shared_frames():
    segments, _ = simulate_meeting(SimConfig(seed=2, overlap_probability=0.0, **SMALL))
    covered = {}
    for seg in segments:
        for t in range(seg.start_frame, seg.end_frame):
            assert t not in covered
            covered[t] = seg.channel
    assert {s.channel for s in segments} == {0}


def test_overlap_uses_second_channel():
    segments, _ = simulate_meeting(SimConfig(seed=2, overlap_probability=0.5, **SMALL))
    assert {s.channel for s in segments} == {0, 1}


def test_meeting_deterministic(tmp_path):
    cfg = SimConfig(seed=7, **SMALL)
    for k in range(2):
        segs, truth = simulate_meeting(cfg, "m")
        write_segments(tmp_path / f"s{k}.jsonl", segs)
        write_truth(tmp_path / f"t{k}.json", truth)
    assert (tmp_path / "s0.jsonl").read_bytes() == (tmp_path / "s1.jsonl").read_bytes()
    assert (tmp_path / "t0.json").read_bytes() == (tmp_path / "t1.json").read_bytes()
    other, _ = simulate_meeting(SimConfig(seed=8, **SMALL), "m")
    assert len(other) != len(segs) or any(a.start_frame != b.start_frame for a, b in zip(other, segs))
