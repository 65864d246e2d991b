"""Synthetic meetings: speaker trajectories, SSL frames, embeddings and a
turn-taking segment layout with ground truth."""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict
from typing import Optional

import numpy as np

from .circular import KAPPA_MAX, wrap_angle
from .meeting import FRAME_SEC, Frame, GroundTruth, Segment
from .ssl import BinLayout, validate_ssl

ARC_WIDTH = math.pi / 6
MAX_REJECTIONS = 1000


@dataclass(frozen=True)
class SimConfig:
    n_speakers: int = 4
    meeting_seconds: float = 300.0
    n_bins: int = 360
    embedding_dim: int = 128
    kappa_z_true: float = 50.0
    kappa_phi_true: float = 20.0
    moving_fraction: float = 0.5
    # step concentration of the moving speakers' random walk; None -> kappa_z_true
    move_step_concentration: Optional[float] = None
    motion: str = "walk"  # "walk" | "linear"
    segment_mean_seconds: float = 3.0
    segment_shape: float = 2.0
    gap_factor: float = 0.3
    overlap_probability: float = 0.1
    frame_dropout: float = 0.05
    embedding_noise: float = 1.5
    ssl_noise: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.n_speakers < 1:
            raise ValueError("n_speakers must be positive")
        for name in ("meeting_seconds", "segment_mean_seconds", "segment_shape", "n_bins", "embedding_dim"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("moving_fraction", "overlap_probability", "frame_dropout"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.motion not in ("walk", "linear"):
            raise ValueError("motion must be 'walk' or 'linear'")
        if self.n_speakers < 2 and self.overlap_probability > 0:
            object.__setattr__(self, "overlap_probability", 0.0)

    @property
    def n_frames(self) -> int:
        return int(round(self.meeting_seconds / FRAME_SEC))

    @property
    def n_moving(self) -> int:
        return int(round(self.moving_fraction * self.n_speakers))

    @property
    def step_concentration(self) -> float:
        k = self.kappa_z_true if self.move_step_concentration is None else self.move_step_concentration
        return min(float(k), KAPPA_MAX)

    @property
    def min_region_frames(self) -> int:
        """30 s per region in an hour-long meeting, scaled to this meeting."""
        seconds = 30.0 * self.meeting_seconds / 3600.0
        return max(1, int(math.ceil(seconds / FRAME_SEC)))

    def to_dict(self) -> dict:
        return asdict(self)


def passes_two_region_test(angles, min_frames: int, arc_width: float = ARC_WIDTH, n_grid: int = 360) -> bool:
    """True if two disjoint arcs of at least ``arc_width`` split the circle
    into two regions that each hold at least ``min_frames`` of ``angles``.

    Minimal-width arcs dominate wider ones, so only arcs of exactly
    ``arc_width`` (rounded up to the grid) are searched.
    """
    angles = np.asarray(angles, dtype=float)
    if len(angles) < 2 * min_frames:
        return False
    w = int(math.ceil(arc_width / (2 * math.pi) * n_grid))
    bins = np.floor(np.mod(angles, 2 * math.pi) / (2 * math.pi) * n_grid).astype(int) % n_grid
    hist = np.bincount(bins, minlength=n_grid)
    csum = np.concatenate([[0], np.cumsum(np.concatenate([hist, hist]))])

    s1 = np.arange(n_grid)[:, None]
    d = np.arange(w + 1, n_grid - 2 * w)[None, :]
    # region 1 = [s1 + w, s1 + d), arc 2 = [s1 + d, s1 + d + w), region 2 = [s1 + d + w, s1 + n_grid)
    r1 = csum[s1 + d] - csum[s1 + w]
    r2 = csum[s1 + n_grid] - csum[s1 + d + w]
    return bool(np.any((r1 >= min_frames) & (r2 >= min_frames)))


def _walk(rng, n_frames, start, step_conc):
    steps = rng.vonmises(0.0, step_conc, size=n_frames - 1) if n_frames > 1 else np.zeros(0)
    return wrap_angle(start + np.concatenate([[0.0], np.cumsum(steps)]))


def _linear(rng, n_frames, start):
    # piecewise-linear walk through 2-4 waypoints at random times
    n_way = int(rng.integers(2, 5))
    offsets = np.cumsum(rng.uniform(-math.pi / 2, math.pi / 2, size=n_way))
    knots_t = np.sort(rng.uniform(0, n_frames - 1, size=n_way))
    t = np.arange(n_frames)
    path = np.interp(t, np.concatenate([[0], knots_t]), np.concatenate([[0.0], offsets]))
    return wrap_angle(start + path)


def simulate_trajectory(config: SimConfig, speaker_index: int, seed, active=None, enforce_movement: bool = True) -> np.ndarray:
    """Angle per meeting frame for one speaker.

    Speakers with index < config.n_moving move; others hold a fixed angle.
    Moving trajectories are resampled until the two-region movement test
    passes on the ``active`` frames (all frames by default); with
    ``enforce_movement=False`` the first draw is returned as is.
    """
    rng = np.random.default_rng(seed)
    n = config.n_frames
    start = rng.uniform(-math.pi, math.pi)
    if speaker_index >= config.n_moving:
        return np.full(n, float(wrap_angle(start)))
    mask = np.ones(n, dtype=bool) if active is None else np.asarray(active, dtype=bool)
    for _ in range(MAX_REJECTIONS):
        if config.motion == "walk":
            traj = _walk(rng, n, start, config.step_concentration)
        else:
            traj = _linear(rng, n, start)
        if not enforce_movement or passes_two_region_test(traj[mask], config.min_region_frames):
            return traj
    raise RuntimeError(
        f"no moving trajectory passed the movement test in {MAX_REJECTIONS} attempts; "
        "lower move_step_concentration or lengthen the meeting"
    )


def emit_ssl_frame(true_angle: float, kappa_phi: float, layout: BinLayout, rng=None, noise_level: float = 0.0) -> np.ndarray:
    """Discretised von Mises SSL vector about ``true_angle``.

    With ``noise_level > 0`` each bin is multiplied by a log-normal factor
    before renormalisation.
    """
    logits = kappa_phi * (np.cos(layout.angles - true_angle) - 1.0)
    if noise_level > 0:
        if rng is None:
            raise ValueError("a random generator is needed for noisy frames")
        logits = logits + noise_level * rng.standard_normal(layout.n_bins)
    p = np.exp(logits - logits.max())
    return validate_ssl(p / p.sum(), layout)


def emit_embedding(centroid, noise_scale: float, rng) -> np.ndarray:
    """Centroid plus isotropic Gaussian noise of expected norm ~noise_scale,
    renormalised to unit length."""
    centroid = np.asarray(centroid, dtype=float)
    d = len(centroid)
    e = centroid + noise_scale * rng.standard_normal(d) / math.sqrt(d)
    return e / np.linalg.norm(e)


def _durations(rng, config: SimConfig, scale=1.0):
    k = config.segment_shape
    return rng.gamma(k, scale * config.segment_mean_seconds / k)


def _layout_turns(rng, config: SimConfig):
    """(speaker, channel, start_frame, end_frame) tuples; channel 0 holds
    the main turn sequence, channel 1 the overlapping interjections."""
    n = config.n_frames
    turns = []
    t = 0
    prev = -1
    ch1_free = 0
    min_len = 2
    while True:
        t += int(round(_durations(rng, config, config.gap_factor) / FRAME_SEC))
        length = max(min_len, int(round(_durations(rng, config) / FRAME_SEC)))
        if t + length > n:
            break
        choices = [s for s in range(config.n_speakers) if s != prev] or [0]
        spk = int(rng.choice(choices))
        turns.append((spk, 0, t, t + length))
        if config.n_speakers > 1 and rng.random() < config.overlap_probability:
            o_start = max(ch1_free, t + int(rng.integers(0, length)))
            o_len = max(min_len, int(round(_durations(rng, config, 0.5) / FRAME_SEC)))
            other = int(rng.choice([s for s in range(config.n_speakers) if s != spk]))
            if o_start + o_len <= n:
                turns.append((other, 1, o_start, o_start + o_len))
                ch1_free = o_start + o_len
        prev = spk
        t += length
    return turns


def simulate_meeting(config: SimConfig, meeting: str = "meeting"):
    """Generate segments and ground truth; deterministic given config.seed."""
    root = np.random.SeedSequence(config.seed)
    s_layout, s_traj, s_emb, s_obs = root.spawn(4)
    rng = np.random.default_rng(s_layout)
    layout = BinLayout(config.n_bins)

    turns = _layout_turns(rng, config)
    active = np.zeros((config.n_speakers, config.n_frames), dtype=bool)
    for spk, _ch, a, b in turns:
        active[spk, a:b] = True

    traj_seeds = s_traj.spawn(config.n_speakers)
    trajectories = [simulate_trajectory(config, i, traj_seeds[i], active[i]) for i in range(config.n_speakers)]

    emb_rng = np.random.default_rng(s_emb)
    q, _ = np.linalg.qr(emb_rng.standard_normal((config.embedding_dim, max(config.n_speakers, 1))))
    centroids = q.T[: config.n_speakers]

    obs_rng = np.random.default_rng(s_obs)
    segments, seg_spk, info = [], {}, {}
    for k, (spk, ch, a, b) in enumerate(sorted(turns, key=lambda x: (x[2], x[1]))):
        frames = []
        for t in range(a, b):
            if obs_rng.random() < config.frame_dropout:
                frames.append(Frame(t))
                continue
            heard = trajectories[spk][t] + obs_rng.vonmises(0.0, config.kappa_phi_true)
            ssl = emit_ssl_frame(heard, config.kappa_phi_true, layout, obs_rng, config.ssl_noise)
            frames.append(Frame(t, None, ssl))
        sid = f"{meeting}_{k:04d}"
        seg = Segment(sid, ch, a, b, emit_embedding(centroids[spk], config.embedding_noise, emb_rng), frames)
        segments.append(seg)
        seg_spk[sid] = f"S{spk}"
        info[sid] = (ch, round(seg.start_s, 3), round(seg.end_s, 3), seg.observed_frame_count)

    truth = GroundTruth(
        meeting=meeting,
        segment_speaker=seg_spk,
        speaker_moving={f"S{i}": i < config.n_moving for i in range(config.n_speakers)},
        trajectories={f"S{i}": trajectories[i] for i in range(config.n_speakers)},
        segment_info=info,
    )
    return segments, truth
