"""Von Mises Kalman filter over a single circular location.

The hidden state is a speaker's azimuth.  Beliefs stay von Mises: the
prediction step uses the Bessel-ratio approximation to convolution, the
update step is an exact product, and each observation is scored with the
exact predictive density.

Two entry points share the same arithmetic:

* the frame-by-frame API (``init_state``, ``predict``, ``update``,
  ``frame_log_likelihood``, ``sequence_log_likelihood``), and
* ``stream_log_likelihoods``, which runs many sparse measurement streams
  through a compiled loop.  Gaps of empty frames are collapsed into a
  single multi-step prediction, so the cost depends only on the number of
  measurements.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numba import njit

from .circular import (
    KAPPA_MAX,
    VonMises,
    _exact_conv_s,
    _inv_ratio_s,
    _multiply_s,
    _ratio_s,
    bessel_ratio,
    convolve_concentration,
    vm_exact_conv_log_density,
    vm_multiply_params,
)
from .ssl import BinLayout, ssl_resultant


@dataclass(frozen=True)
class KalmanParams:
    kappa_z: float = 20.0
    kappa_phi: float = 8.0

    def __post_init__(self):
        for name in ("kappa_z", "kappa_phi"):
            v = getattr(self, name)
            if not (0.0 <= v <= KAPPA_MAX):
                raise ValueError(f"{name} must lie in [0, {KAPPA_MAX:g}], got {v}")


@dataclass(frozen=True)
class Measurement:
    """One location measurement of a frame.

    A DOA has ``resultant == 1``.  An SSL frame is carried by its circular
    mean and mean resultant length R, so its equivalent concentration is
    ``kappa_phi * R`` for whatever kappa_phi the filter is run with.
    """

    angle: float
    resultant: float = 1.0
    kind: str = "doa"

    @classmethod
    def doa(cls, angle: float) -> "Measurement":
        return cls(float(angle), 1.0, "doa")

    @classmethod
    def from_ssl(cls, s, layout: BinLayout) -> "Measurement":
        r, mu = ssl_resultant(s, layout)
        return cls(float(mu), float(r), "ssl")

    def concentration(self, kappa_phi: float) -> float:
        return kappa_phi * self.resultant


# A frame carries zero, one or several simultaneous measurements.
FrameObservation = tuple


@dataclass(frozen=True)
class FilterState:
    belief: VonMises
    frame_index: int = 0


@dataclass
class TrackResult:
    total_log_likelihood: float
    per_frame_log_likelihood: np.ndarray
    observed_frame_count: int
    final_state: FilterState


def init_state() -> FilterState:
    return FilterState(VonMises(0.0, 0.0), 0)


def predict(state: FilterState, params: KalmanParams) -> FilterState:
    b = state.belief
    conc = float(convolve_concentration(b.concentration, params.kappa_z))
    conc = min(conc, b.concentration, params.kappa_z)
    return FilterState(VonMises(b.mean, conc), state.frame_index + 1)


def update(state: FilterState, obs: Sequence[Measurement], params: KalmanParams) -> FilterState:
    mean, conc = state.belief.mean, state.belief.concentration
    for m in obs:
        mean, conc = vm_multiply_params(mean, conc, m.angle, m.concentration(params.kappa_phi))
    return FilterState(VonMises(float(mean), float(conc)), state.frame_index)


def frame_log_likelihood(state: FilterState, obs: Sequence[Measurement], params: KalmanParams) -> float:
    """log p(x_t | X_{1:t-1}) for a predicted state.

    Simultaneous measurements share one hidden angle, so they are scored
    by the chain rule with the belief updated in between.
    """
    total = 0.0
    mean, conc = state.belief.mean, state.belief.concentration
    for m in obs:
        k = m.concentration(params.kappa_phi)
        total += float(vm_exact_conv_log_density(m.angle, k, mean, conc))
        mean, conc = vm_multiply_params(mean, conc, m.angle, k)
    return total


def sequence_log_likelihood(observations: Sequence[Sequence[Measurement]], params: KalmanParams) -> TrackResult:
    """Total and per-frame log-likelihood of a dense frame sequence."""
    if len(observations) == 0:
        raise ValueError("observation sequence is empty")
    frames, angles, resultants = [], [], []
    for t, obs in enumerate(observations):
        for m in obs:
            frames.append(t)
            angles.append(m.angle)
            resultants.append(m.resultant)
    per_frame = np.zeros(len(observations))
    n_observed = sum(1 for obs in observations if len(obs) > 0)
    if not frames:
        return TrackResult(0.0, per_frame, 0, FilterState(VonMises(0.0, 0.0), len(observations) - 1))

    stream = EventStream(np.array(frames), np.array(angles), np.array(resultants))
    ll, _, mean, conc = _run_streams([stream], params)
    np.add.at(per_frame, stream.frames, ll)
    # carry the belief through any trailing empty frames
    tail = len(observations) - 1 - frames[-1]
    if tail > 0:
        conc = convolve_concentration(conc, params.kappa_z, tail)
    final = FilterState(VonMises(float(mean[0]), float(np.ravel(conc)[0])), len(observations) - 1)
    # fsum over events: the total cannot depend on how many empty frames surround them
    return TrackResult(math.fsum(ll), per_frame, n_observed, final)


@dataclass
class EventStream:
    """Sparse measurement stream: one row per measurement, sorted by frame.

    Repeated frame indices are simultaneous measurements of one frame.
    """

    frames: np.ndarray
    angles: np.ndarray
    resultants: np.ndarray = field(default=None)

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.int64)
        self.angles = np.asarray(self.angles, dtype=float)
        if self.resultants is None:
            self.resultants = np.ones_like(self.angles)
        self.resultants = np.asarray(self.resultants, dtype=float)
        if np.any(np.diff(self.frames) < 0):
            raise ValueError("stream frames must be sorted")

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def observed_frame_count(self) -> int:
        return int(len(np.unique(self.frames)))

    @classmethod
    def empty(cls) -> "EventStream":
        return cls(np.zeros(0, dtype=np.int64), np.zeros(0), np.zeros(0))

    @classmethod
    def merge(cls, a: "EventStream", b: "EventStream") -> "EventStream":
        """Union of two streams; frames seen by both carry both measurements."""
        frames = np.concatenate([a.frames, b.frames])
        order = np.argsort(frames, kind="stable")
        return cls(
            frames[order],
            np.concatenate([a.angles, b.angles])[order],
            np.concatenate([a.resultants, b.resultants])[order],
        )


@njit(cache=True)
def _filter_kernel(offsets, frames, angles, concs, a_z):
    """Filter concatenated streams; stream s owns events offsets[s]:offsets[s+1]."""
    n = len(offsets) - 1
    ll = np.zeros(len(frames))
    means = np.zeros(n)
    conc_out = np.zeros(n)
    r_cap = np.nextafter(1.0, 0.0)
    for s in range(n):
        mean = 0.0
        conc = 0.0
        for e in range(offsets[s], offsets[s + 1]):
            if e > offsets[s] and conc > 0.0:
                gap = frames[e] - frames[e - 1]
                if gap > 0:
                    r = min(_ratio_s(conc) * a_z**gap, r_cap)
                    conc = min(_inv_ratio_s(r, 1e-12, 50), conc)
            k = concs[e]
            ll[e] = _exact_conv_s(angles[e], k, mean, conc)
            mean, conc = _multiply_s(mean, conc, angles[e], k)
        means[s] = mean
        conc_out[s] = conc
    return ll, means, conc_out


def _run_streams(streams: Sequence[EventStream], params: KalmanParams):
    """Filter a batch of streams.

    Returns (per-event log-likelihoods concatenated over streams, stream
    offsets, final means, final concentrations).
    """
    lengths = np.array([len(s) for s in streams], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(lengths)]).astype(np.int64)
    if offsets[-1] == 0:
        return np.zeros(0), offsets, np.zeros(len(streams)), np.zeros(len(streams))
    frames = np.concatenate([s.frames for s in streams]).astype(np.int64)
    angles = np.concatenate([s.angles for s in streams])
    concs = params.kappa_phi * np.concatenate([s.resultants for s in streams])
    a_z = float(bessel_ratio(params.kappa_z))
    ll, mean, conc = _filter_kernel(offsets, frames, angles, concs, a_z)
    return ll, offsets, mean, conc


def stream_log_likelihoods(streams: Sequence[EventStream], params: KalmanParams) -> np.ndarray:
    """Total log-likelihood of each stream (0 for an empty stream)."""
    if not streams:
        return np.zeros(0)
    ll, offsets, _, _ = _run_streams(streams, params)
    sums = np.concatenate([[0.0], np.cumsum(ll)])
    return sums[offsets[1:]] - sums[offsets[:-1]]

