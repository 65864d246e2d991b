"""EM estimation of the transition and observation concentrations.

The E-step runs forward-backward on a uniform angular grid (deterministic
quadrature).  The transition kernel is circulant, so every propagation is
an FFT convolution; the pair expectation E[cos(z_{t+1} - z_t)] factors
through the kernel multiplied by cos and costs one more convolution.
The M-step inverts the Bessel ratio of the averaged expectations.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .circular import KAPPA_MAX, LOG_2PI, inv_bessel_ratio, log_bessel_i0
from .tracker import EventStream, KalmanParams, Measurement, stream_log_likelihoods

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EmConfig:
    max_iters: int = 100
    grid_size: int = 720
    min_rel_improvement: float = 1e-6
    kappa_bounds: tuple = (1e-3, KAPPA_MAX)

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.grid_size < 360:
            raise ValueError("grid_size must be >= 360")
        lo, hi = self.kappa_bounds
        if not (1e-3 <= lo <= hi <= KAPPA_MAX):
            raise ValueError(f"kappa_bounds must lie within [1e-3, {KAPPA_MAX:g}]")


@dataclass
class EmTrace:
    kappa_z: list = field(default_factory=list)
    kappa_phi: list = field(default_factory=list)
    log_likelihood: list = field(default_factory=list)

    def append(self, params: KalmanParams, ll: float):
        self.kappa_z.append(params.kappa_z)
        self.kappa_phi.append(params.kappa_phi)
        self.log_likelihood.append(ll)

    def __len__(self):
        return len(self.log_likelihood)

    def rows(self):
        return list(zip(range(1, len(self) + 1), self.kappa_z, self.kappa_phi, self.log_likelihood))


@dataclass
class SmoothedSequence:
    """Grid forward-backward output for one sequence."""

    grid: np.ndarray
    kernel: np.ndarray  # transition mass by offset index
    emission: np.ndarray  # (T, G), scaled per frame
    alpha: np.ndarray  # (T, G), normalised forward masses
    beta: np.ndarray  # (T, G), scaled backward messages
    scale: np.ndarray  # (T,)
    posteriors: np.ndarray  # (T, G), each row sums to 1
    pair_cos: np.ndarray  # (T - 1,) E[cos(z_{t+1} - z_t)]
    obs_cos: list  # per frame: E[cos(phi - z_t)] for each measurement

    def pair_posterior(self, t: int) -> np.ndarray:
        """Full joint mass over (z_t, z_{t+1}); O(G^2), meant for checks."""
        G = len(self.grid)
        idx = (np.arange(G)[None, :] - np.arange(G)[:, None]) % G
        joint = self.alpha[t][:, None] * self.kernel[idx] * (self.emission[t + 1] * self.beta[t + 1])[None, :]
        return joint / joint.sum()


@dataclass
class SufficientStats:
    obs_cos_sum: float = 0.0
    obs_count: int = 0
    pair_cos_sum: float = 0.0
    pair_count: int = 0

    def __iadd__(self, other: "SufficientStats"):
        self.obs_cos_sum += other.obs_cos_sum
        self.obs_count += other.obs_count
        self.pair_cos_sum += other.pair_cos_sum
        self.pair_count += other.pair_count
        return self


def _grid(grid_size: int) -> np.ndarray:
    return -math.pi + 2.0 * math.pi * np.arange(grid_size) / grid_size


def _transition_kernel(kappa_z: float, grid_size: int) -> np.ndarray:
    offsets = 2.0 * math.pi * np.arange(grid_size) / grid_size
    logk = kappa_z * (np.cos(offsets) - 1.0)
    k = np.exp(logk - logk.max())
    return k / k.sum()


def _circ_conv(x: np.ndarray, kernel_fft: np.ndarray, n: int) -> np.ndarray:
    return np.maximum(np.fft.irfft(np.fft.rfft(x, axis=-1) * kernel_fft, n=n, axis=-1), 0.0)


def _log_emissions(observations, params: KalmanParams, z: np.ndarray, T: int) -> np.ndarray:
    log_e = np.zeros((T, len(z)))
    for t, obs in enumerate(observations):
        for m in obs:
            log_e[t] += m.concentration(params.kappa_phi) * np.cos(m.angle - z)
    return log_e


def _forward_backward(emission, lengths, kernel):
    """Scaled forward-backward for a batch of padded sequences.

    emission: (B, T, G) per-frame emission up to a constant; frames past a
    sequence's length must be 1.  Returns alpha, beta, scale, pair_cos
    with pair_cos[b, t] valid for t < lengths[b] - 1.
    """
    B, T, G = emission.shape
    kfft = np.fft.rfft(kernel)
    kcos_fft = np.fft.rfft(kernel * np.cos(2.0 * math.pi * np.arange(G) / G))

    alpha = np.empty((B, T, G))
    scale = np.empty((B, T))
    a = emission[:, 0] / G
    scale[:, 0] = a.sum(axis=1)
    alpha[:, 0] = a / scale[:, :1]
    for t in range(1, T):
        a = _circ_conv(alpha[:, t - 1], kfft, G) * emission[:, t]
        scale[:, t] = a.sum(axis=1)
        alpha[:, t] = a / scale[:, t, None]

    beta = np.empty((B, T, G))
    beta[:, -1] = 1.0
    pair_cos = np.zeros((B, T - 1))
    for t in range(T - 2, -1, -1):
        w = emission[:, t + 1] * beta[:, t + 1]
        wfft = np.fft.rfft(w, axis=-1)
        beta[:, t] = np.maximum(np.fft.irfft(wfft * kfft, n=G, axis=-1), 0.0) / scale[:, t + 1, None]
        num = np.einsum("bg,bg->b", alpha[:, t], np.fft.irfft(wfft * kcos_fft, n=G, axis=-1))
        den = np.einsum("bg,bg->b", alpha[:, t], beta[:, t]) * scale[:, t + 1]
        pair_cos[:, t] = num / den
    # padded tails are not part of any sequence
    for b, L in enumerate(lengths):
        beta[b, L - 1 :] = 1.0
    return alpha, beta, scale, pair_cos


def smooth_posteriors(observations: Sequence[Sequence[Measurement]], params: KalmanParams, grid_size: int = 720) -> SmoothedSequence:
    """Forward-backward state posteriors and pair statistics on a grid.

    Empty frames get emission 1.  Measurements are treated as DOAs with
    concentration ``kappa_phi * resultant``.
    """
    T = len(observations)
    if T < 2:
        raise ValueError("smoothing needs at least 2 frames")
    z = _grid(grid_size)
    kernel = _transition_kernel(params.kappa_z, grid_size)
    log_e = _log_emissions(observations, params, z, T)
    emission = np.exp(log_e - log_e.max(axis=1, keepdims=True))
    alpha, beta, scale, pair_cos = _forward_backward(emission[None], [T], kernel)
    alpha, beta, scale, pair_cos = alpha[0], beta[0], scale[0], pair_cos[0]
    post = alpha * beta
    post /= post.sum(axis=1, keepdims=True)
    cz, sz = post @ np.cos(z), post @ np.sin(z)
    obs_cos = [[float(math.cos(m.angle) * cz[t] + math.sin(m.angle) * sz[t]) for m in obs] for t, obs in enumerate(observations)]
    return SmoothedSequence(z, kernel, emission, alpha, beta, scale, post, pair_cos, obs_cos)


def batch_sufficient_stats(sequences, params: KalmanParams, grid_size: int = 720, batch: int = 16) -> SufficientStats:
    """Pooled E-step statistics over many sequences, smoothed in batches."""
    z = _grid(grid_size)
    cos_z, sin_z = np.cos(z), np.sin(z)
    kernel = _transition_kernel(params.kappa_z, grid_size)
    total = SufficientStats()
    order = sorted(range(len(sequences)), key=lambda i: len(sequences[i]))
    for lo in range(0, len(order), batch):
        group = [sequences[i] for i in order[lo : lo + batch]]
        lengths = [len(s) for s in group]
        T = max(lengths)
        emission = np.ones((len(group), T, grid_size))
        for b, seq in enumerate(group):
            log_e = _log_emissions(seq, params, z, len(seq))
            emission[b, : len(seq)] = np.exp(log_e - log_e.max(axis=1, keepdims=True))
        alpha, beta, _, pair_cos = _forward_backward(emission, lengths, kernel)
        for b, seq in enumerate(group):
            L = lengths[b]
            total.pair_cos_sum += float(pair_cos[b, : L - 1].sum())
            total.pair_count += L - 1
            t_obs = [t for t, obs in enumerate(seq) if obs]
            post = alpha[b, t_obs] * beta[b, t_obs]
            post /= post.sum(axis=1, keepdims=True)
            cz, sz = post @ cos_z, post @ sin_z
            for k, t in enumerate(t_obs):
                for m in seq[t]:
                    total.obs_cos_sum += math.cos(m.angle) * cz[k] + math.sin(m.angle) * sz[k]
                    total.obs_count += 1
    return total


def sufficient_stats(sm: SmoothedSequence) -> SufficientStats:
    vals = [c for frame in sm.obs_cos for c in frame]
    return SufficientStats(float(sum(vals)), len(vals), float(sm.pair_cos.sum()), len(sm.pair_cos))


def m_step(stats: SufficientStats, kappa_bounds=(1e-3, KAPPA_MAX)) -> KalmanParams:
    """Invert the Bessel ratio of the averaged cosine expectations.

    kappa_phi averages over measured frames only; kappa_z over transitions.
    """
    if stats.obs_count == 0 or stats.pair_count == 0:
        raise ValueError("no statistics to maximise over")
    lo, hi = kappa_bounds

    def invert(mean_cos):
        r = min(max(mean_cos, 0.0), np.nextafter(1.0, 0.0))
        return float(np.clip(inv_bessel_ratio(r), lo, hi))

    return KalmanParams(
        kappa_z=invert(stats.pair_cos_sum / stats.pair_count),
        kappa_phi=invert(stats.obs_cos_sum / stats.obs_count),
    )


def _to_stream(observations) -> EventStream:
    frames, angles, res = [], [], []
    for t, obs in enumerate(observations):
        for m in obs:
            frames.append(t)
            angles.append(m.angle)
            res.append(m.resultant)
    return EventStream(np.array(frames, dtype=np.int64), np.array(angles), np.array(res))


def _trim(observations):
    """Drop leading and trailing empty frames; they carry no information."""
    idx = [t for t, obs in enumerate(observations) if len(obs) > 0]
    if not idx:
        return []
    return list(observations[idx[0] : idx[-1] + 1])


def fit(sequences, init: KalmanParams, config: EmConfig = EmConfig()):
    """Fit (kappa_z, kappa_phi) by EM, pooling statistics over sequences.

    Returns the best-likelihood iterate (the initial point included) and
    the per-iteration trace of post-M-step parameters and their
    log-likelihood under the Kalman filter.
    """
    usable = [s for s in (_trim(seq) for seq in sequences) if sum(1 for o in s if len(o) > 0) >= 2]
    if not usable:
        raise ValueError("no sequence has at least 2 observed frames")
    streams = [_to_stream(s) for s in usable]

    def total_ll(p):
        return float(stream_log_likelihoods(streams, p).sum())

    params = init
    best_params, best_ll = init, total_ll(init)
    prev_ll = best_ll
    trace = EmTrace()
    for it in range(config.max_iters):
        stats = batch_sufficient_stats(usable, params, config.grid_size)
        params = m_step(stats, config.kappa_bounds)
        ll = total_ll(params)
        trace.append(params, ll)
        log.debug("EM iter %d: kappa_z=%.4g kappa_phi=%.4g ll=%.6f", it + 1, params.kappa_z, params.kappa_phi, ll)
        if ll > best_ll:
            best_params, best_ll = params, ll
        if abs(ll - prev_ll) <= config.min_rel_improvement * abs(prev_ll):
            break
        prev_ll = ll
    return best_params, trace


def grid_log_likelihood(observations, params: KalmanParams, grid_size: int = 720) -> float:
    """Sequence log-likelihood of the discretised grid model (diagnostic)."""
    sm = smooth_posteriors(observations, params, grid_size)
    total = float(np.log(sm.scale).sum())
    for obs in observations:
        if not obs:
            continue
        # undo the per-frame max subtraction applied to the emissions
        log_e = sum(m.concentration(params.kappa_phi) * np.cos(m.angle - sm.grid) for m in obs)
        total += float(np.max(log_e))
        total -= sum(LOG_2PI + float(log_bessel_i0(m.concentration(params.kappa_phi))) for m in obs)
    return total
