"""Sound source localisation (SSL) vectors: validation, DOA extraction
and the equivalent von Mises summary of a frame."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .circular import EPS_KAPPA, wrap_angle

FLOOR_EPS = 1e-10


@dataclass(frozen=True)
class BinLayout:
    """N equally spaced angular bins, bin j centred at 2*pi*j/N."""

    n_bins: int = 360

    def __post_init__(self):
        if self.n_bins < 1:
            raise ValueError("n_bins must be positive")

    @cached_property
    def angles(self) -> np.ndarray:
        return wrap_angle(2.0 * np.pi * np.arange(self.n_bins) / self.n_bins)

    @cached_property
    def cos(self) -> np.ndarray:
        return np.cos(self.angles)

    @cached_property
    def sin(self) -> np.ndarray:
        return np.sin(self.angles)

    @property
    def width(self) -> float:
        return 2.0 * math.pi / self.n_bins


@dataclass(frozen=True)
class SslSummary:
    concentration: float
    mean: float


def validate_ssl(raw, layout: BinLayout) -> np.ndarray:
    """Floor an SSL vector (or a stack of them, last axis = bins) at
    FLOOR_EPS and renormalise to the simplex."""
    s = np.asarray(raw, dtype=float)
    if s.shape[-1] != layout.n_bins:
        raise ValueError(f"SSL has {s.shape[-1]} bins, layout expects {layout.n_bins}")
    if not np.all(np.isfinite(s)):
        raise ValueError("SSL contains non-finite entries")
    if np.any(s < -1e-9):
        raise ValueError("SSL contains negative probabilities")
    if np.any(s.sum(axis=-1) <= 0):
        raise ValueError("SSL vector is all zeros")
    s = np.maximum(s, FLOOR_EPS)
    return s / s.sum(axis=-1, keepdims=True)


def ssl_to_doa(s, layout: BinLayout):
    """Mode of the SSL; np.argmax breaks ties towards the lowest bin."""
    return layout.angles[np.argmax(np.asarray(s), axis=-1)]


def ssl_resultant(s, layout: BinLayout):
    """Mean resultant length R and circular mean of SSL vector(s).

    Uses  sum_ij s_i s_j cos(b_i - b_j) = |sum_i s_i exp(i b_i)|^2  so the
    cost is O(N) per frame.
    """
    s = np.asarray(s, dtype=float)
    c = s @ layout.cos
    sn = s @ layout.sin
    r = np.hypot(c, sn)
    mu = np.where(r < EPS_KAPPA, layout.angles[0], np.arctan2(sn, c))
    return r, wrap_angle(mu)


def ssl_summarize(s, layout: BinLayout, kappa_phi: float) -> SslSummary:
    r, mu = ssl_resultant(s, layout)
    return SslSummary(concentration=float(kappa_phi * r), mean=float(mu))


def denominator_profile(kappa_phi: float, layout: BinLayout, n_eval: int = 360):
    """sum_j exp(kappa_phi cos(b_j - z)) on an n_eval grid of z in (-pi, pi].

    Returns (z, profile)."""
    if n_eval < 2:
        raise ValueError("n_eval must be >= 2")
    z = wrap_angle(-np.pi + 2.0 * np.pi * (np.arange(n_eval) + 1) / n_eval)
    z = np.sort(z)
    return z, np.exp(kappa_phi * np.cos(layout.angles[None, :] - z[:, None])).sum(axis=1)


def flatness(profile) -> float:
    """(max - min) / mean of a profile; 0 for a constant one."""
    profile = np.asarray(profile, dtype=float)
    return float((profile.max() - profile.min()) / profile.mean())
