"""Circular density primitives: Bessel ratios, von Mises log-densities,
products and convolutions on the unit circle.

Public functions accept numpy arrays and broadcast; scalar inputs give
scalar outputs.  Densities are evaluated in log space throughout because
I_0 overflows double precision near kappa ~ 709.

The scalar kernels (``_*_s``) are compiled with numba and shared with the
filter engine in ``tracker``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

KAPPA_MAX = 1e6
EPS_KAPPA = 1e-12
LOG_2PI = math.log(2.0 * math.pi)

_TWO_PI = 2.0 * math.pi
_SERIES_CUTOFF = 15.0


# --- scalar kernels ---------------------------------------------------------


@njit(cache=True)
def _scaled_i0_i1_s(x):
    """(I_0(x) e^-x, I_1(x) e^-x) for x >= 0.

    Power series below the cutoff, large-argument expansion above it.
    """
    if x < _SERIES_CUTOFF:
        q = 0.25 * x * x
        t0 = 1.0
        s0 = 1.0
        t1 = 1.0
        s1 = 1.0
        for k in range(1, 80):
            t0 *= q / (k * k)
            s0 += t0
            t1 *= q / (k * (k + 1.0))
            s1 += t1
            if t0 < 1e-18 * s0 and t1 < 1e-18 * s1:
                break
        e = math.exp(-x)
        return s0 * e, 0.5 * x * s1 * e
    inv = 1.0 / (8.0 * x)
    t0 = 1.0
    s0 = 1.0
    t1 = 1.0
    s1 = 1.0
    for k in range(1, 40):
        odd = (2.0 * k - 1.0) ** 2
        n0 = t0 * odd * inv / k
        n1 = t1 * (odd - 4.0) * inv / k
        if abs(n0) > abs(t0) or abs(n1) > abs(t1) and k > 1:
            break
        t0 = n0
        t1 = n1
        s0 += t0
        s1 += t1
        if abs(t0) < 1e-18 * s0 and abs(t1) < 1e-18 * abs(s1):
            break
    c = 1.0 / math.sqrt(_TWO_PI * x)
    return c * s0, c * s1


@njit(cache=True)
def _log_i0_s(x):
    if x < _SERIES_CUTOFF:
        # log1p of the series tail keeps full relative precision as x -> 0
        q = 0.25 * x * x
        t = 1.0
        tail = 0.0
        for k in range(1, 80):
            t *= q / (k * k)
            tail += t
            if t < 1e-18 * (1.0 + tail):
                break
        return math.log1p(tail)
    i0e, _ = _scaled_i0_i1_s(x)
    return x + math.log(i0e)


@njit(cache=True)
def _ratio_s(x):
    if x <= 0.0:
        return 0.0
    i0e, i1e = _scaled_i0_i1_s(x)
    return i1e / i0e


_R_AT_KAPPA_MAX = _ratio_s(KAPPA_MAX)


@njit(cache=True)
def _inv_ratio_s(r, tol=1e-12, max_iter=50):
    if r <= 0.0:
        return 0.0
    if r >= _R_AT_KAPPA_MAX:
        return KAPPA_MAX
    # Best & Fisher piecewise initial guess
    if r < 0.53:
        k = 2.0 * r + r**3 + 5.0 * r**5 / 6.0
    elif r < 0.85:
        k = -0.4 + 1.39 * r + 0.43 / (1.0 - r)
    else:
        k = 1.0 / (r**3 - 4.0 * r**2 + 3.0 * r)
    k = min(k, KAPPA_MAX)
    for _ in range(max_iter):
        a = _ratio_s(k)
        resid = a - r
        # A'(k) = 1 - A/k - A^2, limit 1/2 at 0
        d = 1.0 - a / k - a * a if k > 1e-8 else 0.5
        if d <= 0.0:
            d = 0.5 / (k * k)
        step = resid / d
        k_new = k - step
        if k_new <= 0.0:
            k_new = 0.5 * k
        if k_new > KAPPA_MAX:
            k_new = KAPPA_MAX
        done = abs(resid) <= tol and abs(step) <= 1e-13 * max(k, 1.0)
        k = k_new
        if done:
            break
    return k


@njit(cache=True)
def _wrap_s(x):
    y = math.pi - ((math.pi - x) % _TWO_PI)
    if y <= -math.pi:
        y += _TWO_PI
    return y


@njit(cache=True)
def _multiply_s(mean_a, conc_a, mean_b, conc_b):
    c = conc_a * math.cos(mean_a) + conc_b * math.cos(mean_b)
    s = conc_a * math.sin(mean_a) + conc_b * math.sin(mean_b)
    conc = math.hypot(c, s)
    if conc < EPS_KAPPA:
        return mean_a, 0.0
    return _wrap_s(math.atan2(s, c)), min(conc, KAPPA_MAX)


@njit(cache=True)
def _exact_conv_s(x, obs_conc, state_mean, state_conc):
    sq = obs_conc * obs_conc + state_conc * state_conc + 2.0 * obs_conc * state_conc * math.cos(x - state_mean)
    combined = math.sqrt(max(sq, 0.0))
    return _log_i0_s(combined) - LOG_2PI - _log_i0_s(obs_conc) - _log_i0_s(state_conc)


@njit(cache=True)
def _map_log_i0(x):
    out = np.empty_like(x)
    for i in range(x.size):
        out[i] = _log_i0_s(x[i])
    return out


@njit(cache=True)
def _map_ratio(x):
    out = np.empty_like(x)
    for i in range(x.size):
        out[i] = _ratio_s(x[i])
    return out


@njit(cache=True)
def _map_inv_ratio(r, tol, max_iter):
    out = np.empty_like(r)
    for i in range(r.size):
        out[i] = _inv_ratio_s(r[i], tol, max_iter)
    return out


# --- public API -------------------------------------------------------------


def _elementwise(kernel, x, *args):
    flat = np.ascontiguousarray(x, dtype=float).ravel()
    out = kernel(flat, *args).reshape(np.shape(x))
    return out[()] if out.ndim == 0 else out


def wrap_angle(x):
    """Wrap radians into (-pi, pi]."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("angle must be finite")
    y = math.pi - np.mod(math.pi - x, _TWO_PI)
    y = np.where(y <= -math.pi, y + _TWO_PI, y)
    return y[()] if y.ndim == 0 else y


def angular_distance(a, b):
    """Geodesic distance between angles, in [0, pi]."""
    d = np.abs(np.mod(np.asarray(a, dtype=float) - b, _TWO_PI))
    return np.minimum(d, _TWO_PI - d)


@dataclass(frozen=True)
class VonMises:
    """A von Mises density; concentration 0 is the uniform density."""

    mean: float = 0.0
    concentration: float = 0.0

    def __post_init__(self):
        if not (self.concentration >= 0.0):
            raise ValueError(f"concentration must be >= 0, got {self.concentration}")
        object.__setattr__(self, "mean", float(wrap_angle(self.mean)))
        object.__setattr__(self, "concentration", float(min(self.concentration, KAPPA_MAX)))

    @property
    def is_uniform(self) -> bool:
        return self.concentration < EPS_KAPPA


def _check_nonneg(kappa):
    kappa = np.asarray(kappa, dtype=float)
    if np.any(kappa < 0) or np.any(np.isnan(kappa)):
        raise ValueError("concentration must be nonnegative")
    return kappa


def log_bessel_i0(kappa):
    """log I_0(kappa), finite for any kappa >= 0."""
    return _elementwise(_map_log_i0, _check_nonneg(kappa))


def bessel_ratio(kappa):
    """A(kappa) = I_1(kappa) / I_0(kappa), the mean resultant length."""
    return _elementwise(_map_ratio, _check_nonneg(kappa))


def inv_bessel_ratio(r, tol: float = 1e-12, max_iter: int = 50):
    """Solve A(kappa) = r by Newton-Raphson.

    Args:
        r: mean resultant length(s) in [0, 1).
        tol: tolerance on the residual |A(kappa) - r|.
        max_iter: Newton iteration cap.

    Returns:
        kappa, clamped to [0, KAPPA_MAX].
    """
    r = np.asarray(r, dtype=float)
    if np.any(r < 0) or np.any(r >= 1) or np.any(np.isnan(r)):
        raise ValueError("r must lie in [0, 1)")
    return _elementwise(_map_inv_ratio, r, tol, max_iter)


def vm_log_pdf(x, mean, concentration):
    """Log of the von Mises density at x."""
    concentration = _check_nonneg(concentration)
    return concentration * np.cos(np.asarray(x) - mean) - LOG_2PI - log_bessel_i0(concentration)


def vm_multiply_params(mean_a, conc_a, mean_b, conc_b):
    """Parameters of the normalised product of two von Mises densities.

    Elementwise on arrays.  When the resultant concentration falls below
    EPS_KAPPA the product is uniform and the mean of ``a`` is kept.
    """
    c = conc_a * np.cos(mean_a) + conc_b * np.cos(mean_b)
    s = conc_a * np.sin(mean_a) + conc_b * np.sin(mean_b)
    conc = np.hypot(c, s)
    uniform = conc < EPS_KAPPA
    mean = np.where(uniform, mean_a, np.arctan2(s, c))
    conc = np.where(uniform, 0.0, np.minimum(conc, KAPPA_MAX))
    return wrap_angle(mean), (conc[()] if conc.ndim == 0 else conc)


def vm_multiply(a: VonMises, b: VonMises) -> VonMises:
    mean, conc = vm_multiply_params(a.mean, a.concentration, b.mean, b.concentration)
    return VonMises(float(mean), float(conc))


def convolve_concentration(conc, kappa_z, steps=1):
    """Concentration after ``steps`` approximate convolutions with a
    zero-mean von Mises step of concentration ``kappa_z``.

    Repeated approximate convolution composes exactly in the Bessel-ratio
    domain, so a gap of k empty frames costs one inversion.
    """
    r = bessel_ratio(conc) * bessel_ratio(kappa_z) ** np.asarray(steps, dtype=float)
    return inv_bessel_ratio(np.minimum(r, np.nextafter(1.0, 0.0)))


def vm_convolve_approx(state: VonMises, kappa_z: float) -> VonMises:
    """Von Mises approximation to the convolution of ``state`` with a
    random-walk step of concentration ``kappa_z``; the mean is unchanged."""
    conc = float(convolve_concentration(state.concentration, kappa_z))
    return VonMises(state.mean, min(conc, state.concentration, kappa_z))


def vm_exact_conv_log_density(x, obs_conc, state_mean, state_conc):
    """Log of  int vM(x; z, obs_conc) vM(z; state_mean, state_conc) dz.

    The exact predictive density of an observation at angle x given a von
    Mises belief over the hidden angle z.
    """
    obs_conc = _check_nonneg(obs_conc)
    state_conc = _check_nonneg(state_conc)
    sq = obs_conc**2 + state_conc**2 + 2.0 * obs_conc * state_conc * np.cos(np.asarray(x) - state_mean)
    combined = np.sqrt(np.maximum(sq, 0.0))
    return log_bessel_i0(combined) - LOG_2PI - log_bessel_i0(obs_conc) - log_bessel_i0(state_conc)


def vm_sample(d: VonMises, rng: np.random.Generator, size=None):
    """Draw angles from ``d``; wrapped to (-pi, pi]."""
    return wrap_angle(rng.vonmises(d.mean, d.concentration, size=size))
