"""Two-port (Mach-Zehnder) photon-counting measurement on the mechanics.

A weak coherent state |alpha>|alpha e^{i phi}> passes the interferometer,
arm 1 picks up the radiation-pressure phase e^{i mu n X}, the arms are mixed
on a 50:50 beam splitter and {m, n} photons are counted at the outputs.
The resulting Kraus operator is diagonal in mechanical position, so
everything here is a function of the position quadrature x.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from math import comb, lgamma

import numpy as np
from scipy import integrate, signal

from .core import ConditioningError, DomainError, NumericalError, ThermalState


@dataclass(frozen=True)
class ClickEvent:
    m: int
    n: int

    def __post_init__(self):
        for name in ("m", "n"):
            v = getattr(self, name)
            if isinstance(v, bool) or int(v) != v or v < 0:
                raise DomainError(f"{name} must be a nonnegative integer, got {v!r}")
            object.__setattr__(self, name, int(v))

    @property
    def photons(self):
        return self.m + self.n

    @classmethod
    def parse(cls, text):
        """Parse ``"{1,0}"``, ``"1,0"`` or ``"1 0"``."""
        parts = text.strip().strip("{}()").replace(",", " ").split()
        if len(parts) != 2:
            raise DomainError(f"cannot parse click event {text!r}")
        return cls(int(parts[0]), int(parts[1]))

    def __str__(self):
        return f"{{{self.m},{self.n}}}"


TABULATED_EVENTS = (ClickEvent(0, 0), ClickEvent(0, 1), ClickEvent(1, 0), ClickEvent(1, 1))


def _as_event(event):
    if isinstance(event, ClickEvent):
        return event
    if isinstance(event, str):
        return ClickEvent.parse(event)
    m, n = event
    return ClickEvent(m, n)


def _log_prefactor(event, alpha):
    """log of e^{-2 alpha^2} alpha^{2(m+n)} / (m! n!), the filter prefactor."""
    k = event.photons
    if alpha == 0:
        return 0.0 if k == 0 else -math.inf
    return (-2.0 * alpha * alpha + 2 * k * math.log(alpha)
            - lgamma(event.m + 1) - lgamma(event.n + 1))


def filter_bound(event, cfg):
    """Supremum over x of the filter, reached where cos(mu x - phi) = +-1."""
    event = _as_event(event)
    return math.exp(_log_prefactor(event, cfg.alpha)) * 2.0 ** event.photons


def upsilon(event, cfg, x):
    """Kraus-operator amplitude Upsilon_{m,n}(x); vectorised over x."""
    event = _as_event(event)
    x = np.asarray(x, dtype=float)
    k = event.photons
    if cfg.alpha == 0:
        scale = 1.0 if k == 0 else 0.0
    else:
        scale = math.exp(-cfg.alpha ** 2 + k * math.log(cfg.alpha / math.sqrt(2.0))
                         - 0.5 * (lgamma(event.m + 1) + lgamma(event.n + 1)))
    # e^{i mu x} +- e^{i phi} = 2 e^{i s} (cos h, i sin h): no cancellation near the nulls
    h = 0.5 * (cfg.mu * x - cfg.phi)
    s = 0.5 * (cfg.mu * x + cfg.phi)
    out = (scale * 2.0 ** k * 1j ** event.n * np.exp(1j * k * s)
           * np.cos(h) ** event.m * np.sin(h) ** event.n)
    return complex(out) if out.ndim == 0 else out


def filter_function(event, cfg, x):
    """Upsilon^dagger Upsilon as a function of position.

    Uses 1 + cos u = 2 cos^2(u/2) and 1 - cos u = 2 sin^2(u/2) so that the
    small-angle regime keeps full relative precision.
    """
    event = _as_event(event)
    x = np.asarray(x, dtype=float)
    half = 0.5 * (cfg.mu * x - cfg.phi)
    out = filter_bound(event, cfg) * np.cos(half) ** (2 * event.m) * np.sin(half) ** (2 * event.n)
    return float(out) if out.ndim == 0 else out


def _quad_window(state):
    # 20 thermal standard deviations: the Gaussian tail beyond is < 1e-86
    return 20.0 * state.position_std


def _quadrature(func, state, what):
    half = _quad_window(state)
    value, err = integrate.quad(func, -half, half, epsabs=0.0, epsrel=1e-12, limit=2000)
    if not (math.isfinite(value) and err <= 1e-10 * max(abs(value), 1e-300)):
        raise NumericalError(f"quadrature for {what} did not converge",
                             {"value": value, "error_estimate": err, "window": half})
    return value


def herald_probability_quadrature(event, cfg, state):
    """P_{m,n} = integral of filter(x) * thermal pdf(x) dx, by adaptive quadrature."""
    event = _as_event(event)
    if not isinstance(state, ThermalState):
        state = ThermalState(float(state))
    bound = filter_bound(event, cfg)
    if bound == 0:
        return 0.0
    # integrate the alpha-free shape so the prefactor cannot eat the tolerance
    shape = lambda x: filter_function(event, cfg, x) / bound * state.pdf(x)
    return bound * _quadrature(shape, state, f"event {event}")


def herald_probability_closed(event, cfg, nbar):
    """Closed-form heralding probability for the events {0,0}, {0,1}, {1,0}, {1,1}."""
    event = _as_event(event)
    nbar = nbar.nbar if isinstance(nbar, ThermalState) else float(nbar)
    a2 = cfg.alpha ** 2
    w2 = 1.0 + 2.0 * nbar
    base = math.exp(-2.0 * a2)
    # 1 -+ e^-a cos(phi) written as -expm1(-a) + 2 e^-a sin^2 / cos^2 to avoid cancellation
    a1 = cfg.mu ** 2 * w2 / 4.0
    e1 = math.exp(-a1)
    key = (event.m, event.n)
    if key == (0, 0):
        return base
    if key == (0, 1):
        return base * a2 * (-math.expm1(-a1) + 2.0 * e1 * math.sin(0.5 * cfg.phi) ** 2)
    if key == (1, 0):
        return base * a2 * (-math.expm1(-a1) + 2.0 * e1 * math.cos(0.5 * cfg.phi) ** 2)
    if key == (1, 1):
        a4 = 4.0 * a1
        return 0.5 * base * a2 * a2 * (-math.expm1(-a4) + 2.0 * math.exp(-a4) * math.sin(cfg.phi) ** 2)
    raise DomainError(f"no closed form for event {event}; use herald_probability_quadrature")


def herald_probability(event, cfg, state):
    """Closed form when tabulated, quadrature otherwise."""
    event = _as_event(event)
    if not isinstance(state, ThermalState):
        state = ThermalState(float(state))
    if event in TABULATED_EVENTS:
        return herald_probability_closed(event, cfg, state.nbar)
    return herald_probability_quadrature(event, cfg, state)


def conditional_position_pdf(event, cfg, state, x):
    """Position density after the click event, filter * pdf / P."""
    event = _as_event(event)
    if not isinstance(state, ThermalState):
        state = ThermalState(float(state))
    prob = herald_probability(event, cfg, state)
    if not prob > 0:
        raise ConditioningError(f"event {event} has zero heralding probability for {cfg}")
    return filter_function(event, cfg, x) * state.pdf(x) / prob


@dataclass(frozen=True)
class FilterCurve:
    xs: np.ndarray
    values: np.ndarray

    def peak_positions(self, rel_height=0.5):
        """Interior local maxima above ``rel_height`` times the global maximum,
        refined by a parabola through the three samples around each peak."""
        v = np.asarray(self.values)
        if v.max() <= 0:
            return np.array([])
        idx, _ = signal.find_peaks(v, height=rel_height * v.max())
        dx = self.xs[1] - self.xs[0]
        out = []
        for i in idx:
            y0, y1, y2 = v[i - 1], v[i], v[i + 1]
            den = y0 - 2 * y1 + y2
            shift = 0.5 * (y0 - y2) / den if den != 0 else 0.0
            out.append(self.xs[i] + shift * dx)
        return np.array(out)

    def period(self):
        peaks = self.peak_positions()
        if len(peaks) < 2:
            raise NumericalError("need at least two peaks to measure a period",
                                 {"peaks": peaks.tolist()})
        return float(np.mean(np.diff(peaks)))


def filter_curve(event, cfg, xs):
    xs = np.asarray(xs, dtype=float)
    return FilterCurve(xs, filter_function(event, cfg, xs))


def _log_fact(k):
    return lgamma(k + 1)


def upsilon_fock_oracle(event, cfg, x, truncation=20, tail_tol=1e-12):
    """Brute-force Upsilon_{m,n}(x) from the two-mode Fock representation.

    Builds the truncated coherent amplitudes c_{jk} of |alpha>|alpha e^{i phi}>,
    applies the number-dependent phase e^{i mu j x} to mode 1 and pushes the
    result through the 50:50 beam splitter by expanding the transformed
    creation operators a1^dag -> (b1^dag + b2^dag)/sqrt2,
    a2^dag -> (b1^dag - b2^dag)/sqrt2 with integer binomial coefficients.
    """
    event = _as_event(event)
    alpha, mu, phi = cfg.alpha, cfg.mu, cfg.phi
    need = event.photons + 10 * alpha ** 2 + 10
    if truncation < need:
        raise NumericalError("truncation too small for the requested event",
                             {"truncation": truncation, "required": need})
    j = np.arange(truncation + 1)
    # |c_j|^2 of a single coherent state is Poisson(alpha^2); check the lost tail
    if alpha > 0:
        log_w = -alpha ** 2 + 2 * j * math.log(alpha) - np.array([_log_fact(i) for i in j])
        kept = float(np.exp(log_w).sum())
        tail = 1.0 - kept * kept
    else:
        tail = 0.0
    if tail > tail_tol:
        raise NumericalError("coherent-state tail mass above tolerance",
                             {"truncation": truncation, "tail": tail})

    def coeff(jj, kk):
        if alpha == 0:
            mag = 1.0 if jj + kk == 0 else 0.0
        else:
            mag = math.exp(-alpha ** 2 + (jj + kk) * math.log(alpha)
                           - 0.5 * (_log_fact(jj) + _log_fact(kk)))
        return mag * np.exp(1j * (kk * phi + jj * mu * x))

    # Photon number is conserved by the beam splitter, so only the block
    # j + k = m + n feeds the <m, n| output amplitude.
    total = event.photons
    amp = 0.0 + 0.0j
    for jj in range(total + 1):
        kk = total - jj
        if jj > truncation or kk > truncation:
            continue
        c = coeff(jj, kk)
        # (b1 + b2)^jj (b1 - b2)^kk: collect the b1^m b2^n coefficient
        acc = 0
        for r in range(jj + 1):
            s = event.m - r
            if s < 0 or s > kk:
                continue
            acc += comb(jj, r) * comb(kk, s) * (-1) ** (kk - s)
        if acc == 0:
            continue
        norm = math.exp(0.5 * (_log_fact(event.m) + _log_fact(event.n)
                               - _log_fact(jj) - _log_fact(kk))) / 2.0 ** (total / 2.0)
        amp += c * acc * norm
    return complex(amp)
