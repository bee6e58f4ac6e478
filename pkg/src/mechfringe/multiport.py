"""N-port interferometer and N00N-projection measurement.

Two coherent states (one kicked by the mechanics, one carrying the static
phase) plus N-2 vacua enter a symmetric N-port; an N-fold coincidence
projects the two occupied inputs onto a N00N state, so the mechanics sees a
superposition of "no kick" and "N kicks".
"""
from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .core import DomainError, NumericalError, ThermalState


def _check_n(N):
    if isinstance(N, bool) or int(N) != N or N < 2:
        raise DomainError(f"port count N must be an integer >= 2, got {N!r}")
    return int(N)


@dataclass(frozen=True)
class MultiportMatrix:
    n: int
    entries: np.ndarray

    def unitarity_residual(self):
        m = self.entries
        return float(np.abs(m @ m.conj().T - np.eye(self.n)).max())


def multiport_matrix(N):
    """DFT-type canonical multiport, M[k, l] = exp(2 pi i k l / N) / sqrt(N)."""
    N = _check_n(N)
    k = np.arange(N)
    # reduce k*l mod N before exponentiating to keep the phases exact
    phase = 2.0 * np.pi * (np.outer(k, k) % N) / N
    return MultiportMatrix(N, np.exp(1j * phase) / math.sqrt(N))


# --- exact arithmetic in Z[w], w = exp(2 pi i / N) -------------------------
#
# Elements are integer coefficient lists over powers of w.  Products are
# reduced with w^N = 1; deciding whether an element is zero additionally
# needs reduction modulo the cyclotomic polynomial Phi_N.

def _poly_divmod(num, den):
    """Integer polynomial division by a monic ``den`` (lists, low degree first)."""
    num = list(num)
    deg_d = len(den) - 1
    if len(num) - 1 < deg_d:
        return [0], num
    quot = [0] * (len(num) - deg_d)
    for i in range(len(num) - 1, deg_d - 1, -1):
        c = num[i]
        if c:
            quot[i - deg_d] = c
            for j, dc in enumerate(den):
                num[i - deg_d + j] -= c * dc
    rem = num[:deg_d] or [0]
    return quot, rem


def cyclotomic_polynomial(N):
    """Phi_N with integer coefficients, from x^N - 1 = prod_{d | N} Phi_d."""
    poly = [-1] + [0] * (N - 1) + [1]
    for d in range(1, N):
        if N % d == 0:
            q, r = _poly_divmod(poly, cyclotomic_polynomial(d))
            assert not any(r)
            poly = q
    while len(poly) > 1 and poly[-1] == 0:
        poly.pop()
    return poly


def _reduce_cyclotomic(vec, N):
    _, rem = _poly_divmod(vec, cyclotomic_polynomial(N))
    return rem


def _eval_root(vec, N):
    w = cmath.exp(2j * math.pi / N)
    return sum(c * w ** k for k, c in enumerate(vec))


def noon_projection_coefficients(N):
    """Exact expansion of prod_{m=0}^{N-1} (a1 + w^{-m} a2).

    Returns a list indexed by j of Z[w] elements (coefficient lists) for the
    monomial a1^j a2^(N-j), already reduced modulo Phi_N.
    """
    N = _check_n(N)
    # poly[j] = coefficient of a1^j a2^(len-1-j), each an integer vector over w^k
    poly = [[1] + [0] * (N - 1)]
    for m in range(N):
        shift = (-m) % N
        new = [[0] * N for _ in range(len(poly) + 1)]
        for j, coef in enumerate(poly):
            for k, c in enumerate(coef):
                if not c:
                    continue
                new[j + 1][k] += c                  # times a1
                new[j][(k + shift) % N] += c        # times w^{-m} a2
        poly = new
    return [_reduce_cyclotomic(c, N) for c in poly]


def noon_projection_check(N):
    """(coefficient of a1^N, coefficient of a2^N, largest cross-term magnitude).

    The cross terms are decided exactly; their magnitude is reported after
    evaluating the exact remainder at the root of unity.
    """
    coeffs = noon_projection_coefficients(N)
    coeff_n0 = complex(_eval_root(coeffs[0], N))      # a2^N
    coeff_0n = complex(_eval_root(coeffs[-1], N))     # a1^N
    cross = max((abs(_eval_root(c, N)) for c in coeffs[1:-1]), default=0.0)
    return coeff_0n, coeff_n0, float(cross)


def noon_projection_check_float(N):
    """Same expansion in floating point, as a numerical cross-check."""
    N = _check_n(N)
    poly = np.array([1.0 + 0j])
    for m in range(N):
        w = cmath.exp(-2j * math.pi * m / N)
        # multiply by (a1 + w a2): index = power of a1
        new = np.zeros(len(poly) + 1, dtype=complex)
        new[1:] += poly
        new[:-1] += w * poly
        poly = new
    return complex(poly[-1]), complex(poly[0]), float(np.abs(poly[1:-1]).max(initial=0.0))


# --- measurement operator ---------------------------------------------------

def _sign(N):
    return -1.0 if N % 2 else 1.0


def _half_angle_sq(N, h):
    """(1 - sign(N) cos 2h) / 2 without cancellation."""
    return np.sin(h) ** 2 if N % 2 == 0 else np.cos(h) ** 2


def upsilon_N(N, cfg, x):
    """N-fold coincidence Kraus amplitude, vectorised over x."""
    N = _check_n(N)
    x = np.asarray(x, dtype=float)
    if cfg.alpha == 0:
        return np.zeros_like(x, dtype=complex) if x.ndim else 0j
    scale = math.exp(-cfg.alpha ** 2 + N * math.log(cfg.alpha) - 0.5 * N * math.log(N))
    # e^{iA} - e^{iB} = 2i e^{i(A+B)/2} sin((A-B)/2), e^{iA} + e^{iB} = 2 e^{i(A+B)/2} cos(...)
    h = 0.5 * N * (cfg.mu * x - cfg.phi)
    mid = np.exp(0.5j * N * (cfg.mu * x + cfg.phi))
    out = 2.0 * scale * mid * (1j * np.sin(h) if N % 2 == 0 else np.cos(h))
    return complex(out) if out.ndim == 0 else out


def upsilon_N_coherent_oracle(N, cfg, x, return_output=False):
    """Upsilon_N by propagating the coherent amplitudes through the multiport.

    The output is a product of coherent states with amplitudes w = M v and
    each port must show exactly one photon: <1|w_k> = w_k e^{-|w_k|^2/2}.
    """
    N = _check_n(N)
    v = np.zeros(N, dtype=complex)
    v[0] = cfg.alpha * cmath.exp(1j * cfg.mu * x)
    v[1] = cfg.alpha * cmath.exp(1j * cfg.phi)
    w = multiport_matrix(N).entries @ v
    amp = complex(np.prod(w) * math.exp(-0.5 * float(np.sum(np.abs(w) ** 2))))
    if return_output:
        return amp, w
    return amp


def filter_N_bound(N, cfg):
    """Supremum over x of filter_N: twice the prefactor."""
    N = _check_n(N)
    if cfg.alpha == 0:
        return 0.0
    return 2.0 * math.exp(math.log(2.0) - N * math.log(N) - 2 * cfg.alpha ** 2
                          + 2 * N * math.log(cfg.alpha))


def filter_N(N, cfg, x):
    x = np.asarray(x, dtype=float)
    out = filter_N_bound(N, cfg) * _half_angle_sq(N, 0.5 * N * (cfg.mu * x - cfg.phi))
    return float(out) if out.ndim == 0 else out


def herald_probability_N(N, cfg, nbar):
    N = _check_n(N)
    nbar = nbar.nbar if isinstance(nbar, ThermalState) else float(nbar)
    if nbar < 0:
        raise DomainError("nbar must be >= 0")
    if cfg.alpha == 0:
        return 0.0
    pref = math.exp(math.log(2.0) - N * math.log(N) - 2 * cfg.alpha ** 2
                    + 2 * N * math.log(cfg.alpha))
    a = 0.25 * cfg.mu ** 2 * (1.0 + 2.0 * nbar) * N * N
    # 1 - s e^-a cos(N phi) = -expm1(-a) + 2 e^-a (sin^2 or cos^2)(N phi / 2)
    return pref * (-math.expm1(-a) + 2.0 * math.exp(-a) * _half_angle_sq(N, 0.5 * N * cfg.phi))


def herald_probability_N_quadrature(N, cfg, nbar):
    state = nbar if isinstance(nbar, ThermalState) else ThermalState(float(nbar))
    half = 20.0 * state.position_std
    value, err = integrate.quad(lambda x: filter_N(N, cfg, x) * state.pdf(x), -half, half,
                                epsabs=0.0, epsrel=1e-12, limit=2000)
    if not (math.isfinite(value) and err <= 1e-10 * max(abs(value), 1e-300)):
        raise NumericalError("N-port herald quadrature did not converge",
                             {"value": value, "error_estimate": err})
    return value
