"""Conditional mechanical states in phase space.

The measurement operators are diagonal in position, so the conditional
state is built directly as a position-basis kernel
K_out(x, x') = U(x) conj(U(x')) K_th(x, x') / P and then Wigner transformed
with W(x, p) = (1/pi) int dy exp(2ipy) K(x - y, x + y).
With the kick written as exp(+i mu X) the displaced components of the
state sit at positive momentum.
"""
from __future__ import annotations

import cmath
import math
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .core import ConditioningError, DomainError, NumericalError, ThermalState
from . import multiport, twoport


class ResolutionError(NumericalError):
    """The grid cannot represent the requested kernel or transform."""


class CoverageError(NumericalError):
    """The located extremum sits on the grid boundary."""


def thermal_kernel(nbar, x, xp):
    """Position-basis density matrix <x|rho_th|x'> in quantum-noise units."""
    w2 = 1.0 + 2.0 * float(nbar)
    x = np.asarray(x, dtype=float)
    xp = np.asarray(xp, dtype=float)
    s = x + xp
    d = x - xp
    out = np.exp(-s * s / (4.0 * w2) - d * d * w2 / 4.0) / math.sqrt(math.pi * w2)
    return out.astype(complex) if out.ndim else complex(out)


def thermal_wigner(nbar, x, p):
    w2 = 1.0 + 2.0 * float(nbar)
    return np.exp(-(np.asarray(x) ** 2 + np.asarray(p) ** 2) / w2) / (math.pi * w2)


# --- measurements -----------------------------------------------------------
#
# A "measurement" is either a two-port ClickEvent (or an (m, n) pair) or an
# integer port count N for the N-fold coincidence.

def _is_multiport(measurement):
    return isinstance(measurement, (int, np.integer)) and not isinstance(measurement, bool)


def measurement_label(measurement):
    if _is_multiport(measurement):
        return f"N={int(measurement)}"
    return str(twoport._as_event(measurement))


def measurement_amplitude(measurement, cfg, x):
    if _is_multiport(measurement):
        return multiport.upsilon_N(int(measurement), cfg, x)
    return twoport.upsilon(measurement, cfg, x)


def measurement_probability(measurement, cfg, nbar):
    if _is_multiport(measurement):
        return multiport.herald_probability_N(int(measurement), cfg, nbar)
    return twoport.herald_probability(measurement, cfg, ThermalState(nbar))


def measurement_pdf(measurement, cfg, nbar, x):
    """Conditional position density for either kind of measurement."""
    if _is_multiport(measurement):
        prob = measurement_probability(measurement, cfg, nbar)
        if not prob > 0:
            raise ConditioningError(f"N={measurement} has zero heralding probability")
        return multiport.filter_N(int(measurement), cfg, x) * ThermalState(nbar).pdf(x) / prob
    return twoport.conditional_position_pdf(measurement, cfg, ThermalState(nbar), x)


def max_kick(measurement, cfg):
    """Largest momentum displacement present in the conditional state."""
    if _is_multiport(measurement):
        return int(measurement) * cfg.mu
    return twoport._as_event(measurement).photons * cfg.mu


def closed_form_scale(measurement, cfg, tol=1e-9):
    """Return s = mu N for which min_wigner_closed describes this state, else None.

    The closed form holds for operators of the shape exp(i s X) - 1, i.e. when
    the filter vanishes at X = 0.  Other phases give a cat-like superposition
    whose interference term cannot reach the bound (an even-parity pair has
    only a shallow dip), so no closed value is returned for them.
    """
    if _is_multiport(measurement):
        N = int(measurement)
        s, ref = N * cfg.mu, multiport._sign(N) * cmath.exp(1j * N * cfg.phi)
    else:
        ev = twoport._as_event(measurement)
        ref_phase = cmath.exp(1j * cfg.phi)
        if (ev.m, ev.n) == (1, 0):
            s, ref = cfg.mu, -ref_phase
        elif (ev.m, ev.n) == (0, 1):
            s, ref = cfg.mu, ref_phase
        elif (ev.m, ev.n) == (1, 1):
            s, ref = 2 * cfg.mu, ref_phase ** 2
        else:
            return None
    if s <= 0:
        return None
    if abs(ref - 1.0) < tol:
        return s
    return None


@dataclass(frozen=True)
class DensityKernel:
    grid_x: np.ndarray
    values: np.ndarray
    label: str = ""

    def hermiticity_residual(self):
        return float(np.abs(self.values - self.values.conj().T).max())

    @property
    def dx(self):
        return float(self.grid_x[1] - self.grid_x[0])

    def trace(self):
        return float(np.real(np.trace(self.values)) * self.dx)

    def diagonal(self):
        return np.real(np.diag(self.values)).copy()

    def purity(self):
        return float(np.sum(np.abs(self.values) ** 2) * self.dx ** 2)

    def boundary_max(self):
        v = self.values
        return float(max(np.abs(v[0]).max(), np.abs(v[-1]).max(),
                         np.abs(v[:, 0]).max(), np.abs(v[:, -1]).max()))


def thermal_density_kernel(nbar, grid_x):
    grid_x = np.asarray(grid_x, dtype=float)
    return DensityKernel(grid_x, thermal_kernel(nbar, grid_x[:, None], grid_x[None, :]),
                         label=f"thermal nbar={nbar}")


def conditional_kernel_function(measurement, cfg, nbar):
    """Callable K_out(x, x') built from the closed-form pieces."""
    prob = measurement_probability(measurement, cfg, nbar)
    if not prob > 0:
        raise ConditioningError(f"{measurement_label(measurement)} has zero probability")

    def kernel(x, xp):
        ux = measurement_amplitude(measurement, cfg, x)
        uxp = measurement_amplitude(measurement, cfg, xp)
        return ux * np.conj(uxp) * thermal_kernel(nbar, x, xp) / prob

    return kernel


def conditional_kernel(measurement, cfg, nbar, grid_x):
    grid_x = np.asarray(grid_x, dtype=float)
    func = conditional_kernel_function(measurement, cfg, nbar)
    values = func(grid_x[:, None], grid_x[None, :])
    return DensityKernel(grid_x, values, label=measurement_label(measurement))


# --- grids ------------------------------------------------------------------

# Kernel magnitude is ~exp(-(x+x')^2/(4 w2) - (x-x')^2 w2/4); these choose the
# half width so the diagonal tail and the boundary rows both fall below ~1e-13.
_DIAG_STDS = 9.0
_BOUNDARY_EXPONENT = 32.0
_P_STDS = 7.0


def _amplification(measurement, cfg, nbar):
    """sup |U|^2 / P: how far conditioning can lift the thermal kernel tails."""
    if _is_multiport(measurement):
        sup = multiport.filter_N_bound(int(measurement), cfg)
    else:
        sup = twoport.filter_bound(measurement, cfg)
    prob = measurement_probability(measurement, cfg, nbar)
    return max(1.0, sup / prob) if prob > 0 else 1.0


def default_grids(measurement, cfg, nbar, nx=512, np_=512):
    """Position and momentum grids wide and fine enough for the transform."""
    state = ThermalState(nbar)
    std = state.position_std
    w2 = state.width2
    kick = max_kick(measurement, cfg)
    extra = math.log(_amplification(measurement, cfg, nbar))
    half = max(std * math.sqrt(_DIAG_STDS ** 2 + 2 * extra),
               math.sqrt((_BOUNDARY_EXPONENT + extra) / (0.25 / w2 + 0.25 * w2)))
    dx = 2 * half / (nx - 1)
    if kick > 0 and dx > 2 * math.pi / kick / 16:
        raise ResolutionError("fewer than 16 grid points per fringe period",
                              {"dx": dx, "period": 2 * math.pi / kick, "nx": nx})
    grid_x = np.linspace(-half, half, nx)
    grid_p = np.linspace(-_P_STDS * std, kick + _P_STDS * std, np_)
    return grid_x, grid_p


@dataclass
class WignerGrid:
    grid_x: np.ndarray
    grid_p: np.ndarray
    values: np.ndarray  # shape (len(grid_x), len(grid_p))
    meta: dict = field(default_factory=dict)

    @property
    def dx(self):
        return float(self.grid_x[1] - self.grid_x[0])

    @property
    def dp(self):
        return float(self.grid_p[1] - self.grid_p[0])

    def total(self):
        return float(np.trapezoid(np.trapezoid(self.values, self.grid_p, axis=1), self.grid_x))

    def position_marginal(self):
        return np.trapezoid(self.values, self.grid_p, axis=1)

    def momentum_marginal(self):
        return np.trapezoid(self.values, self.grid_x, axis=0)

    # serialization -------------------------------------------------------
    def write_csv(self, path, header_lines=()):
        with open(path, "w", newline="\n") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            fh.write("x,p,W\n")
            ps = self.grid_p.tolist()
            for x, row in zip(self.grid_x.tolist(), self.values.tolist()):
                for p, w in zip(ps, row):
                    fh.write(f"{x!r},{p!r},{w!r}\n")

    def to_bytes(self):
        """Little-endian float64 header (nx, np, dx, dp) then W row-major in x."""
        nx, np_ = self.values.shape
        head = struct.pack("<4d", nx, np_, self.dx, self.dp)
        return head + np.ascontiguousarray(self.values, dtype="<f8").tobytes()

    def write_bin(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def from_bytes(cls, data, x0=0.0, p0=0.0):
        nx, np_, dx, dp = struct.unpack_from("<4d", data, 0)
        nx, np_ = int(nx), int(np_)
        values = np.frombuffer(data, dtype="<f8", offset=32, count=nx * np_).reshape(nx, np_)
        return cls(x0 + dx * np.arange(nx), p0 + dp * np.arange(np_), values.copy())


def wigner_transform(kernel, grid_p, imag_tol=1e-9, boundary_tol=1e-12):
    """Discrete Wigner transform of a position kernel on a uniform grid.

    The y integral is sampled at y = k dx so that x +- y stay on the grid;
    the result is periodic in p with period pi/dx, so the momentum band of
    the state has to fit inside that window.
    """
    grid_x = np.asarray(kernel.grid_x, dtype=float)
    grid_p = np.asarray(grid_p, dtype=float)
    n = grid_x.size
    dx = kernel.dx
    edge = kernel.boundary_max()
    if edge > boundary_tol:
        raise ResolutionError("kernel not negligible at the grid boundary",
                              {"boundary_max": edge, "tolerance": boundary_tol})
    band = grid_p.max() - grid_p.min()
    if band >= math.pi / dx:
        raise ResolutionError("momentum range exceeds the alias-free window pi/dx",
                              {"band": band, "window": math.pi / dx})

    K = kernel.values
    i = np.arange(n)[None, :]
    k = np.arange(1, n)[:, None]
    lo, hi = i - k, i + k
    valid = (lo >= 0) & (hi < n)
    lo_c, hi_c = np.clip(lo, 0, n - 1), np.clip(hi, 0, n - 1)
    v_plus = np.where(valid, K[lo_c, hi_c], 0)    # K(x - y, x + y)
    v_minus = np.where(valid, K[hi_c, lo_c], 0)   # K(x + y, x - y)
    phase = np.exp(2j * np.outer(grid_p, np.arange(1, n)) * dx)
    total = np.diag(K)[None, :] + phase @ v_plus + phase.conj() @ v_minus
    total *= dx / math.pi
    imag = float(np.abs(total.imag).max())
    if imag > imag_tol:
        raise ResolutionError("Wigner function has a non-negligible imaginary part",
                              {"max_imag": imag, "tolerance": imag_tol})
    return WignerGrid(grid_x.copy(), grid_p.copy(), np.ascontiguousarray(total.real.T),
                      meta={"label": kernel.label, "max_imag": imag})


def wigner_point(kernel_func, x, p, half_width):
    """W(x, p) by adaptive quadrature of an analytic kernel (independent route)."""
    def re(y):
        return float(np.real(np.exp(2j * p * y) * kernel_func(x - y, x + y)))

    val, _ = integrate.quad(re, -half_width, half_width, limit=800, epsabs=1e-14, epsrel=1e-12)
    return val / math.pi


def conditional_wigner(measurement, cfg, nbar, nx=512, np_=512):
    grid_x, grid_p = default_grids(measurement, cfg, nbar, nx, np_)
    kernel = conditional_kernel(measurement, cfg, nbar, grid_x)
    wg = wigner_transform(kernel, grid_p)
    wg.meta.update(nbar=nbar, mu=cfg.mu, phi=cfg.phi, alpha=cfg.alpha)
    return wg


# --- negativity -------------------------------------------------------------

def min_wigner_closed(s, nbar):
    """Most negative Wigner value for a kick of total size s = mu N on a thermal state."""
    if s < 0 or nbar < 0:
        raise DomainError("s and nbar must be >= 0")
    w2 = 1.0 + 2.0 * nbar
    if 0.25 * s * s * w2 < 1e-150:
        # ratio = w2^-2 (1 + O(s^2)); also catches underflow of s^2
        return min_wigner_limits(nbar, "weak")
    num = -math.expm1(-0.25 * s * s / w2)
    den = -math.expm1(-0.25 * s * s * w2)
    return -num / den / (math.pi * w2)


def min_wigner_limits(nbar, regime):
    if nbar < 0:
        raise DomainError("nbar must be >= 0")
    w2 = 1.0 + 2.0 * nbar
    if regime == "weak":
        return -1.0 / (math.pi * w2 ** 3)
    if regime == "strong":
        return -1.0 / (math.pi * w2)
    raise DomainError(f"regime must be 'weak' or 'strong', got {regime!r}")


def wigner_minimum_numeric(wgrid):
    """Grid minimum refined by a least-squares quadratic on the 3x3 neighbourhood.

    Returns (value, (x, p)).
    """
    W = wgrid.values
    i, j = np.unravel_index(np.argmin(W), W.shape)
    if i in (0, W.shape[0] - 1) or j in (0, W.shape[1] - 1):
        raise CoverageError("minimum lies on the grid boundary",
                            {"index": (int(i), int(j)), "value": float(W[i, j])})
    dx, dp = wgrid.dx, wgrid.dp
    u, v = np.meshgrid([-1.0, 0.0, 1.0], [-1.0, 0.0, 1.0], indexing="ij")
    u, v = u.ravel(), v.ravel()
    design = np.column_stack([np.ones(9), u, v, u * u, u * v, v * v])
    c = np.linalg.lstsq(design, W[i - 1:i + 2, j - 1:j + 2].ravel(), rcond=None)[0]
    hess = np.array([[2 * c[3], c[4]], [c[4], 2 * c[5]]])
    grad = np.array([c[1], c[2]])
    try:
        step = -np.linalg.solve(hess, grad)
    except np.linalg.LinAlgError:
        step = np.zeros(2)
    if not np.all(np.abs(step) <= 1.0) or np.linalg.det(hess) <= 0 or hess[0, 0] <= 0:
        # not a proper bowl inside the cell; keep the sample
        return float(W[i, j]), (float(wgrid.grid_x[i]), float(wgrid.grid_p[j]))
    su, sv = step
    value = c[0] + c[1] * su + c[2] * sv + c[3] * su * su + c[4] * su * sv + c[5] * sv * sv
    return float(value), (float(wgrid.grid_x[i] + su * dx), float(wgrid.grid_p[j] + sv * dp))
