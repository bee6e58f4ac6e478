"""Readout-trace model and quadrature extraction.

The balanced-detector signal for a mechanical state (X, P) is

    [A cos(X cos wt + P sin wt + phi_r) + c] * [1 - d |cos(wt + atan2(X, P) - pi/4)|]

with X, P in radians of readout phase.  A, c and w are calibrated
separately; X, P, phi_r and d are fitted per trace with a damped
Gauss-Newton iteration.

The model is exactly invariant under (X, P, phi_r) -> (-X, -P, -phi_r), with
or without the modulation term, so fitted solutions are reported in the
canonical branch phi_r in [0, pi).
"""
from __future__ import annotations

import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .core import DomainError, PhaseSpacePoint, Unit, convert

QUARTER_PI = 0.25 * math.pi


@dataclass(frozen=True)
class TraceModelParams:
    A: float
    c: float
    omega_m: float
    X: float = 0.0
    P: float = 0.0
    phi_r: float = 0.0
    d: float = 0.0

    def __post_init__(self):
        if not self.A > 0:
            raise DomainError(f"A must be > 0, got {self.A}")
        if not self.omega_m > 0:
            raise DomainError(f"omega_m must be > 0, got {self.omega_m}")
        if not 0 <= self.d < 1:
            raise DomainError(f"d must lie in [0, 1), got {self.d}")

    @property
    def amplitude(self):
        return math.hypot(self.X, self.P)

    def free_vector(self):
        return np.array([self.X, self.P, self.phi_r, self.d])

    def with_free(self, vec):
        return replace(self, X=float(vec[0]), P=float(vec[1]), phi_r=float(vec[2]),
                       d=float(vec[3]))

    def canonical(self):
        """Fold onto phi_r in [0, pi) using the sign symmetry."""
        phi = self.phi_r % (2 * math.pi)
        if phi >= math.pi:
            return replace(self, X=-self.X, P=-self.P, phi_r=(-phi) % (2 * math.pi))
        return replace(self, phi_r=phi)


@dataclass(frozen=True)
class Known:
    """Independently calibrated response constants."""

    A: float
    c: float
    omega_m: float


@dataclass
class Trace:
    samples: np.ndarray
    sample_rate: float = 1e8
    t0: float = -25e-6

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise DomainError("a trace needs a nonempty 1-d sample array")
        if not self.sample_rate > 0:
            raise DomainError("sample_rate must be > 0")

    @property
    def n(self):
        return self.samples.size

    @property
    def times(self):
        return self.t0 + np.arange(self.n) / self.sample_rate

    # I/O ---------------------------------------------------------------------
    def write_csv(self, path, header_lines=()):
        with open(path, "w", newline="\n") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            fh.write("rate,t0,n\n")
            fh.write(f"{float(self.sample_rate)!r},{float(self.t0)!r},{self.n}\n")
            for v in self.samples.tolist():
                fh.write(f"{v!r}\n")

    @classmethod
    def read_csv(cls, path):
        with open(path) as fh:
            lines = [ln.strip() for ln in fh if ln.strip() and not ln.startswith("#")]
        if lines[0] != "rate,t0,n":
            raise DomainError(f"{path}: expected 'rate,t0,n' header")
        rate, t0, n = lines[1].split(",")
        samples = np.array([float(v) for v in lines[2:]])
        if samples.size != int(n):
            raise DomainError(f"{path}: header says {n} samples, found {samples.size}")
        return cls(samples, float(rate), float(t0))

    def to_bytes(self):
        """16-byte header (u32 n, f64 rate, u32 reserved) then n little-endian f32."""
        return (struct.pack("<IdI", self.n, self.sample_rate, 0)
                + self.samples.astype("<f4").tobytes())

    @classmethod
    def from_bytes(cls, data, t0=-25e-6):
        n, rate, _ = struct.unpack_from("<IdI", data, 0)
        samples = np.frombuffer(data, dtype="<f4", count=n, offset=16).astype(float)
        return cls(samples, rate, t0)


def default_times(n=5000, rate=1e8, t0=None):
    """Sample times of a trigger-centred window (5000 points at 100 MS/s is +-25 us)."""
    if t0 is None:
        t0 = -0.5 * n / rate
    return t0 + np.arange(n) / rate


def response(params, t, modulate_offset=True):
    """Detector voltage at times ``t``.

    ``modulate_offset`` selects whether the amplitude modulation also scales
    the DC offset c (the two choices coincide for c = 0).
    """
    t = np.asarray(t, dtype=float)
    wt = params.omega_m * t
    carrier = params.A * np.cos(params.X * np.cos(wt) + params.P * np.sin(wt) + params.phi_r)
    mod = 1.0 - params.d * np.abs(np.cos(wt + math.atan2(params.X, params.P) - QUARTER_PI))
    if modulate_offset:
        return (carrier + params.c) * mod
    return carrier * mod + params.c


def jacobian(params, t, modulate_offset=True):
    """d response / d(X, P, phi_r, d), shape (len(t), 4)."""
    t = np.asarray(t, dtype=float)
    X, P, d = params.X, params.P, params.d
    wt = params.omega_m * t
    cw, sw = np.cos(wt), np.sin(wt)
    psi = X * cw + P * sw + params.phi_r
    carrier = params.A * np.cos(psi)
    dcarrier = -params.A * np.sin(psi)
    g = wt + math.atan2(X, P) - QUARTER_PI
    cg = np.cos(g)
    abscg = np.abs(cg)
    mod = 1.0 - d * abscg
    scaled = carrier + params.c if modulate_offset else carrier
    r2 = X * X + P * P
    # d|cos g|/d angle = -sign(cos g) sin g; d angle/dX = P/r2, d angle/dP = -X/r2
    dabs = -np.sign(cg) * np.sin(g)
    if r2 > 1e-24:
        dang_dX, dang_dP = P / r2, -X / r2
    else:
        dang_dX = dang_dP = 0.0
    J = np.empty((t.size, 4))
    J[:, 0] = dcarrier * cw * mod - scaled * d * dabs * dang_dX
    J[:, 1] = dcarrier * sw * mod - scaled * d * dabs * dang_dP
    J[:, 2] = dcarrier * mod
    J[:, 3] = -scaled * abscg
    return J


def synthesize_trace(params, noise_sigma=0.0, n=5000, rate=1e8, rng=None, t0=None,
                     modulate_offset=True):
    if noise_sigma < 0:
        raise DomainError("noise_sigma must be >= 0")
    t = default_times(n, rate, t0)
    clean = response(params, t, modulate_offset)
    if noise_sigma > 0:
        if rng is None:
            raise DomainError("rng required for noisy synthesis")
        clean = clean + rng.normal(0.0, noise_sigma, n)
    return Trace(clean, rate, float(t[0]))


# --- initial guess --------------------------------------------------------------

def _crossings(y, times, hysteresis):
    """Times where y changes sign, ignoring excursions smaller than ``hysteresis``."""
    big = np.flatnonzero(np.abs(y) > hysteresis)
    if big.size < 2:
        return np.array([])
    signs = np.sign(y[big])
    flips = np.flatnonzero(signs[1:] != signs[:-1])
    a, b = big[flips], big[flips + 1]
    out = []
    for i, j in zip(a, b):
        seg = y[i:j + 1]
        k = i + int(np.flatnonzero(np.sign(seg[1:]) != np.sign(seg[:-1]))[-1])
        y0, y1 = y[k], y[k + 1]
        frac = y0 / (y0 - y1) if y1 != y0 else 0.5
        out.append(times[k] + frac * (times[k + 1] - times[k]))
    return np.array(out)


def _grid_fit(trace_t, data, known, thetas, radii):
    """Best (phi_r, d) for every (theta, R) cell and the resulting residuals.

    Two closed-form candidates are scored per cell: phi_r from a 2-column
    linear solve with d = 0, and (phi_r, d) from a 5-column solve in which
    (cos phi, sin phi, d, d cos phi, d sin phi) are treated as free
    coefficients.  The relaxed solve is unreliable far from the optimum, so
    the better of the two is kept.  Returns (cost, phi, d), each shaped
    (len(thetas), len(radii)).
    """
    thetas = np.asarray(thetas, dtype=float)[:, None, None]
    radii = np.asarray(radii, dtype=float)[None, :, None]
    wt = known.omega_m * trace_t
    u = radii * np.cos(wt - thetas)
    cu, su = np.cos(u), np.sin(u)
    # atan2(X, P) with X = R cos theta, P = R sin theta
    m = np.abs(np.cos(wt + np.arctan2(np.cos(thetas), np.sin(thetas)) - QUARTER_PI))
    m = np.broadcast_to(m, u.shape)
    A, c = known.A, known.c
    rhs = data - c
    basis = np.stack([A * cu, -A * su, -c * m, -A * cu * m, A * su * m], axis=-1)
    bt = np.swapaxes(basis, -1, -2)
    gram = bt @ basis
    proj = bt @ rhs
    ridge = 1e-12 * np.trace(gram, axis1=-2, axis2=-1)[..., None, None] * np.eye(5)
    full = np.linalg.solve(gram + ridge, proj[..., None])[..., 0]
    flat = np.linalg.solve(gram[..., :2, :2] + ridge[..., :2, :2], proj[..., :2, None])[..., 0]
    phi_full = np.arctan2(full[..., 1], full[..., 0])
    # ideally (e, f, g) = d (1, cos phi, sin phi); project onto that direction
    d_full = 0.5 * (full[..., 2] + full[..., 3] * np.cos(phi_full)
                    + full[..., 4] * np.sin(phi_full))
    d_full = np.clip(d_full, 0.0, 0.95)
    phi_flat = np.arctan2(flat[..., 1], flat[..., 0])

    def cost(phi, d):
        model = (A * np.cos(u + phi[..., None]) + c) * (1.0 - d[..., None] * m)
        res = data - model
        return (res[..., None, :] @ res[..., :, None])[..., 0, 0]

    c_flat = cost(phi_flat, np.zeros_like(phi_flat))
    c_full = cost(phi_full, d_full)
    use_full = c_full < c_flat
    return (np.where(use_full, c_full, c_flat), np.where(use_full, phi_full, phi_flat),
            np.where(use_full, d_full, 0.0))


def _symmetry_phase(y, times, omega, bins=90):
    """Mechanical phase theta (mod pi) from the time-reversal symmetry of the trace.

    R cos(wt - theta) is even about w t = theta (mod pi), so the normalised
    autoconvolution sum_t y(t) y(2s - t) is largest at those centres s.  The
    autoconvolution is folded onto w s mod pi and the best bin refined with a
    parabola.
    """
    n = y.size
    yc = y - y.mean()
    size = 1 << int(math.ceil(math.log2(2 * n)))
    spec = np.fft.rfft(yc, size)
    conv = np.fft.irfft(spec * spec, size)[:2 * n - 1]
    k = np.arange(2 * n - 1)
    overlap = np.minimum(k + 1, 2 * n - 1 - k)
    keep = overlap >= n // 2
    centres = times[0] + 0.5 * k[keep] * (times[1] - times[0])
    score = conv[keep] / overlap[keep]
    phase = np.mod(omega * centres, math.pi)
    idx = np.minimum((phase / math.pi * bins).astype(int), bins - 1)
    total = np.bincount(idx, score, bins)
    count = np.bincount(idx, None, bins)
    folded = np.where(count > 0, total / np.maximum(count, 1), -np.inf)
    j = int(np.argmax(folded))
    y0, y1, y2 = folded[j - 1], folded[j], folded[(j + 1) % bins]
    den = y0 - 2 * y1 + y2
    shift = 0.5 * (y0 - y2) / den if np.isfinite(den) and den != 0 else 0.0
    return ((j + 0.5 + shift) * math.pi / bins) % math.pi


@dataclass(frozen=True)
class Guess:
    params: TraceModelParams
    candidates: tuple = ()   # (cost, params) at other local minima of the grid, best first
    cells: int = 0
    evaluations: int = 0     # residual norms computed, two per cell
    crossings: int = 0


GRID_THETA = 16
GRID_SECOND = 8


def initial_guess(trace, known, theta_offset=0.0):
    """Starting point for the fit from a small residual grid.

    The fringe count fixes the modulation depth R = hypot(X, P) to within
    one fringe and the time-reversal symmetry of the fringe pattern
    fixes the mechanical phase theta modulo pi.  A 16 x 8 grid over (theta, R)
    around those estimates is then scored with phi_r and d solved by linear
    least squares (see _grid_fit).
    """
    t = trace.times
    y = trace.samples
    w = known.omega_m
    base = TraceModelParams(known.A, known.c, w)
    if not np.all(np.isfinite(y)):
        raise DomainError("trace contains non-finite samples")
    if np.ptp(y) < 1e-9 * known.A:
        return Guess(base, (), 0, 0, 0)

    cross = _crossings((y - known.c) / known.A, t, 0.15)
    half_periods = (t[-1] - t[0]) * w / math.pi
    per_half = cross.size / half_periods
    counted = cross.size >= 4 and per_half >= 1.0
    if counted:
        # each half period sweeps the phase over 2R, crossing a level every pi
        r_hat = 0.5 * math.pi * per_half
        r_lo, r_hi = max(0.05, r_hat - 0.5 * math.pi - 0.3), r_hat + 0.5 * math.pi + 0.3
        theta_hat = _symmetry_phase(y, t, w) + theta_offset
        width = min(0.5 * math.pi, max(0.15, 2.0 / r_hat))
        thetas = theta_hat + np.linspace(-width, width, GRID_THETA)
        radii = np.linspace(r_lo, r_hi, GRID_SECOND)
    else:
        # too few fringes to count: geometric spacing covers the near-sinusoidal regime
        thetas = theta_offset + np.linspace(0.0, math.pi, GRID_THETA, endpoint=False)
        radii = np.geomspace(0.05, math.pi + 0.3, GRID_SECOND)

    # the grid only needs ~16 samples per fastest fringe
    dt = t[1] - t[0]
    stride = max(1, int(2 * math.pi / (16 * radii[-1] * w * dt)))
    cost, phis, ds = _grid_fit(t[::stride], y[::stride], known, thetas, radii)
    cells = {}
    for i, theta in enumerate(thetas):
        for j, R in enumerate(radii):
            # theta is the angle of (X, P) measured from the X axis
            cells[i, j] = replace(base, X=float(R * math.cos(theta)),
                                  P=float(R * math.sin(theta)), phi_r=float(phis[i, j]),
                                  d=float(ds[i, j]))
    minima = _grid_minima(cost, periodic_rows=not counted)
    best = minima[0]
    others = tuple((float(cost[ij]), cells[ij]) for ij in minima[1:])
    return Guess(cells[best], others, cost.size, 2 * cost.size, int(cross.size))


def _grid_minima(cost, periodic_rows):
    """Cells no larger than their 8 neighbours, lowest first."""
    rows, cols = cost.shape
    found = []
    for i in range(rows):
        for j in range(cols):
            nb = []
            for a in (-1, 0, 1):
                for b in (-1, 0, 1):
                    if (a, b) == (0, 0) or not 0 <= j + b < cols:
                        continue
                    ii = i + a
                    if periodic_rows:
                        ii %= rows
                    elif not 0 <= ii < rows:
                        continue
                    nb.append(cost[ii, j + b])
            if cost[i, j] <= min(nb):
                found.append((cost[i, j], i, j))
    found.sort()
    return [(i, j) for _, i, j in found]


# --- fitting ------------------------------------------------------------------------

@dataclass
class FitResult:
    params: TraceModelParams
    rms_residual: float
    iterations: int
    converged: bool
    message: str = ""
    cost_history: list = field(default_factory=list)


def _lm(trace_t, data, start, modulate_offset, max_iter, lam0, reduced_theta=None):
    """Damped Gauss-Newton with Marquardt scaling.

    With ``reduced_theta`` set the direction of (X, P) is frozen and only
    (R, phi_r, d) move; used when the start has X = P = 0.
    """
    def unpack(vec):
        if reduced_theta is None:
            return start.with_free(vec)
        R, phi, d = (float(v) for v in vec)
        return replace(start, X=R * math.cos(reduced_theta), P=R * math.sin(reduced_theta),
                       phi_r=phi, d=d)

    def jac(params, vec):
        J = jacobian(params, trace_t, modulate_offset)
        if reduced_theta is None:
            return J
        ct, st = math.cos(reduced_theta), math.sin(reduced_theta)
        return np.column_stack([J[:, 0] * ct + J[:, 1] * st, J[:, 2], J[:, 3]])

    def clip(vec):
        vec = vec.copy()
        vec[-1] = min(max(vec[-1], 0.0), 0.999)
        return vec

    if reduced_theta is None:
        vec = start.free_vector()
    else:
        vec = np.array([start.amplitude, start.phi_r, start.d])
    params = unpack(vec)
    r = response(params, trace_t, modulate_offset) - data
    cost = 0.5 * float(r @ r)
    history = [cost]
    lam = lam0
    floor = 1e-30 * data.size * start.A ** 2
    converged, message = False, "max iterations"
    it = 0
    for it in range(1, max_iter + 1):
        J = jac(params, vec)
        g = J.T @ r
        H = J.T @ J
        scale = np.diag(H).copy()
        scale[scale <= 0] = 1.0
        improved = False
        while lam < 1e16:
            try:
                step = -np.linalg.solve(H + lam * np.diag(scale), g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            trial_vec = clip(vec + step)
            trial = unpack(trial_vec)
            r_new = response(trial, trace_t, modulate_offset) - data
            new_cost = 0.5 * float(r_new @ r_new)
            if new_cost <= cost:
                improved = True
                break
            lam *= 10.0
        if not improved:
            converged = True
            message = "no further decrease"
            break
        step_norm = float(np.linalg.norm(trial_vec - vec))
        rel = (cost - new_cost) / max(cost, 1e-300)
        vec, params, r, cost = trial_vec, trial, r_new, new_cost
        history.append(cost)
        lam *= 0.3
        if cost <= floor:
            converged, message = True, "cost at floor"
            break
        if rel < 1e-10 or step_norm < 1e-10:
            converged, message = True, "converged"
            break
    return params, cost, it, converged, message, history


def fit_trace(trace, known, guess=None, modulate_offset=True, max_iter=200, lam0=1e-3):
    """Fit (X, P, phi_r, d) to one trace; returns a FitResult in the canonical branch."""
    if guess is None:
        guess = initial_guess(trace, known)
    start = guess.params if isinstance(guess, Guess) else guess
    start = replace(start, A=known.A, c=known.c, omega_m=known.omega_m)
    vec = start.free_vector()
    if not np.all(np.isfinite(vec)):
        raise DomainError("initial guess must be finite")
    t = trace.times
    data = trace.samples
    if not np.all(np.isfinite(data)):
        raise DomainError("trace contains non-finite samples")
    # along +P, atan2(X, P) = 0 for every R > 0, matching the atan2(0, 0) = 0 convention
    reduced = 0.5 * math.pi if start.amplitude == 0 else None
    params, cost, it, converged, message, history = _lm(t, data, start, modulate_offset,
                                                       max_iter, lam0, reduced)
    rms = math.sqrt(2 * cost / data.size)
    return FitResult(params.canonical(), rms, it, converged, message, history)


def estimate_noise(samples):
    """White-noise level from second differences (the signal is smooth on the sample scale)."""
    d2 = np.diff(np.asarray(samples, dtype=float), 2)
    return float(np.median(np.abs(d2)) / 0.6745 / math.sqrt(6.0))


RESTART_OFFSETS = (0.0, 0.5 * math.pi, 0.25 * math.pi, -0.25 * math.pi)


def robust_fit(trace, known, modulate_offset=True, rel_tol=3.0, starts=6):
    """fit_trace with restarts.

    While the residual stays well above the noise floor estimated from the
    trace, the fit is restarted from the other local minima of the guess
    grid and then from grids with the theta window rotated; the
    lowest-residual result is returned.
    """
    floor = max(estimate_noise(trace.samples), 1e-12 * known.A)
    best = None
    for offset in RESTART_OFFSETS:
        guess = initial_guess(trace, known, offset)
        for start in [guess.params] + [p for _, p in guess.candidates[:starts - 1]]:
            result = fit_trace(trace, known, start, modulate_offset)
            if best is None or result.rms_residual < best.rms_residual:
                best = result
            if best.rms_residual <= rel_tol * floor:
                return best
    return best


@dataclass(frozen=True)
class BatchItem:
    point: PhaseSpacePoint | None
    fit: FitResult | None
    ok: bool
    flag: str = ""


def batch_fit(traces, known, threads=1, modulate_offset=True):
    """Fit every trace; failures become flagged entries, never exceptions.

    Points are returned in readout-range units (one readout range is pi
    radians of readout phase).
    """
    traces = list(traces)
    if not traces:
        raise DomainError("empty batch")

    def one(trace):
        try:
            result = robust_fit(trace, known, modulate_offset)
        except Exception as exc:  # isolation contract: one bad trace never aborts the batch
            return BatchItem(None, None, False, f"{type(exc).__name__}: {exc}")
        pt = convert(PhaseSpacePoint(result.params.X, result.params.P, Unit.RADIANS),
                     Unit.READOUT_RANGE)
        flag = "" if result.converged else f"not converged: {result.message}"
        return BatchItem(pt, result, result.converged, flag)

    if threads <= 1:
        return [one(tr) for tr in traces]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, traces))
