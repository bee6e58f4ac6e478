"""Monte-Carlo emulation of the click-conditioned experiment.

Driven thermal states are sampled as isotropic Gaussians in phase space (a
Rayleigh-distributed norm with a uniform angle), and each sample survives a
click event with probability filter(x) / sup filter.  Only the position
enters the acceptance, so momentum statistics are left untouched.

Random streams: worker ``w`` of a run seeded with ``seed`` draws from a
Philox generator keyed with ``seed XOR w``.  A run with one worker is
therefore bit-reproducible from the seed alone, and a run with k workers is
reproducible for that k.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import signal

from .core import (DomainError, NumericalError, PhaseSpacePoint, ThermalState, Unit,
                   conversion_factor)
from .twoport import _as_event, filter_bound

MASK64 = (1 << 64) - 1


class StarvationError(NumericalError):
    pass


def make_rng(seed, worker=0):
    if seed is None:
        raise DomainError("a seed is required")
    return np.random.Generator(np.random.Philox(key=(int(seed) ^ int(worker)) & MASK64))


@dataclass(frozen=True)
class DriveConfig:
    sigma: float
    seed: int = 0
    unit: Unit = Unit.QUANTUM_NOISE

    def __post_init__(self):
        if not (self.sigma > 0 and math.isfinite(self.sigma)):
            raise DomainError(f"sigma must be > 0, got {self.sigma}")
        object.__setattr__(self, "unit", Unit(self.unit))


def drive_thermal_state(sigma_qn):
    """Thermal state whose position spread matches a drive of std sigma (quantum-noise units)."""
    nbar = sigma_qn ** 2 - 0.5
    if nbar < 0:
        raise DomainError("drive narrower than the ground state")
    return ThermalState(nbar)


def sample_drive(cfg, rng, size=None):
    """One PhaseSpacePoint, or (x, p) arrays when ``size`` is given."""
    r = rng.rayleigh(cfg.sigma, size)
    theta = rng.uniform(0.0, 2 * math.pi, size)
    x, p = r * np.cos(theta), r * np.sin(theta)
    if size is None:
        return PhaseSpacePoint(float(x), float(p), cfg.unit)
    return x, p


def acceptance_probability(event, cfg, x):
    """filter(x) / B with B the analytic supremum, i.e. cos^2m(h) sin^2n(h)."""
    event = _as_event(event)
    if filter_bound(event, cfg) == 0:
        return np.zeros_like(np.asarray(x, dtype=float))
    half = 0.5 * (cfg.mu * np.asarray(x, dtype=float) - cfg.phi)
    return np.cos(half) ** (2 * event.m) * np.sin(half) ** (2 * event.n)


def click_accept(event, cfg, x, rng):
    return bool(rng.random() < acceptance_probability(event, cfg, x))


@dataclass
class ConditionedEnsemble:
    event: object
    x: np.ndarray
    p: np.ndarray
    attempts: int
    unit: Unit = Unit.QUANTUM_NOISE
    meta: dict = field(default_factory=dict)

    @property
    def accepted(self):
        return int(self.x.size)

    @property
    def acceptance_rate(self):
        return self.accepted / self.attempts if self.attempts else 0.0

    @property
    def points(self):
        return [PhaseSpacePoint(float(a), float(b), self.unit) for a, b in zip(self.x, self.p)]

    def write_csv(self, path, header_lines=()):
        with open(path, "w", newline="\n") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            fh.write(f"# event={self.event} unit={self.unit.value} attempts={self.attempts}"
                     f" accepted={self.accepted}\n")
            fh.write("x,p\n")
            for a, b in zip(self.x.tolist(), self.p.tolist()):
                fh.write(f"{a!r},{b!r}\n")


def _worker(event, cfg, drive, target, rng, to_qn, max_attempts, min_rate, keep_drive=False):
    xs, ps, all_p = [], [], []
    got = attempts = 0
    batch = 4096
    while got < target:
        x, p = sample_drive(drive, rng, batch)
        u = rng.random(batch)
        keep = u < acceptance_probability(event, cfg, x * to_qn)
        idx = np.flatnonzero(keep)
        need = target - got
        if idx.size >= need:
            idx = idx[:need]
            used = int(idx[-1]) + 1
        else:
            used = batch
        attempts += used
        if keep_drive:
            all_p.append(p[:used])
        xs.append(x[idx])
        ps.append(p[idx])
        got += idx.size
        if got < target and attempts >= max_attempts and got < min_rate * attempts:
            raise StarvationError("acceptance rate too low",
                                  {"attempts": attempts, "accepted": got})
        rate = max(got / attempts, 1e-6)
        batch = int(min(1 << 20, max(4096, 1.2 * (target - got) / rate)))
    drive_p = np.concatenate(all_p) if keep_drive else None
    return np.concatenate(xs), np.concatenate(ps), attempts, drive_p


def run_ensemble(event, cfg, drive, target_accepted, rng=None, threads=1, constants=None,
                 max_attempts=10 ** 8, min_rate=1e-9, keep_drive=False):
    """Sample the drive until ``target_accepted`` points pass the click filter.

    With ``rng`` given the run uses that single stream; otherwise worker
    streams are derived from ``drive.seed`` (see module docstring).
    ``keep_drive`` stores the momenta of every attempt, accepted or not, in
    ``meta["drive_p"]``: the unconditioned record of the same run.
    """
    event = _as_event(event)
    if target_accepted < 1:
        raise DomainError("target_accepted must be >= 1")
    to_qn = conversion_factor(drive.unit, Unit.QUANTUM_NOISE, constants)
    if rng is not None or threads <= 1:
        rng = rng if rng is not None else make_rng(drive.seed, 0)
        x, p, attempts, drive_p = _worker(event, cfg, drive, target_accepted, rng, to_qn,
                                          max_attempts, min_rate, keep_drive)
    else:
        shares = [target_accepted // threads + (w < target_accepted % threads)
                  for w in range(threads)]
        jobs = [(w, s) for w, s in enumerate(shares) if s > 0]
        with ThreadPoolExecutor(max_workers=len(jobs)) as pool:
            futures = [pool.submit(_worker, event, cfg, drive, s, make_rng(drive.seed, w), to_qn,
                                   max_attempts, min_rate, keep_drive) for w, s in jobs]
            parts = [f.result() for f in futures]
        x = np.concatenate([part[0] for part in parts])
        p = np.concatenate([part[1] for part in parts])
        attempts = sum(part[2] for part in parts)
        drive_p = np.concatenate([part[3] for part in parts]) if keep_drive else None
    meta = {"seed": drive.seed, "threads": max(1, threads)}
    if keep_drive:
        meta["drive_p"] = drive_p
    return ConditionedEnsemble(event, x, p, attempts, drive.unit, meta=meta)


@dataclass(frozen=True)
class Histograms:
    x_edges: np.ndarray
    x_density: np.ndarray
    p_edges: np.ndarray
    p_density: np.ndarray
    xp_density: np.ndarray  # indexed [x_bin, p_bin]

    @property
    def x_centers(self):
        return 0.5 * (self.x_edges[1:] + self.x_edges[:-1])

    @property
    def p_centers(self):
        return 0.5 * (self.p_edges[1:] + self.p_edges[:-1])


def histogram(ensemble, n_bins, range_=None):
    """Density-normalised X, P and joint histograms.

    ``range_`` is a (lo, hi) pair used for both axes; defaults to the
    symmetric extent of the data.
    """
    if ensemble.accepted == 0:
        raise DomainError("empty ensemble")
    if range_ is None:
        lim = float(max(np.abs(ensemble.x).max(), np.abs(ensemble.p).max()))
        range_ = (-lim, lim)
    xd, xe = np.histogram(ensemble.x, bins=n_bins, range=range_, density=True)
    pd, pe = np.histogram(ensemble.p, bins=n_bins, range=range_, density=True)
    xy, _, _ = np.histogram2d(ensemble.x, ensemble.p, bins=n_bins, range=[range_, range_],
                              density=True)
    return Histograms(xe, xd, pe, pd, xy)


# --- analysis helpers ---------------------------------------------------------

def count_maxima(density, rel_height=0.5, prominence=0.1):
    """Number of peaks above ``rel_height`` of the global maximum.

    Peaks must stand out by ``prominence`` (relative to the maximum) so that
    shot noise on a broad lobe is not counted twice.
    """
    density = np.asarray(density, dtype=float)
    top = density.max()
    idx, _ = signal.find_peaks(np.concatenate([[0.0], density, [0.0]]),
                               height=rel_height * top, prominence=prominence * top)
    return int(idx.size)


def dominant_frequency(centers, density, background=None, pad=64):
    """Spatial frequency (cycles per unit) of the strongest fringe component.

    The smooth envelope is removed by subtracting ``background`` evaluated at
    the bin centres (typically the unconditioned drive density); the peak of
    the zero-padded spectrum is refined with a parabola.
    """
    centers = np.asarray(centers, dtype=float)
    resid = np.asarray(density, dtype=float)
    if background is not None:
        resid = resid - background(centers)
    resid = resid - resid.mean()
    n = resid.size * pad
    spec = np.abs(np.fft.rfft(resid, n))
    freqs = np.fft.rfftfreq(n, d=centers[1] - centers[0])
    k = 1 + int(np.argmax(spec[1:]))
    if 1 <= k < spec.size - 1:
        y0, y1, y2 = spec[k - 1], spec[k], spec[k + 1]
        den = y0 - 2 * y1 + y2
        shift = 0.5 * (y0 - y2) / den if den != 0 else 0.0
    else:
        shift = 0.0
    return float(freqs[k] + shift * (freqs[1] - freqs[0]))
