"""Cahn-Hilliard solver with degenerate mobility for spinodal decomposition.

The concentration field c (molar fraction) evolves by

    dc/dt = div{ M c(1-c) grad[ mu ] },
    mu    = RT[ln c - ln(1-c)] + omega (1-2c) - eps lap(c),

on a no-flux rectangular grid. The update is a conservative finite-volume
scheme: face fluxes use the arithmetic mean of the adjacent cells for the
degenerate mobility, boundary faces carry zero flux, so the total mass
telescopes exactly.

Explicit substepping with dt = min(dt_max, safety*dx^4/(16*M_eff*eps)),
M_eff = M/4, safety = 1/2 (the fourth-order interface term dominates the
stability limit).

Internally the solver works with d = c - 1/2. All arithmetic is arranged
so that negating d reproduces the c <-> 1-c symmetry of the free energy
exactly in floating point: logs of (1/2+d) and (1/2-d) swap, the face
mobility is 1/4 - d_face^2, and differences negate bitwise. Recorded
frames therefore mirror to within a single rounding of the final 1/2+d.
"""

import math
import warnings
from dataclasses import dataclass, asdict

import numpy as np

from .tensorio import Trajectory


class NumericalInstabilityError(RuntimeError):
    """The concentration left the physical band before clamping."""


@dataclass
class SpinodalParams:
    omega: float = 0.27397
    epsilon: float = 0.1682
    mobility: float = 1.0
    rt: float = 0.1
    c0: float = 0.5
    noise_amp: float = 0.05
    dx: float = 1.0
    dy: float = 1.0
    grid: tuple = (64, 64)
    seed: int = 0
    frame_interval: float = 1500.0
    frames_to_record: int = 100
    dt_max: float = 1.0
    clamp_margin: float = 1e-6
    safety: float = 0.5

    def __post_init__(self):
        for name in ("omega", "epsilon", "mobility", "rt", "dx", "dy",
                     "frame_interval", "dt_max"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 < self.c0 < 1.0:
            raise ValueError("c0 must lie in (0, 1)")
        if self.omega <= 2.0 * self.rt:
            raise ValueError(
                f"quench condition violated: omega = {self.omega} must exceed "
                f"2*RT = {2 * self.rt} for a spinodal at c = 1/2"
            )
        if self.noise_amp < 0:
            raise ValueError("noise_amp must be >= 0")
        if self.frames_to_record < 1:
            raise ValueError("frames_to_record must be >= 1")
        h, w = self.grid
        if h < 2 or w < 2:
            raise ValueError("grid must be at least 2x2")


@dataclass
class ConcentrationField:
    """Molar-fraction grid plus a counter of log-safety clamp events."""

    c: np.ndarray
    clamp_events: int = 0

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=np.float64)
        if self.c.ndim != 2:
            raise ValueError("concentration field must be 2D")

    @property
    def shape(self):
        return self.c.shape

    def mass(self, dx=1.0, dy=1.0):
        return float(self.c.sum() * dx * dy)


def stable_dt(params):
    """Explicit substep size: min(dt_max, safety*h^4/(16*M_eff*eps))."""
    h = min(params.dx, params.dy)
    m_eff = params.mobility / 4.0
    return min(params.dt_max, params.safety * h ** 4 / (16.0 * m_eff * params.epsilon))


def init_concentration(params):
    """Uniform quench c0 plus seeded uniform noise, mean-corrected to c0."""
    h, w = params.grid
    rng = np.random.default_rng(params.seed)
    c = params.c0 + rng.uniform(-params.noise_amp, params.noise_amp, size=(h, w))
    c += params.c0 - c.mean()
    np.clip(c, params.clamp_margin, 1.0 - params.clamp_margin, out=c)
    return ConcentrationField(c)


def _noflux_laplacian_d(d, dx, dy):
    """5-point laplacian with edge-replicated ghosts, built from face diffs."""
    lap = np.zeros_like(d)
    fr = (d[1:, :] - d[:-1, :]) / (dy * dy)
    lap[:-1, :] += fr
    lap[1:, :] -= fr
    fc = (d[:, 1:] - d[:, :-1]) / (dx * dx)
    lap[:, :-1] += fc
    lap[:, 1:] -= fc
    return lap


def chemical_potential(c, params):
    """mu = RT[ln c - ln(1-c)] + omega(1-2c) - eps*lap(c), no-flux stencil."""
    arr = c.c if isinstance(c, ConcentrationField) else np.asarray(c, dtype=np.float64)
    d = arr - 0.5
    mu = params.rt * (np.log(0.5 + d) - np.log(0.5 - d))
    mu += (-2.0 * params.omega) * d
    mu -= params.epsilon * _noflux_laplacian_d(d, params.dx, params.dy)
    return mu


def free_energy(c, params):
    """Discrete free energy: chemical density plus face-based gradient terms."""
    arr = c.c if isinstance(c, ConcentrationField) else np.asarray(c, dtype=np.float64)
    d = arr - 0.5
    a = 0.5 + d
    b = 0.5 - d
    f = params.rt * (a * np.log(a) + b * np.log(b)) + params.omega * (0.25 - d * d)
    gy = (d[1:, :] - d[:-1, :]) / params.dy
    gx = (d[:, 1:] - d[:, :-1]) / params.dx
    grad = 0.5 * params.epsilon * (np.sum(gy * gy) + np.sum(gx * gx))
    return float((np.sum(f) + grad) * params.dx * params.dy)


class _ChWorkspace:
    """Preallocated scratch for the inner substep loop."""

    def __init__(self, shape):
        h, w = shape
        self.lap = np.empty((h, w))
        self.mu = np.empty((h, w))
        self.ta = np.empty((h, w))
        self.tb = np.empty((h, w))
        self.fr = np.empty((h - 1, w))
        self.fc = np.empty((h, w - 1))
        self.mfr = np.empty((h - 1, w))
        self.mfc = np.empty((h, w - 1))
        self.div = np.empty((h, w))


def _substep(d, dt, params, ws):
    """One conservative forward-Euler substep on d = c - 1/2, in place.

    Returns the number of clamp events. Every operation here is either
    invariant or exactly sign-flipped under d -> -d, which preserves the
    c <-> 1-c mirror symmetry bit-for-bit.
    """
    rt, om, eps, mob = params.rt, params.omega, params.epsilon, params.mobility
    inv_dx, inv_dy = 1.0 / params.dx, 1.0 / params.dy
    lap, mu, ta, tb = ws.lap, ws.mu, ws.ta, ws.tb
    fr, fc, mfr, mfc, div = ws.fr, ws.fc, ws.mfr, ws.mfc, ws.div

    # chemical potential
    lap[:, :] = 0.0
    np.subtract(d[1:, :], d[:-1, :], out=fr)
    fr *= inv_dy * inv_dy
    lap[:-1, :] += fr
    lap[1:, :] -= fr
    np.subtract(d[:, 1:], d[:, :-1], out=fc)
    fc *= inv_dx * inv_dx
    lap[:, :-1] += fc
    lap[:, 1:] -= fc
    np.add(0.5, d, out=ta)
    np.log(ta, out=ta)
    np.subtract(0.5, d, out=tb)
    np.log(tb, out=tb)
    np.subtract(ta, tb, out=mu)
    mu *= rt
    np.multiply(d, 2.0 * om, out=ta)
    mu -= ta
    lap *= eps
    mu -= lap

    # face fluxes with degenerate mobility on the arithmetic face mean;
    # c_face(1-c_face) = 1/4 - d_face^2
    np.add(d[1:, :], d[:-1, :], out=mfr)
    mfr *= 0.5
    np.multiply(mfr, mfr, out=mfr)
    np.subtract(0.25, mfr, out=mfr)
    np.subtract(mu[1:, :], mu[:-1, :], out=fr)
    fr *= mfr
    fr *= -mob * inv_dy * inv_dy  # flux, plus the face spacing of div
    np.add(d[:, 1:], d[:, :-1], out=mfc)
    mfc *= 0.5
    np.multiply(mfc, mfc, out=mfc)
    np.subtract(0.25, mfc, out=mfc)
    np.subtract(mu[:, 1:], mu[:, :-1], out=fc)
    fc *= mfc
    fc *= -mob * inv_dx * inv_dx

    # c_t = -div(J); zero-flux boundary faces make the sum telescope
    div[:, :] = 0.0
    div[:-1, :] += fr
    div[1:, :] -= fr
    div[:, :-1] += fc
    div[:, 1:] -= fc
    div *= dt
    d -= div
    bound = 0.5 - params.clamp_margin
    mx = max(d.max(), -d.min())
    if not mx <= 0.5 + 0.05:  # also catches NaN
        raise NumericalInstabilityError(
            f"|c - 1/2| reached {mx:g} before clamping; reduce dt_max"
        )
    events = 0
    if mx > bound:
        events = int(np.count_nonzero(np.abs(d) > bound))
        np.clip(d, -bound, bound, out=d)
    return events


def ch_step(cfield, params, dt):
    """One conservative update step; returns a new ConcentrationField."""
    if dt <= 0 or dt > stable_dt(params) * (1 + 1e-12):
        raise ValueError(f"dt = {dt} exceeds the stability bound {stable_dt(params):g}")
    d = cfield.c - 0.5
    ws = _ChWorkspace(d.shape)
    events = _substep(d, dt, params, ws)
    return ConcentrationField(0.5 + d, cfield.clamp_events + events)


def simulate_spinodal(params, initial=None):
    """Run a spinodal-decomposition trajectory (first frame = the quench).

    Advances frame_interval time units between recorded frames using equal
    explicit substeps no larger than stable_dt(params).
    """
    cfield = initial if initial is not None else init_concentration(params)
    if cfield.shape != tuple(params.grid):
        raise ValueError("initial field does not match params.grid")
    d = cfield.c - 0.5
    h, w = d.shape
    ws = _ChWorkspace((h, w))
    dt_target = stable_dt(params)
    n_sub = max(1, math.ceil(params.frame_interval / dt_target))
    dt = params.frame_interval / n_sub
    frames = np.empty((params.frames_to_record, h, w))
    frames[0] = 0.5 + d
    events = cfield.clamp_events
    for f in range(1, params.frames_to_record):
        for _ in range(n_sub):
            events += _substep(d, dt, params, ws)
        frames[f] = 0.5 + d
    if events:
        warnings.warn(
            f"{events} log-safety clamp events during the run; dt may be too large",
            RuntimeWarning,
        )
    traj = Trajectory(
        frames=frames,
        frame_interval=params.frame_interval,
        sim_kind="spinodal",
        rng_seed=params.seed,
        params=asdict(params),
    )
    traj.params["clamp_events"] = events
    return traj
