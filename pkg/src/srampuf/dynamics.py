"""Two-node power-up transients of the cell latch under a ramping supply.

The state (vq, vqb) obeys C*dv/dt = pull-up minus pull-down current at each
node, with the supply ramping linearly from 0 to vdd_final over ramp_time and
holding for hold_time.  Integration is fixed-step classical Runge-Kutta.

Thermal noise is modeled as two zero-order-hold voltage sources in series
with the cross-coupling: the gates driven by a node see the node voltage plus
a noise value that is resampled every ``update_interval`` from a keyed
counter stream, with sigma = sigma_override or sqrt(kB*T/C).

Decision semantics: the run is decided at the first instant (including t=0)
at which |vq - vqb| >= decision_threshold, toward the sign of the difference
at that instant.  A skewed initial condition whose separation already meets
the threshold therefore decides immediately; this makes a vdd/2 initial skew
act as a forced-outcome probe, which is exactly how the saturation pinning of
the separatrix search and the matched/mismatched skew test use it.  If the
separation never reaches the threshold by the end of hold_time the outcome is
Undecided; there is no tie-breaking.

All states are clamped to the physical rails [0, vdd_final] after each step.
Every simulation is a pure function of (cell, config, stream key): results do
not depend on batching, chunking or thread scheduling.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.constants import Boltzmann

from . import rng
from .device import CellDevices, TechnologyProfile, cell_devices, node_currents
from .errors import IntegrationError, NumericError, ParameterDomainError
from .variability import CellSample

UNDECIDED, DECIDED_ZERO, DECIDED_ONE = -1, 0, 1  # internal outcome codes


class Suv(Enum):
    """Logic state a cell settles into on power-up."""

    ZERO = "0"
    ONE = "1"
    UNDECIDED = "undecided"


@dataclass(frozen=True)
class SuvOutcome:
    suv: Suv
    flip_vdd: float | None = None  # supply level at decision time


@dataclass(frozen=True)
class StateVector:
    vq: float
    vqb: float


@dataclass(frozen=True)
class NoiseModel:
    """Zero-order-hold thermal noise injected in the cross-coupling.

    sigma defaults to sqrt(kB*T/C) from the node capacitance and simulation
    temperature; ``sigma_override`` replaces it when set.  The stream is
    addressed by (master_seed, cell_id, trial), so trials never share noise.
    """

    sigma_override: float | None = None
    boltzmann_constant: float = Boltzmann
    update_interval: float | None = None  # None -> 10 * dt
    master_seed: int = 0
    cell_id: int = 0
    trial: int = 0

    def __post_init__(self):
        if self.sigma_override is not None and self.sigma_override < 0:
            raise ParameterDomainError("sigma_override must be >= 0")
        if self.update_interval is not None and self.update_interval <= 0:
            raise ParameterDomainError("update_interval must be > 0")

    def sigma(self, temp: float, profile: TechnologyProfile) -> float:
        if self.sigma_override is not None:
            return self.sigma_override
        if temp < 0:
            raise ParameterDomainError("temp must be >= 0 kelvin")
        return float(np.sqrt(self.boltzmann_constant * temp / profile.node_capacitance))


@dataclass(frozen=True)
class PowerUpConfig:
    vdd_final: float
    ramp_time: float = 10e-9
    hold_time: float = 10e-9
    dt: float = 1e-12
    temp: float = 300.15
    noise: NoiseModel | None = None
    decision_threshold: float | None = None  # None -> vdd_final / 2
    initial: StateVector = field(default_factory=lambda: StateVector(0.0, 0.0))
    trajectory_stride: int = 10

    def __post_init__(self):
        if not (np.isfinite(self.vdd_final) and self.vdd_final > 0):
            raise ParameterDomainError("vdd_final must be finite and > 0")
        if self.dt <= 0:
            raise ParameterDomainError("dt must be > 0")
        if self.ramp_time < 0 or self.hold_time < 0:
            raise ParameterDomainError("ramp_time and hold_time must be >= 0")
        if self.ramp_time + self.hold_time <= 0:
            raise ParameterDomainError("total simulated time must be > 0")
        thr = self.decision_threshold
        if thr is not None and not 0 < thr < self.vdd_final:
            raise ParameterDomainError("decision_threshold must lie in (0, vdd_final)")
        if not (np.isfinite(self.initial.vq) and np.isfinite(self.initial.vqb)):
            raise ParameterDomainError("initial state must be finite")
        if self.noise is not None:
            eff = self.noise.update_interval
            if eff is not None and eff < self.dt:
                raise ParameterDomainError("noise update_interval must be >= dt")
        if self.trajectory_stride < 1:
            raise ParameterDomainError("trajectory_stride must be >= 1")

    @property
    def threshold(self) -> float:
        return self.vdd_final / 2 if self.decision_threshold is None else self.decision_threshold


@dataclass(frozen=True)
class Trajectory:
    """Sampled (time, supply, node voltage) history of one simulation."""

    t: np.ndarray
    vdd: np.ndarray
    vq: np.ndarray
    vqb: np.ndarray

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("t,vdd,vq,vqb\n")
            for row in zip(self.t, self.vdd, self.vq, self.vqb):
                fh.write(",".join(f"{v:.9g}" for v in row) + "\n")


def derivative(profile: TechnologyProfile, cell: CellSample, state: StateVector,
               vdd: float, temp: float) -> tuple[float, float]:
    """Instantaneous (dvq/dt, dvqb/dt) of the free-running latch."""
    if vdd < 0:
        raise ParameterDomainError("vdd must be >= 0")
    if not (np.isfinite(state.vq) and np.isfinite(state.vqb)):
        raise NumericError("non-finite state")
    dev = cell_devices(profile, cell.dvth, temp)
    i_q, i_qb = node_currents(dev, state.vq, state.vqb, vdd)
    inv_c = 1.0 / profile.node_capacitance
    return float(i_q) * inv_c, float(i_qb) * inv_c


def sample_noise(model: NoiseModel, temp: float, profile: TechnologyProfile,
                 n: int) -> np.ndarray:
    """Draw ``n`` values from the model's own noise stream."""
    if n < 1:
        raise ParameterDomainError("n must be >= 1")
    key = rng.stream_key(model.master_seed, rng.PURPOSE_NOISE,
                         cell_id=model.cell_id, trial=model.trial)
    return model.sigma(temp, profile) * rng.normal(key, np.arange(n))


# -- batch integrator ---------------------------------------------------------


class _Workspace:
    """Preallocated scratch for one active-batch size."""

    def __init__(self, m: int):
        self.X = np.empty((8, m))
        self.E = np.empty((8, m))
        mk = lambda: np.empty(m)
        self.u3, self.u2, self.gq, self.gqb = mk(), mk(), mk(), mk()
        self.fq, self.fqb, self.tmp = mk(), mk(), mk()
        self.k1q, self.k1qb = mk(), mk()
        self.k2q, self.k2qb = mk(), mk()
        self.k3q, self.k3qb = mk(), mk()
        self.k4q, self.k4qb = mk(), mk()
        self.yq, self.yqb = mk(), mk()
        self.sum_q, self.sum_qb = mk(), mk()
        self.diff = mk()


def _stage(dev, inv_c, ws, vq, vqb, vdd, eps_q, eps_qb, out_q, out_qb):
    """Node derivatives at one RK stage, written into out_q/out_qb."""
    X, E = ws.X, ws.E
    inv_sn = 1.0 / dev.slope_n
    inv_sp = 1.0 / dev.slope_p
    if eps_q is None:
        gq, gqb = vq, vqb
    else:
        gq, gqb = ws.gq, ws.gqb
        np.add(vq, eps_q, out=gq)
        np.add(vqb, eps_qb, out=gqb)
    np.subtract(vdd, vq, out=ws.u3)    # vsd of T3
    np.subtract(vdd, vqb, out=ws.u2)   # vsd of T2
    # normalized overdrives: rows 0/1 T3, 2/3 T1, 4/5 T2, 6/7 T0
    np.subtract(vdd, gqb, out=X[0]); np.subtract(X[0], dev.vth3, out=X[0]); X[0] *= inv_sp
    np.multiply(ws.u3, inv_sp, out=X[1]); np.subtract(X[0], X[1], out=X[1])
    np.subtract(gqb, dev.vth1, out=X[2]); X[2] *= inv_sn
    np.multiply(vq, inv_sn, out=X[3]); np.subtract(X[2], X[3], out=X[3])
    np.subtract(vdd, gq, out=X[4]); np.subtract(X[4], dev.vth2, out=X[4]); X[4] *= inv_sp
    np.multiply(ws.u2, inv_sp, out=X[5]); np.subtract(X[4], X[5], out=X[5])
    np.subtract(gq, dev.vth0, out=X[6]); X[6] *= inv_sn
    np.multiply(vqb, inv_sn, out=X[7]); np.subtract(X[6], X[7], out=X[7])
    np.exp(X, out=E)
    np.log1p(E, out=E)
    np.multiply(E, E, out=E)  # squared softplus, slope factored into c below
    c_p = 0.5 * dev.beta_p * dev.slope_p * dev.slope_p
    c_n = 0.5 * dev.beta_n * dev.slope_n * dev.slope_n
    # i_q = c_p*(E0-E1)*(1+lam_p*u3) - c_n*(E2-E3)*(1+lam_n*vq)
    np.multiply(ws.u3, c_p * dev.lam_p, out=ws.fq); ws.fq += c_p
    np.subtract(E[0], E[1], out=ws.tmp); np.multiply(ws.tmp, ws.fq, out=out_q)
    np.multiply(vq, c_n * dev.lam_n, out=ws.fq); ws.fq += c_n
    np.subtract(E[2], E[3], out=ws.tmp); ws.tmp *= ws.fq
    out_q -= ws.tmp
    out_q *= inv_c
    np.multiply(ws.u2, c_p * dev.lam_p, out=ws.fqb); ws.fqb += c_p
    np.subtract(E[4], E[5], out=ws.tmp); np.multiply(ws.tmp, ws.fqb, out=out_qb)
    np.multiply(vqb, c_n * dev.lam_n, out=ws.fqb); ws.fqb += c_n
    np.subtract(E[6], E[7], out=ws.tmp); ws.tmp *= ws.fqb
    out_qb -= ws.tmp
    out_qb *= inv_c


def _take(dev: CellDevices, keep: np.ndarray) -> CellDevices:
    return CellDevices(
        vth0=dev.vth0[keep], vth1=dev.vth1[keep],
        vth2=dev.vth2[keep], vth3=dev.vth3[keep],
        beta_n=dev.beta_n, beta_p=dev.beta_p,
        lam_n=dev.lam_n, lam_p=dev.lam_p,
        slope_n=dev.slope_n, slope_p=dev.slope_p,
    )


def _integrate(profile: TechnologyProfile, dev: CellDevices,
               vq0: np.ndarray, vqb0: np.ndarray, cfg: PowerUpConfig,
               noise_keys: np.ndarray | None,
               record_stride: int = 0, run_to_end: bool = False):
    """Advance a batch of cells through one power-up.

    Returns (outcome codes, flip_vdd, trajectory samples or None).  With
    ``record_stride`` > 0 the batch must have size 1 and the full (t, vdd,
    vq, vqb) history is recorded; otherwise decided elements are retired
    early (their post-decision evolution cannot change the outcome).
    """
    m = vq0.size
    dt = cfg.dt
    vdd_final = cfg.vdd_final
    ramp = cfg.ramp_time
    thr = cfg.threshold
    inv_c = 1.0 / profile.node_capacitance
    n_steps = int(round((ramp + cfg.hold_time) / dt))
    band_lo, band_hi = -0.1 * vdd_final, 1.1 * vdd_final

    sigma = 0.0
    noise_every = 0
    if cfg.noise is not None:
        sigma = cfg.noise.sigma(cfg.temp, profile)
        interval = cfg.noise.update_interval
        noise_every = max(1, int(round((10 * dt if interval is None else interval) / dt)))
    use_noise = sigma > 0.0 and noise_keys is not None

    vdd_at = lambda t: vdd_final * (t / ramp) if t < ramp else vdd_final

    outcome = np.full(m, UNDECIDED, dtype=np.int8)
    flip_vdd = np.full(m, np.nan)
    vq = vq0.astype(np.float64).copy()
    vqb = vqb0.astype(np.float64).copy()
    alive = np.arange(m)
    already = np.zeros(m, dtype=bool)
    eps_q = eps_qb = None
    keys = noise_keys if use_noise else None
    ws = _Workspace(m)
    samples = [] if record_stride > 0 else None
    if record_stride > 0 and m != 1:
        raise ParameterDomainError("trajectory recording requires a single-cell batch")

    # instant decision on the initial separation (t = 0)
    d0 = vq - vqb
    hit = np.abs(d0) >= thr
    if hit.any():
        v0 = vdd_at(0.0)
        outcome[hit] = np.where(d0[hit] > 0, DECIDED_ONE, DECIDED_ZERO)
        flip_vdd[hit] = v0
        already |= hit

    retire = not run_to_end and samples is None
    if retire and already.any():
        keep = ~already
        alive = alive[keep]
        vq, vqb = vq[keep], vqb[keep]
        dev = _take(dev, keep)
        if keys is not None:
            keys = keys[keep]
        already = np.zeros(alive.size, dtype=bool)
        ws = _Workspace(alive.size)

    pending_retired = 0
    for step in range(n_steps):
        if alive.size == 0:
            break
        t = step * dt
        if samples is not None and step % record_stride == 0:
            samples.append((t, vdd_at(t), float(vq[0]), float(vqb[0])))
        if use_noise and step % noise_every == 0:
            upd = step // noise_every
            eps_q = sigma * rng.normal(keys, 2 * upd)
            eps_qb = sigma * rng.normal(keys, 2 * upd + 1)
        v0 = vdd_at(t)
        vh = vdd_at(t + 0.5 * dt)
        v1 = vdd_at(t + dt)
        with np.errstate(over="ignore", invalid="ignore"):
            _stage(dev, inv_c, ws, vq, vqb, v0, eps_q, eps_qb, ws.k1q, ws.k1qb)
            np.multiply(ws.k1q, 0.5 * dt, out=ws.yq); ws.yq += vq
            np.multiply(ws.k1qb, 0.5 * dt, out=ws.yqb); ws.yqb += vqb
            _stage(dev, inv_c, ws, ws.yq, ws.yqb, vh, eps_q, eps_qb, ws.k2q, ws.k2qb)
            np.multiply(ws.k2q, 0.5 * dt, out=ws.yq); ws.yq += vq
            np.multiply(ws.k2qb, 0.5 * dt, out=ws.yqb); ws.yqb += vqb
            _stage(dev, inv_c, ws, ws.yq, ws.yqb, vh, eps_q, eps_qb, ws.k3q, ws.k3qb)
            np.multiply(ws.k3q, dt, out=ws.yq); ws.yq += vq
            np.multiply(ws.k3qb, dt, out=ws.yqb); ws.yqb += vqb
            _stage(dev, inv_c, ws, ws.yq, ws.yqb, v1, eps_q, eps_qb, ws.k4q, ws.k4qb)
            np.add(ws.k2q, ws.k3q, out=ws.sum_q); ws.sum_q *= 2.0
            ws.sum_q += ws.k1q; ws.sum_q += ws.k4q; ws.sum_q *= dt / 6.0
            vq += ws.sum_q
            np.add(ws.k2qb, ws.k3qb, out=ws.sum_qb); ws.sum_qb *= 2.0
            ws.sum_qb += ws.k1qb; ws.sum_qb += ws.k4qb; ws.sum_qb *= dt / 6.0
            vqb += ws.sum_qb
        if not (band_lo <= vq.min() and vq.max() <= band_hi
                and band_lo <= vqb.min() and vqb.max() <= band_hi):
            raise IntegrationError(
                f"state left [{band_lo:.3g}, {band_hi:.3g}] V at t={t + dt:.3e} s; "
                f"reduce dt (currently {dt:.3e} s)")
        np.clip(vq, 0.0, vdd_final, out=vq)
        np.clip(vqb, 0.0, vdd_final, out=vqb)
        np.subtract(vq, vqb, out=ws.diff)
        newly = (np.abs(ws.diff) >= thr) & ~already
        if newly.any():
            idx = np.nonzero(newly)[0]
            outcome[alive[idx]] = np.where(ws.diff[idx] > 0, DECIDED_ONE, DECIDED_ZERO)
            flip_vdd[alive[idx]] = v1
            already |= newly
            pending_retired += idx.size
        if retire and pending_retired >= max(64, alive.size // 8):
            keep = ~already
            alive = alive[keep]
            vq, vqb = vq[keep].copy(), vqb[keep].copy()
            dev = _take(dev, keep)
            if keys is not None:
                keys = keys[keep]
            if eps_q is not None:
                eps_q, eps_qb = eps_q[keep], eps_qb[keep]
            already = np.zeros(alive.size, dtype=bool)
            ws = _Workspace(alive.size)
            pending_retired = 0
        elif retire and already.all():
            break
    if samples is not None:
        t_end = n_steps * dt
        if not samples or samples[-1][0] < t_end:
            samples.append((t_end, vdd_at(t_end), float(vq[0]), float(vqb[0])))
    return outcome, flip_vdd, samples


def batch_powerup(profile: TechnologyProfile, dvth: np.ndarray, cfg: PowerUpConfig,
                  *, initial_vq=None, initial_vqb=None,
                  cell_ids=None, trials=None):
    """Power up a batch of cells (rows of ``dvth``) in one vectorized run.

    ``initial_vq``/``initial_vqb`` default to the config's initial state,
    broadcast over the batch.  With noise enabled, per-element streams are
    keyed by (cfg.noise.master_seed, cell_ids, trials).  Returns (outcome
    codes, flip_vdd): code 0 is SUV '0', 1 is SUV '1', -1 undecided.
    """
    d = np.atleast_2d(np.asarray(dvth, dtype=np.float64))
    m = d.shape[0]
    vq0 = np.full(m, cfg.initial.vq) if initial_vq is None \
        else np.broadcast_to(np.asarray(initial_vq, dtype=np.float64), (m,))
    vqb0 = np.full(m, cfg.initial.vqb) if initial_vqb is None \
        else np.broadcast_to(np.asarray(initial_vqb, dtype=np.float64), (m,))
    keys = None
    if cfg.noise is not None:
        ids = np.full(m, cfg.noise.cell_id) if cell_ids is None else np.asarray(cell_ids)
        trs = np.full(m, cfg.noise.trial) if trials is None else np.asarray(trials)
        keys = np.atleast_1d(rng.stream_key(cfg.noise.master_seed, rng.PURPOSE_NOISE,
                                            cell_id=ids, trial=trs))
    dev = cell_devices(profile, d, cfg.temp)
    outcome, flip_vdd, _ = _integrate(profile, dev, vq0, vqb0, cfg, keys)
    return outcome, flip_vdd


def _single_outcome(code: int, flip: float) -> SuvOutcome:
    if code == DECIDED_ZERO:
        return SuvOutcome(Suv.ZERO, float(flip))
    if code == DECIDED_ONE:
        return SuvOutcome(Suv.ONE, float(flip))
    return SuvOutcome(Suv.UNDECIDED, None)


def simulate_powerup(profile: TechnologyProfile, cell: CellSample,
                     cfg: PowerUpConfig) -> tuple[Trajectory, SuvOutcome]:
    """Full power-up of one cell, with the sampled trajectory.

    The trajectory is recorded at ``cfg.trajectory_stride`` steps through the
    entire ramp + hold window; the outcome is pinned at the first threshold
    crossing even though integration continues.
    """
    keys = None
    if cfg.noise is not None:
        keys = np.atleast_1d(rng.stream_key(cfg.noise.master_seed, rng.PURPOSE_NOISE,
                                            cell_id=cell.id, trial=cfg.noise.trial))
    dev = cell_devices(profile, cell.dvth, cfg.temp)
    vq0 = np.array([cfg.initial.vq])
    vqb0 = np.array([cfg.initial.vqb])
    outcome, flip_vdd, samples = _integrate(
        profile, dev, vq0, vqb0, cfg, keys,
        record_stride=cfg.trajectory_stride, run_to_end=True)
    arr = np.asarray(samples, dtype=np.float64)
    traj = Trajectory(t=arr[:, 0], vdd=arr[:, 1], vq=arr[:, 2], vqb=arr[:, 3])
    return traj, _single_outcome(int(outcome[0]), float(flip_vdd[0]))


def simulate_from_initial(profile: TechnologyProfile, cell: CellSample,
                          initial: StateVector, cfg: PowerUpConfig) -> SuvOutcome:
    """Free evolution from an arbitrary initial state at a fixed supply.

    ``cfg.ramp_time`` must be 0; the initial state must lie inside the
    [0, vdd_final] square.
    """
    if cfg.ramp_time != 0.0:
        raise ParameterDomainError("simulate_from_initial requires ramp_time == 0")
    if not (0.0 <= initial.vq <= cfg.vdd_final and 0.0 <= initial.vqb <= cfg.vdd_final):
        raise ParameterDomainError("initial state must lie within [0, vdd_final]^2")
    codes, flips = batch_powerup(
        profile, np.asarray(cell.dvth)[None, :], cfg,
        initial_vq=np.array([initial.vq]), initial_vqb=np.array([initial.vqb]),
        cell_ids=np.array([cell.id]))
    return _single_outcome(int(codes[0]), float(flips[0]))


def outcomes_to_jsonl(path, cell_ids, trials, codes, flip_vdd) -> None:
    """Write per-trial outcomes as JSON lines {cell_id, trial, outcome, flip_vdd}."""
    code_name = {DECIDED_ZERO: "0", DECIDED_ONE: "1", UNDECIDED: "undecided"}
    with open(path, "w", encoding="utf-8") as fh:
        for cid, tr, code, fv in zip(cell_ids, trials, codes, flip_vdd):
            rec = {
                "cell_id": int(cid),
                "trial": int(tr),
                "outcome": code_name[int(code)],
                "flip_vdd": None if not np.isfinite(fv) else float(f"{fv:.9g}"),
            }
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
