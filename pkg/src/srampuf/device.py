"""Behavioral MOS transistor model and static analysis of the 6T cell latch.

The transistor is a square-law device (cutoff / triode / saturation, with
channel-length modulation) whose gate overdrive is smoothed by a softplus
interpolation so the drain current is continuous through the subthreshold
region and strictly positive for vds > 0:

    I_D = beta/2 * [sp(vgs - vth)^2 - sp(vgs - vth - vds)^2] * (1 + lam*vds)
    sp(x) = s * log(1 + exp(x / s))          (s = subthreshold_slope)

Deep in saturation this reduces to beta/2*(vgs-vth)^2*(1+lam*vds), in triode
to beta*((vgs-vth)*vds - vds^2/2)*(1+lam*vds), and below threshold to an
exponential-of-overdrive tail.  The expression is antisymmetric under
source/drain exchange, so reverse conduction (vds < 0) is handled naturally.

Cell wiring convention (access transistors are held off and omitted):

    inverter L: T0 NMOS pull-down + T2 PMOS pull-up, input Q,  output QB
    inverter R: T1 NMOS pull-down + T3 PMOS pull-up, input QB, output Q

Under this convention a weighted mismatch factor > 0 (weaker pull-up / stronger
pull-down on the Q side) implies a start-up value of '0' (Q low).

Temperature enters through two first-order coefficients: |vth| drops linearly
with T and beta scales as (T/T_ref)^(-mobility_temp_exponent).
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, replace
from enum import Enum
from typing import TYPE_CHECKING

import numpy as np
from scipy.optimize import brentq

from .errors import ModelIntegrityError, NumericError, ParameterDomainError

if TYPE_CHECKING:
    from .variability import CellSample

NOMINAL_TEMP_K = 300.15  # 27 degC

# Residual bound on |C*dV/dt| (in amperes) certified for returned equilibria.
EQUILIBRIUM_RESIDUAL_A = 1e-15

_VTC_XTOL = 1e-13
_SCAN_POINTS = 401


class TransistorKind(Enum):
    NMOS = "nmos"
    PMOS = "pmos"


@dataclass(frozen=True)
class TransistorParams:
    """Electrical parameters of one device type.

    ``vth_nominal`` is the threshold magnitude (positive for both kinds);
    PMOS operation is handled by mirroring terminal voltages.  ``beta`` is
    the full transconductance factor mu*Cox*W/L in A/V^2.
    """

    kind: TransistorKind
    vth_nominal: float
    beta: float
    lam: float = 0.1
    subthreshold_slope: float = 0.035
    vth_temp_coeff: float = 1.0e-3
    mobility_temp_exponent: float = 1.5
    temp_reference: float = NOMINAL_TEMP_K

    def __post_init__(self):
        if not (np.isfinite(self.vth_nominal) and self.vth_nominal > 0):
            raise ParameterDomainError("vth_nominal must be finite and > 0")
        if not (np.isfinite(self.beta) and self.beta > 0):
            raise ParameterDomainError("beta must be finite and > 0")
        if not (np.isfinite(self.subthreshold_slope) and self.subthreshold_slope > 0):
            raise ParameterDomainError("subthreshold_slope must be finite and > 0")
        if not (np.isfinite(self.lam) and self.lam >= 0):
            raise ParameterDomainError("lam must be finite and >= 0")
        if self.mobility_temp_exponent < 0:
            raise ParameterDomainError("mobility_temp_exponent must be >= 0")
        if self.temp_reference <= 0:
            raise ParameterDomainError("temp_reference must be > 0 kelvin")

    def vth_at(self, temp: float) -> float:
        """Threshold magnitude at ``temp`` (linear first-order reduction)."""
        return self.vth_nominal - self.vth_temp_coeff * (temp - self.temp_reference)

    def beta_at(self, temp: float) -> float:
        """Transconductance factor at ``temp`` (mobility power law)."""
        return self.beta * (temp / self.temp_reference) ** (-self.mobility_temp_exponent)


@dataclass(frozen=True)
class TechnologyProfile:
    """Nominal device parameters, variability sigmas and node capacitance."""

    name: str
    vdd_nominal: float
    nmos: TransistorParams
    pmos: TransistorParams
    sigma_vth_nmos: float
    sigma_vth_pmos: float
    node_capacitance: float
    temp_nominal: float = NOMINAL_TEMP_K

    def __post_init__(self):
        if not (np.isfinite(self.vdd_nominal) and self.vdd_nominal > 0):
            raise ParameterDomainError("vdd_nominal must be finite and > 0")
        if self.sigma_vth_nmos < 0 or self.sigma_vth_pmos < 0:
            raise ParameterDomainError("variability sigmas must be >= 0")
        if not (np.isfinite(self.node_capacitance) and self.node_capacitance > 0):
            raise ParameterDomainError("node_capacitance must be finite and > 0")
        if self.temp_nominal <= 0:
            raise ParameterDomainError("temp_nominal must be > 0 kelvin")
        if self.nmos.kind is not TransistorKind.NMOS:
            raise ParameterDomainError("nmos entry must have kind NMOS")
        if self.pmos.kind is not TransistorKind.PMOS:
            raise ParameterDomainError("pmos entry must have kind PMOS")


def default_profile() -> TechnologyProfile:
    """Representative 65 nm-class profile used throughout the test suite.

    vdd 1.2 V, |vth| 0.45/0.42 V, sigma 30 mV, 1 fF per node, beta 2:1.
    """
    return TechnologyProfile(
        name="generic65",
        vdd_nominal=1.2,
        nmos=TransistorParams(kind=TransistorKind.NMOS, vth_nominal=0.45, beta=200e-6),
        pmos=TransistorParams(kind=TransistorKind.PMOS, vth_nominal=0.42, beta=100e-6),
        sigma_vth_nmos=0.030,
        sigma_vth_pmos=0.030,
        node_capacitance=1e-15,
        temp_nominal=NOMINAL_TEMP_K,
    )


def _softplus(z):
    # exact linear tail for large arguments so no overflow is possible
    zc = np.minimum(z, 700.0)
    return np.log1p(np.exp(zc)) + (z - zc)


def _forward_current(vth, beta, lam, slope, vgs, vds):
    """NMOS-convention current for threshold magnitude ``vth``."""
    a = _softplus((vgs - vth) / slope) * slope
    b = _softplus((vgs - vth - vds) / slope) * slope
    return 0.5 * beta * (a * a - b * b) * (1.0 + lam * vds)


def drain_current(params: TransistorParams, vgs, vds, temp: float):
    """Drain current of one device; broadcasts over array voltages.

    NMOS sign convention: current >= 0 into the drain for vds >= 0.  A PMOS
    device is evaluated by mirroring its terminal voltages, so in normal
    operation (vgs, vds negative) the returned current is negative.
    """
    vgs = np.asarray(vgs, dtype=np.float64)
    vds = np.asarray(vds, dtype=np.float64)
    if not (np.all(np.isfinite(vgs)) and np.all(np.isfinite(vds))):
        raise ParameterDomainError("terminal voltages must be finite")
    if not (np.isfinite(temp) and temp > 0):
        raise ParameterDomainError("temp must be finite and > 0 kelvin")
    vth = params.vth_at(temp)
    beta = params.beta_at(temp)
    if params.kind is TransistorKind.PMOS:
        out = -_forward_current(vth, beta, params.lam, params.subthreshold_slope, -vgs, -vds)
    else:
        out = _forward_current(vth, beta, params.lam, params.subthreshold_slope, vgs, vds)
    return out if out.ndim else out[()]


@dataclass(frozen=True)
class CellDevices:
    """Temperature-adjusted per-cell device constants for the four inverter
    transistors.  vth entries are magnitudes including the cell's deviations;
    vectorized over cells when built from arrays."""

    vth0: np.ndarray  # T0 NMOS, pull-down of QB, gate Q
    vth1: np.ndarray  # T1 NMOS, pull-down of Q,  gate QB
    vth2: np.ndarray  # T2 PMOS, pull-up of QB,   gate Q
    vth3: np.ndarray  # T3 PMOS, pull-up of Q,    gate QB
    beta_n: float
    beta_p: float
    lam_n: float
    lam_p: float
    slope_n: float
    slope_p: float


def cell_devices(profile: TechnologyProfile, dvth, temp: float) -> CellDevices:
    """Bind a (4,) or (m, 4) deviation array to the profile at ``temp``."""
    d = np.atleast_2d(np.asarray(dvth, dtype=np.float64))
    vth_n = profile.nmos.vth_at(temp)
    vth_p = profile.pmos.vth_at(temp)
    return CellDevices(
        vth0=vth_n + d[:, 0],
        vth1=vth_n + d[:, 1],
        vth2=vth_p + d[:, 2],
        vth3=vth_p + d[:, 3],
        beta_n=profile.nmos.beta_at(temp),
        beta_p=profile.pmos.beta_at(temp),
        lam_n=profile.nmos.lam,
        lam_p=profile.pmos.lam,
        slope_n=profile.nmos.subthreshold_slope,
        slope_p=profile.pmos.subthreshold_slope,
    )


def node_currents(dev: CellDevices, vq, vqb, vdd, gate_q=None, gate_qb=None):
    """Net charging currents (i_q, i_qb) into the two storage nodes.

    ``gate_q``/``gate_qb`` override the voltages seen by the gates the
    nodes drive (used for series noise sources); they default to the node
    voltages themselves.
    """
    gq = vq if gate_q is None else gate_q
    gqb = vqb if gate_qb is None else gate_qb
    i_q = _forward_current(dev.vth3, dev.beta_p, dev.lam_p, dev.slope_p, vdd - gqb, vdd - vq) \
        - _forward_current(dev.vth1, dev.beta_n, dev.lam_n, dev.slope_n, gqb, vq)
    i_qb = _forward_current(dev.vth2, dev.beta_p, dev.lam_p, dev.slope_p, vdd - gq, vdd - vqb) \
        - _forward_current(dev.vth0, dev.beta_n, dev.lam_n, dev.slope_n, gq, vqb)
    return i_q, i_qb


def _inverter_balance(dev: CellDevices, side: str, vin, vout, vdd):
    """Pull-up minus pull-down current at the output of one inverter."""
    if side == "R":  # drives Q, input QB
        up = _forward_current(dev.vth3, dev.beta_p, dev.lam_p, dev.slope_p, vdd - vin, vdd - vout)
        down = _forward_current(dev.vth1, dev.beta_n, dev.lam_n, dev.slope_n, vin, vout)
    elif side == "L":  # drives QB, input Q
        up = _forward_current(dev.vth2, dev.beta_p, dev.lam_p, dev.slope_p, vdd - vin, vdd - vout)
        down = _forward_current(dev.vth0, dev.beta_n, dev.lam_n, dev.slope_n, vin, vout)
    else:
        raise ParameterDomainError(f"side must be 'L' or 'R', got {side!r}")
    return up - down


def _solve_inverter(dev: CellDevices, side: str, vin: float, vdd: float) -> float:
    """Static output voltage where pull-up and pull-down currents balance."""
    f = lambda vout: _inverter_balance(dev, side, vin, vout, vdd)
    try:
        return brentq(f, 0.0, vdd, xtol=_VTC_XTOL, rtol=8.9e-16)
    except ValueError as exc:
        raise NumericError(f"inverter {side} solve failed at vin={vin!r}: {exc}") from exc


def inverter_vtc(profile: TechnologyProfile, cell: "CellSample", side: str,
                 vdd: float, temp: float, n_points: int):
    """Voltage transfer curve of one inverter as (vin, vout) arrays.

    The curve is solved point-by-point on a uniform vin grid; it is
    monotonically non-increasing and bounded by [0, vdd].
    """
    if not vdd > 0:
        raise ParameterDomainError("vdd must be > 0")
    if n_points < 3:
        raise ParameterDomainError("n_points must be >= 3")
    dev = cell_devices(profile, cell.dvth, temp)
    vin = np.linspace(0.0, vdd, n_points)
    vout = np.array([_solve_inverter(dev, side, float(v), vdd) for v in vin])
    return vin, vout


@dataclass(frozen=True)
class EquilibriumSet:
    """Static operating points of the latch at a fixed supply.

    When ``bistable`` the two stable points are ordered so s0 has vq < vqb
    (the '0' state) and the saddle sits between them; otherwise s0 == s1 is
    the single stable point and ``metastable`` is None.
    """

    s0: tuple[float, float]
    s1: tuple[float, float]
    metastable: tuple[float, float] | None
    bistable: bool


def _balance_jacobian(dev: CellDevices, vq: float, vqb: float, vdd: float, h: float = 1e-8):
    """Finite-difference Jacobian of the node currents (C cancels in signs)."""
    def f(a, b):
        iq, iqb = node_currents(dev, a, b, vdd)
        return float(iq), float(iqb)
    fq_p, fqb_p = f(vq + h, vqb)
    fq_m, fqb_m = f(vq - h, vqb)
    gq_p, gqb_p = f(vq, vqb + h)
    gq_m, gqb_m = f(vq, vqb - h)
    return np.array([
        [(fq_p - fq_m) / (2 * h), (gq_p - gq_m) / (2 * h)],
        [(fqb_p - fqb_m) / (2 * h), (gqb_p - gqb_m) / (2 * h)],
    ])


def _newton_polish(dev: CellDevices, vq: float, vqb: float, vdd: float,
                   tol: float = EQUILIBRIUM_RESIDUAL_A):
    """Drive the current residuals at a candidate point to the fA scale."""
    for _ in range(12):
        iq, iqb = node_currents(dev, vq, vqb, vdd)
        iq, iqb = float(iq), float(iqb)
        if abs(iq) < tol and abs(iqb) < tol:
            return vq, vqb
        jac = _balance_jacobian(dev, vq, vqb, vdd)
        try:
            step = np.linalg.solve(jac, [iq, iqb])
        except np.linalg.LinAlgError as exc:
            raise NumericError("singular Jacobian while polishing equilibrium") from exc
        vq -= float(step[0])
        vqb -= float(step[1])
    iq, iqb = node_currents(dev, vq, vqb, vdd)
    if abs(float(iq)) < tol and abs(float(iqb)) < tol:
        return vq, vqb
    raise NumericError(
        f"equilibrium polish stalled at ({vq:.6g}, {vqb:.6g}), residual "
        f"({float(iq):.3g}, {float(iqb):.3g}) A")


def find_equilibria(profile: TechnologyProfile, cell: "CellSample",
                    vdd: float, temp: float) -> EquilibriumSet:
    """Locate and classify all static operating points of the cell.

    Roots of the composed transfer map vq -> R(L(vq)) are bracketed on a
    dense scan, refined by bisection and polished by a 2-D Newton step on
    the raw current balance.  Classification uses the sign structure of the
    current-balance Jacobian (trace/determinant of the 2x2 linearization).
    """
    if vdd < 0:
        raise ParameterDomainError("vdd must be >= 0")
    if vdd == 0.0:
        return EquilibriumSet(s0=(0.0, 0.0), s1=(0.0, 0.0), metastable=None, bistable=False)
    dev = cell_devices(profile, cell.dvth, temp)

    def composed(vq):
        vqb = _solve_inverter(dev, "L", vq, vdd)
        return _solve_inverter(dev, "R", vqb, vdd) - vq

    grid = np.linspace(0.0, vdd, _SCAN_POINTS)
    vals = np.array([composed(float(v)) for v in grid])
    roots: list[float] = []
    for i in range(len(grid) - 1):
        a, b = vals[i], vals[i + 1]
        if a == 0.0:
            roots.append(float(grid[i]))
        elif a * b < 0:
            roots.append(brentq(composed, float(grid[i]), float(grid[i + 1]),
                                xtol=1e-14, rtol=8.9e-16))
    if vals[-1] == 0.0:
        roots.append(float(grid[-1]))
    # dedupe near-coincident brackets
    uniq: list[float] = []
    for r in sorted(roots):
        if not uniq or r - uniq[-1] > 1e-9:
            uniq.append(r)
    if len(uniq) > 3:
        raise ModelIntegrityError(
            f"{len(uniq)} VTC intersections found; current model is broken")
    if len(uniq) == 2:
        raise NumericError("degenerate equilibrium structure (2 intersections): "
                           "cell is at the edge of bistability")
    points = []
    for r in uniq:
        vqb = _solve_inverter(dev, "L", r, vdd)
        vq, vqb = _newton_polish(dev, r, vqb, vdd)
        jac = _balance_jacobian(dev, vq, vqb, vdd)
        det = float(np.linalg.det(jac))
        tr = float(np.trace(jac))
        stable = det > 0 and tr < 0
        points.append(((vq, vqb), stable))
    if len(points) == 1:
        (pt, stable) = points[0]
        if not stable:
            raise ModelIntegrityError("single equilibrium is not stable")
        return EquilibriumSet(s0=pt, s1=pt, metastable=None, bistable=False)
    points.sort(key=lambda p: p[0][0])
    (lo, lo_st), (mid, mid_st), (hi, hi_st) = points
    if not (lo_st and hi_st and not mid_st):
        raise ModelIntegrityError("unexpected stability pattern among 3 equilibria")
    return EquilibriumSet(s0=lo, s1=hi, metastable=mid, bistable=True)


def butterfly_csv(profile: TechnologyProfile, cell: "CellSample", vdd: float,
                  temp: float, n_points: int, path) -> None:
    """Write both transfer curves on a common vin grid as vin,vout_L,vout_R."""
    vin, out_l = inverter_vtc(profile, cell, "L", vdd, temp, n_points)
    _, out_r = inverter_vtc(profile, cell, "R", vdd, temp, n_points)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("vin,vout_L,vout_R\n")
        for row in zip(vin, out_l, out_r):
            fh.write(",".join(f"{v:.9g}" for v in row) + "\n")


# -- profile (de)serialization ----------------------------------------------

_DEVICE_FIELDS = ("vth_nominal", "beta", "lam", "subthreshold_slope",
                  "vth_temp_coeff", "mobility_temp_exponent", "temp_reference")
_PROFILE_FIELDS = ("vdd_nominal", "sigma_vth_nmos", "sigma_vth_pmos",
                   "node_capacitance", "temp_nominal")


def profile_to_dict(profile: TechnologyProfile) -> dict:
    d = {"name": profile.name}
    for f in _PROFILE_FIELDS:
        d[f] = getattr(profile, f)
    for sec, params in (("nmos", profile.nmos), ("pmos", profile.pmos)):
        d[sec] = {f: getattr(params, f) for f in _DEVICE_FIELDS}
    return d


def profile_from_dict(d: dict) -> TechnologyProfile:
    try:
        nmos = TransistorParams(kind=TransistorKind.NMOS,
                                **{k: float(v) for k, v in d["nmos"].items()})
        pmos = TransistorParams(kind=TransistorKind.PMOS,
                                **{k: float(v) for k, v in d["pmos"].items()})
        return TechnologyProfile(
            name=str(d.get("name", "unnamed")),
            nmos=nmos, pmos=pmos,
            **{f: float(d[f]) for f in _PROFILE_FIELDS if f in d},
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ParameterDomainError(f"bad profile data: {exc}") from exc


def load_profile(path) -> TechnologyProfile:
    """Load a TechnologyProfile from an INI-style key = value file.

    Sections: [profile] with name plus the scalar fields, [nmos] and [pmos]
    with the per-device fields.  All values are SI units in plain decimal or
    scientific notation.  Missing optional keys take the defaults of
    TransistorParams / TechnologyProfile.
    """
    cp = configparser.ConfigParser()
    read = cp.read(path)
    if not read:
        raise ParameterDomainError(f"profile file not found or empty: {path}")
    try:
        d: dict = {"name": cp.get("profile", "name", fallback="unnamed")}
        for f in _PROFILE_FIELDS:
            if cp.has_option("profile", f):
                d[f] = cp.getfloat("profile", f)
        for sec in ("nmos", "pmos"):
            d[sec] = {f: cp.getfloat(sec, f) for f in _DEVICE_FIELDS if cp.has_option(sec, f)}
    except (configparser.Error, ValueError) as exc:
        raise ParameterDomainError(f"bad profile file {path}: {exc}") from exc
    return profile_from_dict(d)


def save_profile(profile: TechnologyProfile, path) -> None:
    cp = configparser.ConfigParser()
    cp["profile"] = {"name": profile.name}
    for f in _PROFILE_FIELDS:
        cp["profile"][f] = f"{getattr(profile, f):.9g}"
    for sec, params in (("nmos", profile.nmos), ("pmos", profile.pmos)):
        cp[sec] = {f: f"{getattr(params, f):.9g}" for f in _DEVICE_FIELDS}
    with open(path, "w", encoding="utf-8") as fh:
        cp.write(fh)
