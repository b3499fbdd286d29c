"""Physical model: anisotropic conductivities, Mitchell-Schaeffer membrane
kinetics, stimulus protocol and initial data.

All functions are pure and accept scalars or numpy arrays for the state
arguments. The recovery kinetics use strict "<" at the gate threshold, as the
piecewise-constant rate functions are defined.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

INTRA = "intra"
EXTRA = "extra"


@dataclass(frozen=True)
class ModelParams:
    """Membrane and tissue constants.

    Conductivities are sigma_scale * sigma_j{l,t}; the scale factor lets a
    configuration keep the customary tensor entries while working in
    normalized units.
    """

    beta: float = 4036.5
    c_m: float = 1.0
    R_m: float = 2.0e4
    v_p: float = 100.0
    eta1: float = 0.005
    eta2: float = 0.1
    eta3: float = 1.5
    eta4: float = 7.5
    eta5: float = 0.1
    sigma_il: float = 6.0
    sigma_it: float = 0.6
    sigma_el: float = 24.0
    sigma_et: float = 12.0
    sigma_scale: float = 1.0
    fiber_angle: float = -math.pi / 4

    def __post_init__(self):
        for name in ("beta", "c_m", "R_m", "v_p", "eta1", "eta2",
                     "sigma_il", "sigma_it", "sigma_el", "sigma_et", "sigma_scale"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")

    @property
    def tau(self) -> float:
        """Membrane time constant R_m * c_m."""
        return self.R_m * self.c_m


def conductivity_tensor(p: ModelParams, medium: str) -> np.ndarray:
    """2x2 conductivity tensor sigma_t*I + (sigma_l - sigma_t)*a a^T.

    a = (cos theta, sin theta) is the fiber direction; the eigenvalues are
    exactly {sigma_l, sigma_t} for every angle.
    """
    if medium == INTRA:
        sl, st = p.sigma_il, p.sigma_it
    elif medium == EXTRA:
        sl, st = p.sigma_el, p.sigma_et
    else:
        raise ValueError(f"medium must be '{INTRA}' or '{EXTRA}', got {medium!r}")
    sl *= p.sigma_scale
    st *= p.sigma_scale
    a1, a2 = math.cos(p.fiber_angle), math.sin(p.fiber_angle)
    d = sl - st
    return np.array([
        [st + d * a1 * a1, d * a1 * a2],
        [d * a1 * a2, st + d * a2 * a2],
    ])


def i_ion(v, w, p: ModelParams):
    """Mitchell-Schaeffer ionic current density."""
    vp = p.v_p
    return (vp / p.R_m) * (v / (vp * p.eta2) - v * v * (1.0 - v / vp) * w / (vp * vp * p.eta1))


def w_inf(s, p: ModelParams):
    return np.where(s < p.eta5, 1.0, 0.0)


def eta_inf(s, p: ModelParams):
    return np.where(s < p.eta5, p.eta3, p.eta4)


def h_gate(v, w, p: ModelParams):
    """Recovery rate H(v, w) = (w_inf(v/v_p) - w) / (R_m c_m eta_inf(v/v_p))."""
    s = np.asarray(v) / p.v_p
    return (w_inf(s, p) - w) / (p.tau * eta_inf(s, p))


@dataclass(frozen=True)
class StimulusProtocol:
    """Initial-condition bump plus an optional time-windowed applied current.

    The applied current is made zero-mean over the domain by subtracting its
    instantaneous spatial mean on whatever grid it is evaluated.
    """

    ic_shape: str = "disc"          # disc | rect
    ic_center: tuple[float, float] = (0.5, 0.5)
    ic_radius: float = 0.05
    ic_halfwidth: tuple[float, float] = (0.05, 0.05)
    ic_amplitude: float = 100.0     # value of v0 inside the stimulated region
    w0: float = 1.0
    app_amplitude: float = 0.0
    app_window: tuple[float, float] = (0.0, 0.0)
    app_shape: str = "disc"
    app_center: tuple[float, float] = (0.5, 0.5)
    app_radius: float = 0.05

    def __post_init__(self):
        if self.ic_shape not in ("disc", "rect"):
            raise ValueError(f"unknown initial-condition shape {self.ic_shape!r}")
        if self.app_shape not in ("disc", "rect"):
            raise ValueError(f"unknown applied-current shape {self.app_shape!r}")


def _inside(shape, center, radius, halfwidth, x, y):
    if shape == "disc":
        return (x - center[0]) ** 2 + (y - center[1]) ** 2 <= radius**2
    hx, hy = halfwidth
    return (np.abs(x - center[0]) <= hx) & (np.abs(y - center[1]) <= hy)


def initial_state(x, y, proto: StimulusProtocol):
    """Pointwise initial data (v0, w0)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    mask = _inside(proto.ic_shape, proto.ic_center, proto.ic_radius,
                   proto.ic_halfwidth, x, y)
    v0 = np.where(mask, proto.ic_amplitude, 0.0)
    w0 = np.full_like(v0, proto.w0)
    return v0, w0


def applied_current(t: float, x, y, proto: StimulusProtocol, weights=None):
    """Zero-mean applied current at time t, sampled at positions (x, y).

    weights are the cell areas used for the discrete mean; uniform weights
    are assumed when omitted.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    t0, t1 = proto.app_window
    if proto.app_amplitude == 0.0 or not (t0 <= t < t1):
        return np.zeros_like(x)
    mask = _inside(proto.app_shape, proto.app_center, proto.app_radius,
                   proto.ic_halfwidth, x, y)
    raw = np.where(mask, proto.app_amplitude, 0.0)
    if weights is None:
        mean = raw.mean()
    else:
        weights = np.asarray(weights, dtype=float)
        mean = float((raw * weights).sum() / weights.sum())
    return raw - mean
