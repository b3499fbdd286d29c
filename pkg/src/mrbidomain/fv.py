"""Reference finite-volume scheme on uniform dyadic meshes.

One step advances the transmembrane potential explicitly with the
extracellular fluxes, updates the recovery variable by forward Euler, and
then solves the singular elliptic system for the new extracellular
potential. Boundary faces carry no flux.

Face fluxes combine the two-point transmissibility with an optional
tangential (cross) term built from vertex-averaged values; the cross term
restores the full conductivity tensor on the grid (the two-point part alone
only sees the axis projections of the tensor). With `full_tensor=False` the
scheme is the plain two-point flux with |M n| transmissibilities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from . import model as md
from .elliptic import LinearSystem, solve_zero_mean
from .grid import CellIndex, geometry


class InstabilityError(RuntimeError):
    """Raised when the explicit update blows up (CFL violation)."""

    def __init__(self, message, time=None, step=None, level=None):
        super().__init__(message)
        self.time = time
        self.step = step
        self.level = level


def spectral_norm_2x2(m: np.ndarray) -> float:
    """Largest absolute eigenvalue of a symmetric 2x2 tensor."""
    a, b, c = m[0, 0], m[1, 1], m[0, 1]
    half = 0.5 * (a + b)
    rad = math.hypot(0.5 * (a - b), c)
    return max(abs(half + rad), abs(half - rad))


def direction_weights(p: md.ModelParams, medium: str, full_tensor: bool = True):
    """Per-direction face weights (wx, wy, cross) for one medium.

    full_tensor: wx = M00, wy = M11, cross = M01 (consistent tensor).
    two-point:   wx = |M e_x|, wy = |M e_y|, cross = 0 (printed scheme).
    """
    m = md.conductivity_tensor(p, medium)
    if full_tensor:
        return float(m[0, 0]), float(m[1, 1]), float(m[0, 1])
    return (
        float(math.hypot(m[0, 0], m[1, 0])),
        float(math.hypot(m[0, 1], m[1, 1])),
        0.0,
    )


def cell_tensor(idx: CellIndex, medium: str, p: md.ModelParams) -> np.ndarray:
    """Cell-average conductivity tensor; equals the pointwise tensor for a
    constant fiber field."""
    geometry(idx)  # validates the index
    return md.conductivity_tensor(p, medium)


@dataclass(frozen=True)
class FaceCoefficient:
    d_star: float
    face_length: float
    distance: float

    @property
    def flux_weight(self) -> float:
        return self.d_star * self.face_length / self.distance


def _adjacency(K: CellIndex, L: CellIndex):
    """Shared-face geometry of two edge-adjacent cells (any level pairing).

    Returns (normal, face_length); raises when the cells do not share a face.
    Adjacency: centers exactly (h_K + h_L)/2 apart along one axis and the
    cell intervals overlapping along the other.
    """
    gK, gL = geometry(K), geometry(L)
    hK, hL = gK.side, gL.side
    dx = gL.center[0] - gK.center[0]
    dy = gL.center[1] - gK.center[1]
    half = 0.5 * (hK + hL)
    tol = 1e-12
    # tangential overlap must be positive: |dt| < half (dyadic nesting makes
    # the comparison exact up to roundoff)
    for axis, (dn, dt_) in enumerate(((dx, dy), (dy, dx))):
        if abs(abs(dn) - half) < tol and abs(dt_) < half - tol:
            if axis == 0:
                normal = (1.0 if dn > 0 else -1.0, 0.0)
            else:
                normal = (0.0, 1.0 if dn > 0 else -1.0)
            return normal, min(hK, hL)
    raise ValueError(f"cells {tuple(K)} and {tuple(L)} are not edge-adjacent")


def harmonic_transmissibility(a: float, b: float, d_k: float, d_l: float) -> float:
    """Distance-weighted harmonic mean of the two cell transmissibilities.

    For equal half-distances this collapses to 2ab/(a+b); for equal values
    to the value itself.
    """
    return (a * b) / (d_k * a + d_l * b) * (d_k + d_l)


def face_coefficient(K: CellIndex, L: CellIndex, medium: str, p: md.ModelParams) -> FaceCoefficient:
    """Harmonic-mean transmissibility of the shared face between K and L."""
    normal, face_len = _adjacency(K, L)
    n = np.asarray(normal)
    mK = cell_tensor(K, medium, p)
    mL = cell_tensor(L, medium, p)
    a = float(np.linalg.norm(mK @ n))
    b = float(np.linalg.norm(mL @ n))
    dK = 0.5 * geometry(K).side
    dL = 0.5 * geometry(L).side
    d_star = harmonic_transmissibility(a, b, dK, dL)
    return FaceCoefficient(d_star=d_star, face_length=face_len, distance=dK + dL)


def numerical_flux(K: CellIndex, L: CellIndex, u_K: float, u_L: float,
                   medium: str, p: md.ModelParams) -> float:
    """Two-point flux d* |sigma|/d (u_L - u_K); antisymmetric in (K, L)."""
    fc = face_coefficient(K, L, medium, p)
    return fc.flux_weight * (u_L - u_K)


def vertex_averages(u: np.ndarray) -> np.ndarray:
    """Corner values on the (n+1)^2 vertex grid by mirror-extended cell averaging."""
    pad = np.pad(u, 1, mode="edge")
    return 0.25 * ((pad[:-1, :-1] + pad[1:, :-1]) + (pad[:-1, 1:] + pad[1:, 1:]))


def face_fluxes(u: np.ndarray, wx: float, wy: float, cross: float):
    """Interior face fluxes of a cell field: x-faces (n-1, n), y-faces (n, n-1)."""
    if cross != 0.0:
        v = vertex_averages(u)
        fx = wx * (u[1:, :] - u[:-1, :]) + cross * (v[1:-1, 1:] - v[1:-1, :-1])
        fy = wy * (u[:, 1:] - u[:, :-1]) + cross * (v[1:, 1:-1] - v[:-1, 1:-1])
    else:
        fx = wx * (u[1:, :] - u[:-1, :])
        fy = wy * (u[:, 1:] - u[:, :-1])
    return fx, fy


def flux_divergence(u: np.ndarray, wx: float, wy: float, cross: float) -> np.ndarray:
    """Sum of outgoing face fluxes per cell (no-flux boundary faces omitted)."""
    n = u.shape[0]
    fx, fy = face_fluxes(u, wx, wy, cross)
    fxp = np.zeros((n + 1, n))
    fxp[1:-1, :] = fx
    fyp = np.zeros((n, n + 1))
    fyp[:, 1:-1] = fy
    return (fxp[1:, :] - fxp[:-1, :]) + (fyp[:, 1:] - fyp[:, :-1])


def _clamp(k: int | np.ndarray, n: int):
    return np.clip(k, 0, n - 1)


@lru_cache(maxsize=8)
def elliptic_operator(n: int, p: md.ModelParams, full_tensor: bool = True) -> sp.csr_matrix:
    """Assemble A = -fluxdiv for the combined intra+extra transmissibilities.

    Row/column index is i*n + j. The matrix is exactly symmetric positive
    semidefinite with the constant vector in its kernel.
    """
    wxi, wyi, ci = direction_weights(p, md.INTRA, full_tensor)
    wxe, wye, ce = direction_weights(p, md.EXTRA, full_tensor)
    return _assemble_operator(n, wxi + wxe, wyi + wye, ci + ce)


def _assemble_operator(n: int, wx: float, wy: float, cross: float) -> sp.csr_matrix:
    idx = np.arange(n * n).reshape(n, n)
    rows, cols, vals = [], [], []

    def add(r, c, v):
        rows.append(np.asarray(r).ravel())
        cols.append(np.asarray(c).ravel())
        vals.append(np.broadcast_to(v, np.asarray(r).shape).ravel().astype(float))

    # two-point part: A[K,K] += w, A[K,L] -= w per face
    kx, lx = idx[:-1, :], idx[1:, :]
    for r, c, v in ((kx, lx, -wx), (lx, kx, -wx), (kx, kx, wx), (lx, lx, wx)):
        add(r, c, v)
    ky, ly = idx[:, :-1], idx[:, 1:]
    for r, c, v in ((ky, ly, -wy), (ly, ky, -wy), (ky, ky, wy), (ly, ly, wy)):
        add(r, c, v)

    if cross != 0.0:
        q = 0.25 * cross
        ii, jj = np.meshgrid(np.arange(n - 1), np.arange(n), indexing="ij")
        # x-face between (i,j) and (i+1,j): F += q * (sum over top vertex cells
        # (i+a, j+b) - sum over bottom vertex cells (i+a, j-1+b)), a,b in {0,1}
        for a in (0, 1):
            for b in (0, 1):
                for sign, joff in ((1.0, b), (-1.0, b - 1)):
                    cell = idx[ii + a, _clamp(jj + joff, n)]
                    add(idx[ii, jj], cell, -sign * q)       # A[K,.] -= dF
                    add(idx[ii + 1, jj], cell, sign * q)    # A[L,.] += dF
        ii, jj = np.meshgrid(np.arange(n), np.arange(n - 1), indexing="ij")
        # y-face between (i,j) and (i,j+1): tangential direction is x
        for a in (0, 1):
            for b in (0, 1):
                for sign, ioff in ((1.0, b), (-1.0, b - 1)):
                    cell = idx[_clamp(ii + ioff, n), jj + a]
                    add(idx[ii, jj], cell, -sign * q)
                    add(idx[ii, jj + 1], cell, sign * q)

    A = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n * n, n * n),
    ).tocsr()
    A.sum_duplicates()
    A.sort_indices()
    # canonicalize to exact symmetry (entries only move by <= 1/2 ulp)
    A = 0.5 * (A + A.T)
    A = A.tocsr()
    A.sum_duplicates()
    A.sort_indices()
    return A


def elliptic_rhs(v_new: np.ndarray, p: md.ModelParams, i_app: np.ndarray,
                 full_tensor: bool = True) -> np.ndarray:
    """Right-hand side: intracellular flux divergence of v minus |K| I_app."""
    n = v_new.shape[0]
    area = (1.0 / n) ** 2
    wxi, wyi, ci = direction_weights(p, md.INTRA, full_tensor)
    div_i = flux_divergence(v_new, wxi, wyi, ci)
    return (div_i - area * i_app).ravel()


def assemble_elliptic(v_new: np.ndarray, p: md.ModelParams, i_app=None,
                      full_tensor: bool = True):
    """(operator, rhs) of the extracellular system for the updated v."""
    n = v_new.shape[0]
    if i_app is None:
        i_app = np.zeros_like(v_new)
    A = elliptic_operator(n, p, full_tensor)
    b = elliptic_rhs(v_new, p, i_app, full_tensor)
    return A, b


def reaction_rate_v(v, w, i_app, p: md.ModelParams):
    """Right-hand-side contribution of membrane kinetics to dv/dt."""
    return i_app / (p.beta * p.c_m) - md.i_ion(v, w, p) / p.c_m


def explicit_v_step(v, ue, w, dt: float, p: md.ModelParams, i_app,
                    full_tensor: bool = True, reaction: bool = True):
    """One explicit update of v from the quoted balance; raises on blow-up."""
    n = v.shape[0]
    h = 1.0 / n
    wxe, wye, ce = direction_weights(p, md.EXTRA, full_tensor)
    div_e = flux_divergence(ue, wxe, wye, ce)
    coeff = dt / (p.beta * p.c_m * (h * h))
    if reaction:
        v_new = v - coeff * div_e + dt * reaction_rate_v(v, w, i_app, p)
    else:
        v_new = v - coeff * div_e
    if not np.all(np.isfinite(v_new)):
        raise InstabilityError("non-finite transmembrane potential (CFL violation?)")
    return v_new


def w_step(v, w, dt: float, p: md.ModelParams):
    """Forward-Euler update of the recovery variable with the pre-update v."""
    return w + dt * md.h_gate(v, w, p)


def cfl_max_dt(v, w, i_app, p: md.ModelParams, h: float,
               reaction: bool = True) -> float:
    """Stability bound dt <= h / (2 max(|I_ion|+2|I_app|) + 4/h max(|M_i|+|M_e|))."""
    tens = spectral_norm_2x2(md.conductivity_tensor(p, md.INTRA)) + \
        spectral_norm_2x2(md.conductivity_tensor(p, md.EXTRA))
    if reaction:
        react = float(np.max(np.abs(md.i_ion(v, w, p)) + 2.0 * np.abs(i_app)))
    else:
        react = 0.0
    return h / (2.0 * react + 4.0 / h * tens)


@dataclass
class UniformState:
    v: np.ndarray
    ue: np.ndarray
    w: np.ndarray
    t: float = 0.0
    n_step: int = 0


class UniformEngine:
    """Driver for the uniform level-L scheme with a cached elliptic operator."""

    def __init__(self, p: md.ModelParams, proto: md.StimulusProtocol, level: int,
                 full_tensor: bool = True, reaction: bool = True,
                 solver_tol: float = 1.0e-8, blowup_factor: float = 25.0):
        self.p = p
        self.proto = proto
        self.level = level
        self.n = 1 << level
        self.h = 1.0 / self.n
        self.full_tensor = full_tensor
        self.reaction = reaction
        self.solver_tol = solver_tol
        self.blowup_factor = blowup_factor
        xs = (np.arange(self.n) + 0.5) * self.h
        self.X, self.Y = np.meshgrid(xs, xs, indexing="ij")
        self.areas = np.full(self.n * self.n, self.h * self.h)
        self.operator = elliptic_operator(self.n, p, full_tensor)
        v0, w0 = md.initial_state(self.X, self.Y, proto)
        ue0 = self._solve_ue(v0, self._i_app(0.0))
        self.state = UniformState(v=v0, ue=ue0, w=w0)
        self.max_abs_v = float(np.max(np.abs(v0)))

    def _i_app(self, t: float) -> np.ndarray:
        return md.applied_current(t, self.X, self.Y, self.proto, weights=self.areas.reshape(self.n, self.n))

    def _solve_ue(self, v: np.ndarray, i_app: np.ndarray, guess=None) -> np.ndarray:
        b = elliptic_rhs(v, self.p, i_app, self.full_tensor)
        sysm = LinearSystem(self.operator, b, self.areas, tol=self.solver_tol)
        u = solve_zero_mean(sysm, None if guess is None else guess.ravel())
        return u.reshape(self.n, self.n)

    def max_dt(self) -> float:
        s = self.state
        return cfl_max_dt(s.v, s.w, self._i_app(s.t), self.p, self.h, self.reaction)

    def step(self, dt: float) -> UniformState:
        s = self.state
        i_app = self._i_app(s.t)
        v1 = explicit_v_step(s.v, s.ue, s.w, dt, self.p, i_app,
                             self.full_tensor, self.reaction)
        vmax = float(np.max(np.abs(v1)))
        if vmax > self.blowup_factor * self.p.v_p:
            raise InstabilityError(
                f"|v| = {vmax:.3e} exceeds {self.blowup_factor:g} v_p at "
                f"t = {s.t:.6g} (step {s.n_step + 1}); the time step violates the CFL bound",
                time=s.t, step=s.n_step + 1, level=self.level,
            )
        self.max_abs_v = max(self.max_abs_v, vmax)
        w1 = w_step(s.v, s.w, dt, self.p) if self.reaction else s.w
        ue1 = self._solve_ue(v1, i_app, guess=s.ue)
        self.state = UniformState(v=v1, ue=ue1, w=w1, t=s.t + dt, n_step=s.n_step + 1)
        return self.state

    def run(self, n_steps: int, dt: float, callback=None) -> UniformState:
        for _ in range(n_steps):
            st = self.step(dt)
            if callback is not None:
                callback(st)
        return self.state


def run_uniform(p: md.ModelParams, proto: md.StimulusProtocol, level: int,
                n_steps: int, cfl_factor: float = 0.5, **kwargs) -> UniformState:
    """Convenience loop: fixed dt from the initial CFL bound times cfl_factor."""
    eng = UniformEngine(p, proto, level, **kwargs)
    dt = cfl_factor * eng.max_dt()
    return eng.run(n_steps, dt)
