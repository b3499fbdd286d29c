"""Cell-average multiresolution transform on dyadic grids.

Projection averages four children into their parent; prediction is the
polynomial right-inverse built from the five-point symmetric stencil with
weights (-22/128, 3/128). Details are the residuals between true and
predicted child averages; only the three residuals with offset e != (0,0)
are stored, the fourth follows from the consistency identity sum_e r_e = 0.

Boundary stencils use whole-domain mirror reflection, compatible with the
no-flux boundary condition.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

#: Prediction weights for the five-cell symmetric stencil.
GAMMA = (-22.0 / 128.0, 3.0 / 128.0)

#: Child offsets carrying stored details, in storage order.
DETAIL_OFFSETS = ((1, 0), (0, 1), (1, 1))


@dataclass(frozen=True)
class MRConfig:
    finest_level: int
    min_level: int = 2
    eps_ref: float = 5.0e-4
    gamma: tuple[float, float] = GAMMA
    remesh_interval: int = 2
    use_derived_tolerance: bool = False
    tol_C: float = 1.0
    tol_alpha: float = 2.0
    tol_D: float = 1.0

    def __post_init__(self):
        if not (1 <= self.finest_level <= 14):
            raise ValueError(f"finest_level must be in [1, 14], got {self.finest_level}")
        if not (0 <= self.min_level <= self.finest_level):
            raise ValueError("min_level must lie between 0 and finest_level")
        if self.eps_ref <= 0:
            raise ValueError("eps_ref must be positive")
        if self.remesh_interval < 1:
            raise ValueError("remesh_interval must be >= 1")


def project(child_values) -> float:
    """Parent cell average from its four children (plain mean on dyadic grids)."""
    c = np.asarray(child_values, dtype=float)
    if c.shape[-1] != 4:
        raise ValueError("project expects four child values")
    return c.mean(axis=-1)


def project_level(fine: np.ndarray) -> np.ndarray:
    """Average 2x2 blocks of a level-(l+1) array into the level-l array."""
    n2 = fine.shape[0]
    if fine.shape != (n2, n2) or n2 % 2:
        raise ValueError(f"expected a square even-sized array, got {fine.shape}")
    return 0.25 * (fine[0::2, 0::2] + fine[1::2, 0::2] + fine[0::2, 1::2] + fine[1::2, 1::2])


def _q_terms(st: np.ndarray, gamma):
    """Qx, Qy, Qxy of the prediction formula for 5x5 stencils (axis -2 = x).

    st may be a single (5, 5) stencil or a stack (..., 5, 5).
    """
    g1, g2 = gamma
    qx = g1 * (st[..., 3, 2] - st[..., 1, 2]) + g2 * (st[..., 4, 2] - st[..., 0, 2])
    qy = g1 * (st[..., 2, 3] - st[..., 2, 1]) + g2 * (st[..., 2, 4] - st[..., 2, 0])
    qxy = np.zeros_like(qx)
    for n, gn in ((1, g1), (2, g2)):
        for p_, gp in ((1, g1), (2, g2)):
            qxy = qxy + gn * gp * (st[..., 2 + n, 2 + p_] - st[..., 2 + n, 2 - p_]
                                   - st[..., 2 - n, 2 + p_] + st[..., 2 - n, 2 - p_])
    return qx, qy, qxy


def predict_child(stencil, e1: int, e2: int, gamma=GAMMA):
    """Predicted average of child (2i+e1, 2j+e2) from the parent's 5x5 stencil.

    Accepts a single stencil or a stack of stencils (..., 5, 5).
    """
    st = np.asarray(stencil, dtype=float)
    if st.shape[-2:] != (5, 5):
        raise ValueError(f"stencil must be 5x5 (trailing axes), got {st.shape}")
    qx, qy, qxy = _q_terms(st, gamma)
    sx = 1.0 if e1 == 0 else -1.0
    sy = 1.0 if e2 == 0 else -1.0
    out = st[..., 2, 2] + sx * qx + sy * qy + sx * sy * qxy
    return float(out) if out.ndim == 0 else out


def predict_level(coarse: np.ndarray, gamma=GAMMA) -> np.ndarray:
    """Predict the full level-(l+1) array from the level-l array.

    Mirror padding realizes the whole-domain reflection at the boundary.
    """
    n = coarse.shape[0]
    a = np.pad(coarse, 2, mode="symmetric")
    g1, g2 = gamma
    c = a[2:-2, 2:-2]
    qx = g1 * (a[3:-1, 2:-2] - a[1:-3, 2:-2]) + g2 * (a[4:, 2:-2] - a[:-4, 2:-2])
    qy = g1 * (a[2:-2, 3:-1] - a[2:-2, 1:-3]) + g2 * (a[2:-2, 4:] - a[2:-2, :-4])
    qxy = np.zeros_like(c)
    for n_, gn in ((1, g1), (2, g2)):
        for p_, gp in ((1, g1), (2, g2)):
            pp = a[2 + n_:n + 2 + n_, 2 + p_:n + 2 + p_]
            pm = a[2 + n_:n + 2 + n_, 2 - p_:n + 2 - p_]
            mp = a[2 - n_:n + 2 - n_, 2 + p_:n + 2 + p_]
            mm = a[2 - n_:n + 2 - n_, 2 - p_:n + 2 - p_]
            qxy += gn * gp * (pp - pm - mp + mm)
    fine = np.empty((2 * n, 2 * n), dtype=float)
    fine[0::2, 0::2] = c + qx + qy + qxy
    fine[1::2, 0::2] = c - qx + qy - qxy
    fine[0::2, 1::2] = c + qx - qy - qxy
    fine[1::2, 1::2] = c - qx - qy + qxy
    return fine


def child_residuals(stencil, true_children, gamma=GAMMA) -> np.ndarray:
    """Residuals true - predicted for the four children, ordered like CHILD_OFFSETS.

    true_children holds the child averages for offsets (0,0), (1,0), (0,1), (1,1).
    """
    t = np.asarray(true_children, dtype=float)
    if t.shape != (4,):
        raise ValueError("expected four true child averages")
    offs = ((0, 0), (1, 0), (0, 1), (1, 1))
    pred = np.array([predict_child(stencil, e1, e2, gamma) for e1, e2 in offs])
    return t - pred


def details(stencil, true_children, gamma=GAMMA) -> np.ndarray:
    """The three stored detail coefficients (residuals at offsets in DETAIL_OFFSETS)."""
    return child_residuals(stencil, true_children, gamma)[1:]


@dataclass
class Multiscale:
    """Multiscale representation: coarsest averages plus per-level details.

    details[k] has shape (2^l, 2^l, 3) for l = min_level + k and holds the
    child residuals at offsets DETAIL_OFFSETS.
    """

    min_level: int
    coarse: np.ndarray
    details: list = field(default_factory=list)

    @property
    def finest_level(self) -> int:
        return self.min_level + len(self.details)


def encode(fine: np.ndarray, min_level: int = 0, gamma=GAMMA) -> Multiscale:
    """Transform a uniform finest-level array into the multiscale representation."""
    n = fine.shape[0]
    L = n.bit_length() - 1
    if fine.shape != (n, n) or (1 << L) != n:
        raise ValueError(f"expected a square power-of-two array, got {fine.shape}")
    if not (0 <= min_level <= L):
        raise ValueError("min_level out of range")
    levels = [np.asarray(fine, dtype=float)]
    for _ in range(L - min_level):
        levels.append(project_level(levels[-1]))
    levels.reverse()  # coarse first
    detail_stack = []
    for k in range(len(levels) - 1):
        coarse, true_fine = levels[k], levels[k + 1]
        pred = predict_level(coarse, gamma)
        r = true_fine - pred
        m = coarse.shape[0]
        d = np.empty((m, m, 3), dtype=float)
        d[:, :, 0] = r[1::2, 0::2]
        d[:, :, 1] = r[0::2, 1::2]
        d[:, :, 2] = r[1::2, 1::2]
        detail_stack.append(d)
    return Multiscale(min_level=min_level, coarse=levels[0], details=detail_stack)


def decode(rep: Multiscale, gamma=GAMMA) -> np.ndarray:
    """Invert encode; with untouched details this reproduces the input to roundoff."""
    arr = np.asarray(rep.coarse, dtype=float)
    for d in rep.details:
        pred = predict_level(arr, gamma)
        m = arr.shape[0]
        fine = pred.copy()
        r10, r01, r11 = d[:, :, 0], d[:, :, 1], d[:, :, 2]
        r00 = -(r10 + r01 + r11)
        fine[0::2, 0::2] += r00
        fine[1::2, 0::2] += r10
        fine[0::2, 1::2] += r01
        fine[1::2, 1::2] += r11
        arr = fine
    return arr


def threshold_for_level(l: int, cfg: MRConfig) -> float:
    """Level tolerance eps_l = 4^(l - L) * eps_ref."""
    if not (0 <= l <= cfg.finest_level):
        raise ValueError(f"level {l} outside [0, {cfg.finest_level}]")
    return 4.0 ** (l - cfg.finest_level) * cfg.eps_ref


def reference_tolerance(C: float, alpha: float, D: float, L: int,
                        max_reaction: float, max_tensor: float) -> float:
    """Reference tolerance from the error-balancing formula.

    max_reaction is max_K(|I_ion| + 2|I_app|); max_tensor is
    max_K(|M_i| + |M_e|) in spectral norm.
    """
    denom = max_reaction + D * max_tensor
    if denom <= 0:
        raise ValueError("reference-tolerance denominator must be positive")
    return C * 2.0 ** ((2.0 - alpha) * L - 2.0) / denom


def truncate(rep: Multiscale, cfg: MRConfig, scales=None) -> Multiscale:
    """Zero all details below the level-dependent tolerance (hard threshold).

    scales optionally normalizes detail magnitudes (one scalar per field);
    used by callers thresholding multiple components jointly.
    """
    scale = 1.0 if scales is None else max(float(scales), 1e-30)
    out = Multiscale(rep.min_level, rep.coarse.copy(), [])
    for k, d in enumerate(rep.details):
        child_level = rep.min_level + k + 1
        eps = threshold_for_level(child_level, cfg)
        keep = np.max(np.abs(d), axis=2) / scale >= eps
        out.details.append(np.where(keep[:, :, None], d, 0.0))
    return out
