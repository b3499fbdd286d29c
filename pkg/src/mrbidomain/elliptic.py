"""Zero-mean solver for the singular symmetric systems of the extracellular
potential.

The operator is a positive-semidefinite flux Laplacian whose kernel is the
constant vector; solvability requires the right-hand side to sum to zero.
A diagonally preconditioned conjugate-gradient iteration runs in the
zero-sum subspace; the final iterate is projected onto the zero weighted
mean constraint (weights are the cell areas).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp


class ConvergenceError(RuntimeError):
    def __init__(self, iterations, residual, target):
        super().__init__(
            f"conjugate gradient failed to converge in {iterations} iterations: "
            f"residual {residual:.3e} > target {target:.3e}"
        )
        self.iterations = iterations
        self.residual = residual
        self.target = target


@dataclass
class LinearSystem:
    matrix: sp.spmatrix
    rhs: np.ndarray
    weights: np.ndarray
    tol: float = 1.0e-8
    max_iter: int | None = None


def project_zero_mean(u: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Remove the weighted mean: u - (sum(w u)/sum(w)) * 1. Idempotent."""
    return u - (weights @ u) / weights.sum()


def solve_zero_mean(system: LinearSystem, initial_guess=None) -> np.ndarray:
    """Solve A u = b with A singular (constants in the kernel), zero weighted mean.

    The RHS is compatibility-checked (plain sum near zero) and projected onto
    the solvable subspace; the iteration is plain PCG with the residual kept
    sum-free each step. Deterministic for fixed inputs.
    """
    A = system.matrix.tocsr()
    b = np.asarray(system.rhs, dtype=float)
    w = np.asarray(system.weights, dtype=float)
    n = b.size
    max_iter = system.max_iter if system.max_iter is not None else max(10 * n, 50)

    bsum = float(b.sum())
    bnorm = float(np.linalg.norm(b))
    if bnorm > 0 and abs(bsum) > 1.0e-8 * max(bnorm, 1.0):
        import warnings

        warnings.warn(
            f"elliptic RHS sum {bsum:.3e} exceeds the compatibility tolerance; "
            "projecting onto the solvable subspace",
            stacklevel=2,
        )
    b = b - bsum / n

    diag = A.diagonal()
    inv_diag = np.where(diag > 0, 1.0 / np.where(diag > 0, diag, 1.0), 1.0)

    x = np.zeros(n) if initial_guess is None else np.array(initial_guess, dtype=float)
    r = b - A @ x
    r -= r.sum() / n
    target = system.tol * (bnorm if bnorm > 0 else 1.0)
    rnorm = float(np.linalg.norm(r))
    if rnorm <= target:
        return project_zero_mean(x, w)

    z = inv_diag * r
    p = z.copy()
    rz = float(r @ z)
    for it in range(1, max_iter + 1):
        Ap = A @ p
        pAp = float(p @ Ap)
        if pAp <= 0.0:
            # kernel component crept in; strip it and retry once
            p -= p.sum() / n
            Ap = A @ p
            pAp = float(p @ Ap)
            if pAp <= 0.0:
                raise ConvergenceError(it, rnorm, target)
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        r -= r.sum() / n
        rnorm = float(np.linalg.norm(r))
        if rnorm <= target:
            return project_zero_mean(x, w)
        z = inv_diag * r
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise ConvergenceError(max_iter, rnorm, target)
