"""Implicit midpoint solves and their solvability certificates.

The discrete-time Hamilton step couples a vertex z to its partner through the
midpoint z_bar via

    f(lambda, z, z_bar) = z_bar - z - (lambda/2) J H_z(z_bar) = 0,

so z_bar(lambda, z) is implicitly defined.  ``solve_midpoint`` computes it by
Newton iteration started at z_bar = z, which is exactly the iterate sequence
the Kantorovich certificate in ``kantorovich_report`` speaks about: when the
certificate holds, the iteration converges to the unique solution inside the
ball of radius r_minus about z.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .bounds import RegionBounds
from .errors import (
    EvaluationError,
    LinearSolveError,
    NonconvergenceError,
    ParameterError,
)
from .extphase import (
    ExtendedState,
    HamiltonianModel,
    apply_J,
    eval_gradient,
    eval_hessian,
)

__all__ = [
    "MidpointSolution",
    "KantorovichReport",
    "solve_midpoint",
    "solve_midpoint_coords",
    "kantorovich_report",
    "midpoint_sensitivity",
]


@dataclass(frozen=True)
class MidpointSolution:
    """Solution of the midpoint equation at one (lambda, z) pair.

    ``z_partner`` is the reflected vertex 2 z_bar - z, i.e. the next (or
    previous, for negative lambda) vertex of the trajectory.
    """

    z_bar: ExtendedState
    z_partner: ExtendedState
    lam: float
    iterations: int
    residual: float


@dataclass(frozen=True)
class KantorovichReport:
    """Newton-Kantorovich certificate data for the midpoint solve.

    With beta = 2 and gamma = 1/2 fixed by the operator structure, eta is the
    measured first Newton step and alpha = beta*gamma*eta.  ``guaranteed``
    states that the certificate hypotheses all hold: alpha < 1/2, the ball
    B(z, r_minus) lies inside the declared region, and |lambda| is small
    enough that beta and gamma are valid (|lambda| <= 1/M2 and 1/gamma_H).
    """

    alpha: float
    beta: float
    gamma: float
    eta: float
    r_minus: float
    r_plus: float
    lambda_delta: float
    guaranteed: bool


_EYE: dict[int, np.ndarray] = {}


def _identity(dim: int) -> np.ndarray:
    eye = _EYE.get(dim)
    if eye is None:
        eye = np.eye(dim)
        _EYE[dim] = eye
    return eye


def _jacobian(model: HamiltonianModel, lam: float, z_bar: np.ndarray) -> np.ndarray:
    """f_zbar = I - (lambda/2) J H_zz(z_bar)."""
    hess = eval_hessian(model, z_bar)
    dim = z_bar.size
    half = dim // 2
    jh = np.empty_like(hess)
    jh[:half] = hess[half:]
    jh[half:] = -hess[:half]
    return _identity(dim) - 0.5 * lam * jh


def solve_midpoint_coords(
    model: HamiltonianModel,
    lam: float,
    z: np.ndarray,
    tol: float = 1e-12,
    max_iter: int = 50,
    initial: Optional[np.ndarray] = None,
) -> tuple[np.ndarray, int, float]:
    """Newton solve for z_bar on raw coordinate arrays (hot-path core).

    Returns (z_bar, iterations, residual); ``initial`` warm-starts the
    iteration (defaults to z itself).
    """
    if not np.isfinite(lam):
        raise ParameterError("lambda must be finite")
    if not tol > 0:
        raise ParameterError("tol must be positive")
    z = np.asarray(z, dtype=float)
    z_bar = z.copy() if initial is None else np.asarray(initial, dtype=float).copy()
    half = z.size // 2
    half_lam = 0.5 * lam
    grad_fn = model.gradient
    for it in range(max_iter + 1):
        g = np.asarray(grad_fn(z_bar), dtype=float)
        if not np.isfinite(g.sum()):
            raise EvaluationError("model gradient is non-finite", z_bar)
        f = z_bar - z
        f[:half] -= half_lam * g[half:]
        f[half:] += half_lam * g[:half]
        res = float(np.sqrt(f @ f))
        if res <= tol:
            return z_bar, it, res
        if it == max_iter:
            raise NonconvergenceError(
                f"midpoint solve did not reach tol={tol:g} in {max_iter} iterations",
                residual=res,
                iterations=it,
            )
        A = _jacobian(model, lam, z_bar)
        try:
            delta = np.linalg.solve(A, -f)
        except np.linalg.LinAlgError as exc:
            raise LinearSolveError(
                f"singular midpoint Jacobian at lambda={lam:g}; |lambda| likely too large"
            ) from exc
        z_bar = z_bar + delta


def solve_midpoint(
    model: HamiltonianModel,
    lam: float,
    z: ExtendedState,
    tol: float = 1e-12,
    max_iter: int = 50,
    initial: Optional[np.ndarray] = None,
) -> MidpointSolution:
    """Solve f(lambda, z, z_bar) = 0 for the midpoint z_bar(lambda, z)."""
    z_arr = z.coords if isinstance(z, ExtendedState) else np.asarray(z, dtype=float)
    n = z.n if isinstance(z, ExtendedState) else (z_arr.size - 2) // 2
    z_bar, iterations, residual = solve_midpoint_coords(
        model, lam, z_arr, tol=tol, max_iter=max_iter, initial=initial
    )
    partner = 2.0 * z_bar - z_arr
    return MidpointSolution(
        z_bar=ExtendedState(z_bar, n),
        z_partner=ExtendedState(partner, n),
        lam=float(lam),
        iterations=iterations,
        residual=residual,
    )


def kantorovich_report(
    model: HamiltonianModel,
    lam: float,
    z: ExtendedState,
    bounds: RegionBounds,
    delta: float = 0.5,
) -> KantorovichReport:
    """Certificate for solvability of the midpoint equation at (lambda, z).

    eta is computed numerically from the first Newton step at z_bar = z;
    lambda_delta comes from the region constants and delta.  alpha >= 1/2
    yields guaranteed=False rather than an exception.
    """
    if not 0.0 < delta < 1.0:
        raise ParameterError(f"delta must lie in (0, 1), got {delta}")
    z_arr = z.coords if isinstance(z, ExtendedState) else np.asarray(z, dtype=float)
    beta, gamma = 2.0, 0.5
    f0 = -0.5 * lam * apply_J(eval_gradient(model, z_arr))
    A = _jacobian(model, lam, z_arr)
    try:
        eta = float(np.linalg.norm(np.linalg.solve(A, f0)))
    except np.linalg.LinAlgError as exc:
        raise LinearSolveError(
            f"singular midpoint Jacobian at lambda={lam:g}; |lambda| likely too large"
        ) from exc
    alpha = beta * gamma * eta

    m1, m2, gh = bounds.M1, bounds.M2, bounds.gamma_H
    terms = [
        1.0 / m2 if m2 > 0 else np.inf,
        1.0 / gh if gh > 0 else np.inf,
        (1.0 - (1.0 - delta) ** 2) / (2.0 * m1) if m1 > 0 else np.inf,
    ]
    lambda_delta = float(min(terms))

    if alpha < 0.5:
        root = np.sqrt(1.0 - 2.0 * alpha)
        r_minus = (1.0 - root) / (beta * gamma)
        r_plus = (1.0 + root) / (beta * gamma)
        lam_ok = abs(lam) <= (1.0 / m2 if m2 > 0 else np.inf) and abs(lam) <= (
            1.0 / gh if gh > 0 else np.inf
        )
        guaranteed = lam_ok and bounds.contains_ball(z_arr, r_minus)
    else:
        r_minus = np.nan
        r_plus = np.nan
        guaranteed = False

    return KantorovichReport(
        alpha=alpha,
        beta=beta,
        gamma=gamma,
        eta=eta,
        r_minus=r_minus,
        r_plus=r_plus,
        lambda_delta=lambda_delta,
        guaranteed=guaranteed,
    )


def midpoint_sensitivity(model: HamiltonianModel, lam: float, z_bar) -> np.ndarray:
    """dz_bar/dlambda at a solved midpoint: one linear solve.

    Implicit differentiation of the midpoint equation gives
    z_bar_lambda = f_zbar^{-1} (1/2) J H_z(z_bar).
    """
    zb = z_bar.coords if isinstance(z_bar, ExtendedState) else np.asarray(z_bar, dtype=float)
    rhs = 0.5 * apply_J(eval_gradient(model, zb))
    A = _jacobian(model, lam, zb)
    try:
        return np.linalg.solve(A, rhs)
    except np.linalg.LinAlgError as exc:
        raise LinearSolveError(
            f"singular midpoint Jacobian at lambda={lam:g}; |lambda| likely too large"
        ) from exc
