"""Built-in extended-phase-space Hamiltonian models.

Each model carries analytic gradient, Hessian and psi-gradient.  The closed
forms of psi and its bracket with H are exported alongside so tests can use
them as oracles against the generic finite-difference machinery.
"""

from __future__ import annotations

import numpy as np

from .errors import ParameterError
from .extphase import HamiltonianModel

__all__ = [
    "pendulum",
    "oscillator",
    "free_time",
    "pendulum_psi",
    "pendulum_psi_prime",
    "oscillator_midpoint",
    "by_name",
]


def pendulum() -> HamiltonianModel:
    """Unit pendulum lifted to extended phase space: H = wp + p^2/2 - cos q.

    Closed forms used as oracles elsewhere:
        psi(z)  = p^2 cos q + sin^2 q
        psi'(z) = -p^3 sin q
    so psi vanishes on the v-shaped curves p^2 = -sin^2 q / cos q and psi'
    vanishes on p = 0 and q in {0, +-pi}.
    """

    def value(z):
        q, p, wp = z[0], z[2], z[3]
        return wp + 0.5 * p * p - np.cos(q)

    def gradient(z):
        q, p = z[0], z[2]
        return np.array([np.sin(q), 0.0, p, 1.0])

    def hessian(z):
        q = z[0]
        return np.diag([np.cos(q), 0.0, 1.0, 0.0])

    def psi_grad(z):
        q, p = z[0], z[2]
        return np.array(
            [-p * p * np.sin(q) + np.sin(2 * q), 0.0, 2 * p * np.cos(q), 0.0]
        )

    return HamiltonianModel(
        n=1,
        value=value,
        gradient=gradient,
        hessian=hessian,
        psi_gradient=psi_grad,
        time_independent=True,
        wp_affine=True,
        hessian_symmetric=True,
        name="pendulum",
    )


def pendulum_psi(q: float, p: float) -> float:
    return p * p * np.cos(q) + np.sin(q) ** 2


def pendulum_psi_prime(q: float, p: float) -> float:
    return -(p**3) * np.sin(q)


def oscillator(omega: float = 1.0) -> HamiltonianModel:
    """Harmonic oscillator lift: H = wp + (p^2 + omega^2 q^2)/2.

    The midpoint equations are linear, so the implicit solve has the closed
    form in :func:`oscillator_midpoint`; psi = omega^2 (p^2 + omega^2 q^2) is
    nonnegative and its bracket with H vanishes identically.
    """
    if not omega > 0:
        raise ParameterError(f"omega must be positive, got {omega}")
    w2 = float(omega) ** 2

    def value(z):
        q, p, wp = z[0], z[2], z[3]
        return wp + 0.5 * (p * p + w2 * q * q)

    def gradient(z):
        q, p = z[0], z[2]
        return np.array([w2 * q, 0.0, p, 1.0])

    def hessian(z):
        return np.diag([w2, 0.0, 1.0, 0.0])

    def psi_grad(z):
        q, p = z[0], z[2]
        return np.array([2 * w2 * w2 * q, 0.0, 2 * w2 * p, 0.0])

    return HamiltonianModel(
        n=1,
        value=value,
        gradient=gradient,
        hessian=hessian,
        psi_gradient=psi_grad,
        time_independent=True,
        wp_affine=True,
        hessian_symmetric=True,
        name="oscillator",
    )


def oscillator_midpoint(z: np.ndarray, lam: float, omega: float = 1.0):
    """Closed-form midpoint of the oscillator: solves the implicit equations.

        q_bar = (q + lam p / 2) / (1 + omega^2 lam^2 / 4)
        p_bar = (p - omega^2 lam q / 2) / (1 + omega^2 lam^2 / 4)
        t_bar = t + lam / 2,  wp_bar = wp
    """
    q, t, p, wp = z
    w2 = omega * omega
    den = 1.0 + w2 * lam * lam / 4.0
    q_bar = (q + 0.5 * lam * p) / den
    p_bar = (p - 0.5 * w2 * lam * q) / den
    return np.array([q_bar, t + 0.5 * lam, p_bar, wp])


def free_time(n: int = 1) -> HamiltonianModel:
    """Degenerate model H = wp: every derivative beyond dH/dwp vanishes."""
    dim = 2 * n + 2

    def value(z):
        return float(z[dim - 1])

    def gradient(z):
        g = np.zeros(dim)
        g[dim - 1] = 1.0
        return g

    def hessian(z):
        return np.zeros((dim, dim))

    def psi_grad(z):
        return np.zeros(dim)

    return HamiltonianModel(
        n=n,
        value=value,
        gradient=gradient,
        hessian=hessian,
        psi_gradient=psi_grad,
        time_independent=True,
        wp_affine=True,
        hessian_symmetric=True,
        name="free_time",
    )


def by_name(name: str, **params) -> HamiltonianModel:
    """Model lookup used by the CLI config loader."""
    if name == "pendulum":
        return pendulum()
    if name == "oscillator":
        return oscillator(**params)
    if name == "free_time":
        return free_time(**{k: int(v) for k, v in params.items()})
    raise ParameterError(f"unknown model '{name}'")
