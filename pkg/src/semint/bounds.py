"""Sup-norm and Lipschitz constants over a declared region.

``estimate_bounds`` grid-samples the derivative norms of H and of the
curvature scalar psi over a box and returns the observed maxima.  Sampling
gives lower bounds of the true suprema, so certificate users should inflate
them with :meth:`RegionBounds.scaled` (the CLI default factor is 1.1) before
deriving the error constant K and the decoupling radius lambda_delta.

Vector norms are Euclidean; matrix norms are Frobenius, which upper-bounds
the spectral norm, so every derived constant stays a valid upper bound.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, replace

import numpy as np

from .errors import ParameterError
from .extphase import (
    ExtendedState,
    HamiltonianModel,
    eval_gradient,
    eval_hessian,
    psi_fd_step,
    psi_gradient,
)

__all__ = [
    "RegionBounds",
    "DerivedConstants",
    "estimate_bounds",
    "derive_constants",
    "bounds_to_json",
    "bounds_from_json",
]


@dataclass(frozen=True)
class RegionBounds:
    """Norm bounds valid on a box around ``center``.

    M1 bounds ||H_z||, M2 bounds ||H_zz||_F, gamma_H is the Lipschitz
    constant of H_zz, and N1/N2 bound ||psi_z|| and ||psi_zz||_F.
    ``active_axes`` lists the coordinate axes the constants actually vary
    along; the box is unbounded along the remaining axes.
    """

    M1: float
    M2: float
    gamma_H: float
    N1: float
    N2: float
    center: ExtendedState
    radius: float
    sample_count: int = 0
    mode: str = "user-supplied"
    active_axes: tuple[int, ...] = ()
    safety: float = 1.0

    def __post_init__(self):
        for name in ("M1", "M2", "gamma_H", "N1", "N2"):
            if getattr(self, name) < 0:
                raise ParameterError(f"{name} must be nonnegative")
        if not self.radius > 0:
            raise ParameterError("radius must be positive")

    def scaled(self, factor: float) -> "RegionBounds":
        """Inflate the five sampled constants by a safety factor."""
        if not factor > 0:
            raise ParameterError("safety factor must be positive")
        return replace(
            self,
            M1=self.M1 * factor,
            M2=self.M2 * factor,
            gamma_H=self.gamma_H * factor,
            N1=self.N1 * factor,
            N2=self.N2 * factor,
            safety=self.safety * factor,
        )

    def contains_ball(self, z, r: float) -> bool:
        """Whether the closed ball B(z, r) fits inside the declared box.

        Only the active axes constrain the box; a Euclidean ball lies in a
        box iff every per-axis interval [z_i - r, z_i + r] does.
        """
        z = z.coords if isinstance(z, ExtendedState) else np.asarray(z, dtype=float)
        c = self.center.coords
        axes = self.active_axes or tuple(range(z.size))
        return all(abs(z[i] - c[i]) + r <= self.radius + 1e-15 for i in axes)


@dataclass(frozen=True)
class DerivedConstants:
    """Constants derived from region bounds.

    gamma_z  = 2 M1 M2 + M1^2          (Lipschitz constant of dz_bar/dlambda)
    gamma_h  = N1 gamma_z + M1^2 N2    (Lipschitz constant of dh/dlambda)
    K        = (M1^2 M2^3 + 2 gamma_h) / 32   (quartic error constant)
    lambda_delta = min(1/M2, 1/gamma_H, (1-(1-delta)^2) / (2 M1))
    """

    gamma_z: float
    gamma_h: float
    K: float
    lambda_delta: float
    delta: float


def derive_constants(bounds: RegionBounds, delta: float = 0.5) -> DerivedConstants:
    """Apply the closed-form constant definitions to a set of bounds.

    Zero M2 or gamma_H contributes +inf to the lambda_delta minimum (the
    corresponding hypothesis is vacuous for flat models).
    """
    if not 0.0 < delta < 1.0:
        raise ParameterError(f"delta must lie in (0, 1), got {delta}")
    m1, m2, gh = bounds.M1, bounds.M2, bounds.gamma_H
    n1, n2 = bounds.N1, bounds.N2
    gamma_z = 2.0 * m1 * m2 + m1 * m1
    gamma_h = n1 * gamma_z + m1 * m1 * n2
    K = (m1 * m1 * m2**3 + 2.0 * gamma_h) / 32.0
    terms = [
        1.0 / m2 if m2 > 0 else np.inf,
        1.0 / gh if gh > 0 else np.inf,
        (1.0 - (1.0 - delta) ** 2) / (2.0 * m1) if m1 > 0 else np.inf,
    ]
    return DerivedConstants(
        gamma_z=gamma_z,
        gamma_h=gamma_h,
        K=K,
        lambda_delta=float(min(terms)),
        delta=float(delta),
    )


def _probe_axis_active(model: HamiltonianModel, center: np.ndarray, radius: float, axis: int) -> bool:
    """Probe whether derivative data varies along one axis.

    Heuristic: compare gradient/Hessian at a few offsets along the axis.
    Classical lifts are flat along t and wp, which this detects.
    """
    g0 = eval_gradient(model, center)
    h0 = eval_hessian(model, center)
    scale = 1.0 + np.linalg.norm(g0) + np.linalg.norm(h0)
    for frac in (-1.0, -0.37, 0.37, 1.0):
        z = center.copy()
        z[axis] += frac * radius
        if np.linalg.norm(eval_gradient(model, z) - g0) > 1e-12 * scale:
            return True
        if np.linalg.norm(eval_hessian(model, z) - h0) > 1e-12 * scale:
            return True
    return False


def _active_axes(model: HamiltonianModel, center: np.ndarray, radius: float) -> tuple[int, ...]:
    n = model.n
    axes = list(range(2 * n + 2))
    t_axis, wp_axis = n, 2 * n + 1
    drop = set()
    if model.time_independent is True:
        drop.add(t_axis)
    elif model.time_independent is None and not _probe_axis_active(model, center, radius, t_axis):
        drop.add(t_axis)
    if model.wp_affine is True:
        drop.add(wp_axis)
    elif model.wp_affine is None and not _probe_axis_active(model, center, radius, wp_axis):
        drop.add(wp_axis)
    return tuple(a for a in axes if a not in drop)


def _psi_hessian(model, z, active, step):
    """Central-difference Jacobian of psi_z along the active axes."""
    dim = z.size
    h = np.zeros((dim, dim))
    for j in active:
        e = np.zeros(dim)
        e[j] = step
        h[:, j] = (psi_gradient(model, z + e) - psi_gradient(model, z - e)) / (2 * step)
    return 0.5 * (h + h.T)


def estimate_bounds(
    model: HamiltonianModel,
    center: ExtendedState,
    radius: float,
    samples_per_axis: int,
    pair_samples: int = 20000,
    seed: int = 0,
) -> RegionBounds:
    """Grid-sample derivative norms over the box |z_i - center_i| <= radius.

    The t and wp axes are skipped when the model declares (or probing shows)
    that nothing varies along them.  gamma_H is estimated from grid-neighbor
    Hessian pairs plus a seeded batch of random pairs; enlarging the grid can
    only grow the returned maxima.
    """
    if not radius > 0:
        raise ParameterError(f"radius must be positive, got {radius}")
    if samples_per_axis < 3:
        raise ParameterError("need at least 3 samples per axis")

    c = center.coords
    dim = c.size
    active = _active_axes(model, c, radius)

    grids = []
    for axis in range(dim):
        if axis in active:
            grids.append(np.linspace(c[axis] - radius, c[axis] + radius, samples_per_axis))
        else:
            grids.append(np.array([c[axis]]))
    shape = tuple(len(g) for g in grids)

    points = np.array([p for p in itertools.product(*grids)])
    count = points.shape[0]
    step = psi_fd_step(c + radius)

    m1 = m2 = n1 = n2 = 0.0
    hessians = np.empty((count, dim, dim))
    for i, z in enumerate(points):
        grad = eval_gradient(model, z)
        hess = eval_hessian(model, z)
        hessians[i] = hess
        m1 = max(m1, float(np.linalg.norm(grad)))
        m2 = max(m2, float(np.linalg.norm(hess)))
        n1 = max(n1, float(np.linalg.norm(psi_gradient(model, z))))
        n2 = max(n2, float(np.linalg.norm(_psi_hessian(model, z, active, step))))

    gamma = 0.0
    flat = hessians.reshape(count, -1)
    # neighbor pairs along each grid axis
    idx = np.arange(count).reshape(shape)
    for axis_pos in range(len(shape)):
        if shape[axis_pos] < 2:
            continue
        a = np.moveaxis(idx, axis_pos, 0)
        i1, i2 = a[:-1].ravel(), a[1:].ravel()
        num = np.linalg.norm(flat[i1] - flat[i2], axis=1)
        den = np.linalg.norm(points[i1] - points[i2], axis=1)
        good = den > 0
        if np.any(good):
            gamma = max(gamma, float(np.max(num[good] / den[good])))
    # seeded random pairs for off-axis variation
    if count > 1 and pair_samples > 0:
        rng = np.random.default_rng(seed)
        i1 = rng.integers(0, count, size=pair_samples)
        i2 = rng.integers(0, count, size=pair_samples)
        den = np.linalg.norm(points[i1] - points[i2], axis=1)
        good = den > 0
        if np.any(good):
            num = np.linalg.norm(flat[i1[good]] - flat[i2[good]], axis=1)
            gamma = max(gamma, float(np.max(num / den[good])))

    return RegionBounds(
        M1=m1,
        M2=m2,
        gamma_H=gamma,
        N1=n1,
        N2=n2,
        center=center,
        radius=float(radius),
        sample_count=count,
        mode="sampled",
        active_axes=active,
    )


def bounds_to_json(bounds: RegionBounds) -> str:
    return json.dumps(
        {
            "M1": bounds.M1,
            "M2": bounds.M2,
            "gamma_H": bounds.gamma_H,
            "N1": bounds.N1,
            "N2": bounds.N2,
            "center": [float(x) for x in bounds.center.coords],
            "n": bounds.center.n,
            "radius": bounds.radius,
            "sample_count": bounds.sample_count,
            "mode": bounds.mode,
            "active_axes": list(bounds.active_axes),
            "safety": bounds.safety,
        },
        indent=2,
    )


def bounds_from_json(text: str) -> RegionBounds:
    data = json.loads(text)
    center = ExtendedState(np.asarray(data["center"], dtype=float), int(data["n"]))
    return RegionBounds(
        M1=float(data["M1"]),
        M2=float(data["M2"]),
        gamma_H=float(data["gamma_H"]),
        N1=float(data["N1"]),
        N2=float(data["N2"]),
        center=center,
        radius=float(data["radius"]),
        sample_count=int(data.get("sample_count", 0)),
        mode=str(data.get("mode", "user-supplied")),
        active_axes=tuple(data.get("active_axes", ())),
        safety=float(data.get("safety", 1.0)),
    )
