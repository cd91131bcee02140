"""Extended-phase-space primitives.

A state is a point z = (q_1..q_n, t, p_1..p_n, wp) where t rides along as an
extra position coordinate and wp is the momentum conjugate to time, so the
space has dimension 2n+2.  The canonical structure matrix J pairs the
(q_1..q_n, t) block against the (p_1..p_n, wp) block.

Everything here is pure: models must not mutate state during evaluation, so
they can be shared freely across threads or processes.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DimensionError, EvaluationError

__all__ = [
    "ExtendedState",
    "HamiltonianModel",
    "ClassicalModel",
    "FieldSample",
    "apply_J",
    "sample_fields",
    "autonomize",
    "finite_difference_model",
    "fd_gradient",
    "fd_hessian",
    "psi_fd_step",
    "states_to_csv",
    "states_from_csv",
    "state_to_json",
    "state_from_json",
]


@dataclass(frozen=True)
class ExtendedState:
    """A point z = (q_1..q_n, t, p_1..p_n, wp) in extended phase space."""

    coords: np.ndarray
    n: int

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=float)
        object.__setattr__(self, "coords", coords)
        if self.n < 1:
            raise DimensionError(f"need n >= 1, got n={self.n}")
        if coords.ndim != 1 or coords.size != 2 * self.n + 2:
            raise DimensionError(
                f"state for n={self.n} needs {2 * self.n + 2} coordinates, "
                f"got shape {coords.shape}"
            )
        if not np.all(np.isfinite(coords)):
            raise EvaluationError("non-finite state coordinates", coords)

    @classmethod
    def from_parts(cls, q, t, p, wp) -> "ExtendedState":
        q = np.atleast_1d(np.asarray(q, dtype=float))
        p = np.atleast_1d(np.asarray(p, dtype=float))
        if q.size != p.size:
            raise DimensionError(f"q has {q.size} components but p has {p.size}")
        coords = np.concatenate([q, [float(t)], p, [float(wp)]])
        return cls(coords, q.size)

    @property
    def q(self) -> np.ndarray:
        return self.coords[: self.n]

    @property
    def t(self) -> float:
        return float(self.coords[self.n])

    @property
    def p(self) -> np.ndarray:
        return self.coords[self.n + 1 : 2 * self.n + 1]

    @property
    def wp(self) -> float:
        return float(self.coords[2 * self.n + 1])

    def replace_coords(self, coords) -> "ExtendedState":
        return ExtendedState(np.asarray(coords, dtype=float), self.n)


@dataclass(frozen=True)
class HamiltonianModel:
    """Evaluator bundle for H, its gradient and its Hessian on R^(2n+2).

    ``value``, ``gradient`` and ``hessian`` each take a coordinate array of
    length 2n+2.  ``psi_gradient``, when supplied, gives the gradient of the
    curvature scalar psi analytically; otherwise callers fall back to central
    finite differences of psi.  ``time_independent`` / ``wp_affine`` let the
    region sampler skip the t / wp axes without probing.
    """

    n: int
    value: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    hessian: Callable[[np.ndarray], np.ndarray]
    gradient_mode: str = "analytic"
    hessian_mode: str = "analytic"
    fd_step: float = 1e-6
    psi_gradient: Optional[Callable[[np.ndarray], np.ndarray]] = None
    time_independent: Optional[bool] = None
    wp_affine: Optional[bool] = None
    hessian_symmetric: bool = False  # skip the symmetry check for exact models
    name: str = ""

    @property
    def dim(self) -> int:
        return 2 * self.n + 2


@dataclass(frozen=True)
class ClassicalModel:
    """A classical Hamiltonian H_c(q, t, p) before lifting to extended space.

    Coordinates are ordered (q_1..q_n, t, p_1..p_n), i.e. the extended layout
    with the wp slot dropped.  ``gradient`` returns a (2n+1,) vector and
    ``hessian`` a (2n+1, 2n+1) matrix in that ordering.
    """

    n: int
    value: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    hessian: Callable[[np.ndarray], np.ndarray]
    time_independent: Optional[bool] = None
    name: str = ""


@dataclass(frozen=True)
class FieldSample:
    """H, its derivatives and the curvature scalars at one point.

    ``psi`` is the quadratic form (J H_z)^T H_zz (J H_z); ``psi_prime`` is its
    Poisson bracket with H, i.e. psi_z^T J H_z.
    """

    H: float
    grad: np.ndarray
    hess: np.ndarray
    psi: float
    psi_prime: float


def apply_J(v: np.ndarray) -> np.ndarray:
    """Apply the structure matrix J = ((0, I), (-I, 0)) to a vector.

    Splitting v = (a, b) at the midpoint gives J v = (b, -a).  The length
    must be even; for extended-phase-space vectors it is 2n+2 and the blocks
    are the position block (q, t) and the momentum block (p, wp).
    """
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.size % 2 != 0:
        raise DimensionError(f"J needs an even-length vector, got shape {v.shape}")
    half = v.size // 2
    return np.concatenate([v[half:], -v[:half]])


def _coords(z) -> np.ndarray:
    if isinstance(z, ExtendedState):
        return z.coords
    return np.asarray(z, dtype=float)


def _check_dim(model: HamiltonianModel, z: np.ndarray) -> None:
    if z.ndim != 1 or z.size != model.dim:
        raise DimensionError(
            f"model has dimension {model.dim}, state has shape {z.shape}"
        )


def eval_gradient(model: HamiltonianModel, z) -> np.ndarray:
    z = _coords(z)
    _check_dim(model, z)
    g = np.asarray(model.gradient(z), dtype=float)
    # a single NaN/Inf component poisons the sum, which is far cheaper to test
    if not np.isfinite(g.sum()):
        raise EvaluationError("model gradient is non-finite", z)
    return g


def eval_hessian(model: HamiltonianModel, z) -> np.ndarray:
    """Evaluate the Hessian, check symmetry, and symmetrize before use."""
    z = _coords(z)
    _check_dim(model, z)
    h = np.asarray(model.hessian(z), dtype=float)
    if not np.isfinite(h.sum()):
        raise EvaluationError("model hessian is non-finite", z)
    if model.hessian_symmetric:
        return h
    scale = 1.0 + np.linalg.norm(h)
    if np.linalg.norm(h - h.T) > 1e-10 * scale:
        raise EvaluationError("model hessian is not symmetric", z)
    return 0.5 * (h + h.T)


def eval_value(model: HamiltonianModel, z) -> float:
    z = _coords(z)
    _check_dim(model, z)
    H = float(model.value(z))
    if not np.isfinite(H):
        raise EvaluationError("model value is non-finite", z)
    return H


def psi_fd_step(z: np.ndarray, base: float = 1e-5) -> float:
    """Default step for differencing psi: scales with the point's size."""
    return base * max(1.0, float(np.linalg.norm(z)))


def psi_value(model: HamiltonianModel, z) -> float:
    """The curvature scalar psi(z) = (J H_z)^T H_zz (J H_z)."""
    z = _coords(z)
    w = apply_J(eval_gradient(model, z))
    return float(w @ eval_hessian(model, z) @ w)


def psi_gradient(model: HamiltonianModel, z, step: Optional[float] = None) -> np.ndarray:
    """Gradient of psi: analytic when the model carries one, else central FD."""
    z = _coords(z)
    if model.psi_gradient is not None:
        g = np.asarray(model.psi_gradient(z), dtype=float)
        if not np.all(np.isfinite(g)):
            raise EvaluationError("model psi gradient is non-finite", z)
        return g
    h = psi_fd_step(z) if step is None else float(step)
    out = np.empty(z.size)
    for i in range(z.size):
        e = np.zeros(z.size)
        e[i] = h
        out[i] = (psi_value(model, z + e) - psi_value(model, z - e)) / (2 * h)
    return out


def sample_fields(model: HamiltonianModel, z, psi_step: Optional[float] = None) -> FieldSample:
    """Evaluate H, H_z, H_zz, psi and psi' = [psi, H] at one point."""
    z = _coords(z)
    H = eval_value(model, z)
    grad = eval_gradient(model, z)
    hess = eval_hessian(model, z)
    w = apply_J(grad)
    psi = float(w @ hess @ w)
    pz = psi_gradient(model, z, step=psi_step)
    psi_prime = float(pz @ w)
    return FieldSample(H=H, grad=grad, hess=hess, psi=psi, psi_prime=psi_prime)


def autonomize(classical: ClassicalModel) -> HamiltonianModel:
    """Lift a classical Hamiltonian to extended phase space: H = wp + H_c.

    The gradient gains a unit wp component and the Hessian a zero wp
    row/column, so dH/dwp = 1 identically and dH/dt = dH_c/dt.
    """
    n = classical.n
    dim = 2 * n + 2

    def value(z: np.ndarray) -> float:
        return float(z[dim - 1]) + float(classical.value(z[: dim - 1]))

    def gradient(z: np.ndarray) -> np.ndarray:
        g = np.empty(dim)
        g[: dim - 1] = classical.gradient(z[: dim - 1])
        g[dim - 1] = 1.0
        return g

    def hessian(z: np.ndarray) -> np.ndarray:
        h = np.zeros((dim, dim))
        h[: dim - 1, : dim - 1] = classical.hessian(z[: dim - 1])
        return h

    return HamiltonianModel(
        n=n,
        value=value,
        gradient=gradient,
        hessian=hessian,
        time_independent=classical.time_independent,
        wp_affine=True,
        name=classical.name or "lifted",
    )


def finite_difference_model(
    n: int,
    value: Callable[[np.ndarray], float],
    step: float = 1e-6,
    name: str = "",
) -> HamiltonianModel:
    """Build a model from a value function alone, differencing for the rest.

    The gradient is a central difference of the value (accurate to O(step^2))
    and the Hessian a central difference of that gradient.
    """
    dim = 2 * n + 2

    def gradient(z: np.ndarray) -> np.ndarray:
        out = np.empty(dim)
        for i in range(dim):
            e = np.zeros(dim)
            e[i] = step
            out[i] = (value(z + e) - value(z - e)) / (2 * step)
        return out

    def hessian(z: np.ndarray) -> np.ndarray:
        h_step = max(step, 1e-5)
        cols = []
        for i in range(dim):
            e = np.zeros(dim)
            e[i] = h_step
            cols.append((gradient(z + e) - gradient(z - e)) / (2 * h_step))
        h = np.column_stack(cols)
        return 0.5 * (h + h.T)

    return HamiltonianModel(
        n=n,
        value=value,
        gradient=gradient,
        hessian=hessian,
        gradient_mode="finite-difference",
        hessian_mode="finite-difference",
        fd_step=step,
        name=name or "finite-difference",
    )


def fd_gradient(model: HamiltonianModel, z, step: float = 1e-6) -> np.ndarray:
    """Central finite-difference gradient of H, for cross-checking models."""
    z = _coords(z)
    out = np.empty(z.size)
    for i in range(z.size):
        e = np.zeros(z.size)
        e[i] = step
        out[i] = (eval_value(model, z + e) - eval_value(model, z - e)) / (2 * step)
    return out


def fd_hessian(model: HamiltonianModel, z, step: float = 1e-5) -> np.ndarray:
    """Central finite-difference Hessian built from the model gradient."""
    z = _coords(z)
    cols = []
    for i in range(z.size):
        e = np.zeros(z.size)
        e[i] = step
        cols.append((eval_gradient(model, z + e) - eval_gradient(model, z - e)) / (2 * step))
    h = np.column_stack(cols)
    return 0.5 * (h + h.T)


# ---------------------------------------------------------------------------
# Serialization: CSV rows and JSON arrays, both in coordinate order
# q_1..q_n, t, p_1..p_n, wp.


def state_header(n: int) -> list[str]:
    return [f"q{i + 1}" for i in range(n)] + ["t"] + [f"p{i + 1}" for i in range(n)] + ["wp"]


def states_to_csv(states: Sequence[ExtendedState]) -> str:
    if not states:
        raise ValueError("cannot serialize an empty state list")
    n = states[0].n
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(state_header(n))
    for s in states:
        writer.writerow([repr(float(x)) for x in s.coords])
    return buf.getvalue()


def states_from_csv(text: str) -> list[ExtendedState]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        return []
    header = rows[0]
    n = (len(header) - 2) // 2
    return [ExtendedState(np.array([float(x) for x in row]), n) for row in rows[1:] if row]


def state_to_json(state: ExtendedState) -> str:
    return json.dumps([float(x) for x in state.coords])


def state_from_json(text: str, n: int) -> ExtendedState:
    return ExtendedState(np.asarray(json.loads(text), dtype=float), n)
