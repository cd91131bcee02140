"""Desk-scale invariant battery behind ``semint verify``.

Each check returns (name, passed, detail).  The battery covers the module
invariants: structure-matrix algebra, field-sample identities, certificate
behavior, the cubic/derivative error envelopes, monotone-interval soundness,
prediction/solver agreement, and trajectory conservation.  ``k_scale``
injects a corrupted quartic constant so callers can confirm the battery
actually bites.
"""

from __future__ import annotations

import functools

import numpy as np

from . import models
from .bounds import derive_constants, estimate_bounds
from .constraint import ConstraintCurve, cubic_model
from .decoupler import kantorovich_report, solve_midpoint
from .extphase import (
    ExtendedState,
    apply_J,
    eval_gradient,
    fd_gradient,
    sample_fields,
)
from .multiplier import (
    EXISTS_UNIQUE,
    NONE,
    classify_region,
    predict_roots,
    solve_roots,
)
from .trajectory import StepOptions, conservation_report, propagate

PEND_RADIUS = 2.5
DELTA = 0.5
SAFETY = 1.1


@functools.lru_cache(maxsize=2)
def _pendulum_setup(samples=9):
    model = models.pendulum()
    center = ExtendedState.from_parts([0.0], 0.0, [0.0], 0.0)
    raw = estimate_bounds(model, center, PEND_RADIUS, samples)
    scaled = raw.scaled(SAFETY)
    constants = derive_constants(scaled, DELTA)
    return model, raw, scaled, constants


def _sample_states(rng, count, box=2.0):
    qs = rng.uniform(-box, box, count)
    ps = rng.uniform(-box, box, count)
    wps = rng.uniform(-1.5, 1.5, count)
    return [ExtendedState.from_parts([q], 0.0, [p], w) for q, p, w in zip(qs, ps, wps)]


def check_structure_matrix(rng):
    for _ in range(50):
        dim = 2 * int(rng.integers(1, 5)) + 2
        v = rng.standard_normal(dim)
        jv = apply_J(v)
        if abs(np.linalg.norm(jv) - np.linalg.norm(v)) > 1e-15 * (1 + np.linalg.norm(v)):
            return False, "J is not an isometry"
        if np.linalg.norm(apply_J(jv) + v) > 1e-15 * (1 + np.linalg.norm(v)):
            return False, "J^2 != -I"
    return True, "J^2 = -I and isometry on 50 random vectors"


def check_field_sample(rng):
    model = models.pendulum()
    worst = 0.0
    for z in _sample_states(rng, 25):
        fields = sample_fields(model, z)
        w = apply_J(fields.grad)
        quad = float(w @ fields.hess @ w)
        worst = max(worst, abs(fields.psi - quad) / (1 + abs(quad)))
        closed = models.pendulum_psi(z.q[0], z.p[0])
        closed_prime = models.pendulum_psi_prime(z.q[0], z.p[0])
        if abs(fields.psi - closed) > 1e-10 * (1 + abs(closed)):
            return False, f"psi mismatch vs closed form at q={z.q[0]:.3f}"
        if abs(fields.psi_prime - closed_prime) > 1e-8 * (1 + abs(closed_prime)):
            return False, f"psi' mismatch vs closed form at q={z.q[0]:.3f}"
    return worst <= 1e-12, f"psi quadratic-form identity, worst rel dev {worst:.2e}"


def check_fd_gradient(rng):
    model = models.pendulum()
    z = _sample_states(rng, 1)[0]
    exact = eval_gradient(model, z.coords)
    e1 = np.linalg.norm(fd_gradient(model, z.coords, step=1e-3) - exact)
    e2 = np.linalg.norm(fd_gradient(model, z.coords, step=5e-4) - exact)
    ratio = e1 / e2 if e2 > 0 else np.inf
    return 3.0 < ratio < 5.0, f"halving FD step changed error by {ratio:.2f}x (expect ~4)"


def check_oscillator_midpoint(rng):
    model = models.oscillator(1.0)
    worst = 0.0
    for _ in range(10):
        z = np.array([rng.uniform(-2, 2), 0.0, rng.uniform(-2, 2), rng.uniform(-1, 1)])
        lam = rng.uniform(-0.3, 0.3)
        sol = solve_midpoint(model, lam, ExtendedState(z, 1), tol=1e-13)
        closed = models.oscillator_midpoint(z, lam, 1.0)
        worst = max(worst, float(np.max(np.abs(sol.z_bar.coords - closed))))
    return worst <= 1e-12, f"closed-form midpoint agreement, worst dev {worst:.2e}"


def check_kantorovich(rng):
    model, _, scaled, constants = _pendulum_setup()
    ld = constants.lambda_delta
    for z in _sample_states(rng, 20, box=PEND_RADIUS - DELTA):
        lam = rng.uniform(-ld, ld)
        report = kantorovich_report(model, lam, z, scaled, delta=DELTA)
        if not report.guaranteed:
            return False, f"certificate not guaranteed at |lambda|={abs(lam):.3f} <= {ld:.3f}"
        sol = solve_midpoint(model, lam, z, tol=1e-12)
        if np.linalg.norm(sol.z_bar.coords - z.coords) > report.r_minus + 1e-12:
            return False, "midpoint left the certified ball"
    return True, "20/20 certificates guaranteed with solutions inside r_minus"


def check_quartic_bound(rng, k_scale=1.0):
    model, _, scaled, constants = _pendulum_setup()
    K_inj = constants.K * k_scale
    formula = (scaled.M1**2 * scaled.M2**3 + 2 * constants.gamma_h) / 32.0
    if abs(K_inj - formula) > 1e-12 * formula:
        return False, f"K={K_inj:.4g} disagrees with its defining formula {formula:.4g}"
    ld = constants.lambda_delta
    worst = 0.0
    for z in _sample_states(rng, 50, box=PEND_RADIUS - DELTA):
        lam = rng.uniform(-ld, ld)
        cubic = cubic_model(model, z, constants)
        curve = ConstraintCurve(model, z, tol=1e-13)
        defect = abs(curve.g(lam) - cubic(lam))
        envelope = K_inj * lam**4 + 1e-11
        worst = max(worst, defect / envelope if envelope > 0 else 0.0)
        if defect > envelope:
            return False, f"|g - model| = {defect:.2e} exceeds K lam^4 = {envelope:.2e}"
    return True, f"50/50 inside the quartic envelope (worst fill {worst:.1%})"


def check_derivative_bound(rng):
    model, _, scaled, constants = _pendulum_setup()
    ld = constants.lambda_delta
    for z in _sample_states(rng, 30, box=PEND_RADIUS - DELTA):
        lam = rng.uniform(-ld, ld)
        cubic = cubic_model(model, z, constants)
        curve = ConstraintCurve(model, z, tol=1e-13)
        _, dg = curve.g_and_derivative(lam)
        defect = abs(dg - cubic.derivative(lam))
        if defect > 4 * constants.K * abs(lam) ** 3 + 1e-10:
            return False, f"derivative defect {defect:.2e} above 4K|lam|^3"
        _, dg0 = curve.g_and_derivative(0.0)
        if abs(dg0) > 1e-12:
            return False, f"dg/dlambda(0) = {dg0:.2e} != 0"
    return True, "30/30 inside the cubic derivative envelope; zero slope at 0"


def check_monotone_intervals(rng):
    model, _, scaled, constants = _pendulum_setup()
    for z in _sample_states(rng, 5, box=1.8):
        cubic = cubic_model(model, z, constants)
        region = classify_region(cubic)
        if region.tag != "I":
            continue
        pred = predict_roots(region, cubic, constants)
        lam_cap = pred.capital_lambda
        curve = ConstraintCurve(model, z, tol=1e-13)
        for a, b in ((-lam_cap, 0.0), (0.0, lam_cap)):
            xs = np.linspace(a, b, 128)[1:-1]
            signs = {np.sign(curve.g_and_derivative(x)[1]) for x in xs}
            if len(signs - {0.0}) > 1:
                return False, f"dg/dlambda changes sign inside ({a:.3g}, {b:.3g})"
    return True, "dg/dlambda keeps one sign on each monotone interval (128-pt sampling)"


def check_prediction_consistency(rng):
    model, _, scaled, constants = _pendulum_setup()
    agree = 0
    total = 0
    for q in np.linspace(-1.5, 1.5, 4):
        for p in np.linspace(0.4, 1.8, 4):
            base = ExtendedState.from_parts([q], 0.0, [p], 0.0)
            fields = sample_fields(model, base)
            if abs(fields.psi) < 0.3:
                continue
            probe = cubic_model(model, base, constants)
            region0 = classify_region(probe)
            if region0.tag != "I":
                continue
            pred0 = predict_roots(region0, probe, constants)
            lam_cap = pred0.capital_lambda
            for case, ratio in (("exists", 0.5 * 3 / 32), ("none", -0.5)):
                target = ratio * lam_cap**2
                wp = target * fields.psi - (fields.H - base.wp)
                z = ExtendedState.from_parts([q], 0.0, [p], wp)
                cubic = cubic_model(model, z, constants)
                region = classify_region(cubic)
                if region.tag != "I":
                    continue
                pred = predict_roots(region, cubic, constants)
                total += 1
                roots = solve_roots(model, z, pred)
                pos = [r for r in roots.roots if r.lam > 0]
                neg = [r for r in roots.roots if r.lam < 0]
                if case == "exists":
                    ok = (
                        pred.pos_interval == EXISTS_UNIQUE
                        and len(pos) == 1
                        and len(neg) == 1
                    )
                else:
                    curve = ConstraintCurve(model, z, tol=1e-13)
                    vals = [curve.g(x) for x in np.linspace(-lam_cap, lam_cap, 257)]
                    ok = pred.pos_interval == NONE and not _has_sign_change(vals)
                agree += 1 if ok else 0
    return agree == total and total >= 8, f"{agree}/{total} grid cases agree with the solver"


def _has_sign_change(vals):
    signs = [v < 0 for v in vals if v != 0.0]
    return any(a != b for a, b in zip(signs, signs[1:]))


def check_trajectory(rng):
    model, _, scaled, constants = _pendulum_setup()
    from .trajectory import choose_conjugate_momentum

    wp0 = choose_conjugate_momentum(model, 1.0, 0.0, 0.5, 0.1)
    z0 = ExtendedState.from_parts([1.0], 0.0, [0.5], wp0)
    opts = StepOptions(bounds=scaled, constants=constants)
    traj = propagate(model, z0, 100, opts)
    if len(traj.multipliers) < 100:
        return False, f"run terminated early at step {len(traj.multipliers)}"
    report = conservation_report(model, traj, defect_stride=20)
    if report.max_energy_residual > 1e-10:
        return False, f"energy residual {report.max_energy_residual:.2e}"
    if report.max_wp_drift > 1e-12:
        return False, f"wp drift {report.max_wp_drift:.2e}"
    for k in (0, len(traj.multipliers) - 1):
        lam = traj.multipliers[k]
        lhs = traj.vertices[k + 1].coords - traj.vertices[k].coords
        rhs = lam * apply_J(eval_gradient(model, traj.midpoints[k].coords))
        if np.linalg.norm(lhs - rhs) > 1e-9:
            return False, f"step identity violated at k={k}"
        mid = 0.5 * (traj.vertices[k].coords + traj.vertices[k + 1].coords)
        if np.linalg.norm(mid - traj.midpoints[k].coords) > 1e-12:
            return False, f"midpoint is not the segment midpoint at k={k}"
    return True, (
        f"100 steps: |H| <= {report.max_energy_residual:.1e}, "
        f"|dwp| <= {report.max_wp_drift:.1e}"
    )


def check_free_time(rng):
    model = models.free_time()
    center = ExtendedState.from_parts([0.0], 0.0, [0.0], 0.0)
    raw = estimate_bounds(model, center, 1.0, 5)
    if not (raw.M1 == 1.0 and raw.M2 == 0.0 and raw.gamma_H == 0.0 and raw.N1 == 0.0):
        return False, f"free-time constants not (1, 0, 0, 0, 0): {raw}"
    constants = derive_constants(raw, DELTA)
    if constants.K != 0.0:
        return False, f"free-time K = {constants.K} != 0"
    expect = (1 - (1 - DELTA) ** 2) / 2.0
    if abs(constants.lambda_delta - expect) > 1e-15:
        return False, f"free-time lambda_delta {constants.lambda_delta} != {expect}"
    cubic = cubic_model(model, center, constants)
    region = classify_region(cubic)
    return region.tag == "degenerate", f"free-time region tag: {region.tag}"


def run_all(seed: int = 0, k_scale: float = 1.0):
    """Run every check; returns a list of (name, passed, detail)."""
    checks = [
        ("structure-matrix", check_structure_matrix, {}),
        ("field-sample", check_field_sample, {}),
        ("fd-gradient", check_fd_gradient, {}),
        ("oscillator-midpoint", check_oscillator_midpoint, {}),
        ("kantorovich-certificate", check_kantorovich, {}),
        ("quartic-bound", check_quartic_bound, {"k_scale": k_scale}),
        ("derivative-bound", check_derivative_bound, {}),
        ("monotone-intervals", check_monotone_intervals, {}),
        ("prediction-vs-solver", check_prediction_consistency, {}),
        ("trajectory-conservation", check_trajectory, {}),
        ("free-time-trivial", check_free_time, {}),
    ]
    results = []
    for name, fn, kwargs in checks:
        rng = np.random.default_rng(seed)
        try:
            ok, detail = fn(rng, **kwargs)
        except Exception as exc:  # a crash is a failure, not an abort
            ok, detail = False, f"raised {type(exc).__name__}: {exc}"
        results.append((name, ok, detail))
    return results
