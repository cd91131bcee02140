import numpy as np
import pytest

from semint import models
from semint.bounds import derive_constants, estimate_bounds
from semint.errors import ParameterError, StepNonexistenceError, UnsupportedRegionError
from semint.extphase import apply_J, eval_gradient, eval_value, sample_fields
from semint.trajectory import (
    StepOptions,
    choose_conjugate_momentum,
    classify_vertex,
    conservation_report,
    interpolate_at_time,
    propagate,
    step,
    symplectic_defect,
)

from conftest import pendulum_state


@pytest.fixture(scope="module")
def pend_opts(request):
    model = models.pendulum()
    center = pendulum_state(0.0, 0.0)
    raw = estimate_bounds(model, center, 2.5, 17)
    scaled = raw.scaled(1.1)
    constants = derive_constants(scaled, 0.5)
    return model, StepOptions(bounds=scaled, constants=constants)


def verify_trajectory(model, traj, tol_g=1e-12):
    """Independent post-hoc verifier walking the emitted lists."""
    assert len(traj.midpoints) == len(traj.vertices) - 1 == len(traj.multipliers)
    for k, lam in enumerate(traj.multipliers):
        za, zb, mid = traj.vertices[k], traj.vertices[k + 1], traj.midpoints[k]
        assert np.allclose(
            zb.coords - za.coords,
            lam * apply_J(eval_gradient(model, mid.coords)),
            atol=1e-10,
        )
        assert abs(eval_value(model, mid.coords)) <= tol_g
        assert np.allclose(mid.coords, 0.5 * (za.coords + zb.coords), atol=1e-13)


class TestStep:
    def test_fixed_point_at_balanced_state(self, pend_opts):
        model, opts = pend_opts
        z = pendulum_state(0.0, 1.0, wp=0.5)  # H = 0, psi = 1
        result = step(model, z, "forward", opts)
        assert result.fixed_point
        assert result.lam == 0.0
        assert result.z_next is z

    def test_forward_step_reference_point(self, pend_opts):
        model, opts = pend_opts
        z = pendulum_state(0.0, 1.0, wp=0.501)  # H = 1e-3
        result = step(model, z, "forward", opts)
        assert result.lam == pytest.approx(np.sqrt(8e-3), abs=1e-3)
        # the time advances by exactly lambda; wp is frozen
        assert result.z_next.t - z.t == pytest.approx(result.lam, abs=1e-12)
        assert result.z_next.wp == pytest.approx(z.wp, abs=1e-14)

    def test_nonexistence_in_region1(self, pend_opts):
        model, opts = pend_opts
        # psi = 1 and H < 0 makes the ratio negative: no multiplier at all
        z = pendulum_state(0.0, 1.0, wp=0.4)
        with pytest.raises(StepNonexistenceError) as err:
            step(model, z, "forward", opts)
        assert err.value.prediction.case_label == "EU_1(i)"

    def test_backward_step(self, pend_opts):
        model, opts = pend_opts
        z = pendulum_state(0.0, 1.0, wp=0.501)
        result = step(model, z, "backward", opts)
        assert result.lam == pytest.approx(-np.sqrt(8e-3), abs=1e-3)
        assert result.z_next.t < z.t

    def test_time_reversal_roundtrip(self, pend_opts):
        model, opts = pend_opts
        wp0 = choose_conjugate_momentum(model, 1.0, 0.0, 0.5, 0.1)
        z = pendulum_state(1.0, 0.5, wp=wp0)
        fwd = step(model, z, "forward", opts)
        back = step(model, fwd.z_next, "backward", opts)
        assert back.lam == pytest.approx(-fwd.lam, abs=1e-10)
        assert np.allclose(back.z_next.coords, z.coords, atol=1e-9)


class TestPropagate:
    def test_run_satisfies_invariants(self, pend_opts):
        model, opts = pend_opts
        wp0 = choose_conjugate_momentum(model, 1.0, 0.0, 0.5, 0.1)
        z0 = pendulum_state(1.0, 0.5, wp=wp0)
        traj = propagate(model, z0, 300, opts)
        assert len(traj.vertices) == 301
        verify_trajectory(model, traj)
        dwp = max(abs(b.wp - a.wp) for a, b in zip(traj.vertices, traj.vertices[1:]))
        assert dwp <= 1e-12

    def test_immediate_termination(self, pend_opts):
        model, opts = pend_opts
        z0 = pendulum_state(0.0, 1.0, wp=0.4)  # negative ratio: no step exists
        traj = propagate(model, z0, 10, opts)
        assert len(traj.vertices) == 1
        assert traj.midpoints == [] and traj.multipliers == []
        assert traj.events[0].index == 0
        assert traj.events[0].kind == "terminated"
        assert "EU_1(i)" in traj.events[0].detail

    def test_fixed_point_stops_run(self, pend_opts):
        model, opts = pend_opts
        z0 = pendulum_state(0.0, 1.0, wp=0.5)
        traj = propagate(model, z0, 10, opts)
        assert len(traj.multipliers) == 0
        assert traj.events[0].kind == "fixed-point"

    def test_t_stop(self, pend_opts):
        model, opts = pend_opts
        wp0 = choose_conjugate_momentum(model, 1.0, 0.0, 0.5, 0.1)
        z0 = pendulum_state(1.0, 0.5, wp=wp0)
        traj = propagate(model, z0, 1000, opts, t_stop=2.0)
        assert traj.vertices[-1].t >= 2.0
        assert traj.vertices[-2].t < 2.0 + 0.2

    def test_rejects_zero_steps(self, pend_opts):
        model, opts = pend_opts
        with pytest.raises(ParameterError):
            propagate(model, pendulum_state(0, 1, wp=0.501), 0, opts)


class TestClassifyVertex:
    def test_region1_cases(self, pend_opts):
        model, opts = pend_opts
        bounds, constants = opts.bounds, opts.constants
        assert classify_vertex(model, pendulum_state(0, 1, wp=0.4), bounds, constants).kind == "none"
        assert (
            classify_vertex(model, pendulum_state(0, 1, wp=0.5), bounds, constants).kind
            == "fixed-point"
        )
        vc = classify_vertex(model, pendulum_state(0, 1, wp=0.5 + 1e-6), bounds, constants)
        assert vc.kind == "pass-through"
        assert vc.ratio_kind == "H/psi"
        # far above the window: no multiplier can exist
        assert (
            classify_vertex(model, pendulum_state(0, 1, wp=1.5), bounds, constants).kind == "none"
        )

    def test_pass_through_implies_both_roots(self, pend_opts):
        from semint.constraint import cubic_model
        from semint.multiplier import classify_region, predict_roots, solve_roots

        model, opts = pend_opts
        bounds, constants = opts.bounds, opts.constants
        hits = 0
        for q in np.linspace(-1.2, 1.2, 4):
            for p in np.linspace(0.8, 1.8, 4):
                base = pendulum_state(q, p)
                fields = sample_fields(model, base)
                if abs(fields.psi) < 0.3:
                    continue
                cubic0 = cubic_model(model, base, constants)
                region0 = classify_region(cubic0)
                if region0.tag != "I":
                    continue
                pred0 = predict_roots(region0, cubic0, constants)
                target = 0.5 * (3.0 / 32.0) * pred0.capital_lambda**2
                z = pendulum_state(q, p, wp=target * fields.psi - (fields.H - base.wp))
                vc = classify_vertex(model, z, bounds, constants)
                if vc.kind != "pass-through":
                    continue
                cubic = cubic_model(model, z, constants)
                region = classify_region(cubic)
                roots = solve_roots(model, z, predict_roots(region, cubic, constants))
                assert roots.lambda_plus is not None and roots.lambda_minus is not None
                hits += 1
        assert hits >= 6

    def test_region3_cases(self, pend_opts):
        from test_multiplier import on_psi_zero_curve, pendulum_wp_for_ratio

        model, opts = pend_opts
        bounds, constants = opts.bounds, opts.constants
        q = 2.0
        p = on_psi_zero_curve(q)
        psip = sample_fields(model, pendulum_state(q, p)).psi_prime
        # H = 0 with psi = 0, psi' != 0: fixed point
        z0 = pendulum_state(q, p, wp=pendulum_wp_for_ratio(q, p, 0.0, psip))
        assert classify_vertex(model, z0, bounds, constants).kind == "fixed-point"
        # small |H/psi'|: trajectory begins or ends here
        vc = classify_vertex(
            model,
            pendulum_state(q, p, wp=pendulum_wp_for_ratio(q, p, 1e-12, psip)),
            bounds,
            constants,
        )
        assert vc.kind == "begins-or-ends"
        assert vc.ratio_kind == "H/psi_prime"
        # large ratio: nothing
        vc = classify_vertex(
            model,
            pendulum_state(q, p, wp=pendulum_wp_for_ratio(q, p, 1.0, psip)),
            bounds,
            constants,
        )
        assert vc.kind == "none"

    def test_region2_bifurcation_cases(self, pendulum):
        from test_multiplier import on_psi_zero_curve, pendulum_wp_for_ratio

        q = 2.0
        p = on_psi_zero_curve(q)
        psi_target = 8e-4
        for _ in range(60):
            val = models.pendulum_psi(q, p) - psi_target
            p -= val / (2.0 * p * np.cos(q))
        center = pendulum_state(q, p, wp=-(0.5 * p * p - np.cos(q)))
        raw = estimate_bounds(pendulum, center, 0.35, 13)
        bounds = raw.scaled(1.1)
        constants = derive_constants(bounds, 0.5)
        fields = sample_fields(pendulum, pendulum_state(q, p))
        ratio2 = (fields.psi / fields.psi_prime) ** 2

        z_zero = pendulum_state(q, p, wp=pendulum_wp_for_ratio(q, p, 0.0, fields.psi))
        assert classify_vertex(pendulum, z_zero, bounds, constants).kind == "bifurcates"

        r_small = 0.5 * (9.0 / 125.0) * ratio2
        z_pos = pendulum_state(q, p, wp=pendulum_wp_for_ratio(q, p, r_small, fields.psi))
        assert classify_vertex(pendulum, z_pos, bounds, constants).kind == "bifurcates"

        # negative ratio small enough for the ghost window, with H above tol_g
        z_neg = pendulum_state(q, p, wp=pendulum_wp_for_ratio(q, p, -1e-7, fields.psi))
        assert classify_vertex(pendulum, z_neg, bounds, constants).kind == "begins-or-ends"

    def test_equilibrium_degenerate(self, pend_opts):
        model, opts = pend_opts
        vc = classify_vertex(model, pendulum_state(0, 0, wp=1.0), opts.bounds, opts.constants)
        assert vc.kind == "degenerate"


class TestGhostPolicy:
    @pytest.fixture()
    def bifurcation_site(self, pendulum):
        from test_multiplier import on_psi_zero_curve, pendulum_wp_for_ratio

        q = 2.0
        p = on_psi_zero_curve(q)
        for _ in range(60):
            val = models.pendulum_psi(q, p) - 8e-4
            p -= val / (2.0 * p * np.cos(q))
        center = pendulum_state(q, p, wp=-(0.5 * p * p - np.cos(q)))
        raw = estimate_bounds(pendulum, center, 0.35, 13)
        bounds = raw.scaled(1.1)
        constants = derive_constants(bounds, 0.5)
        fields = sample_fields(pendulum, pendulum_state(q, p))
        r = 0.8 * (9.0 / 125.0) * (fields.psi / fields.psi_prime) ** 2
        z = pendulum_state(q, p, wp=pendulum_wp_for_ratio(q, p, r, fields.psi))
        return z, bounds, constants, fields

    def test_default_policy_takes_regular_root_logs_bifurcation(
        self, pendulum, bifurcation_site
    ):
        z, bounds, constants, fields = bifurcation_site
        opts = StepOptions(bounds=bounds, constants=constants, tol_g=1e-13)
        result = step(pendulum, z, "forward", opts)
        assert not result.took_ghost
        assert result.ghost_alongside
        traj = propagate(pendulum, z, 1, opts)
        assert any(e.kind == "bifurcation" for e in traj.events)

    def test_follow_ghost_policy_takes_ghost_branch(self, pendulum, bifurcation_site):
        z, bounds, constants, fields = bifurcation_site
        opts = StepOptions(bounds=bounds, constants=constants, tol_g=1e-13, policy="follow-ghost")
        result = step(pendulum, z, "forward", opts)
        assert result.took_ghost
        # the ghost branch multiplier stays bounded away from zero
        c = abs(fields.psi / fields.psi_prime)
        assert abs(result.lam) > (6.0 / 5.0) * c
        traj = propagate(pendulum, z, 1, opts)
        assert any(e.kind == "ghost-taken" for e in traj.events)


class TestConservation:
    def test_pendulum_report(self, pend_opts):
        model, opts = pend_opts
        wp0 = choose_conjugate_momentum(model, 1.0, 0.0, 0.5, 0.1)
        z0 = pendulum_state(1.0, 0.5, wp=wp0)
        traj = propagate(model, z0, 200, opts)
        report = conservation_report(model, traj, defect_stride=25)
        assert report.max_energy_residual <= 1e-10
        assert report.max_wp_drift <= 1e-12
        assert report.max_symplectic_defect <= 1e-6

    def test_oscillator_energy_machine_precision(self):
        model = models.oscillator(1.0)
        center = pendulum_state(0.0, 0.0)
        raw = estimate_bounds(model, center, 2.0, 9)
        constants = derive_constants(raw.scaled(1.1), 0.5)
        opts = StepOptions(bounds=raw.scaled(1.1), constants=constants)
        wp0 = choose_conjugate_momentum(model, 1.0, 0.0, 0.0, 0.05)
        z0 = pendulum_state(1.0, 0.0, wp=wp0)
        traj = propagate(model, z0, 100, opts)
        assert len(traj.multipliers) == 100
        report = conservation_report(model, traj, defect_stride=50)
        assert report.max_energy_residual <= 5e-14

    def test_symplectic_defect_random_states(self, pend_opts, rng):
        model, opts = pend_opts
        for _ in range(5):
            z = pendulum_state(rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5), wp=rng.uniform(-1, 1))
            defect = symplectic_defect(model, z, 0.1)
            assert defect <= 1e-6


class TestChooseConjugateMomentum:
    def test_pendulum_reference_value(self, pend_opts):
        model, opts = pend_opts
        wp0 = choose_conjugate_momentum(model, 1.0, 0.0, 0.5, 0.1)
        psi0 = 0.25 * np.cos(1.0) + np.sin(1.0) ** 2
        leading = np.cos(1.0) - 0.125 + psi0 * 0.00125
        assert wp0 == pytest.approx(leading, abs=2e-4)
        # the solved forward multiplier must land near the target
        result = step(model, pendulum_state(1.0, 0.5, wp=wp0), "forward", opts)
        assert 0.09 <= result.lam <= 0.11

    def test_small_target_limit(self, pend_opts):
        model, _ = pend_opts
        wp0 = choose_conjugate_momentum(model, 1.0, 0.0, 0.5, 1e-4)
        assert wp0 == pytest.approx(np.cos(1.0) - 0.125, abs=1e-8)

    def test_halving_target_quarters_energy(self, pend_opts):
        model, _ = pend_opts
        h_values = []
        for target in (0.08, 0.04):
            wp0 = choose_conjugate_momentum(model, 1.0, 0.0, 0.5, target)
            h_values.append(eval_value(model, pendulum_state(1.0, 0.5, wp=wp0).coords))
        assert h_values[0] / h_values[1] == pytest.approx(4.0, rel=0.05)

    def test_psi_zero_unsupported(self, pend_opts):
        from test_multiplier import on_psi_zero_curve

        model, _ = pend_opts
        q = 2.0
        p = on_psi_zero_curve(q)
        with pytest.raises(UnsupportedRegionError):
            choose_conjugate_momentum(model, q, 0.0, p, 0.1)


class TestInterpolation:
    def test_linear_on_segments(self, pend_opts):
        model, opts = pend_opts
        wp0 = choose_conjugate_momentum(model, 1.0, 0.0, 0.5, 0.1)
        traj = propagate(model, pendulum_state(1.0, 0.5, wp=wp0), 30, opts)
        t_mid = 0.5 * (traj.vertices[3].t + traj.vertices[4].t)
        z = interpolate_at_time(traj, t_mid)
        assert np.allclose(
            z.coords, 0.5 * (traj.vertices[3].coords + traj.vertices[4].coords), atol=1e-12
        )
        # vertex times are reproduced exactly
        z3 = interpolate_at_time(traj, traj.vertices[3].t)
        assert np.allclose(z3.coords, traj.vertices[3].coords, atol=1e-14)

    def test_out_of_range_rejected(self, pend_opts):
        model, opts = pend_opts
        wp0 = choose_conjugate_momentum(model, 1.0, 0.0, 0.5, 0.1)
        traj = propagate(model, pendulum_state(1.0, 0.5, wp=wp0), 5, opts)
        with pytest.raises(ParameterError):
            interpolate_at_time(traj, -1.0)
