import logging
import math
import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from core_model import kerr_chi_for_gain
from kerr_params import C_LIGHT, ZETA_0, CavityParams, KerrMediumParams
from steady_state import (
    InconsistentPowersError, balance_slope, bistable_window, detuning_from_powers, discriminant_root,
    loss_ratio_from_reflection, power_curve, reflected_power, shg_discriminant, solve_steady_states,
    stability_matrix, steady_state_at,
)

OMEGA0 = 2.0 * math.pi * C_LIGHT / 1.064e-6


def lossless_cavity(power=0.6):
    return CavityParams.from_finesse(0.25, OMEGA0, 100.0, power)


def medium_for(zeta, cavity):
    chi = kerr_chi_for_gain(zeta, cavity.input_power, cavity.total_linear_decay, OMEGA0)
    return KerrMediumParams(kerr_susceptibility=chi)


class TestLinearCavity:

    def test_single_lorentzian_root(self):
        cavity = CavityParams.from_finesse(0.25, OMEGA0, 100.0, 0.6, loss_ratio=0.17)
        gamma = cavity.total_linear_decay
        delta = 0.7 * gamma
        states = solve_steady_states(cavity, KerrMediumParams(), delta)
        assert len(states) == 1
        expected = 2.0 * cavity.input_decay * cavity.input_photon_rate / (gamma ** 2 + delta ** 2)
        assert states[0].photon_number == pytest.approx(expected, rel=1e-10)
        assert states[0].is_stable

    def test_resonance_and_half_width(self):
        curve = power_curve(lossless_cavity(), KerrMediumParams(), [0.0, 1.0])
        records = curve.to_records()
        assert records[0]['P_over_Pmax'] == pytest.approx(1.0, rel=1e-10)
        assert records[1]['P_over_Pmax'] == pytest.approx(0.5, rel=1e-10)

    def test_undriven_cavity(self):
        states = solve_steady_states(lossless_cavity(power=0.0), KerrMediumParams(), 1.0e6)
        assert len(states) == 1
        assert states[0].photon_number == 0.0

    def test_non_finite_detuning(self):
        with pytest.raises(ValueError, match="bare_detuning must be finite"):
            solve_steady_states(lossless_cavity(), KerrMediumParams(), float('inf'))


class TestKerrCavity:

    def test_balance_residual(self):
        cavity = lossless_cavity()
        medium = medium_for(-1.0, cavity)
        gamma = cavity.total_linear_decay
        delta = 0.8 * gamma
        for state in solve_steady_states(cavity, medium, delta):
            n = state.photon_number
            lhs = n * (gamma ** 2 + (delta - medium.kerr_susceptibility * n) ** 2)
            rhs = 2.0 * cavity.input_decay * cavity.input_photon_rate
            assert lhs == pytest.approx(rhs, rel=1e-8)

    def test_skewed_single_valued_curve(self):
        cavity = lossless_cavity()
        curve = power_curve(cavity, medium_for(-1.0, cavity), np.linspace(-4.0, 4.0, 801))
        assert curve.max_branch_count() == 1
        records = curve.to_records()
        peak = max(records, key=lambda r: r['P_over_Pmax'])
        assert peak['P_over_Pmax'] == pytest.approx(1.0, abs=1e-3)
        assert peak['xi0'] == pytest.approx(1.0, abs=0.02)

    def test_three_roots_middle_unstable(self):
        zeta = 1.2 * ZETA_0
        cavity = lossless_cavity()
        medium = medium_for(zeta, cavity)
        lo, hi = bistable_window(zeta)
        states = solve_steady_states(cavity, medium, 0.5 * (lo + hi) * cavity.total_linear_decay)
        assert [s.stability for s in states] == ['stable', 'unstable', 'stable']
        assert states[0].photon_number < states[1].photon_number < states[2].photon_number
        assert states[1].growth_rate > 0

    def test_outside_window_single_root(self):
        zeta = 1.2 * ZETA_0
        cavity = lossless_cavity()
        lo, hi = bistable_window(zeta)
        states = solve_steady_states(cavity, medium_for(zeta, cavity), (hi + 1.0) * cavity.total_linear_decay)
        assert len(states) == 1

    def test_brute_force_sign_changes_agree(self):
        zeta = 1.2 * ZETA_0
        cavity = lossless_cavity()
        medium = medium_for(zeta, cavity)
        gamma = cavity.total_linear_decay
        drive = 2.0 * cavity.input_decay * cavity.input_photon_rate
        n_scale = drive / gamma ** 2
        lo, hi = bistable_window(zeta)
        for xi0 in np.linspace(-1.0, 4.0, 26):
            if min(abs(xi0 - lo), abs(xi0 - hi)) < 0.01:
                continue
            delta = xi0 * gamma
            y = np.linspace(1e-6, 1.2, 200001)
            balance = y * (1.0 + (xi0 + zeta * y) ** 2) - 1.0
            sign_changes = int(np.count_nonzero(np.diff(np.sign(balance))))
            states = solve_steady_states(cavity, medium, delta)
            assert len(states) == sign_changes
            for state in states:
                assert state.photon_number / n_scale == pytest.approx(
                    1.0 / (1.0 + state.normalized_detuning ** 2), rel=1e-8)

    def test_balance_slope_is_determinant(self):
        cavity = lossless_cavity()
        gamma = cavity.total_linear_decay
        rng = np.random.default_rng(3)
        for zeta, xi0 in zip(rng.uniform(-3.0, 0.0, size=100), rng.uniform(-1.0, 5.0, size=100)):
            medium = medium_for(zeta, cavity)
            for state in solve_steady_states(cavity, medium, xi0 * gamma):
                matrix = stability_matrix(cavity, medium, state.photon_number, xi0 * gamma)
                slope = balance_slope(cavity, medium, state.photon_number, xi0 * gamma)
                assert np.linalg.det(matrix).real == pytest.approx(slope, rel=1e-6, abs=1e-9 * gamma ** 2)
                if abs(slope) > 1e-6 * gamma ** 2:
                    growth = np.max(np.linalg.eigvals(matrix).real)
                    assert (growth < 0) == (slope > 0) == state.is_stable

    def test_branch_selection(self):
        zeta = 1.2 * ZETA_0
        cavity = lossless_cavity()
        medium = medium_for(zeta, cavity)
        lo, hi = bistable_window(zeta)
        delta = 0.5 * (lo + hi) * cavity.total_linear_decay
        low = steady_state_at(cavity, medium, delta, 'lowest')
        high = steady_state_at(cavity, medium, delta, 'highest')
        assert low.photon_number < high.photon_number

    def test_unknown_branch(self):
        cavity = lossless_cavity()
        with pytest.raises(ValueError, match="branch must be"):
            steady_state_at(cavity, KerrMediumParams(), 0.0, 'middle')

    def test_quintic_with_power_slopes(self):
        cavity = lossless_cavity()
        base = medium_for(-0.5, cavity)
        gamma = cavity.total_linear_decay
        n_scale = 2.0 * cavity.input_decay * cavity.input_photon_rate / gamma ** 2
        medium = KerrMediumParams(kerr_susceptibility=base.kerr_susceptibility,
                                  kerr_slope=0.3 * base.kerr_susceptibility / n_scale,
                                  shg_slope=0.05 * gamma / n_scale ** 2)
        assert medium.has_power_slopes
        delta = 0.5 * gamma
        for state in solve_steady_states(cavity, medium, delta):
            n = state.photon_number
            lhs = n * ((gamma + medium.shg_decay(n)) ** 2 + (delta - medium.kerr_shift(n)) ** 2)
            assert lhs == pytest.approx(2.0 * cavity.input_decay * cavity.input_photon_rate, rel=1e-8)


class TestBistableWindow:

    def test_below_threshold(self):
        assert bistable_window(0.5 * ZETA_0) is None
        assert bistable_window(0.0) is None

    def test_beyond_threshold(self):
        lo, hi = bistable_window(1.5 * ZETA_0)
        assert 0 < lo < hi

    def test_threshold_sweep_finds_zeta_0(self):
        zetas = [-1.0 - 0.01 * k for k in range(101)]
        first = next(z for z in zetas if bistable_window(z) is not None)
        assert first == pytest.approx(-8.0 / (3.0 * math.sqrt(3.0)), abs=0.01)


class TestPowerCurve:

    def test_unsorted_grid(self):
        with pytest.raises(ValueError, match="sorted"):
            power_curve(lossless_cavity(), KerrMediumParams(), [1.0, 0.0])

    def test_parallel_matches_serial(self):
        cavity = lossless_cavity()
        medium = medium_for(1.3 * ZETA_0, cavity)
        grid = np.linspace(-2.0, 4.0, 61)
        serial = power_curve(cavity, medium, grid).to_records()
        parallel = power_curve(cavity, medium, grid, jobs=4).to_records()
        assert serial == parallel


class TestReflection:

    def test_lossless_cavity_reflects_everything(self):
        cavity = lossless_cavity()
        state = solve_steady_states(cavity, KerrMediumParams(), 0.3 * cavity.total_linear_decay)[0]
        assert reflected_power(cavity, KerrMediumParams(), state) == pytest.approx(0.6, rel=1e-12)

    def test_loss_ratio_round_trip(self):
        cavity = CavityParams.from_finesse(0.25, OMEGA0, 100.0, 0.6, loss_ratio=0.17)
        state = solve_steady_states(cavity, KerrMediumParams(), 0.0)[0]
        fraction = reflected_power(cavity, KerrMediumParams(), state) / 0.6
        assert loss_ratio_from_reflection(fraction) == pytest.approx(0.17, rel=1e-9)

    def test_over_coupled_branch(self):
        assert loss_ratio_from_reflection(((1.0 - 3.0) / (1.0 + 3.0)) ** 2, overcoupled=True) == pytest.approx(3.0)

    def test_bad_fraction(self):
        with pytest.raises(ValueError, match="reflected_fraction"):
            loss_ratio_from_reflection(1.5)


class TestDetuningFromPowers:

    def test_operating_point_of_maximum_spring(self):
        assert detuning_from_powers(0.75, 1.0, 1.0) == pytest.approx(1.0 / math.sqrt(3.0))

    def test_on_resonance(self):
        assert detuning_from_powers(1.0, 1.0, 1.0) == 0.0

    def test_drift_warning(self, caplog):
        with caplog.at_level(logging.WARNING, logger='steady_state'):
            detuning_from_powers(0.5, 1.0, 1.3)
        assert 'deviates from 1' in caplog.text

    def test_inconsistent_powers(self):
        with pytest.raises(InconsistentPowersError, match="exceeds the modelled resonant power"):
            detuning_from_powers(1.2, 1.0, 1.0)

    def test_non_positive_power(self):
        with pytest.raises(ValueError, match="positive"):
            detuning_from_powers(0.0, 1.0, 1.0)


class TestDiscriminant:

    def test_lossless_root(self):
        cavity = lossless_cavity()
        medium = KerrMediumParams(kerr_susceptibility=2.0)
        root = discriminant_root(medium, cavity)
        assert root == pytest.approx(cavity.total_linear_decay / 2.0)
        assert shg_discriminant(medium, cavity, root).value == pytest.approx(0.0, abs=1e-6 * cavity.total_linear_decay ** 2)

    def test_shg_loss_dominates(self):
        cavity = lossless_cavity()
        medium = KerrMediumParams(kerr_susceptibility=1.0, shg_loss=1.0)
        assert discriminant_root(medium, cavity) is None
        assert not shg_discriminant(medium, cavity, 10.0).amplification_wins

    def test_amplification_wins(self):
        medium = KerrMediumParams(kerr_susceptibility=1.0, shg_loss=0.1)
        assert shg_discriminant(medium, lossless_cavity(), 1.0).amplification_wins
