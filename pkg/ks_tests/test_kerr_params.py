import dataclasses
import math
import os
import sys

import pytest

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from kerr_params import (
    C_LIGHT, ZETA_0, CavityParams, InvalidParameterError, KerrMediumParams,
    MechanicalParams, ThermalMicroParams,
)

OMEGA0 = 2.0 * math.pi * C_LIGHT / 1.064e-6


def make_cavity(**overrides):
    values = dict(half_cycle_length=0.25, carrier_angular_frequency=OMEGA0, finesse=100.0,
                  input_power=0.6, loss_ratio=0.17)
    values.update(overrides)
    return CavityParams.from_finesse(**values)


class TestCavityParams:
    """Validation and derived quantities of CavityParams."""

    def test_from_finesse_round_trip(self):
        cavity = make_cavity()
        assert cavity.finesse == pytest.approx(100.0, rel=1e-12)
        assert cavity.other_loss_decay / cavity.input_decay == pytest.approx(0.17, rel=1e-12)

    def test_default_coupling_is_omega0_over_length(self):
        cavity = make_cavity()
        assert cavity.optomech_coupling == pytest.approx(OMEGA0 / 0.25)

    def test_explicit_coupling_kept(self):
        cavity = make_cavity(optomech_coupling=1.0e15)
        assert cavity.optomech_coupling == 1.0e15

    def test_charging_time(self):
        cavity = make_cavity()
        assert cavity.charging_time == pytest.approx(2.0 * math.pi / cavity.total_linear_decay)

    def test_photon_to_power_matches_resonant_photon_number(self):
        cavity = make_cavity(loss_ratio=0.0)
        n_resonant = 2.0 * cavity.input_decay * cavity.input_photon_rate / cavity.total_linear_decay ** 2
        expected = C_LIGHT / 0.25 * cavity.input_decay / cavity.total_linear_decay ** 2 * 0.6
        assert cavity.photon_to_power * n_resonant == pytest.approx(expected, rel=1e-12)

    def test_negative_length(self):
        with pytest.raises(ValueError, match="half_cycle_length must be positive"):
            CavityParams(-0.25, OMEGA0, 1.0e7, 0.0, 0.6)

    def test_zero_input_decay(self):
        with pytest.raises(ValueError, match="input_decay must be positive"):
            CavityParams(0.25, OMEGA0, 0.0, 0.0, 0.6)

    def test_negative_power(self):
        with pytest.raises(InvalidParameterError, match="input_power must be non-negative"):
            CavityParams(0.25, OMEGA0, 1.0e7, 0.0, -1.0)

    def test_non_finite(self):
        with pytest.raises(ValueError, match="must be finite"):
            CavityParams(0.25, OMEGA0, float('nan'), 0.0, 0.6)

    def test_bool_rejected(self):
        with pytest.raises(ValueError, match="must be numeric"):
            CavityParams(0.25, OMEGA0, 1.0e7, 0.0, True)

    def test_from_finesse_rejects_negative_loss_ratio(self):
        with pytest.raises(ValueError, match="loss_ratio non-negative"):
            make_cavity(loss_ratio=-0.1)

    def test_frozen(self):
        cavity = make_cavity()
        with pytest.raises(dataclasses.FrozenInstanceError):
            cavity.input_power = 1.0


class TestKerrMediumParams:

    def test_defaults_are_linear(self):
        medium = KerrMediumParams()
        assert medium.kerr_shift(1.0e9) == 0.0
        assert not medium.has_power_slopes

    def test_power_slopes(self):
        medium = KerrMediumParams(kerr_susceptibility=2.0, kerr_slope=0.5, shg_loss=1.0, shg_slope=0.25)
        assert medium.has_power_slopes
        assert medium.kerr_shift(4.0) == pytest.approx((2.0 + 0.5 * 4.0) * 4.0)
        assert medium.shg_decay(4.0) == pytest.approx((1.0 + 0.25 * 4.0) * 4.0)
        assert medium.differential_kerr(4.0) == pytest.approx(2.0 + 2.0 * 0.5 * 4.0)
        assert medium.differential_shg(4.0) == pytest.approx(1.0 + 2.0 * 0.25 * 4.0)

    def test_negative_shg_loss(self):
        with pytest.raises(ValueError, match="shg_loss must be non-negative"):
            KerrMediumParams(shg_loss=-1.0)

    def test_zero_relaxation(self):
        with pytest.raises(ValueError, match="photothermal_relaxation must be positive"):
            KerrMediumParams(photothermal_relaxation=0.0)

    def test_signed_susceptibility_allowed(self):
        assert KerrMediumParams(kerr_susceptibility=-3.0).kerr_susceptibility == -3.0

    def test_from_micro(self):
        micro = ThermalMicroParams(thermal_resistance=10.0, heat_capacity=0.02, expansion=7e-6,
                                   absorption=0.01, crystal_length=0.01)
        medium = KerrMediumParams.from_micro(micro, kerr_susceptibility=1.0)
        assert medium.photothermal_relaxation == pytest.approx(1.0 / (10.0 * 0.02))
        assert medium.photothermal_absorption == pytest.approx(7e-6 * 0.01 * 0.01 ** 2 * C_LIGHT / (2.0 * 0.02))

    def test_micro_mismatch(self):
        micro = ThermalMicroParams(10.0, 0.02, 7e-6, 0.01, 0.01)
        with pytest.raises(ValueError, match="does not match"):
            KerrMediumParams(photothermal_relaxation=1.0, photothermal_absorption=micro.absorption_coefficient,
                             micro=micro)

    def test_micro_requires_positive_values(self):
        with pytest.raises(ValueError, match="heat_capacity must be positive"):
            ThermalMicroParams(10.0, 0.0, 7e-6, 0.01, 0.01)


class TestMechanicalParams:

    def test_quality_factor_round_trip(self):
        mech = MechanicalParams.from_quality_factor(280e-6, 2.0 * math.pi * 14.0, 193.0)
        assert mech.quality_factor == pytest.approx(193.0)
        assert mech.damping == pytest.approx(2.0 * math.pi * 14.0 / 193.0)

    def test_undamped_quality_factor_is_infinite(self):
        assert MechanicalParams(1.0, 10.0).quality_factor == math.inf

    def test_zero_mass(self):
        with pytest.raises(ValueError, match="mass must be positive"):
            MechanicalParams(0.0, 10.0)

    def test_bad_quality_factor(self):
        with pytest.raises(ValueError, match="quality_factor must be positive"):
            MechanicalParams.from_quality_factor(1.0, 10.0, 0.0)


def test_threshold_constant():
    assert ZETA_0 == pytest.approx(-1.5396, abs=1e-4)
