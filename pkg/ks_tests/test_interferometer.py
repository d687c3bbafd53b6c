import math
import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from interferometer import (
    MichelsonParams, _arccot, assemble_chain, interferometer_response, kerr_decomposition,
    michelson_spring_constant, opa_map, opa_response, optical_spring_resonance, ponderomotive,
    rotation, spring_sweep, squeeze,
)
from kerr_params import C_LIGHT, DomainError, HBAR

OMEGA0 = 2.0 * math.pi * C_LIGHT / 1.064e-6


def michelson(**overrides):
    values = dict(arm_length=4000.0, arm_power=1.0e5, detune_phase=0.01, kerr_phase=-0.003,
                  mass=40.0, carrier_angular_frequency=OMEGA0)
    values.update(overrides)
    return MichelsonParams.from_reflectivity(math.sqrt(0.99), **values)


class TestMatrices:

    def test_rotation_composes(self):
        np.testing.assert_allclose(rotation(0.3) @ rotation(0.4), rotation(0.7), atol=1e-15)

    def test_squeeze_determinant(self):
        assert np.linalg.det(squeeze(2.0, 0.3)) == pytest.approx(1.0)

    def test_squeeze_requires_positive_factor(self):
        with pytest.raises(ValueError, match="squeeze factor must be positive"):
            squeeze(0.0, 0.1)

    def test_ponderomotive(self):
        np.testing.assert_array_equal(ponderomotive(2.0), [[1.0, 0.0], [-2.0, 1.0]])


class TestKerrDecomposition:

    @pytest.mark.parametrize('phi', [-1e-3, -2.0])
    def test_factors_reproduce_operator(self, phi):
        decomposition = kerr_decomposition(phi)
        assert decomposition.residual < 1e-12
        assert decomposition.squeeze_factor == pytest.approx(math.exp(math.asinh(phi)))
        assert decomposition.rotation_angle == pytest.approx(math.atan(phi))

    def test_random_phases_reproduce_operator(self):
        rng = np.random.default_rng(11)
        for phi in -rng.uniform(1e-6, 2.0, size=100):
            decomposition = kerr_decomposition(phi)
            assert decomposition.residual < 1e-12, phi
            assert decomposition.squeeze_factor == pytest.approx(math.exp(math.asinh(phi)))

    def test_arccot_stays_on_principal_branch(self):
        assert -math.pi / 2.0 < _arccot(-0.5) < 0.0
        assert _arccot(-0.5) == pytest.approx(math.atan(-2.0))

    def test_zero_phase_is_outside_domain(self):
        with pytest.raises(DomainError, match="Phi < 0"):
            kerr_decomposition(0.0)

    def test_positive_phase_is_outside_domain(self):
        with pytest.raises(DomainError):
            kerr_decomposition(0.1)

    def test_opa_map(self):
        settings = opa_map(-0.01, 0.02)
        assert settings.detune_phase == pytest.approx(0.01)
        assert settings.squeeze_factor < 1.0


class TestMichelsonParams:

    def test_lossless_srm_required(self):
        with pytest.raises(ValueError, match="r_s\\^2 \\+ t_s\\^2 = 1"):
            MichelsonParams(0.9, 0.9, 4000.0, 1e5, 0.01, -0.003, 40.0, OMEGA0)

    def test_coupling_at_dc(self):
        with pytest.raises(DomainError, match="Omega = 0"):
            michelson().coupling(0.0)

    def test_from_susceptibility_sign(self):
        params = MichelsonParams.from_susceptibility(1.0e-3, math.sqrt(0.99), 4000.0, 1e5, 0.01, 40.0, OMEGA0)
        expected = -4.0 * 4000.0 ** 2 * 1.0e-3 * 1e5 / (HBAR * OMEGA0 * C_LIGHT ** 2)
        assert params.kerr_phase == pytest.approx(expected)
        assert params.kerr_phase < 0


class TestTwoPhotonResponse:

    def test_closed_form_matches_chain(self):
        rng = np.random.default_rng(5)
        freqs = 10.0 ** rng.uniform(0.0, 3.0, size=100)
        detunes = rng.uniform(0.002, 0.05, size=100)
        kerr_phases = -rng.uniform(1e-4, 0.01, size=100)
        for freq, detune, kerr in zip(freqs, detunes, kerr_phases):
            params = michelson(detune_phase=detune, kerr_phase=kerr)
            omega = 2.0 * math.pi * freq
            closed = interferometer_response(params, omega)
            chain = assemble_chain(params, omega)
            scale = np.max(np.abs(closed.noise_transfer))
            np.testing.assert_allclose(closed.noise_transfer, chain.noise_transfer, rtol=1e-8,
                                       atol=1e-11 * scale)
            signal_scale = np.max(np.abs(closed.signal_transfer))
            np.testing.assert_allclose(closed.signal_transfer, chain.signal_transfer, rtol=1e-8,
                                       atol=1e-11 * signal_scale)

    def test_signal_has_no_amplitude_input(self):
        response = interferometer_response(michelson(), 2.0 * math.pi * 100.0)
        np.testing.assert_array_equal(response.H[:, 0], [0.0, 0.0])

    def test_signal_independent_of_mass(self):
        omega = 2.0 * math.pi * 100.0
        light = interferometer_response(michelson(mass=4.0), omega)
        heavy = interferometer_response(michelson(mass=400.0), omega)
        np.testing.assert_allclose(light.H, heavy.H)
        assert light.coupling != heavy.coupling

    def test_no_kerr_matches_identity_arm(self):
        params = michelson(kerr_phase=0.0)
        omega = 2.0 * math.pi * 30.0
        closed = interferometer_response(params, omega)
        chain = assemble_chain(params, omega, arm_operator=np.eye(2))
        np.testing.assert_allclose(closed.noise_transfer, chain.noise_transfer, rtol=1e-9, atol=1e-12)

    def test_dc_rejected(self):
        with pytest.raises(DomainError, match="Omega > 0"):
            interferometer_response(michelson(), 0.0)

    def test_to_dict(self):
        record = interferometer_response(michelson(), 100.0).to_dict()
        assert set(record) == {'omega', 'M_re', 'M_im', 'A', 'H'}
        assert len(record['A']) == 2


class TestOpaEquivalence:

    @staticmethod
    def mismatch(kerr_phase):
        params = michelson(detune_phase=0.3, kerr_phase=kerr_phase)
        omega = 2.0 * math.pi * 80.0
        settings = opa_map(kerr_phase, params.detune_phase)
        kerr = assemble_chain(params, omega)
        opa = opa_response(params, settings.squeeze_factor, settings.squeeze_angle, settings.detune_phase, omega)
        return np.max(np.abs(kerr.noise_transfer - opa.noise_transfer))

    def test_agreement_is_third_order(self):
        coarse = self.mismatch(-0.004)
        fine = self.mismatch(-0.002)
        assert coarse > 0
        assert 7.0 < coarse / fine < 9.0


class TestMichelsonSpring:

    def test_small_parameter_form_agrees(self):
        spring = michelson_spring_constant(michelson())
        assert spring.exact > 0
        assert spring.approximate == pytest.approx(spring.exact, rel=0.05)

    def test_resonance_matches_static_spring(self):
        params = michelson()
        omega_opt = optical_spring_resonance(params)
        assert params.mass * omega_opt ** 2 == pytest.approx(michelson_spring_constant(params).exact, rel=1e-9)

    def test_anti_spring_has_no_resonance(self):
        with pytest.raises(DomainError, match="not restoring"):
            optical_spring_resonance(michelson(detune_phase=-0.01, kerr_phase=-0.003))

    def test_kerr_phase_stiffens_spring(self):
        stiff = michelson_spring_constant(michelson(kerr_phase=-0.003)).exact
        plain = michelson_spring_constant(michelson(kerr_phase=0.0)).exact
        assert stiff > plain

    def test_sweep_rows(self):
        rows = spring_sweep(michelson(), [0.005, 0.01, 0.02])
        assert [row['phi_rad'] for row in rows] == [0.005, 0.01, 0.02]
        assert all(row['Phi_rad'] == -0.003 for row in rows)
