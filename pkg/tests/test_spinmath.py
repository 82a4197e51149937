import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp
from scipy.linalg import expm, logm

from nvdd.spinmath import (IDENTITY, S_X, S_Y, S_Z, PulseSpec, apply, axis_angle, equal_up_to_phase,
                           finite_pulse_params, free_evolution, is_unitary, rotation_elements,
                           rotation_operator)

REF_EPS, REF_NZ = 0.15, 0.25
REF_AXIS = (math.sqrt(1 - REF_NZ**2), 0.0, REF_NZ)

# exp(-i pi (1 + 0.15) S.n) from scipy.linalg.expm (scaling and squaring)
M_EXPECTED = np.array([
    [-2.3344536385590531e-01 - 0.2430924800994192j, -0.9414931270133085j],
    [-0.9414931270133082j, -2.3344536385590509e-01 + 0.24309248009941914j],
])
# Rodrigues rotation of (0, 1, 0) by the same axis and angle
S_PRIME_EXPECTED = np.array([0.11349762493488656, -0.8910065241883682, -0.4395744112069113])


def expm_oracle(theta, axis):
    nx, ny, nz = axis
    return expm(-1j * theta * (nx * S_X + ny * S_Y + nz * S_Z))


def rodrigues(theta, axis):
    n = np.asarray(axis, dtype=float)
    K = np.array([[0, -n[2], n[1]], [n[2], 0, -n[0]], [-n[1], n[0], 0]])
    return np.eye(3) + math.sin(theta) * K + (1 - math.cos(theta)) * K @ K


def random_axes(rng, size):
    v = rng.standard_normal((size, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


class TestRotationOperator:
    def test_ideal_pi_x(self):
        U = rotation_operator(PulseSpec(math.pi, 0.0, 0.0, (1, 0, 0)))
        np.testing.assert_allclose(U, [[0, -1j], [-1j, 0]], atol=1e-15)

    def test_full_turn_is_minus_identity(self):
        U = rotation_operator(PulseSpec(math.pi, 0.0, 1.0, (1, 0, 0)))
        np.testing.assert_allclose(U, -IDENTITY, atol=1e-15)

    def test_reference_error_pulse_matches_frozen_expm(self):
        U = rotation_operator(PulseSpec(math.pi, 0.0, REF_EPS, REF_AXIS))
        np.testing.assert_allclose(U, M_EXPECTED, atol=1e-10)

    def test_matches_matrix_exponential_random(self):
        rng = np.random.default_rng(11)
        axes = random_axes(rng, 1000)
        eps = rng.uniform(-0.9, 1.0, 1000)
        thetas = rng.choice([math.pi, math.pi / 2], 1000)
        for th, e, n in zip(thetas, eps, axes):
            p = PulseSpec(th, 0.0, e, tuple(n))
            np.testing.assert_allclose(rotation_operator(p), expm_oracle(th * (1 + e), n), atol=1e-10)

    def test_unitarity_1e5_random(self):
        rng = np.random.default_rng(5)
        axes = random_axes(rng, 100_000)
        theta = math.pi * (1 + rng.uniform(-0.99, 2.0, 100_000))
        u00, u01, u10, u11 = rotation_elements(theta, axes[:, 0], axes[:, 1], axes[:, 2])
        U = np.stack([np.stack([u00, u01], -1), np.stack([u10, u11], -1)], -2)
        err = np.abs(np.conj(np.swapaxes(U, -1, -2)) @ U - IDENTITY).max()
        assert err <= 1e-12
        assert np.abs(np.abs(np.linalg.det(U)) - 1).max() <= 1e-12

    def test_unitarity_through_pulsespec(self):
        rng = np.random.default_rng(6)
        for n in random_axes(rng, 2000):
            U = rotation_operator(PulseSpec(math.pi, 0.0, float(rng.uniform(-0.5, 0.5)), tuple(n)))
            assert is_unitary(U, 1e-12)

    @pytest.mark.parametrize("axis", [(1, 0, 0.1), (0.5, 0.5, 0), (0, 0, 0)])
    def test_rejects_non_unit_axis(self, axis):
        with pytest.raises(ValueError, match="unit"):
            PulseSpec(math.pi, 0.0, 0.0, axis)

    def test_rejects_epsilon_at_minus_one(self):
        with pytest.raises(ValueError):
            PulseSpec(math.pi, 0.0, -1.0, (1, 0, 0))

    def test_tilted_constructor(self):
        p = PulseSpec.tilted(math.pi / 2, 0.15, 0.25)
        np.testing.assert_allclose(p.axis, (0.0, math.sqrt(1 - 0.0625), 0.25), atol=1e-16)
        assert p.angle == pytest.approx(math.pi * 1.15)


class TestFreeEvolution:
    def test_zero_detuning_is_identity(self):
        np.testing.assert_array_equal(free_evolution(0.0, 3.7e-6), IDENTITY)

    def test_full_phase_turn(self):
        np.testing.assert_allclose(free_evolution(2 * math.pi / 1e-6, 1e-6), -IDENTITY, atol=1e-12)

    def test_hyperfine_detuning_phase(self):
        U = free_evolution(2 * math.pi * 2.2e6, 0.1e-6)
        np.testing.assert_allclose(np.angle(np.diag(U)), [-0.22 * math.pi, 0.22 * math.pi], atol=1e-12)
        np.testing.assert_allclose(U, expm(-1j * 2 * math.pi * 2.2e6 * 0.1e-6 * S_Z), atol=1e-14)

    def test_negative_tau_rejected(self):
        with pytest.raises(ValueError):
            free_evolution(1.0, -1e-9)


def _integrated_rotation(rabi_hz, det_hz, duration):
    """Angle and axis of the propagator of H = 2 pi (rabi S_x + det S_z), by ODE + logm."""
    H = 2 * math.pi * (rabi_hz * S_X + det_hz * S_Z)

    def rhs(t, y):
        U = y.view(complex).reshape(2, 2)
        return (-1j * H @ U).reshape(-1).view(float)

    y0 = np.eye(2, dtype=complex).reshape(-1).view(float)
    sol = solve_ivp(rhs, (0, duration), y0, method="DOP853", rtol=1e-12, atol=1e-13)
    U = sol.y[:, -1].view(complex).reshape(2, 2)
    L = logm(U)
    c = np.array([(1j * np.trace(L @ (2 * s))).real for s in (S_X, S_Y, S_Z)])
    theta = np.linalg.norm(c)
    return theta, c / theta


class TestFinitePulse:
    def test_resonant_is_ideal(self):
        p = finite_pulse_params(15e6, 0.0, math.pi)
        assert p == PulseSpec(math.pi, 0.0, 0.0, (1.0, 0.0, 0.0))
        assert p.is_ideal

    @pytest.mark.parametrize("detuning", [2.2e6, -2.2e6])
    def test_hyperfine_detuned_drive(self, detuning):
        p = finite_pulse_params(15e6, detuning, math.pi)
        theta, axis = _integrated_rotation(15e6, detuning, 1 / (2 * 15e6))
        assert p.epsilon == pytest.approx(theta / math.pi - 1, abs=1e-9)
        np.testing.assert_allclose(p.axis, axis, atol=1e-9)
        assert p.axis[2] == pytest.approx(math.copysign(0.14511418742827673, detuning), abs=1e-12)
        assert p.epsilon == pytest.approx(0.010698328439852078, abs=1e-12)

    def test_phase_rotates_axis(self):
        p = finite_pulse_params(15e6, 2.2e6, math.pi, phase=math.pi / 2)
        assert p.axis[0] == pytest.approx(0.0, abs=1e-16)
        assert p.axis[1] > 0.98

    def test_explicit_duration(self):
        p = finite_pulse_params(15e6, 0.0, math.pi, duration=2 / (2 * 15e6))
        assert p.epsilon == pytest.approx(1.0)

    @pytest.mark.parametrize("rabi", [0.0, -1e6])
    def test_rejects_nonpositive_rabi(self, rabi):
        with pytest.raises(ValueError):
            finite_pulse_params(rabi, 0.0)


class TestApply:
    def test_identity(self):
        s = np.array([0.3, -0.4, math.sqrt(1 - 0.25)])
        np.testing.assert_allclose(apply(IDENTITY, s), s, atol=1e-15)

    def test_pi_x_flips_z(self):
        np.testing.assert_allclose(apply(-1j * 2 * S_X, [0, 0, 1]), [0, 0, -1], atol=1e-15)

    def test_reference_error_pulse_on_y(self):
        U = rotation_operator(PulseSpec(math.pi, 0.0, REF_EPS, REF_AXIS))
        out = apply(U, [0, 1, 0])
        np.testing.assert_allclose(out, S_PRIME_EXPECTED, atol=1e-12)
        np.testing.assert_allclose(out, rodrigues(math.pi * 1.15, REF_AXIS) @ [0, 1, 0], atol=1e-12)

    @settings(max_examples=300, deadline=None)
    @given(
        st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1),
        st.floats(0.05, 6.2), st.floats(-math.pi, math.pi), st.floats(0, math.pi),
    )
    def test_preserves_norm_and_matches_rodrigues(self, vx, vy, vz, theta, az, pol):
        v = np.array([vx, vy, vz])
        if np.linalg.norm(v) < 1e-3:
            return
        s = v / np.linalg.norm(v)
        n = (math.sin(pol) * math.cos(az), math.sin(pol) * math.sin(az), math.cos(pol))
        from nvdd.spinmath import rotation
        out = apply(rotation(theta, n), s)
        assert abs(np.linalg.norm(out) - 1) <= 1e-12
        np.testing.assert_allclose(out, rodrigues(theta, n) @ s, atol=1e-12)


def test_axis_angle_roundtrip():
    rng = np.random.default_rng(3)
    for n in random_axes(rng, 200):
        theta = float(rng.uniform(0.1, 3.0))
        for phase in (1.0, 1j, -1.0):
            angle, axis = axis_angle(phase * expm_oracle(theta, n))
            R1, R2 = rodrigues(angle, axis), rodrigues(theta, n)
            np.testing.assert_allclose(R1, R2, atol=1e-10)


def test_equal_up_to_phase():
    U = expm_oracle(1.3, (0, 0.6, 0.8))
    assert equal_up_to_phase(np.exp(0.7j) * U, U)
    assert not equal_up_to_phase(U, expm_oracle(1.3, (0, 0.8, 0.6)))
