"""
Two-level spin algebra for an NV center treated as an effective spin-1/2.

Unitaries are plain ``(2, 2)`` complex numpy arrays and Bloch vectors are
``(3,)`` float arrays. Spin operators are ``S_i = sigma_i / 2``, so a rotation
by angle ``theta`` about unit axis ``n`` is ``exp(-i theta S.n)`` and a
free-evolution segment under detuning ``delta`` (rad/s) is ``exp(-i delta t S_z)``.

Units
-----
Angles are radians. Detunings passed to :func:`free_evolution` are angular
frequencies (rad/s). Rabi frequencies and detunings passed to
:func:`finite_pulse_params` are ordinary frequencies in Hz; the package
converts Hz to rad/s only through :func:`to_angular`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
IDENTITY = np.eye(2, dtype=complex)

S_X = SIGMA_X / 2
S_Y = SIGMA_Y / 2
S_Z = SIGMA_Z / 2

AXIS_TOL = 1e-12


def to_angular(freq_hz):
    """Convert a frequency in Hz to an angular frequency in rad/s."""
    return 2.0 * math.pi * freq_hz if np.isscalar(freq_hz) else 2.0 * np.pi * np.asarray(freq_hz)


@dataclass(frozen=True)
class PulseSpec:
    """One imperfect rotation pulse.

    Parameters
    ----------
    nominal_angle : float
        Intended rotation angle in radians (pi for refocusing pulses).
    phase : float
        Intended in-plane axis angle in radians, ``k = (cos phase, sin phase, 0)``.
    epsilon : float
        Fractional rotation-angle error; the actual angle is
        ``nominal_angle * (1 + epsilon)``.
    axis : tuple of float
        Actual unit rotation axis ``(n_x, n_y, n_z)``.
    """

    nominal_angle: float
    phase: float
    epsilon: float
    axis: tuple[float, float, float]

    def __post_init__(self):
        axis = tuple(float(a) for a in self.axis)
        if len(axis) != 3:
            raise ValueError(f"axis must have 3 components, got {len(axis)}")
        norm = math.sqrt(sum(a * a for a in axis))
        if abs(norm - 1.0) > AXIS_TOL:
            raise ValueError(f"rotation axis must be a unit vector, |n| = {norm!r}")
        if not self.epsilon > -1.0:
            raise ValueError(f"epsilon must be > -1, got {self.epsilon!r}")
        object.__setattr__(self, "axis", axis)

    @classmethod
    def tilted(cls, phase: float, epsilon: float = 0.0, n_z: float = 0.0,
               nominal_angle: float = math.pi) -> "PulseSpec":
        """Pulse whose axis is ``k`` lifted out of the xy-plane to height ``n_z``.

        The in-plane part keeps the direction of ``k`` and is scaled by
        ``sqrt(1 - n_z**2)`` so the axis stays normalized.
        """
        if not abs(n_z) < 1.0:
            raise ValueError(f"|n_z| must be < 1, got {n_z!r}")
        r = math.sqrt(1.0 - n_z * n_z)
        return cls(nominal_angle, phase, epsilon, (r * math.cos(phase), r * math.sin(phase), n_z))

    @property
    def angle(self) -> float:
        """Actual rotation angle in radians."""
        return self.nominal_angle * (1.0 + self.epsilon)

    @property
    def is_ideal(self) -> bool:
        return self.epsilon == 0.0 and self.axis[2] == 0.0


def rotation_elements(theta, nx, ny, nz):
    """Matrix entries of ``exp(-i theta S.n)`` for broadcastable array inputs.

    Returns ``(u00, u01, u10, u11)``. Used by the vectorized propagator, so
    every realization in a batch gets an elementwise-identical computation.
    """
    c = np.cos(np.multiply(theta, 0.5))
    s = np.sin(np.multiply(theta, 0.5))
    u00 = c - 1j * s * nz
    u11 = c + 1j * s * nz
    u01 = -s * ny - 1j * s * nx
    u10 = s * ny - 1j * s * nx
    return u00, u01, u10, u11


def rotation(theta: float, axis) -> np.ndarray:
    """``exp(-i theta S.n)`` for an explicit angle and unit axis."""
    nx, ny, nz = axis
    u00, u01, u10, u11 = rotation_elements(theta, nx, ny, nz)
    return np.array([[u00, u01], [u10, u11]], dtype=complex)


def rotation_operator(p: PulseSpec) -> np.ndarray:
    """Closed-form SU(2) rotation ``cos(T/2) I - i sin(T/2) n.sigma`` with ``T = theta (1 + eps)``."""
    return rotation(p.angle, p.axis)


def free_evolution(delta: float, tau: float) -> np.ndarray:
    """Free precession ``exp(-i delta tau S_z)`` for detuning ``delta`` in rad/s."""
    if tau < 0:
        raise ValueError(f"tau must be >= 0, got {tau!r}")
    half = 0.5 * delta * tau
    return np.array([[np.exp(-1j * half), 0], [0, np.exp(1j * half)]], dtype=complex)


def finite_pulse_params(rabi: float, detuning: float, nominal_angle: float = math.pi,
                        phase: float = 0.0, duration: float | None = None) -> PulseSpec:
    """Map a constant off-resonant drive onto an equivalent :class:`PulseSpec`.

    The rotating-frame Hamiltonian is
    ``H = 2 pi [rabi (cos phase S_x + sin phase S_y) + detuning S_z]``.
    With ``rabi`` and ``detuning`` in Hz, the generalized Rabi frequency is
    ``sqrt(rabi**2 + detuning**2)`` and the pulse length defaults to the
    resonant length ``nominal_angle / (2 pi rabi)``.

    Parameters
    ----------
    rabi : float
        Drive amplitude in Hz, must be positive.
    detuning : float
        Drive detuning in Hz (spin frequency minus carrier).
    nominal_angle : float
        Rotation the pulse is calibrated for, in radians.
    phase : float
        Drive phase in radians.
    duration : float, optional
        Pulse length in seconds. Pass it explicitly when the actual drive
        amplitude differs from the one the pulse length was calibrated for.
    """
    if not rabi > 0:
        raise ValueError(f"rabi must be > 0, got {rabi!r}")
    omega = to_angular(rabi)
    delta = to_angular(detuning)
    if duration is None:
        duration = nominal_angle / omega
    gen = math.hypot(omega, delta)
    axis = (omega * math.cos(phase) / gen, omega * math.sin(phase) / gen, delta / gen)
    epsilon = gen * duration / nominal_angle - 1.0
    return PulseSpec(nominal_angle, phase, epsilon, axis)


def bloch_to_state(s) -> np.ndarray:
    """Pure state vector whose Bloch vector is the unit vector ``s``."""
    x, y, z = s
    theta = math.acos(max(-1.0, min(1.0, z)))
    phi = math.atan2(y, x)
    return np.array([math.cos(theta / 2), np.exp(1j * phi) * math.sin(theta / 2)], dtype=complex)


def state_to_bloch(psi) -> np.ndarray:
    """Bloch vector ``<sigma>`` of a normalized state vector."""
    a, b = psi
    ab = np.conj(a) * b
    return np.array([2 * ab.real, 2 * ab.imag, abs(a) ** 2 - abs(b) ** 2])


def density_from_bloch(s) -> np.ndarray:
    x, y, z = s
    return 0.5 * (IDENTITY + x * SIGMA_X + y * SIGMA_Y + z * SIGMA_Z)


def bloch_from_density(rho) -> np.ndarray:
    return np.array([np.trace(rho @ m).real for m in (SIGMA_X, SIGMA_Y, SIGMA_Z)])


def apply(U: np.ndarray, s) -> np.ndarray:
    """Bloch vector of ``U rho U^dagger`` where ``rho`` has Bloch vector ``s``."""
    rho = density_from_bloch(s)
    return bloch_from_density(U @ rho @ U.conj().T)


def axis_angle(U: np.ndarray) -> tuple[float, np.ndarray]:
    """Rotation angle in [0, 2 pi] and unit axis of ``U``, ignoring global phase."""
    det = np.linalg.det(U)
    V = U / np.sqrt(det)
    c = float(np.clip(np.trace(V).real / 2, -1.0, 1.0))
    # sqrt(det) picks one of +-V; both describe the same Bloch rotation
    angle = 2.0 * math.acos(c)
    s = math.sin(angle / 2)
    if abs(s) < 1e-15:
        return angle, np.array([0.0, 0.0, 1.0])
    n = np.array([
        -(V[0, 1] + V[1, 0]).imag / 2,
        (V[1, 0] - V[0, 1]).real / 2,
        -(V[0, 0] - V[1, 1]).imag / 2,
    ]) / s
    return angle, n / np.linalg.norm(n)


def is_unitary(U: np.ndarray, tol: float = 1e-12) -> bool:
    return bool(np.max(np.abs(U.conj().T @ U - IDENTITY)) <= tol)


def equal_up_to_phase(U: np.ndarray, V: np.ndarray, tol: float = 1e-10) -> bool:
    """True if ``U = exp(i a) V`` for some real ``a``."""
    overlap = np.trace(V.conj().T @ U)
    if abs(overlap) < 1e-15:
        return False
    phase = overlap / abs(overlap)
    return bool(np.max(np.abs(U - phase * V)) <= tol)
