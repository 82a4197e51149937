"""
Monte-Carlo execution of a DD measurement.

One shot is: ``|0>`` -> preparation pi/2 pulse -> the pulse program, with
each free-evolution segment picking up the accumulated detuning phase of its
realization -> readout pi/2 pulse -> ``<sigma_z>``. ``S_x`` uses pi/2 pulses
about ``y``, ``S_y`` uses pi/2 pulses about ``x``. The contrast sign is fixed
so the same program with ideal pulses and no detuning reads ``+1``.

Realizations are propagated in fixed-size batches with elementwise numpy
arithmetic only, so the contrast of realization ``i`` does not depend on
batch composition or thread count; the ensemble mean is an exactly rounded
``math.fsum`` over realization order.
"""

from __future__ import annotations

import logging
import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from . import noise
from .noise import BathParams, NoiseRealization
from .sequences import IDEAL, ErrorModel, PulseProgram, build_program, supports
from .spinmath import free_evolution, rotation_elements, rotation_operator, to_angular

log = logging.getLogger(__name__)

BATCH_SIZE = 256
COMPONENTS = ("Sx", "Sy")


@dataclass(frozen=True)
class Instantaneous:
    """Zero-width pulses described entirely by their :class:`PulseSpec`."""


@dataclass(frozen=True)
class FiniteWidth:
    """Rectangular pulses of drive amplitude ``rabi`` (Hz).

    Each pi pulse becomes a constant off-resonant rotation under the
    realization's detuning at pulse start. ``duration`` defaults to the
    resonant pi-pulse length ``1 / (2 rabi)``. The error model's ``epsilon``
    and the Rabi scale multiply the drive amplitude; the axis tilt comes from
    the detuning, so the error model's ``n_z`` is not used.
    """

    rabi: float
    duration: float | None = None

    def pulse_length(self, nominal_angle: float = math.pi) -> float:
        if self.duration is not None:
            return self.duration
        return nominal_angle / to_angular(self.rabi)


INSTANTANEOUS = Instantaneous()


@dataclass(frozen=True)
class ExperimentConfig:
    protocol: str = "hahn"
    n: int = 1
    tau: float = 1e-6
    initial_component: str = "Sx"
    error_model: ErrorModel = IDEAL
    bath: BathParams | None = None
    n_realizations: int = 2000
    master_seed: int = 0
    pulse_model: Instantaneous | FiniteWidth = INSTANTANEOUS
    prep_readout_errors: bool = False
    integrator: str = "exact"
    substep: float | None = None
    threads: int = 1

    def __post_init__(self):
        if self.n_realizations < 1:
            raise ValueError(f"n_realizations must be >= 1, got {self.n_realizations}")
        if self.initial_component not in COMPONENTS:
            raise ValueError(f"initial_component must be one of {COMPONENTS}, got {self.initial_component!r}")
        if self.integrator not in ("exact", "trapezoid"):
            raise ValueError(f"integrator must be 'exact' or 'trapezoid', got {self.integrator!r}")

    def program(self, tau: float | None = None) -> PulseProgram:
        return build_program(self.protocol, self.n, self.tau if tau is None else tau, self.error_model)

    @property
    def is_deterministic(self) -> bool:
        return self.bath is None and self.error_model.phase_jitter_sd == 0.0


@dataclass(frozen=True)
class ContrastPoint:
    total_time: float
    mean_contrast: float
    std_error: float


@dataclass(frozen=True)
class CoherenceCurve:
    points: tuple[ContrastPoint, ...]
    protocol: str
    n_pulses: int
    initial_component: str

    def __post_init__(self):
        object.__setattr__(self, "points", tuple(self.points))
        t = self.times
        if np.any(np.diff(t) <= 0):
            raise ValueError("coherence curve times must be strictly increasing")

    @property
    def times(self) -> np.ndarray:
        return np.array([p.total_time for p in self.points])

    @property
    def contrasts(self) -> np.ndarray:
        return np.array([p.mean_contrast for p in self.points])

    @property
    def std_errors(self) -> np.ndarray:
        return np.array([p.std_error for p in self.points])


@dataclass(frozen=True)
class ScanRow:
    protocol: str
    component: str
    n: int
    relative_contrast: float
    std_error: float
    contrast: float = field(default=math.nan, compare=False)


# --- propagation -----------------------------------------------------------

def _prep_axis(component: str) -> tuple[float, float, float]:
    return (0.0, 1.0, 0.0) if component == "Sx" else (1.0, 0.0, 0.0)


def ideal_sign(program: PulseProgram, component: str) -> float:
    """Sign of the readout for ``program`` with error-free pulses and no detuning."""
    prep = _half_pi(component, None, 1.0)
    p0, p1 = complex(prep[0, 0]), complex(prep[1, 0])
    p0, p1 = _apply_cached([_ideal_pi(p.phase) for p in program.pulses], p0, p1)
    q0 = complex(prep[0, 0]) * p0 + complex(prep[0, 1]) * p1
    q1 = complex(prep[1, 0]) * p0 + complex(prep[1, 1]) * p1
    z = abs(q0) ** 2 - abs(q1) ** 2
    return -1.0 if z < 0 else 1.0


@lru_cache(maxsize=4096)
def _ideal_pi(phase: float) -> tuple[complex, ...]:
    return _elements(math.pi, math.cos(phase), math.sin(phase), 0.0)


@lru_cache(maxsize=4096)
def _elements(theta: float, nx: float, ny: float, nz: float) -> tuple[complex, ...]:
    return tuple(complex(u) for u in rotation_elements(theta, nx, ny, nz))


def _apply_cached(elements, p0: complex, p1: complex) -> tuple[complex, complex]:
    for u00, u01, u10, u11 in elements:
        p0, p1 = u00 * p0 + u01 * p1, u10 * p0 + u11 * p1
    return p0, p1


def _half_pi(component: str, em: ErrorModel | None, rabi_scale: float) -> np.ndarray:
    ax = _prep_axis(component)
    if em is None:
        theta, axis = math.pi / 2 * rabi_scale, ax
    else:
        r = math.sqrt(1.0 - em.n_z**2)
        theta = math.pi / 2 * (1.0 + em.epsilon) * rabi_scale
        axis = (r * ax[0], r * ax[1], em.n_z)
    u = rotation_elements(theta, *axis)
    return np.array([[u[0], u[1]], [u[2], u[3]]])


def _apply(u, p0, p1):
    u00, u01, u10, u11 = u
    return u00 * p0 + u01 * p1, u10 * p0 + u11 * p1


@dataclass
class _Options:
    pulse_model: Instantaneous | FiniteWidth = INSTANTANEOUS
    phase_jitter_sd: float = 0.0
    prep_readout_errors: bool = False
    error_model: ErrorModel = IDEAL
    integrator: str = "exact"
    substep: float | None = None


def _segments(program: PulseProgram, bath: BathParams | None, substep: float | None):
    """Substep counts and sizes per delay segment (shared by all realizations)."""
    if bath is None:
        return [(1 if d > 0 else 0, d) for d in program.delays]
    h = bath.default_substep if substep is None else substep
    return [noise.substep_grid(d, h) for d in program.delays]


def _propagate_batch(program: PulseProgram, component: str, realizations, opts: _Options):
    """Final state amplitudes ``(p0, p1)`` before readout, plus per-member readout pulses.

    ``realizations`` is a list of :class:`NoiseRealization` or ``None`` for a
    single noiseless member.
    """
    noiseless = realizations is None
    if noiseless and not isinstance(opts.pulse_model, FiniteWidth) and opts.phase_jitter_sd == 0:
        return _propagate_noiseless(program, component, opts)
    count = 1 if noiseless else len(realizations)
    bath = None if noiseless else realizations[0].params
    n = program.n_pulses

    static = np.zeros(count) if noiseless else np.array([r.static_delta for r in realizations])
    scale = np.ones(count) if noiseless else np.array([r.rabi_scale for r in realizations])
    x = np.zeros(count) if noiseless else np.array([r.ou_value for r in realizations])

    segs = _segments(program, bath, opts.substep)
    finite = isinstance(opts.pulse_model, FiniteWidth)
    per_step = 2 if opts.integrator == "exact" else 1
    n_ou = sum(m for m, _ in segs) * per_step + (n if finite else 0)

    if opts.phase_jitter_sd > 0:
        if noiseless:
            raise ValueError("phase jitter needs noise realizations")
        jitter = np.stack([r.rng.normal(0.0, opts.phase_jitter_sd, n) for r in realizations])
    else:
        jitter = None
    if noiseless or n_ou == 0:
        xi = None
    else:
        xi = np.stack([r.rng.standard_normal(n_ou) for r in realizations])

    em = opts.error_model if opts.prep_readout_errors else None
    prep_rows = [_half_pi(component, em, s) for s in (scale if em is not None else [1.0])]
    prep = tuple(np.array([m[i, j] for m in prep_rows]) for i, j in ((0, 0), (0, 1), (1, 0), (1, 1)))

    p0 = prep[0] * np.ones(count)
    p1 = prep[2] * np.ones(count, dtype=complex)

    b = 0.0 if bath is None else bath.b
    tau_c = 1.0 if bath is None else bath.tau_c
    col = 0

    def free(seg, p0, p1, x, col):
        m, dt = seg
        phase = np.zeros(count)
        for _ in range(m):
            if xi is None:
                if bath is not None and b > 0:
                    raise AssertionError("missing OU draws")
                x_new = x
                inc = x * dt
            elif opts.integrator == "exact":
                x_new, inc = noise.ou_advance_integral(x, dt, b, tau_c, xi[:, col], xi[:, col + 1])
                col += 2
            else:
                x_new = noise.ou_advance(x, dt, b, tau_c, xi[:, col])
                inc = 0.5 * dt * (x + x_new)
                col += 1
            phase = phase + inc
            x = x_new
        total_len = m * dt
        phase = phase + static * total_len
        half = 0.5 * phase
        return p0 * np.exp(-1j * half), p1 * np.exp(1j * half), x, col

    if finite:
        t_p = opts.pulse_model.pulse_length()
        omega = to_angular(opts.pulse_model.rabi)

    for k, pulse in enumerate(program.pulses):
        p0, p1, x, col = free(segs[k], p0, p1, x, col)
        phase = pulse.phase if jitter is None else pulse.phase + jitter[:, k]
        if finite:
            delta = static + x
            om = omega * scale * (1.0 + pulse.epsilon)
            gen = np.hypot(om, delta)
            theta = gen * t_p
            nx = om * np.cos(phase) / gen
            ny = om * np.sin(phase) / gen
            nz = delta / gen
            if xi is not None:
                x = noise.ou_advance(x, t_p, b, tau_c, xi[:, col])
                col += 1
        else:
            theta = pulse.angle * scale
            ax, ay, az = pulse.axis
            if jitter is None:
                nx, ny = ax, ay
            else:
                c, s = np.cos(jitter[:, k]), np.sin(jitter[:, k])
                nx, ny = ax * c - ay * s, ax * s + ay * c
            nz = az
        p0, p1 = _apply(rotation_elements(theta, nx, ny, nz), p0, p1)
    p0, p1, x, col = free(segs[-1], p0, p1, x, col)

    if not noiseless:
        elapsed = program.total_time + (n * opts.pulse_model.pulse_length() if finite else 0.0)
        for r, xv in zip(realizations, x):
            r.ou_value = float(xv)
            r.time += elapsed
    return p0, p1, prep


def _propagate_noiseless(program: PulseProgram, component: str, opts: _Options):
    """Zero-detuning, zero-width case: free evolution is the identity and the
    few distinct pulse rotations are cached."""
    em = opts.error_model if opts.prep_readout_errors else None
    m = _half_pi(component, em, 1.0)
    prep = tuple(np.array([m[i, j]]) for i, j in ((0, 0), (0, 1), (1, 0), (1, 1)))
    elements = [_elements(p.angle, *p.axis) for p in program.pulses]
    p0, p1 = _apply_cached(elements, complex(m[0, 0]), complex(m[1, 0]))
    return np.array([p0]), np.array([p1]), prep


def _contrasts(program, component, realizations, opts, t1=math.inf):
    p0, p1, prep = _propagate_batch(program, component, realizations, opts)
    q0, q1 = _apply(prep, p0, p1)
    z = np.abs(q0) ** 2 - np.abs(q1) ** 2
    z = z * ideal_sign(program, component)
    if math.isfinite(t1):
        elapsed = program.total_time
        if isinstance(opts.pulse_model, FiniteWidth):
            elapsed += program.n_pulses * opts.pulse_model.pulse_length()
        z = z * math.exp(-elapsed / t1)
    return z


def _options(config: ExperimentConfig) -> _Options:
    return _Options(
        pulse_model=config.pulse_model,
        phase_jitter_sd=config.error_model.phase_jitter_sd,
        prep_readout_errors=config.prep_readout_errors,
        error_model=config.error_model,
        integrator=config.integrator,
        substep=config.substep,
    )


def run_single(program: PulseProgram, realization: NoiseRealization | None = None,
               initial_component: str = "Sx", pulse_model=INSTANTANEOUS, *,
               error_model: ErrorModel = IDEAL, prep_readout_errors: bool = False,
               integrator: str = "exact", substep: float | None = None) -> float:
    """Contrast of one shot for one ensemble member.

    ``realization=None`` means no detuning at all. ``error_model`` only
    supplies the phase jitter and, with ``prep_readout_errors``, the errors of
    the pi/2 pulses; the pi-pulse errors live in ``program``.
    """
    opts = _Options(pulse_model, error_model.phase_jitter_sd, prep_readout_errors,
                    error_model, integrator, substep)
    reals = None if realization is None else [realization]
    t1 = math.inf if realization is None else realization.params.t1
    return float(_contrasts(program, initial_component, reals, opts, t1)[0])


def final_states(program: PulseProgram, realizations, initial_component: str = "Sx",
                 **kwargs) -> np.ndarray:
    """State vectors right before the readout pulse, one row per realization."""
    opts = _Options(**kwargs)
    p0, p1, _ = _propagate_batch(program, initial_component, realizations, opts)
    return np.stack([p0, p1], axis=1)


def total_unitary(program: PulseProgram, delta: float = 0.0) -> np.ndarray:
    """Explicit product of free evolutions and pulse rotations for a static detuning."""
    U = free_evolution(delta, program.delays[0])
    for pulse, d in zip(program.pulses, program.delays[1:]):
        U = free_evolution(delta, d) @ rotation_operator(pulse) @ U
    return U


def _worker_count(threads: int) -> int:
    if threads == 0:
        return os.cpu_count() or 1
    return max(1, threads)


def ensemble_contrasts(program: PulseProgram, config: ExperimentConfig) -> np.ndarray:
    """Per-realization contrasts in realization-index order."""
    opts = _options(config)
    component = config.initial_component
    if config.is_deterministic:
        return _contrasts(program, component, None, opts)

    bath = config.bath if config.bath is not None else BathParams()
    total = config.n_realizations
    starts = list(range(0, total, BATCH_SIZE))

    def batch(start):
        stop = min(start + BATCH_SIZE, total)
        reals = [noise.draw_realization(bath, noise.realization_seed(config.master_seed, i))
                 for i in range(start, stop)]
        return _contrasts(program, component, reals, opts, bath.t1)

    workers = _worker_count(config.threads)
    if workers == 1 or len(starts) == 1:
        parts = [batch(s) for s in starts]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(batch, starts))
    return np.concatenate(parts)


def summarize(values: np.ndarray) -> tuple[float, float]:
    """Exactly rounded mean and standard error of the mean."""
    n = len(values)
    mean = math.fsum(values) / n
    if n < 2:
        return mean, 0.0
    var = math.fsum((v - mean) ** 2 for v in values) / (n - 1)
    return mean, math.sqrt(var / n)


def run_ensemble(config: ExperimentConfig, program: PulseProgram | None = None) -> ContrastPoint:
    """Ensemble-averaged contrast at the configured protocol, ``n`` and ``tau``.

    Without a bath and phase jitter every member is identical, so a single
    member is propagated and the standard error is zero.
    """
    program = program or config.program()
    values = ensemble_contrasts(program, config)
    if config.is_deterministic:
        mean, se = float(values[0]), 0.0
    else:
        mean, se = summarize(values)
    return ContrastPoint(program.total_time, mean, se)


def coherence_curve(protocol: str, n: int, tau_list, config: ExperimentConfig) -> CoherenceCurve:
    """Contrast versus total time ``2 n tau`` for each ``tau`` in ``tau_list``."""
    taus = [float(t) for t in tau_list]
    if any(b <= a for a, b in zip(taus, taus[1:])):
        raise ValueError("tau_list must be strictly ascending")
    cfg = replace(config, protocol=protocol, n=n)
    points = [run_ensemble(cfg, cfg.program(tau)) for tau in taus]
    return CoherenceCurve(tuple(points), protocol, n, config.initial_component)


def contrast_vs_n_scan(protocol_list, n_list, short_tau: float, config: ExperimentConfig,
                       components=COMPONENTS, n_overrides=None,
                       t2_estimate: float | None = None) -> list[ScanRow]:
    """Hahn-normalized contrast for each protocol, component and pulse count.

    Pulse counts a protocol cannot realize are skipped; ``n_overrides`` maps a
    protocol name to its own pulse-count list. With ``t2_estimate`` set, a
    warning is raised when ``2 n tau`` exceeds a tenth of it.
    """
    n_overrides = n_overrides or {}
    rows = []
    for component in components:
        cfg = replace(config, initial_component=component, tau=short_tau)
        ref = run_ensemble(replace(cfg, protocol="hahn", n=1))
        if ref.mean_contrast == 0:
            raise ZeroDivisionError(f"Hahn reference contrast vanished for {component}")
        for protocol in protocol_list:
            for n in n_overrides.get(protocol, n_list):
                if not supports(protocol, n):
                    log.debug("skipping %s with n=%d", protocol, n)
                    continue
                if t2_estimate is not None and 2 * n * short_tau > 0.1 * t2_estimate:
                    warnings.warn(f"{protocol} n={n}: 2 n tau = {2 * n * short_tau:g} s is not "
                                  f"much shorter than T2 ~ {t2_estimate:g} s", stacklevel=2)
                pt = run_ensemble(replace(cfg, protocol=protocol, n=n))
                rel = pt.mean_contrast / ref.mean_contrast
                se = math.hypot(pt.std_error, rel * ref.std_error) / abs(ref.mean_contrast)
                rows.append(ScanRow(protocol, component, n, rel, se, pt.mean_contrast))
    return rows
