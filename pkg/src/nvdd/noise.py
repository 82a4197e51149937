"""
Classical dephasing environment for the NV spin.

The spin-bath field is an Ornstein-Uhlenbeck (OU) detuning ``delta(t)`` with
stationary rms ``b`` (rad/s) and correlation time ``tau_c``. Each ensemble
member also gets a static detuning (Gaussian inhomogeneous broadening plus one
of the hyperfine lines) and a Rabi-amplitude scale factor.

Randomness is organized per realization: realization ``i`` of an ensemble
with master seed ``s`` draws from ``SeedSequence(s, spawn_key=(i,))``. The
draw order inside one stream is fixed: static Gaussian, hyperfine line,
Rabi scale, initial OU value, then whatever the propagator consumes (phase
jitter followed by OU increments). This keeps every result independent of
how realizations are batched or scheduled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class BathParams:
    """Stochastic dephasing parameters (all detunings in rad/s).

    ``hyperfine_lines`` is a sequence of ``(detuning, weight)`` pairs; the
    default single resonant line corresponds to a fully polarized nitrogen
    nuclear spin. ``t1`` is an optional exponential contrast envelope.
    """

    b: float = 0.0
    tau_c: float = 10e-3
    static_sd: float = 0.0
    hyperfine_lines: tuple[tuple[float, float], ...] = ((0.0, 1.0),)
    rabi_scale_sd: float = 0.0
    t1: float = math.inf

    def __post_init__(self):
        lines = tuple((float(d), float(w)) for d, w in self.hyperfine_lines)
        object.__setattr__(self, "hyperfine_lines", lines)
        if self.b < 0:
            raise ValueError(f"b must be >= 0, got {self.b!r}")
        if not self.tau_c > 0:
            raise ValueError(f"tau_c must be > 0, got {self.tau_c!r}")
        if self.static_sd < 0 or self.rabi_scale_sd < 0:
            raise ValueError("spreads must be non-negative")
        if not lines:
            raise ValueError("need at least one hyperfine line")
        if any(w < 0 for _, w in lines):
            raise ValueError("hyperfine weights must be non-negative")
        total = math.fsum(w for _, w in lines)
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"hyperfine weights must sum to 1, got {total!r}")
        if not self.t1 > 0:
            raise ValueError(f"t1 must be > 0, got {self.t1!r}")

    def with_b(self, b: float) -> "BathParams":
        return BathParams(b, self.tau_c, self.static_sd, self.hyperfine_lines, self.rabi_scale_sd, self.t1)

    @property
    def default_substep(self) -> float:
        return self.tau_c / 20.0


def realization_seed(master_seed: int, index: int) -> np.random.SeedSequence:
    """Seed of realization ``index`` in an ensemble with ``master_seed``."""
    return np.random.SeedSequence(master_seed, spawn_key=(index,))


@dataclass
class NoiseRealization:
    """One ensemble member's environment, plus its OU sampler state.

    ``ou_value`` is the OU detuning at time ``time``; functions that move the
    trajectory forward (:func:`advance`, :func:`accumulated_phase`) update both
    and consume draws from ``rng``.
    """

    seed: object
    static_delta: float
    rabi_scale: float
    params: BathParams
    ou_value: float
    time: float = 0.0
    rng: np.random.Generator = field(default=None, repr=False)


def draw_realization(params: BathParams, seed) -> NoiseRealization:
    """Sample static detuning, Rabi scale and a stationary OU start value.

    ``seed`` is anything :func:`numpy.random.default_rng` accepts; the engine
    passes :func:`realization_seed` values.
    """
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    rng = np.random.default_rng(seed)
    gauss = rng.standard_normal()
    u = rng.random()
    rabi = rng.standard_normal()
    ou0 = rng.standard_normal()

    weights = np.cumsum([w for _, w in params.hyperfine_lines])
    line = min(int(np.searchsorted(weights, u * weights[-1], side="right")), len(weights) - 1)
    static = params.static_sd * gauss + params.hyperfine_lines[line][0]
    return NoiseRealization(
        seed=seed,
        static_delta=float(static),
        rabi_scale=float(1.0 + params.rabi_scale_sd * rabi),
        params=params,
        ou_value=float(params.b * ou0),
        rng=rng,
    )


def ou_coefficients(dt, tau_c: float):
    """Decay factor ``a = exp(-dt / tau_c)`` and innovation scale ``sqrt(1 - a**2)``."""
    a = np.exp(-np.asarray(dt) / tau_c)
    return a, np.sqrt(-np.expm1(-2.0 * np.asarray(dt) / tau_c))


def ou_advance(x, dt, b: float, tau_c: float, xi):
    """Exact OU update from standard normal ``xi``; works on scalars or arrays."""
    a, g = ou_coefficients(dt, tau_c)
    return x * a + b * g * xi


def ou_advance_integral(x, dt, b: float, tau_c: float, xi1, xi2):
    """Exact joint sample of ``(delta(t + dt), integral of delta over dt)``.

    Given ``delta(t) = x``, the pair is bivariate Gaussian with
    ``E[x1] = a x``, ``E[I] = tau_c (1 - a) x``,
    ``Var[x1] = b^2 (1 - a^2)``, ``Cov[x1, I] = b^2 tau_c (1 - a)^2`` and
    ``Var[I] = b^2 tau_c^2 (2 dt / tau_c - (1 - a)(3 - a))``.
    """
    dt = np.asarray(dt, dtype=float)
    r = dt / tau_c
    a = np.exp(-r)
    one_a = -np.expm1(-r)
    var_x = -np.expm1(-2.0 * r)
    cov = tau_c * one_a * one_a
    # series for small r avoids cancellation in 2r - (1 - a)(3 - a)
    small = r < 1e-3
    rr = np.where(small, r, 0.0)
    var_i_series = tau_c * tau_c * (2.0 / 3.0 * rr**3 - 0.5 * rr**4 + 7.0 / 30.0 * rr**5)
    var_i = np.where(small, var_i_series, tau_c * tau_c * (2.0 * r - one_a * (3.0 - a)))
    sx = np.sqrt(var_x)
    l21 = np.divide(cov, sx, out=np.zeros_like(sx), where=sx > 0)
    l22 = np.sqrt(np.maximum(var_i - l21 * l21, 0.0))
    x1 = a * x + b * sx * xi1
    integral = tau_c * one_a * x + b * (l21 * xi1 + l22 * xi2)
    return x1, integral


def ou_step(current: float, dt: float, params: BathParams, rng: np.random.Generator) -> float:
    """One exact OU step; the stationary distribution is ``N(0, b^2)``."""
    if not dt > 0:
        raise ValueError(f"dt must be > 0, got {dt!r}")
    return float(ou_advance(current, dt, params.b, params.tau_c, rng.standard_normal()))


def advance(realization: NoiseRealization, t: float) -> None:
    """Move the OU trajectory forward to time ``t`` without integrating phase."""
    dt = t - realization.time
    if dt < 0:
        raise ValueError(f"cannot move realization back in time ({realization.time} -> {t})")
    if dt > 0:
        realization.ou_value = ou_step(realization.ou_value, dt, realization.params, realization.rng)
        realization.time = t


def substep_grid(length: float, substep: float) -> tuple[int, float]:
    """Number of equal substeps covering ``length`` and their size."""
    if length <= 0:
        return 0, 0.0
    m = max(1, math.ceil(length / substep - 1e-9))
    return m, length / m


def accumulated_phase(realization: NoiseRealization, t0: float, t1: float,
                      substep: float | None = None, method: str = "trapezoid") -> float:
    """Phase ``integral of delta(t) dt`` accumulated from ``t0`` to ``t1``.

    The OU part is integrated over equal substeps no longer than ``substep``
    (default ``tau_c / 20``), either with the trapezoid rule or exactly
    (``method="exact"``, joint sampling of value and integral). The static part
    contributes ``static_delta * (t1 - t0)``. The realization's trajectory is
    advanced to ``t1``.
    """
    if t1 < t0:
        raise ValueError("need t1 >= t0")
    params = realization.params
    if substep is None:
        substep = params.default_substep
    if not substep > 0:
        raise ValueError(f"substep must be > 0, got {substep!r}")
    advance(realization, t0)

    m, dt = substep_grid(t1 - t0, substep)
    x = realization.ou_value
    total = 0.0
    rng = realization.rng
    for _ in range(m):
        if method == "trapezoid":
            x_new = float(ou_advance(x, dt, params.b, params.tau_c, rng.standard_normal()))
            total += 0.5 * dt * (x + x_new)
        elif method == "exact":
            xi1, xi2 = rng.standard_normal(2)
            x_new, inc = ou_advance_integral(x, dt, params.b, params.tau_c, xi1, xi2)
            x_new = float(x_new)
            total += float(inc)
        else:
            raise ValueError(f"unknown integration method {method!r}")
        x = x_new
    realization.ou_value = x
    realization.time = t1
    return total + realization.static_delta * (t1 - t0)


def hahn_phase_variance(b: float, tau_c: float, t: float) -> float:
    """Exact variance of the Hahn-echo OU phase over total time ``t``.

    ``2 b^2 tau_c^2 [t/tau_c - 3 + 4 exp(-t / 2 tau_c) - exp(-t / tau_c)]``.
    """
    r = t / tau_c
    return 2.0 * b * b * tau_c * tau_c * (r - 3.0 + 4.0 * math.exp(-r / 2) - math.exp(-r))


def hahn_b_estimate(target_t2: float, tau_c: float) -> float:
    """OU amplitude whose exact Gaussian Hahn decay reaches ``1/e`` at ``target_t2``."""
    return math.sqrt(2.0 / hahn_phase_variance(1.0, tau_c, target_t2))


class CalibrationError(RuntimeError):
    """The Hahn T2 target could not be bracketed or reached."""


@dataclass(frozen=True)
class CalibrationConfig:
    """Monte-Carlo settings for :func:`calibrate_b_for_hahn_t2`.

    ``b_bounds`` defaults to a factor ``bracket_factor`` around the analytic
    Gaussian-phase estimate.
    """

    bath: BathParams = BathParams()
    n_realizations: int = 2000
    master_seed: int = 0
    n_times: int = 24
    time_span: tuple[float, float] = (0.1, 3.0)
    b_bounds: tuple[float, float] | None = None
    bracket_factor: float = 8.0
    rtol: float = 0.005
    max_iter: int = 60
    integrator: str = "exact"
    substep: float | None = None
    threads: int = 1


@dataclass(frozen=True)
class CalibrationResult:
    b: float
    tau_c: float
    target_t2: float
    achieved_t2: float
    iterations: int
    master_seed: int
    n_realizations: int


def calibrate_b_for_hahn_t2(target_t2: float, tau_c: float,
                            mc_config: CalibrationConfig | None = None) -> CalibrationResult:
    """Find the OU amplitude ``b`` whose simulated Hahn-echo T2 equals ``target_t2``.

    Bisects ``log b`` on the stretched-exponential T2 fitted to a simulated
    Hahn curve. All candidate ``b`` reuse the same realization seeds, so the
    search is deterministic and, in practice, monotone.
    """
    from .analysis import NoDecayObserved, fit_stretched_exp
    from .engine import ExperimentConfig, coherence_curve

    if not target_t2 > 0:
        raise ValueError(f"target_t2 must be > 0, got {target_t2!r}")
    cfg = mc_config or CalibrationConfig()
    base = BathParams(cfg.bath.b, tau_c, cfg.bath.static_sd, cfg.bath.hyperfine_lines,
                      cfg.bath.rabi_scale_sd, cfg.bath.t1)
    lo_frac, hi_frac = cfg.time_span
    times = np.linspace(lo_frac * target_t2, hi_frac * target_t2, cfg.n_times)
    taus = times / 2.0

    def hahn_t2(b: float) -> float:
        ec = ExperimentConfig(
            protocol="hahn", n=1, tau=float(taus[0]), bath=base.with_b(b),
            n_realizations=cfg.n_realizations, master_seed=cfg.master_seed,
            integrator=cfg.integrator, substep=cfg.substep, threads=cfg.threads,
        )
        curve = coherence_curve("hahn", 1, taus, ec)
        try:
            return fit_stretched_exp(curve).t2
        except NoDecayObserved:
            return math.inf

    if cfg.b_bounds is None:
        guess = hahn_b_estimate(target_t2, tau_c)
        lo, hi = guess / cfg.bracket_factor, guess * cfg.bracket_factor
    else:
        lo, hi = cfg.b_bounds
    if not 0 < lo < hi:
        raise ValueError(f"invalid b bounds ({lo!r}, {hi!r})")

    t_lo, t_hi = hahn_t2(lo), hahn_t2(hi)
    if not (t_lo > target_t2 > t_hi):
        raise CalibrationError(
            f"target T2 {target_t2:g} s not bracketed: T2(b={lo:g}) = {t_lo:g} s, T2(b={hi:g}) = {t_hi:g} s")

    b, t2 = lo, t_lo
    for it in range(1, cfg.max_iter + 1):
        b = math.sqrt(lo * hi)
        t2 = hahn_t2(b)
        if abs(t2 / target_t2 - 1.0) <= cfg.rtol:
            return CalibrationResult(b, tau_c, target_t2, t2, it, cfg.master_seed, cfg.n_realizations)
        if t2 > target_t2:
            lo = b
        else:
            hi = b
    raise CalibrationError(f"bisection did not reach rtol={cfg.rtol} in {cfg.max_iter} steps "
                           f"(last b={b:g}, T2={t2:g} s)")
