"""
Coherence-time extraction and protocol comparison.

Decays are fitted to ``C(t) = A exp[-(t / T2)^p]`` with bounded nonlinear
least squares (``A`` in [0, 1.2], ``p`` in [0.5, 4]). The fit is deterministic:
a fixed grid of starting exponents, each refined with a trust-region solver,
and the lowest residual wins.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares

from .engine import CoherenceCurve, ExperimentConfig, ScanRow, coherence_curve

log = logging.getLogger(__name__)

P_STARTS = (0.5, 1.0, 1.5, 2.0, 3.0)
P_BOUNDS = (0.5, 4.0)
A_BOUNDS = (0.0, 1.2)
MIN_POINTS = 5
PARAM_TOL = 1e-10
MAX_NFEV = 2000


class FitError(RuntimeError):
    pass


class NoDecayObserved(FitError):
    """The curve never falls below ``A / e`` in the sampled window."""


class IllConditioned(FitError):
    """The fit Jacobian is rank deficient, so the covariance is undefined."""


@dataclass(frozen=True)
class CoherenceFit:
    amplitude: float
    t2: float
    exponent: float
    residual_rms: float
    covariance: np.ndarray
    t2_err: float
    nfev: int

    @property
    def params(self) -> tuple[float, float, float]:
        return self.amplitude, self.t2, self.exponent


def stretched_exp(t, amplitude: float, t2: float, exponent: float):
    return amplitude * np.exp(-np.power(np.asarray(t, dtype=float) / t2, exponent))


def synthesize(times, amplitude: float, t2: float, exponent: float, protocol: str = "synthetic",
               n_pulses: int = 1, component: str = "Sx", noise_sd: float = 0.0, rng=None) -> CoherenceCurve:
    """Noiseless (or Gaussian-noised) stretched-exponential curve for testing fits."""
    from .engine import ContrastPoint

    times = np.asarray(times, dtype=float)
    y = stretched_exp(times, amplitude, t2, exponent)
    if noise_sd:
        y = y + noise_sd * (rng or np.random.default_rng()).standard_normal(len(times))
    pts = tuple(ContrastPoint(float(t), float(c), float(noise_sd)) for t, c in zip(times, y))
    return CoherenceCurve(pts, protocol, n_pulses, component)


def _crossing(t, y, level):
    """First time the piecewise-linear curve drops below ``level``."""
    below = np.nonzero(y < level)[0]
    if len(below) == 0:
        return None
    i = below[0]
    if i == 0:
        return t[0]
    t0, t1, y0, y1 = t[i - 1], t[i], y[i - 1], y[i]
    return t0 + (y0 - level) * (t1 - t0) / (y0 - y1)


def fit_stretched_exp(curve: CoherenceCurve) -> CoherenceFit:
    """Fit ``A exp[-(t/T2)^p]`` to a coherence curve.

    Raises
    ------
    NoDecayObserved
        If the contrast never drops below ``A/e``, with ``A`` estimated by
        the earliest sample.
    IllConditioned
        If the Jacobian at the optimum is numerically singular.
    """
    t = curve.times
    y = curve.contrasts
    if len(t) < MIN_POINTS:
        raise ValueError(f"need at least {MIN_POINTS} points to fit, got {len(t)}")
    if np.any(t <= 0):
        raise ValueError("fit times must be positive")

    a0 = float(np.clip(y[0], 1e-3, A_BOUNDS[1]))
    t_cross = _crossing(t, y, a0 / math.e)
    if t_cross is None:
        raise NoDecayObserved(f"contrast stays above A/e = {a0 / math.e:.4g} up to t = {t[-1]:g} s")

    # log T2 is solved for instead of T2 so the problem is scale free
    scale = float(t_cross)
    u = t / scale

    def resid(x):
        a, log_t2, p = x
        return a * np.exp(-np.power(u * math.exp(-log_t2), p)) - y

    def jac(x):
        a, log_t2, p = x
        w = np.power(u * math.exp(-log_t2), p)
        e = np.exp(-w)
        lw = np.log(np.maximum(u, 1e-300)) - log_t2
        return np.column_stack([e, a * e * w * p, -a * e * w * lw])

    lower = [A_BOUNDS[0], -np.inf, P_BOUNDS[0]]
    upper = [A_BOUNDS[1], np.inf, P_BOUNDS[1]]
    best = None
    for p0 in P_STARTS:
        sol = least_squares(resid, [a0, 0.0, p0], jac=jac, bounds=(lower, upper), method="trf",
                            xtol=PARAM_TOL, ftol=1e-15, gtol=1e-15, max_nfev=MAX_NFEV, x_scale=1.0)
        if best is None or sol.cost < best.cost:
            best = sol

    a, log_t2, p = best.x
    J = best.jac
    jtj = J.T @ J
    if not np.all(np.isfinite(jtj)) or np.linalg.cond(jtj) > 1e14:
        raise IllConditioned(f"fit Jacobian is degenerate (cond = {np.linalg.cond(jtj):.3g})")
    dof = max(len(t) - 3, 1)
    s2 = 2.0 * best.cost / dof
    cov_internal = s2 * np.linalg.inv(jtj)
    t2 = scale * math.exp(log_t2)
    # d T2 / d log_t2 = T2
    jac_map = np.diag([1.0, t2, 1.0])
    cov = jac_map @ cov_internal @ jac_map
    return CoherenceFit(
        amplitude=float(a),
        t2=float(t2),
        exponent=float(p),
        residual_rms=float(math.sqrt(2.0 * best.cost / len(t))),
        covariance=cov,
        t2_err=float(math.sqrt(max(cov[1, 1], 0.0))),
        nfev=int(best.nfev),
    )


@dataclass(frozen=True)
class PowerLaw:
    """``T2(n) = prefactor * n**exponent`` from a log-log least-squares line."""

    prefactor: float
    exponent: float

    def __call__(self, n):
        return self.prefactor * np.power(n, self.exponent)


def fit_power_law(n_values, t2_values) -> PowerLaw:
    n = np.asarray(n_values, dtype=float)
    t2 = np.asarray(t2_values, dtype=float)
    if len(n) < 2:
        raise ValueError("need at least two rows for a power-law fit")
    A = np.column_stack([np.ones_like(n), np.log(n)])
    (c0, s), *_ = np.linalg.lstsq(A, np.log(t2), rcond=None)
    return PowerLaw(float(math.exp(c0)), float(s))


@dataclass(frozen=True)
class T2Row:
    protocol: str
    component: str
    n: int
    fit: CoherenceFit | None
    curve: CoherenceCurve | None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.fit is not None


@dataclass(frozen=True)
class T2Table:
    rows: tuple[T2Row, ...]
    power_law: PowerLaw | None

    def successful(self) -> list[T2Row]:
        return [r for r in self.rows if r.ok]


def default_times(t2_guess: float, n_points: int = 24, span=(0.05, 3.0)) -> np.ndarray:
    return np.linspace(span[0] * t2_guess, span[1] * t2_guess, n_points)


def fit_curve_adaptive(protocol: str, n: int, config: ExperimentConfig, t2_guess: float,
                       n_points: int = 24, max_rounds: int = 4):
    """Simulate a curve around ``t2_guess`` and refit until the window brackets T2.

    Returns ``(curve, fit)``. The window ``[0.05, 3] * guess`` is widened when
    no decay is seen and re-centred on the fitted T2 when it lands outside
    ``[0.3, 1.5] * guess``.
    """
    guess = t2_guess
    fit = curve = last_err = None
    for _ in range(max_rounds):
        times = default_times(guess, n_points)
        curve = coherence_curve(protocol, n, times / (2 * n), config)
        try:
            fit = fit_stretched_exp(curve)
        except NoDecayObserved as exc:
            fit, last_err = None, exc
            guess *= 3.0
            continue
        if 0.3 * guess <= fit.t2 <= 1.5 * guess:
            return curve, fit
        guess = fit.t2
    if fit is None:
        raise last_err
    return curve, fit


def t2_vs_n(protocol: str, n_list, config: ExperimentConfig, t2_guess: float | None = None,
            growth_guess: float = 2.0 / 3.0, n_points: int = 24, times=None) -> T2Table:
    """Coherence curve and stretched-exponential fit for each pulse count.

    Rows whose program cannot be built or whose fit fails are kept with an
    ``error`` message. The power law is fitted to the successful rows.
    ``times`` fixes a shared total-time grid; otherwise each row uses an
    adaptive window seeded by the previous row's T2 scaled as
    ``(n / n_prev) ** growth_guess``.
    """
    n_list = list(n_list)
    if any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise ValueError("n_list must be strictly ascending")
    guess = t2_guess or 0.7e-3
    prev_n = None
    rows = []
    for n in n_list:
        if prev_n is not None:
            guess = guess * (n / prev_n) ** growth_guess
        try:
            if times is not None:
                curve = coherence_curve(protocol, n, np.asarray(times) / (2 * n), config)
                fit = fit_stretched_exp(curve)
            else:
                curve, fit = fit_curve_adaptive(protocol, n, config, guess, n_points)
        except (FitError, ValueError) as exc:
            log.warning("%s n=%d: %s", protocol, n, exc)
            rows.append(T2Row(protocol, config.initial_component, n, None, None, str(exc)))
            continue
        rows.append(T2Row(protocol, config.initial_component, n, fit, curve))
        guess, prev_n = fit.t2, n
    good = [r for r in rows if r.ok]
    law = fit_power_law([r.n for r in good], [r.fit.t2 for r in good]) if len(good) >= 2 else None
    return T2Table(tuple(rows), law)


@dataclass(frozen=True)
class RankEntry:
    rank: int
    protocol: str
    worst_case: float
    n: int
    by_component: dict


def protocol_ranking(scan_table, n: int | None = None, rtol: float = 1e-9) -> list[RankEntry]:
    """Rank protocols by worst-case relative contrast over ``S_x`` and ``S_y``.

    The comparison is made at ``n`` or, by default, at the largest pulse count
    present for every protocol. Values within ``rtol`` of each other tie and
    are then ordered by protocol name.
    """
    rows: list[ScanRow] = list(scan_table)
    by_key: dict[tuple[str, int], dict[str, float]] = {}
    for r in rows:
        by_key.setdefault((r.protocol, r.n), {})[r.component] = r.relative_contrast
    protocols = sorted({r.protocol for r in rows})
    if not protocols:
        raise ValueError("empty scan table")
    for proto in protocols:
        comps = set().union(*(v for (p, _), v in by_key.items() if p == proto))
        missing = {"Sx", "Sy"} - comps
        if missing:
            raise ValueError(f"scan table lacks {sorted(missing)} rows for {proto}")
    if n is None:
        common = None
        for proto in protocols:
            ns = {k for (p, k), v in by_key.items() if p == proto and {"Sx", "Sy"} <= set(v)}
            common = ns if common is None else common & ns
        if not common:
            raise ValueError("protocols share no pulse count with both components present")
        n = max(common)
    worst = {}
    for proto in protocols:
        vals = by_key.get((proto, n))
        if not vals or not {"Sx", "Sy"} <= set(vals):
            raise ValueError(f"{proto} has no complete S_x/S_y pair at n={n}")
        worst[proto] = min(vals["Sx"], vals["Sy"])

    ordered = sorted(protocols, key=lambda p: -worst[p])
    # group near-equal values, then order each group by name
    groups, current = [], [ordered[0]]
    for p in ordered[1:]:
        head = worst[current[0]]
        if abs(worst[p] - head) <= rtol * max(abs(head), abs(worst[p])):
            current.append(p)
        else:
            groups.append(current)
            current = [p]
    groups.append(current)
    out, rank = [], 1
    for g in groups:
        for p in sorted(g):
            out.append(RankEntry(rank, p, worst[p], n, dict(by_key[(p, n)])))
        rank += len(g)
    return out
