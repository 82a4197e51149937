"""
Pulse-program builders for the dynamical-decoupling protocols.

Every builder returns a :class:`PulseProgram` on the standard timing skeleton:
``tau`` before the first pi pulse, ``2 tau`` between adjacent pulses and ``tau``
after the last one, so ``total_time = 2 n tau`` for ``n`` pulses.

Phases are chosen in degrees, reduced mod 360 and converted to radians once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .spinmath import PulseSpec

XY_BLOCKS = {
    "xy4": (0, 90, 0, 90),
    "xy8": (0, 90, 0, 90, 90, 0, 90, 0),
}
XY_BLOCKS["xy16"] = XY_BLOCKS["xy8"] + tuple(p + 180 for p in XY_BLOCKS["xy8"])

KDD_PHASES = (60, 0, 90, 0, 60)

MAX_CXY8_LEVEL = 3

PROTOCOLS = ("hahn", "cpmg", "xy4", "xy8", "xy16", "kdd_xy8", "cxy8")


@dataclass(frozen=True)
class ErrorModel:
    """Pulse imperfections applied to every pi pulse of a program.

    ``phase_jitter_sd`` (radians) is not baked into the program; the engine
    samples it per pulse and per realization.
    """

    epsilon: float = 0.0
    n_z: float = 0.0
    phase_jitter_sd: float = 0.0

    def __post_init__(self):
        if not self.epsilon > -1.0:
            raise ValueError(f"epsilon must be > -1, got {self.epsilon!r}")
        if not abs(self.n_z) < 1.0:
            raise ValueError(f"|n_z| must be < 1, got {self.n_z!r}")
        if self.phase_jitter_sd < 0:
            raise ValueError(f"phase_jitter_sd must be >= 0, got {self.phase_jitter_sd!r}")

    @property
    def is_ideal(self) -> bool:
        return self.epsilon == 0.0 and self.n_z == 0.0 and self.phase_jitter_sd == 0.0


IDEAL = ErrorModel()


@dataclass(frozen=True)
class PulseProgram:
    """Alternating free-evolution delays and pi pulses.

    ``delays[0]`` precedes ``pulses[0]``; ``delays[-1]`` follows the last pulse.
    """

    pulses: tuple[PulseSpec, ...]
    delays: tuple[float, ...]
    label: str = ""
    tau: float | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "pulses", tuple(self.pulses))
        object.__setattr__(self, "delays", tuple(float(d) for d in self.delays))
        if len(self.delays) != len(self.pulses) + 1:
            raise ValueError(
                f"need len(delays) == len(pulses) + 1, got {len(self.delays)} and {len(self.pulses)}")
        if any(d < 0 for d in self.delays):
            raise ValueError("delays must be non-negative")

    @property
    def n_pulses(self) -> int:
        return len(self.pulses)

    @property
    def total_time(self) -> float:
        return math.fsum(self.delays)

    def pulse_times(self) -> list[float]:
        """Centre time of each (instantaneous) pulse."""
        times, t = [], 0.0
        for d in self.delays[:-1]:
            t += d
            times.append(t)
        return times


def skeleton_delays(n: int, tau: float) -> tuple[float, ...]:
    if n == 0:
        return (2.0 * tau,)
    return (tau,) + (2.0 * tau,) * (n - 1) + (tau,)


def _pulse(phase_deg: float, em: ErrorModel) -> PulseSpec:
    return PulseSpec.tilted(math.radians(phase_deg % 360), em.epsilon, em.n_z)


def from_phases(phases_deg, tau: float, em: ErrorModel = IDEAL, label: str = "") -> PulseProgram:
    """Skeleton-timed program with one pi pulse per entry of ``phases_deg``."""
    if not tau > 0:
        raise ValueError(f"tau must be > 0, got {tau!r}")
    phases_deg = list(phases_deg)
    return PulseProgram(
        tuple(_pulse(p, em) for p in phases_deg),
        skeleton_delays(len(phases_deg), tau),
        label=label,
        tau=tau,
    )


def hahn(tau: float, em: ErrorModel = IDEAL) -> PulseProgram:
    return from_phases([0], tau, em, label="hahn")


def cpmg(n: int, tau: float, em: ErrorModel = IDEAL) -> PulseProgram:
    if n < 1:
        raise ValueError(f"CPMG needs n >= 1, got {n}")
    return from_phases([0] * n, tau, em, label="cpmg")


def xy_phases(variant: str, n: int) -> list[int]:
    key = variant.lower()
    if key not in XY_BLOCKS:
        raise ValueError(f"unknown XY variant {variant!r}; expected one of {sorted(XY_BLOCKS)}")
    block = XY_BLOCKS[key]
    if n < 1 or n % len(block):
        raise ValueError(f"{key.upper()} needs n to be a positive multiple of {len(block)}, got {n}")
    return list(block) * (n // len(block))


def xy_family(variant: str, n: int, tau: float, em: ErrorModel = IDEAL) -> PulseProgram:
    """XY4, XY8 or XY16 repeated up to ``n`` pulses.

    XY8 uses the palindromic ``XYXYYXYX`` block; XY16 appends the XY8 block
    with every phase advanced by 180 degrees.
    """
    return from_phases(xy_phases(variant, n), tau, em, label=variant.lower())


def kdd_phases(n_base: int) -> list[int]:
    return [p + d for p in xy_phases("xy8", n_base) for d in KDD_PHASES]


def kdd_xy8(n_base: int, tau: float, em: ErrorModel = IDEAL) -> PulseProgram:
    """KDD version of XY8: each XY8 pulse becomes five pulses at phases
    ``phi + (60, 0, 90, 0, 60)`` degrees, all still ``2 tau`` apart."""
    return from_phases(kdd_phases(n_base), tau, em, label="kdd_xy8")


def cxy8_count(level: int) -> int:
    """Number of pulses at concatenation level ``level``: ``N_k = 8 + 7 N_(k-1)``."""
    n = 8
    for _ in range(level):
        n = 8 + 7 * n
    return n


def cxy8_phases(level: int, max_level: int = MAX_CXY8_LEVEL) -> list[int]:
    if level < 0:
        raise ValueError(f"level must be >= 0, got {level}")
    if level > max_level:
        raise ValueError(f"concatenation level {level} exceeds the limit {max_level}")
    outer = XY_BLOCKS["xy8"]
    phases = list(outer)
    for _ in range(level):
        inner = phases
        phases = []
        for i, p in enumerate(outer):
            phases.append(p)
            if i < len(outer) - 1:
                phases.extend(inner)
    return phases


def concatenated_xy8(level: int, tau: float, em: ErrorModel = IDEAL,
                     max_level: int = MAX_CXY8_LEVEL) -> PulseProgram:
    """Concatenated XY8.

    Level 0 is one XY8 cycle. Level ``k`` applies the eight XY8 pulses with the
    complete level ``k - 1`` pulse list inserted in each of the seven interior
    gaps. All adjacent pulses, outer or inserted, are ``2 tau`` apart.
    """
    return from_phases(cxy8_phases(level, max_level), tau, em, label="cxy8")


def cxy8_level_for(n: int, max_level: int = MAX_CXY8_LEVEL) -> int:
    for level in range(max_level + 1):
        if cxy8_count(level) == n:
            return level
    valid = [cxy8_count(k) for k in range(max_level + 1)]
    raise ValueError(f"concatenated XY8 has no level with {n} pulses; valid counts are {valid}")


def build_program(protocol: str, n: int, tau: float, em: ErrorModel = IDEAL) -> PulseProgram:
    """Build ``protocol`` with exactly ``n`` pi pulses.

    ``n`` is the applied pulse count for every protocol, so KDD needs a
    multiple of 40 and concatenated XY8 one of 8, 64, 456, 3200.
    """
    key = protocol.lower()
    if key == "hahn":
        if n != 1:
            raise ValueError(f"Hahn echo has exactly one pulse, got n={n}")
        return hahn(tau, em)
    if key == "cpmg":
        return cpmg(n, tau, em)
    if key in XY_BLOCKS:
        return xy_family(key, n, tau, em)
    if key == "kdd_xy8":
        if n % 5:
            raise ValueError(f"KDD-XY8 pulse counts are multiples of 40, got {n}")
        return kdd_xy8(n // 5, tau, em)
    if key == "cxy8":
        return concatenated_xy8(cxy8_level_for(n), tau, em)
    raise ValueError(f"unknown protocol {protocol!r}; expected one of {list(PROTOCOLS)}")


def supports(protocol: str, n: int) -> bool:
    try:
        build_program(protocol, n, 1.0)
    except ValueError:
        return False
    return True


@dataclass(frozen=True)
class PulseEvent:
    index: int
    time_s: float
    phase_deg: float
    epsilon: float
    nx: float
    ny: float
    nz: float


def export_pulse_list(p: PulseProgram) -> list[PulseEvent]:
    """Flat ``(time, phase, epsilon, axis)`` list, one entry per pulse."""
    return [
        PulseEvent(i, t, math.degrees(pulse.phase), pulse.epsilon, *pulse.axis)
        for i, (t, pulse) in enumerate(zip(p.pulse_times(), p.pulses))
    ]


def _phase_from_degrees(deg: float) -> float:
    # builder phases are whole degrees; snapping undoes the radians -> degrees rounding
    snapped = round(deg, 9)
    if abs(deg - snapped) <= 1e-9:
        deg = snapped
    return math.radians(deg % 360)


def program_from_events(events, label: str = "", rtol: float = 1e-12) -> PulseProgram:
    """Rebuild a program from :func:`export_pulse_list` output.

    The trailing delay is not part of the event list; it is taken equal to the
    leading one, as in the skeleton. When the event times sit on the skeleton
    grid ``(2k + 1) tau`` the delays are regenerated exactly from ``tau``.
    """
    events = list(events)
    if not events:
        raise ValueError("cannot rebuild a program from an empty event list")
    pulses = tuple(
        PulseSpec(math.pi, _phase_from_degrees(e.phase_deg), e.epsilon, (e.nx, e.ny, e.nz)) for e in events
    )
    times = [e.time_s for e in events]
    tau = times[0]
    on_grid = all(abs(t - (2 * k + 1) * tau) <= rtol * max(abs(t), tau) for k, t in enumerate(times))
    if on_grid and tau > 0:
        delays = skeleton_delays(len(events), tau)
    else:
        delays = (times[0],) + tuple(b - a for a, b in zip(times, times[1:])) + (times[0],)
    return PulseProgram(pulses, delays, label=label, tau=tau if on_grid else None)
