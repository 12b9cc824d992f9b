"""Behavioral laws for the superconducting devices.

Three device classes are modelled:

* the superconducting nanowire (SNW), a two-phase hotspot switch with
  critical current ``i_c`` and retrapping current ``i_r``;
* the superconducting memristor (SM), a non-volatile two-level resistor;
* the heater cryotron (h-Tron), whose heater current gates a channel.

All laws here are pure functions of (state, drive, params).
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field


class Phase(enum.Enum):
    SUPERCONDUCTING = "S"
    NORMAL = "N"


class Level(enum.Enum):
    LRS = 0
    HRS = 1

    def flipped(self) -> "Level":
        return Level.HRS if self is Level.LRS else Level.LRS

    @classmethod
    def coerce(cls, value) -> "Level":
        if isinstance(value, Level):
            return value
        if isinstance(value, str):
            return cls[value.upper()]
        return cls(int(value))


@dataclass(frozen=True)
class SnwParams:
    i_c: float = 30e-6
    i_r: float = 20e-6
    r_nw: float = 5e3
    l_nw: float = 10e-9

    def __post_init__(self):
        for name in ("i_c", "i_r", "r_nw", "l_nw"):
            if not getattr(self, name) > 0:
                raise ValueError(f"SnwParams.{name} must be positive")
        if not self.i_r < self.i_c:
            raise ValueError("retrapping current must be below critical current")


@dataclass(frozen=True)
class SnwState:
    phase: Phase = Phase.SUPERCONDUCTING
    branch_current: float = 0.0

    def resistance(self, params: SnwParams) -> float:
        return params.r_nw if self.phase is Phase.NORMAL else 0.0


@dataclass(frozen=True)
class SmParams:
    r_lrs: float = 14.4e-3
    r_hrs: float = 98e-3
    # compact-model phase constant (degrees); carried as metadata only
    gamma_0: float = 60.0

    def __post_init__(self):
        if not 0 < self.r_lrs:
            raise ValueError("r_lrs must be positive")
        if self.r_hrs < self.r_lrs:
            raise ValueError("r_hrs must not be below r_lrs")


@dataclass
class SmState:
    """Stored resistance level. Mutated only by ``cells.program_sm``."""

    level: Level = Level.LRS

    def __post_init__(self):
        self.level = Level.coerce(self.level)


@dataclass(frozen=True)
class HtronParams:
    i_heater_th: float = 50e-6
    # channel model used by the transient engine
    l_channel: float = 1e-9
    r_channel: float = 2.0
    # heater pulse delivered per triggering spike
    i_heater_pulse: float = 100e-6
    t_hold: float = 2e-9

    def __post_init__(self):
        if not self.i_heater_th > 0:
            raise ValueError("i_heater_th must be positive")
        if self.l_channel <= 0 or self.r_channel <= 0 or self.t_hold <= 0:
            raise ValueError("h-Tron channel parameters must be positive")


@dataclass(frozen=True)
class DeviceParams:
    snw: SnwParams = field(default_factory=SnwParams)
    sm: SmParams = field(default_factory=SmParams)
    htron: HtronParams = field(default_factory=HtronParams)

    @classmethod
    def from_dict(cls, d: dict | None) -> "DeviceParams":
        d = d or {}
        return cls(
            snw=SnwParams(**d.get("snw", {})),
            sm=SmParams(**d.get("sm", {})),
            htron=HtronParams(**d.get("htron", {})),
        )


def sm_resistance(state: SmState, params: SmParams) -> float:
    return params.r_hrs if state.level is Level.HRS else params.r_lrs


def snw_transition(state: SnwState, i_through: float, params: SnwParams) -> SnwState:
    """Advance the hotspot switch given the current it carries.

    Switches to normal at ``|i| >= i_c`` and retraps at ``|i| <= i_r``;
    inside the hysteresis band the phase is kept.
    """
    mag = abs(i_through)
    phase = state.phase
    if phase is Phase.SUPERCONDUCTING and mag >= params.i_c:
        phase = Phase.NORMAL
    elif phase is Phase.NORMAL and mag <= params.i_r:
        phase = Phase.SUPERCONDUCTING
    return SnwState(phase=phase, branch_current=i_through)


def htron_channel_enabled(i_heater: float, params: HtronParams) -> bool:
    """True when the channel can carry supercurrent (heater below threshold)."""
    return abs(i_heater) < params.i_heater_th
