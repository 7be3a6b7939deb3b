"""Software thermostat, compressor lockout and request adjudication.

Authority runs lockout > thermostat limits > external request: a controller may
move a house anywhere inside its deadband, but never restart a compressor
that has not been off for the lockout period and never hold a house past a
deadband edge.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from .etp import HouseParams, HouseState, Mode, thermostat_temperature


class Reason(str, Enum):
    APPLIED = "APPLIED"
    LOCKOUT_ACTIVE = "LOCKOUT_ACTIVE"
    THERMOSTAT_OVERRIDE = "THERMOSTAT_OVERRIDE"
    NO_CHANGE = "NO_CHANGE"


@dataclass(frozen=True)
class SwitchRequest:
    house_id: int
    desired_mode: Mode
    request_time: float = 0.0


@dataclass(frozen=True)
class Verdict:
    accepted: bool
    reason: Reason

    def __post_init__(self) -> None:
        if self.accepted != (self.reason in (Reason.APPLIED, Reason.NO_CHANGE)):
            raise ValueError(f"inconsistent verdict {self.accepted}/{self.reason}")


APPLIED = Verdict(True, Reason.APPLIED)
NO_CHANGE = Verdict(True, Reason.NO_CHANGE)
LOCKOUT_ACTIVE = Verdict(False, Reason.LOCKOUT_ACTIVE)
THERMOSTAT_OVERRIDE = Verdict(False, Reason.THERMOSTAT_OVERRIDE)


def thermostat_decision(t_therm: float, current_mode: Mode, params: HouseParams) -> Mode:
    """Bang-bang cooling thermostat with hysteresis."""
    if t_therm >= params.t_plus:
        return Mode.ON
    if t_therm <= params.t_minus:
        return Mode.OFF
    return current_mode


def dwell_remaining(state: HouseState, params: HouseParams) -> float:
    """Seconds before the compressor may leave its current mode."""
    if state.mode is Mode.OFF:
        return max(0.0, params.lockout - state.time_since_off)
    return max(0.0, params.min_on - state.time_in_mode)


def adjudicate(request: SwitchRequest, state: HouseState, params: HouseParams) -> Verdict:
    if request.desired_mode is state.mode:
        return NO_CHANGE
    if dwell_remaining(state, params) > 0:
        return LOCKOUT_ACTIVE
    t = thermostat_temperature(state, params)
    if request.desired_mode is Mode.ON and t <= params.t_minus:
        return THERMOSTAT_OVERRIDE
    if request.desired_mode is Mode.OFF and t >= params.t_plus:
        return THERMOSTAT_OVERRIDE
    return APPLIED
