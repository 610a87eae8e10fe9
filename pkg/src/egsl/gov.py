"""Thermostat decision logic and client helpers for the worked contract examples."""

from __future__ import annotations

from dataclasses import dataclass
from decimal import Decimal

from .errors import ConfigError, ProtocolError, ValidationError
from .fixed import from_fixed, to_decimal, to_fixed

TURN_ON_AC = "turnOnAC"
TURN_ON_HEATING = "turnOnHeating"
SEND_PROMPT = "sendPrompt"
DO_NOTHING = "doNothing"

DEVICE_NAMES = {TURN_ON_AC: "air_conditioner", TURN_ON_HEATING: "heating_unit"}

# The literal profile keeps the original rule table: too cold -> A/C, too hot -> heating.
PROFILES = {
    "literal": (TURN_ON_AC, TURN_ON_HEATING),
    "conventional": (TURN_ON_HEATING, TURN_ON_AC),
}


@dataclass(frozen=True)
class ThermostatConfig:
    low_temp_c: Decimal = Decimal(18)
    high_temp_c: Decimal = Decimal(25)
    consumption_threshold_w: Decimal = Decimal(25)
    profile: str = "literal"

    def __post_init__(self):
        for name in ("low_temp_c", "high_temp_c", "consumption_threshold_w"):
            object.__setattr__(self, name, to_decimal(getattr(self, name)))
        if self.profile not in PROFILES:
            raise ConfigError(f"unknown thermostat profile {self.profile!r}")
        if not self.low_temp_c < self.high_temp_c:
            raise ConfigError("lowTempC must be below highTempC")
        if self.low_temp_c <= 0 or self.high_temp_c <= 0 or self.consumption_threshold_w <= 0:
            raise ConfigError("thresholds must be strictly positive")

    @property
    def low_action(self) -> str:
        return PROFILES[self.profile][0]

    @property
    def high_action(self) -> str:
        return PROFILES[self.profile][1]

    def to_value(self) -> dict:
        return {
            "low": to_fixed(self.low_temp_c),
            "high": to_fixed(self.high_temp_c),
            "threshold": to_fixed(self.consumption_threshold_w),
            "profile": self.profile,
        }

    @classmethod
    def from_value(cls, v: dict) -> "ThermostatConfig":
        return cls(from_fixed(v["low"]), from_fixed(v["high"]), from_fixed(v["threshold"]), v["profile"])


@dataclass(frozen=True)
class Action:
    kind: str
    text: str | None = None

    @property
    def device(self) -> str | None:
        return DEVICE_NAMES.get(self.kind)

    def to_value(self) -> dict:
        return {"action": self.kind, "text": self.text}


def prompt_text(action: str) -> str:
    return f"Daily electricity consumption threshold reached. Turn on the {DEVICE_NAMES[action]}? (YES/NO)"


def thermostat_step(temp_c, consumption_w, user_answer: str | None = None, cfg: ThermostatConfig | None = None) -> Action:
    """One evaluation of the thermostat rule table.

    Comparisons are strict, so the band edges and the exact threshold fall
    into do-nothing and prompt respectively. ``user_answer`` is only legal as
    the reply to a prompt these same inputs would emit.
    """
    cfg = cfg or ThermostatConfig()
    temp = to_decimal(temp_c)
    consumption = to_decimal(consumption_w)
    if user_answer is not None and user_answer not in ("YES", "NO"):
        raise ValidationError(f"answer must be YES or NO, got {user_answer!r}")

    if temp < cfg.low_temp_c:
        action = cfg.low_action
    elif temp > cfg.high_temp_c:
        action = cfg.high_action
    else:
        if user_answer is not None:
            raise ProtocolError("answer given but no prompt is pending")
        return Action(DO_NOTHING)

    if consumption < cfg.consumption_threshold_w:
        if user_answer is not None:
            raise ProtocolError("answer given but no prompt is pending")
        return Action(action)
    if user_answer is None:
        return Action(SEND_PROMPT, prompt_text(action))
    return Action(action) if user_answer == "YES" else Action(DO_NOTHING)


# -- client helpers ------------------------------------------------------------


def issue_diploma(net, authority, holder: str, doc_hash: str, institution: str, issued_at: str, at: int) -> dict:
    args = {"holder": holder, "docHash": doc_hash, "institution": institution, "issuedAt": issued_at}
    return net.invoke(authority, "diplomaRegistry", "issue", args, at).value


def verify_diploma(net, verifier, holder: str, doc_hash: str, at: int) -> dict:
    """Public lookup; an absent record is ``{"valid": False, ...}``, never an error."""
    return net.invoke(verifier, "diploma", "verify", {"holder": holder, "docHash": doc_hash}, at).value


def register_land_title(net, authority, vat: str, parcel: str, owner: str, at: int) -> dict:
    return net.invoke(authority, "land", "register", {"vat": vat, "parcel": parcel, "owner": owner}, at).value


def query_land_titles(net, tax_service, vat: str, at: int) -> list[dict]:
    """Titles under ``vat`` the owners consented to; the attempt is on-ledger either way."""
    return net.invoke(tax_service, "land", "query", {"vat": vat}, at).value
