import itertools
from decimal import Decimal

import pytest
from hypothesis import given
from hypothesis import strategies as st

from egsl.errors import AccessDeniedError, ConfigError, ProtocolError, ValidationError
from egsl.fixed import to_fixed
from egsl.gov import (
    DO_NOTHING,
    SEND_PROMPT,
    TURN_ON_AC,
    TURN_ON_HEATING,
    ThermostatConfig,
    issue_diploma,
    query_land_titles,
    register_land_title,
    thermostat_step,
    verify_diploma,
)

from conftest import World
from oracles import thermostat_pseudocode

TEMPS = [17, 18, Decimal("21.5"), 25, 26]
CONS = [24, 25, 26]
ANSWERS = [None, "YES", "NO"]
TABLE = list(itertools.product(TEMPS, CONS, ANSWERS))


def run_step(temp, cons, answer):
    try:
        return thermostat_step(temp, cons, answer).kind
    except ProtocolError:
        return "ProtocolError"


def test_table_has_45_cases():
    assert len(TABLE) == 45


@pytest.mark.parametrize("temp,cons,answer", TABLE)
def test_thermostat_table(temp, cons, answer):
    assert run_step(temp, cons, answer) == thermostat_pseudocode(temp, cons, answer)


def test_thermostat_examples():
    assert thermostat_step(17, 20).kind == TURN_ON_AC
    prompt = thermostat_step(26, 30)
    assert prompt.kind == SEND_PROMPT and "heating_unit" in prompt.text
    assert thermostat_step(26, 30, "YES").kind == TURN_ON_HEATING
    assert thermostat_step(26, 30, "NO").kind == DO_NOTHING
    for c in (0, 25, 1000):
        assert thermostat_step(20, c).kind == DO_NOTHING


def test_conventional_profile_swaps():
    cfg = ThermostatConfig(profile="conventional")
    assert thermostat_step(17, 20, cfg=cfg).kind == TURN_ON_HEATING
    assert thermostat_step(26, 20, cfg=cfg).kind == TURN_ON_AC


def test_bad_config_and_answers():
    with pytest.raises(ConfigError):
        ThermostatConfig(low_temp_c=25, high_temp_c=18)
    with pytest.raises(ConfigError):
        ThermostatConfig(consumption_threshold_w=0)
    with pytest.raises(ConfigError):
        ThermostatConfig(profile="other")
    with pytest.raises(ValidationError):
        thermostat_step(17, 30, "maybe")


@given(st.decimals(-50, 60, places=2), st.decimals(0, 100, places=2), st.sampled_from(ANSWERS))
def test_thermostat_pure_and_matches_oracle(temp, cons, answer):
    assert run_step(temp, cons, answer) == run_step(temp, cons, answer) == thermostat_pseudocode(temp, cons, answer)


def test_thermostat_round_trip_on_ledger(world):
    world.register("pro", "prosumer")
    commands = []
    world.net.subscribe(lambda ev: commands.append((ev.name, ev.payload.get("action"))))
    r = world.invoke("pro", "thermostat", "step", {"tempC": to_fixed(26), "consumptionW": to_fixed(30)})
    assert r.value["action"] == SEND_PROMPT
    r = world.invoke("pro", "thermostat", "answer", {"answer": "YES"})
    assert r.value["action"] == TURN_ON_HEATING
    assert commands == [("device/prompt", None), ("device/command", TURN_ON_HEATING)]
    with pytest.raises(ProtocolError):
        world.invoke("pro", "thermostat", "answer", {"answer": "YES"})


# -- diplomas ------------------------------------------------------------------


def diploma_world():
    w = World(seed="gov")
    holder = w.register("holder", "prosumer")
    w.register("other", "prosumer")
    issue_diploma(w.net, w.authority, holder.id, "hash1", "AUTH", "2019-06-01", w.tick())
    return w


def test_verify_registered_diploma():
    w = diploma_world()
    res = verify_diploma(w.net, w.key("other"), w.key("holder").id, "hash1", w.tick())
    assert res == {"valid": True, "institution": "AUTH", "issuedAt": "2019-06-01"}


def test_verify_unknown_hash_and_wrong_holder():
    w = diploma_world()
    assert verify_diploma(w.net, w.authority, w.key("holder").id, "hash2", w.tick())["valid"] is False
    assert verify_diploma(w.net, w.authority, w.key("other").id, "hash1", w.tick())["valid"] is False


def test_diplomas_immutable_and_authority_only():
    w = diploma_world()
    with pytest.raises(ValidationError):
        issue_diploma(w.net, w.authority, w.key("holder").id, "hash1", "X", "2020-01-01", w.tick())
    with pytest.raises(AccessDeniedError):
        issue_diploma(w.net, w.key("other"), w.key("holder").id, "hash9", "X", "2020-01-01", w.tick())


# -- land titles -------------------------------------------------------------


def land_world():
    w = World(seed="land")
    citizen = w.register("citizen", "prosumer")
    w.register("neighbour", "prosumer")
    w.register("tax", "taxService")
    register_land_title(w.net, w.authority, "VAT1", "P1", citizen.id, w.tick())
    register_land_title(w.net, w.authority, "VAT1", "P2", citizen.id, w.tick())
    register_land_title(w.net, w.authority, "VAT2", "P9", w.key("neighbour").id, w.tick())
    return w


def grant(w, owner, vat):
    rec = w.invoke("tax", "consent", "request", {"subject": w.key(owner).id, "resource": f"land/{vat}/", "purpose": "tax"}).value
    w.invoke(owner, "consent", "decide", {"consent": rec["id"], "decision": "approve"})
    return rec["id"]


def test_consented_titles_returned():
    w = land_world()
    grant(w, "citizen", "VAT1")
    titles = query_land_titles(w.net, w.key("tax"), "VAT1", w.tick())
    assert sorted(t["parcel"] for t in titles) == ["P1", "P2"]


def test_no_consent_is_denied_and_logged():
    w = land_world()
    r = w.invoke("tax", "land", "query", {"vat": "VAT1"}, check=False)
    assert r.tx.status == "failed:PermissionError"
    assert r.tx in w.net.ledger.transactions()


def test_revoked_consent_denied():
    w = land_world()
    cid = grant(w, "citizen", "VAT1")
    w.invoke("citizen", "consent", "revoke", {"consent": cid})
    with pytest.raises(AccessDeniedError):
        query_land_titles(w.net, w.key("tax"), "VAT1", w.tick())


def test_unknown_vat_empty():
    w = land_world()
    assert query_land_titles(w.net, w.key("tax"), "VAT404", w.tick()) == []


def test_only_tax_service_queries():
    w = land_world()
    with pytest.raises(AccessDeniedError):
        query_land_titles(w.net, w.key("neighbour"), "VAT1", w.tick())


def test_prefix_isolation():
    w = land_world()
    grant(w, "citizen", "VAT1")
    grant(w, "neighbour", "VAT2")
    for vat in ("VAT1", "VAT2"):
        titles = query_land_titles(w.net, w.key("tax"), vat, w.tick())
        assert titles and all(t["vat"] == vat for t in titles)
