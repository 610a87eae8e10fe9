"""Built-in contract set loaded by every network at startup."""

from __future__ import annotations

from . import consent, energy, gov, health, identity, oracle, records


def builtin_contracts():
    return [
        identity.CONTRACT,
        consent.CONTRACT,
        records.CONTRACT,
        gov.DIPLOMA,
        gov.DIPLOMA_REGISTRY,
        gov.THERMOSTAT,
        gov.LAND,
        energy.CONTRACT,
        health.CONTRACT,
        oracle.ORACLE,
        oracle.LAW,
    ]
