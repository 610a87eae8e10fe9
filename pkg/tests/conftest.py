from __future__ import annotations

import pytest

from egsl.contracts.identity import credential_message
from egsl.crypto import KeyPair
from egsl.network import Network


class World:
    """A small network plus named key pairs, for tests that drive contracts directly."""

    def __init__(self, seed="test", **net_kwargs):
        self.seed = seed
        self.authority = KeyPair.from_seed(seed, "authority")
        self.net = Network(self.authority, **net_kwargs)
        self.keys: dict[str, KeyPair] = {}
        self.t = 1

    def key(self, name: str) -> KeyPair:
        if name not in self.keys:
            self.keys[name] = KeyPair.from_seed(self.seed, name)
        return self.keys[name]

    def tick(self) -> int:
        self.t += 1
        return self.t

    def register(self, name: str, role: str, district: str | None = None) -> KeyPair:
        kp = self.key(name)
        args = {"pk": kp.public_key, "role": role, "cred": self.authority.sign(credential_message(kp.id, role)).sig}
        if district:
            args["district"] = district
        self.net.invoke(self.authority, "identity", "register", args, self.tick())
        return kp

    def device(self, device_id: str, owner: str, kind: str) -> KeyPair:
        kp = self.key("device:" + device_id)
        args = {"device": device_id, "owner": self.key(owner).id, "pk": kp.public_key, "kind": kind}
        self.net.invoke(self.authority, "identity", "registerDevice", args, self.tick())
        return kp

    def invoke(self, name: str, contract: str, op: str, args, at=None, check=True):
        key = self.authority if name == "authority" else self.key(name)
        return self.net.invoke(key, contract, op, args, self.tick() if at is None else at, check=check)


@pytest.fixture
def world():
    return World()


@pytest.fixture
def make_world():
    return World


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
