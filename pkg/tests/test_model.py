import json

import pytest

from gatekeep.errors import DuplicateId, EmptyId
from gatekeep.model import (
    IdentityRegistry,
    IdentityState,
    ManualClock,
    RequestEvent,
    ServiceRoute,
    SystemClock,
)


def test_register_returns_registered_identity():
    reg = IdentityRegistry()
    ident = reg.register({"id": "app-weatherviz", "name": "Weather Viz"})
    assert ident.container_id == "app-weatherviz"
    assert ident.display_name == "Weather Viz"
    assert ident.state is IdentityState.REGISTERED


def test_register_rejects_empty_id():
    with pytest.raises(EmptyId):
        IdentityRegistry().register({"id": "", "name": "x"})


def test_register_rejects_duplicate_id():
    reg = IdentityRegistry()
    reg.register({"id": "app-weatherviz", "name": "Weather Viz"})
    with pytest.raises(DuplicateId):
        reg.register({"id": "app-weatherviz", "name": "again"})


def test_registry_size_tracks_registrations_minus_removals():
    reg = IdentityRegistry()
    for i in range(5):
        reg.register({"id": f"app-{i}"})
    assert len(reg) == 5
    reg.remove("app-0")
    reg.remove("app-3")
    assert len(reg) == 3


def test_ban_and_unban_roundtrip():
    reg = IdentityRegistry()
    reg.register({"id": "a"})
    assert reg.ban("a").state is IdentityState.BANNED
    assert reg.get("a").state is IdentityState.BANNED
    assert reg.unban("a").state is IdentityState.REGISTERED


def test_registry_persists_as_json_array(tmp_path):
    path = str(tmp_path / "registry.json")
    reg = IdentityRegistry(path)
    reg.register({"id": "a", "name": "A"})
    reg.ban("a")
    with open(path) as fh:
        data = json.load(fh)
    assert isinstance(data, list)
    assert data[0]["container_id"] == "a"
    reloaded = IdentityRegistry(path)
    assert reloaded.get("a").state is IdentityState.BANNED


def test_request_event_rejects_codes_outside_vocabulary():
    with pytest.raises(ValueError):
        RequestEvent(timestamp=0, container_id="a", service_name="weather", status_code=418)
    with pytest.raises(ValueError):
        RequestEvent(timestamp=-1, container_id="a", service_name="weather", status_code=200)


def test_service_route_validates_host_port():
    ServiceRoute("weather", "10.0.0.1:8080", "weather")
    for bad in ("nohost", "host:", ":80", "host:0", "host:70000", "host:abc"):
        with pytest.raises(ValueError):
            ServiceRoute("weather", bad, "weather")


def test_manual_clock_is_monotone():
    clock = ManualClock()
    clock.set(5)
    clock.advance(3)
    assert clock.now() == 8
    with pytest.raises(ValueError):
        clock.set(7)


def test_system_clock_reads_are_nondecreasing():
    clock = SystemClock()
    reads = [clock.now() for _ in range(1000)]
    assert all(a <= b for a, b in zip(reads, reads[1:]))
