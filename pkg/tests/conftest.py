import pytest

from gatekeep.gateway import GatewayRequest
from gatekeep.model import ManualClock
from gatekeep.stack import BehaviorPolicyConfig, GatekeepConfig, RouteConfig, make_in_process_stack

TEST_KEY = bytes(range(32))


def build_stack(services=("weather", "database"), policy=None, clock=None,
                handlers=None, key=TEST_KEY):
    """In-process stack with echo upstreams and a manual clock."""
    handlers = handlers or {s: (lambda payload: payload) for s in services}
    config = GatekeepConfig(
        routes=[RouteConfig(service_name=s, upstream_address="127.0.0.1:9", required_scope=s)
                for s in services],
        policy=policy or BehaviorPolicyConfig(),
    )
    return make_in_process_stack(handlers, config=config, clock=clock or ManualClock(), key=key)


def register_app(stack, app_id="app-weatherviz", scopes=("weather",), ttl_ms=3_600_000):
    """Register an identity, grant it scopes and issue a token."""
    ident = stack.registry.register({"id": app_id, "name": app_id})
    grant = stack.authority.register_client(ident, set(scopes))
    token = stack.authority.issue_token(grant.grant_string, stack.clock, ttl_ms)
    return ident, grant, token


def make_request(app_id, service="weather", token=None, cert=None, **kwargs):
    return GatewayRequest(
        claimed_container_id=app_id,
        service_name=service,
        payload=kwargs.pop("payload", b"ping"),
        token_string=token,
        presented_cert=cert,
        **kwargs,
    )


@pytest.fixture
def clock():
    return ManualClock()


@pytest.fixture
def stack(clock):
    return build_stack(clock=clock)
