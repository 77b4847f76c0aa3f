"""`gatectl`: operator front door. All stateful commands talk to a running
gateway service over its admin API; `serve` hosts the gateway and egress
endpoints themselves.

Exit codes: 0 success, 1 usage error, 2 policy finding / needs review,
3 reject / excluded, 4 internal error.
"""
from __future__ import annotations

import json
import signal
import socket
import sys
import threading

import click
import httpx

from .errors import BindError, ConfigError, GatekeepError

DEFAULT_SERVER = "http://127.0.0.1:8000"

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_REVIEW = 2
EXIT_REJECT = 3
EXIT_INTERNAL = 4


def _client(ctx: click.Context) -> httpx.Client:
    injected = ctx.obj.get("client")
    if injected is not None:
        return injected
    return httpx.Client(base_url=ctx.obj.get("server", DEFAULT_SERVER), timeout=30.0)


def _call(ctx: click.Context, method: str, path: str, **kwargs):
    client = _client(ctx)
    resp = client.request(method, path, **kwargs)
    if resp.status_code >= 500:
        _fail(ctx, f"server error: {resp.text}", EXIT_INTERNAL)
    if resp.status_code >= 400:
        _fail(ctx, resp.text, EXIT_USAGE)
    return resp.json()


def _fail(ctx: click.Context, message: str, code: int):
    click.echo(message, err=True)
    ctx.exit(code)


def _emit(ctx: click.Context, obj, human: str | None = None) -> None:
    if ctx.obj.get("json") or human is None:
        click.echo(json.dumps(obj, indent=2))
    else:
        click.echo(human)


@click.group()
@click.option("--server", default=DEFAULT_SERVER, envvar="GATEKEEP_SERVER",
              help="Base URL of the running gateway admin API.")
@click.option("--json", "as_json", is_flag=True, help="Machine-readable output.")
@click.pass_context
def cli(ctx: click.Context, server: str, as_json: bool) -> None:
    ctx.ensure_object(dict)
    ctx.obj.setdefault("server", server)
    ctx.obj["json"] = as_json or ctx.obj.get("json", False)


# ---------------------------------------------------------------------- client

@cli.group()
def client() -> None:
    """Manage registered container identities."""


@client.command("register")
@click.argument("container_id")
@click.option("--name", default="", help="Display name.")
@click.pass_context
def client_register(ctx, container_id, name):
    obj = _call(ctx, "POST", "/admin/clients",
                json={"container_id": container_id, "display_name": name})
    _emit(ctx, obj, f"registered {obj['container_id']} ({obj['state']})")


@client.command("ban")
@click.argument("container_id")
@click.pass_context
def client_ban(ctx, container_id):
    obj = _call(ctx, "POST", f"/admin/clients/{container_id}/ban")
    _emit(ctx, obj, f"{container_id} is now {obj['state']}")


@client.command("unban")
@click.argument("container_id")
@click.pass_context
def client_unban(ctx, container_id):
    obj = _call(ctx, "POST", f"/admin/clients/{container_id}/unban")
    _emit(ctx, obj, f"{container_id} is now {obj['state']}")


@client.command("list")
@click.pass_context
def client_list(ctx):
    obj = _call(ctx, "GET", "/admin/clients")
    _emit(ctx, obj, "\n".join(f"{c['container_id']}\t{c['state']}" for c in obj) or "(none)")


# ----------------------------------------------------------------- grant/token

@cli.group()
def grant() -> None:
    """Authorization grants."""


@grant.command("create")
@click.argument("container_id")
@click.argument("scopes", nargs=-1, required=True)
@click.pass_context
def grant_create(ctx, container_id, scopes):
    obj = _call(ctx, "POST", "/admin/grants",
                json={"container_id": container_id, "scopes": list(scopes)})
    _emit(ctx, obj, f"grant {obj['grant_string']} scopes={','.join(obj['scopes'])}")


@grant.command("revoke")
@click.argument("grant_string")
@click.pass_context
def grant_revoke(ctx, grant_string):
    obj = _call(ctx, "POST", "/admin/grants/revoke", json={"grant_string": grant_string})
    _emit(ctx, obj, "revoked")


@cli.group()
def token() -> None:
    """Access tokens."""


@token.command("issue")
@click.argument("grant_string")
@click.option("--ttl-ms", type=int, default=None)
@click.pass_context
def token_issue(ctx, grant_string, ttl_ms):
    obj = _call(ctx, "POST", "/admin/tokens",
                json={"grant_string": grant_string, "ttl_ms": ttl_ms})
    _emit(ctx, obj, f"token {obj['token_string']} expires_at={obj['expires_at']}")


# ---------------------------------------------------------------------- routes

@cli.group()
def route() -> None:
    """Service route table."""


@route.command("add")
@click.argument("service_name")
@click.argument("upstream_address")
@click.option("--scope", default=None, help="Required scope (defaults to the service name).")
@click.pass_context
def route_add(ctx, service_name, upstream_address, scope):
    obj = _call(ctx, "POST", "/admin/routes", json={
        "service_name": service_name,
        "upstream_address": upstream_address,
        "required_scope": scope or service_name,
    })
    _emit(ctx, obj, f"route {service_name} -> {upstream_address}")


@route.command("list")
@click.pass_context
def route_list(ctx):
    obj = _call(ctx, "GET", "/admin/routes")
    _emit(ctx, obj, "\n".join(f"{r['service_name']}\t{r['upstream_address']}" for r in obj) or "(none)")


# ---------------------------------------------------------------------- egress

@cli.group()
def egress() -> None:
    """Outbound destination policy."""


def _pattern_args(fn):
    fn = click.option("--port", type=int, default=None)(fn)
    fn = click.argument("value")(fn)
    fn = click.option("--kind", default="ExactHost",
                      type=click.Choice(["ExactHost", "HostSuffix", "ExactIPv4", "IPv4Cidr"]))(fn)
    return fn


@egress.command("allow")
@_pattern_args
@click.pass_context
def egress_allow(ctx, kind, value, port):
    obj = _call(ctx, "POST", "/admin/egress/allow",
                json={"kind": kind, "value": value, "port": port})
    _emit(ctx, obj, f"whitelisted {kind} {value}")


@egress.command("deny")
@_pattern_args
@click.pass_context
def egress_deny(ctx, kind, value, port):
    obj = _call(ctx, "POST", "/admin/egress/deny",
                json={"kind": kind, "value": value, "port": port})
    _emit(ctx, obj, f"blacklisted {kind} {value}")


@egress.command("test")
@click.argument("host")
@click.argument("port", type=int)
@click.pass_context
def egress_test(ctx, host, port):
    obj = _call(ctx, "POST", "/admin/egress/test", json={"host": host, "port": port})
    verdict = "ALLOW" if obj["allowed"] else f"DENY ({obj['reason']})"
    _emit(ctx, obj, f"{host}:{port} -> {verdict}")
    if not obj["allowed"]:
        ctx.exit(EXIT_REVIEW)


# ------------------------------------------------------------------------ pins

@cli.group()
def pin() -> None:
    """Certificate pin store."""


@pin.command("list")
@click.pass_context
def pin_list(ctx):
    obj = _call(ctx, "GET", "/admin/pins")
    _emit(ctx, obj, "\n".join(f"{cid}\t{fp}" for cid, fp in obj.items()) or "(none)")


@pin.command("reset")
@click.argument("container_id")
@click.pass_context
def pin_reset(ctx, container_id):
    obj = _call(ctx, "POST", "/admin/pins/reset", json={"container_id": container_id})
    _emit(ctx, obj, f"pin reset for {container_id}")


# -------------------------------------------------------------------- sentinel

@cli.group()
def sentinel() -> None:
    """Behavior counters and bans."""


@sentinel.command("show")
@click.argument("container_id")
@click.pass_context
def sentinel_show(ctx, container_id):
    obj = _call(ctx, "GET", f"/admin/sentinel/{container_id}")
    _emit(ctx, obj, json.dumps(obj, indent=2))


@sentinel.command("unban")
@click.argument("container_id")
@click.pass_context
def sentinel_unban(ctx, container_id):
    obj = _call(ctx, "POST", f"/admin/sentinel/{container_id}/unban")
    _emit(ctx, obj, f"{container_id} is now {obj['state']}")


# ------------------------------------------------------------------------- log

@cli.group()
def log() -> None:
    """Audit chain."""


@log.command("verify")
@click.argument("logfile", type=click.Path(exists=True))
@click.argument("headfile", type=click.Path(exists=True), required=False)
@click.pass_context
def log_verify(ctx, logfile, headfile):
    """Verify a chain export against the server's MAC key."""
    records = []
    with open(logfile, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(json.loads(line))
    head = None
    if headfile:
        with open(headfile, "r", encoding="utf-8") as fh:
            head = json.load(fh)
    obj = _call(ctx, "POST", "/admin/log/verify", json={"records": records, "head": head})
    if obj["status"] == "Ok":
        _emit(ctx, obj, "OK")
    else:
        _emit(ctx, obj, f"{obj['status']}"
              + (f" at index {obj['first_bad_index']}" if obj.get("first_bad_index") is not None else ""))
        ctx.exit(EXIT_REJECT)


# ------------------------------------------------------------------------ deps

@cli.group()
def deps() -> None:
    """Dependency vulnerability scanning."""


@deps.command("scan")
@click.argument("manifest", type=click.Path(exists=True))
@click.argument("db", type=click.Path(exists=True))
@click.option("--first-seen", type=int, default=None, help="ms timestamp of first report")
@click.option("--now", "now_ms", type=int, default=None)
@click.pass_context
def deps_scan(ctx, manifest, db, first_seen, now_ms):
    with open(manifest, "r", encoding="utf-8") as fh:
        manifest_obj = json.load(fh)
    with open(db, "r", encoding="utf-8") as fh:
        db_obj = json.load(fh)
    obj = _call(ctx, "POST", "/admin/deps/scan", json={
        "manifest": manifest_obj, "db": db_obj,
        "first_seen": first_seen, "now": now_ms,
    })
    click.echo(json.dumps(obj, indent=2))
    status = obj["status"]
    if status == "UpdateRequired":
        ctx.exit(EXIT_REVIEW)
    if status == "Excluded":
        ctx.exit(EXIT_REJECT)


@deps.command("update-db")
@click.argument("url")
@click.argument("cache_path", type=click.Path())
@click.pass_context
def deps_update_db(ctx, url, cache_path):
    from .depcheck import update_db
    db = update_db(url, cache_path)
    _emit(ctx, {"records": len(db.records), "cache": cache_path},
          f"cached {len(db.records)} advisories at {cache_path}")


# --------------------------------------------------------------------- sandbox

@cli.group()
def sandbox() -> None:
    """Pre-admission sandbox runs."""


@sandbox.command("run")
@click.argument("scenario", type=click.Path(exists=True))
@click.option("--thresholds", "thresholds_path", type=click.Path(exists=True), default=None)
@click.pass_context
def sandbox_run(ctx, scenario, thresholds_path):
    with open(scenario, "r", encoding="utf-8") as fh:
        scenario_obj = json.load(fh)
    thresholds = None
    if thresholds_path:
        with open(thresholds_path, "r", encoding="utf-8") as fh:
            thresholds = json.load(fh)
    obj = _call(ctx, "POST", "/admin/sandbox/run",
                json={"scenario": scenario_obj, "thresholds": thresholds})
    click.echo(json.dumps(obj, indent=2))
    decision = obj["decision"]
    if decision == "NeedsReview":
        ctx.exit(EXIT_REVIEW)
    if decision == "Reject":
        ctx.exit(EXIT_REJECT)


# ----------------------------------------------------------------------- serve

@cli.command("serve")
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="Config JSON (or env GATEKEEP_CONFIG).")
def serve(config_path):
    """Run the inbound gateway and egress endpoints until interrupted."""
    run_serve(config_path)


def _bind(host: str, port: int) -> socket.socket:
    sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    try:
        sock.bind((host, port))
    except OSError as exc:
        sock.close()
        raise BindError(f"cannot bind {host}:{port}: {exc}") from exc
    sock.listen(128)
    return sock


def run_serve(config_path: str | None, ready: threading.Event | None = None,
              stop: threading.Event | None = None) -> None:
    import uvicorn

    from .service.app import create_app, create_egress_app
    from .stack import GatewayStack, load_config

    config = load_config(config_path)
    stack = GatewayStack(config)  # ConfigError (e.g. unreadable key file) before binding
    gw_sock = _bind(config.gateway_bind.host, config.gateway_bind.port)
    eg_sock = _bind(config.egress_bind.host, config.egress_bind.port)

    servers = []
    threads = []
    try:
        for app, sock in ((create_app(stack), gw_sock), (create_egress_app(stack), eg_sock)):
            server = uvicorn.Server(uvicorn.Config(app, log_level="warning"))
            server.install_signal_handlers = lambda *a, **k: None
            servers.append(server)
            thread = threading.Thread(target=server.run, kwargs={"sockets": [sock]}, daemon=True)
            thread.start()
            threads.append(thread)
        if ready is not None:
            ready.set()
        try:
            if stop is not None:
                stop.wait()
            else:
                signal.sigwait({signal.SIGINT, signal.SIGTERM})
        except KeyboardInterrupt:
            pass
    finally:
        for server in servers:
            server.should_exit = True
        for thread in threads:
            thread.join(timeout=5)
        stack.audit_log.flush_head()
        gw_sock.close()
        eg_sock.close()


def main(argv=None, obj=None) -> int:
    try:
        rv = cli.main(args=argv, standalone_mode=False, obj=obj or {})
        return rv if isinstance(rv, int) else EXIT_OK
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.UsageError as exc:
        exc.show()
        return EXIT_USAGE
    except click.ClickException as exc:
        exc.show()
        return EXIT_USAGE
    except click.Abort:
        return EXIT_USAGE
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        return EXIT_USAGE
    except GatekeepError as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_INTERNAL
    except httpx.HTTPError as exc:
        click.echo(f"cannot reach gateway service: {exc}", err=True)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
