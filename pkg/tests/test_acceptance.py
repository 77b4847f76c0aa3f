"""Acceptance suite: one test per admission criterion, each printing a
pass line (run with `pytest -s tests/test_acceptance.py` to see them)."""
import itertools
import json
import random
import time
from concurrent.futures import ThreadPoolExecutor

from gatekeep.auditlog import AuditChain, ChainedLogRecord, VerifyStatus, verify_chain
from gatekeep.egress import EgressPolicy, check_destination
from gatekeep.identity import InternalCA, PinMode, PinStore, RejectReason, make_self_signed, verify_peer
from gatekeep.model import IdentityState, ManualClock
from gatekeep.sandbox import classify, gate, parse_scenario, run_scenario
from gatekeep.stack import BehaviorPolicyConfig

from conftest import build_stack, make_request, register_app
from test_depcheck import EXAMPLE_TREE, oracle_findings, random_db, random_tree
from test_egress import oracle_decision, random_pattern, random_query
from test_sandbox import scenario_text


def _flood(n):
    clock = ManualClock()
    stack = build_stack(clock=clock)
    _, _, token = register_app(stack)
    for i in range(n):
        clock.set(min(i * 4, 4_999))  # all inside one 5s window
        stack.enforce(make_request("app-weatherviz", token=token.token_string))
    return stack


def _ban_reasons(stack):
    return [json.loads(r.entry).get("reason") for r in stack.audit_log.records
            if json.loads(r.entry).get("action") == "ban"]


def test_criterion_1_dos_fixed_point():
    start = time.monotonic()
    banned = _flood(1001)
    assert banned.registry.get("app-weatherviz").state is IdentityState.BANNED
    assert _ban_reasons(banned) == ["DosRate"]
    tolerated = _flood(1000)
    assert tolerated.registry.get("app-weatherviz").state is IdentityState.REGISTERED
    elapsed = time.monotonic() - start
    assert elapsed < 5.0
    print(f"\nACCEPTANCE 1 (DoS fixed point, {elapsed:.2f}s): PASS")


def test_criterion_2_status_code_contract():
    clock = ManualClock()
    stack = build_stack(clock=clock)
    _, grant, token = register_app(stack, scopes=("weather",), ttl_ms=1_000)

    # forged / out-of-scope / expired -> 401
    assert stack.enforce(make_request("app-weatherviz", token="forged")).status_code == 401
    assert stack.enforce(make_request("app-weatherviz", service="database",
                                      token=token.token_string)).status_code == 401
    clock.set(1_000)
    assert stack.enforce(make_request("app-weatherviz",
                                      token=token.token_string)).status_code == 401
    # unknown service / malformed -> 400
    assert stack.enforce(make_request("app-weatherviz", service="maps")).status_code == 400
    assert stack.enforce(make_request("", token="x")).status_code == 400
    # banned -> 403; healthy -> 200
    _, _, token2 = register_app(stack, app_id="app-b", scopes=("weather",))
    assert stack.enforce(make_request("app-b", token=token2.token_string)).status_code == 200
    stack.registry.ban("app-b")
    assert stack.enforce(make_request("app-b", token=token2.token_string)).status_code == 403

    # exhaustive truth table over the four token validity conditions
    for issued, unexpired, in_scope, unrevoked in itertools.product([True, False], repeat=4):
        clk = ManualClock()
        stk = build_stack(clock=clk)
        _, grant, tok = register_app(stk, scopes=("weather",), ttl_ms=1_000)
        token_string = tok.token_string if issued else "never-issued"
        if not unexpired:
            clk.set(1_000)
        service = "weather" if in_scope else "database"
        if not unrevoked:
            stk.authority.revoke_grant(grant.grant_string)
        resp = stk.enforce(make_request("app-weatherviz", service=service, token=token_string))
        expected = 200 if (issued and unexpired and in_scope and unrevoked) else 401
        assert resp.status_code == expected, (issued, unexpired, in_scope, unrevoked)
    print("\nACCEPTANCE 2 (status-code contract): PASS")


def test_criterion_3_pinning_mitm_defeat():
    ca = InternalCA()
    rng = random.Random(42)
    rejected = 0
    trials = 1_000
    for i in range(trials):
        app_id = f"app-{i}"
        store = PinStore(PinMode.TRUST_ON_FIRST_USE)
        assert verify_peer(store, app_id, ca.issue(app_id), ca).accepted
        if rng.random() < 0.5:
            swap = ca.issue(app_id)  # validly signed, different cert
            expect = RejectReason.PIN_MISMATCH
        else:
            swap = make_self_signed(app_id)
            expect = RejectReason.BAD_CHAIN
        verdict = verify_peer(store, app_id, swap, ca)
        assert not verdict.accepted
        assert verdict.reason is expect
        rejected += 1
    assert rejected == trials
    print(f"\nACCEPTANCE 3 (pinning MITM defeat, {trials} trials): PASS")


def test_criterion_4_egress_oracle_equivalence():
    rng = random.Random(777)
    for _ in range(10_000):
        policy = EgressPolicy(
            whitelist=tuple(random_pattern(rng) for _ in range(rng.randrange(0, 4))),
            blacklist=tuple(random_pattern(rng) for _ in range(rng.randrange(0, 3))),
        )
        host, port = random_query(rng)
        decision = check_destination(policy, host, port)
        assert (decision.allowed, decision.reason) == oracle_decision(policy, host, port)

    stack = build_stack()
    stack.registry.register({"id": "app-x"})
    stack.set_egress_policy(EgressPolicy())  # empty whitelist: deny all
    assert not stack.handle_egress("app-x", "anywhere.net", 443).allowed
    assert stack.registry.get("app-x").state is IdentityState.BANNED
    print("\nACCEPTANCE 4 (egress oracle equivalence): PASS")


def test_criterion_5_audit_chain_tamper_evidence():
    start = time.monotonic()
    key = b"\x0a" * 32
    wrong_key = b"\x0b" * 32
    rng = random.Random(5)
    for n in (1, 2, 3, 8, 64):
        chain = AuditChain(key)
        for _ in range(n):
            chain.append(bytes(rng.randrange(256) for _ in range(8)))
        records, head = chain.records, chain.head
        assert verify_chain(records, head, key).ok
        assert verify_chain(records, head, wrong_key) \
            .first_bad_index == 0
        # every single-byte mutation of every entry
        for i, record in enumerate(records):
            for pos in range(len(record.entry)):
                mutated = bytearray(record.entry)
                mutated[pos] ^= 0x01
                broken = list(records)
                broken[i] = ChainedLogRecord(record.index, bytes(mutated), record.mac)
                result = verify_chain(broken, head, key)
                assert result.status is VerifyStatus.TAMPERED
                assert result.first_bad_index == i
        # every adjacent swap
        for i in range(n - 1):
            swapped = list(records)
            swapped[i], swapped[i + 1] = swapped[i + 1], swapped[i]
            assert not verify_chain(swapped, head, key).ok
        # every non-tail deletion
        for i in range(n - 1):
            shortened = records[:i] + records[i + 1:]
            assert not verify_chain(shortened, head, key).ok
        # every tail truncation with stale head
        for k in range(1, n + 1):
            assert verify_chain(records[:-k], head, key).status is VerifyStatus.TRUNCATED
    elapsed = time.monotonic() - start
    assert elapsed < 30.0
    print(f"\nACCEPTANCE 5 (audit chain tamper evidence, {elapsed:.2f}s): PASS")


def test_criterion_6_dependency_scan_reference_tree():
    from gatekeep.depcheck import Advisory, Severity, VulnerabilityDb, flatten, parse_manifest, scan

    tree = parse_manifest(json.dumps(EXAMPLE_TREE))
    flat = flatten(tree)
    assert len(flat) == 9
    hits = [d for d in flat if (d.library_name, d.version) == ("library1", "1.0")]
    assert len(hits) == 2
    assert len({d.path for d in hits}) == 2

    db = VulnerabilityDb(records=(Advisory("A1", "library1", "1.0", "1.5", Severity.HIGH),))
    report = scan(tree, db)
    assert len(report.findings) == 1
    assert set(report.findings[0].paths) == {d.path for d in hits}

    rng = random.Random(1234)
    for _ in range(1_000):
        manifest_obj = random_tree(rng)
        rdb = random_db(rng)
        rep = scan(parse_manifest(json.dumps(manifest_obj)), rdb)
        got = {(f.advisory_id, f.library_name, f.version, p)
               for f in rep.findings for p in f.paths}
        assert got == oracle_findings(manifest_obj, rdb)
    print("\nACCEPTANCE 6 (dependency scan reference tree + oracle): PASS")


def test_criterion_7_sandbox_end_to_end(tmp_path):
    import hashlib

    from gatekeep.stack import GatekeepConfig, GatewayStack, RouteConfig

    # live space on disk, must stay byte-identical
    paths = {name: tmp_path / name for name in
             ("registry.json", "pins.json", "audit.jsonl", "audit.head.json")}
    config = GatekeepConfig(
        routes=[RouteConfig(service_name="weather", upstream_address="127.0.0.1:9",
                            required_scope="weather")],
        registry_file=str(paths["registry.json"]),
        pin_store_file=str(paths["pins.json"]),
        audit_log_file=str(paths["audit.jsonl"]),
        audit_head_file=str(paths["audit.head.json"]),
    )
    live = GatewayStack(config, key=b"\x07" * 32)
    live.registry.register({"id": "app-live"})
    live.audit_admin("provision")

    def digests():
        return {n: hashlib.sha256(p.read_bytes()).hexdigest() if p.exists() else None
                for n, p in paths.items()}

    before = digests()
    expectations = {"dos_flood": "Reject", "credential_storm": "Reject",
                    "egress_violation": "Reject", "mitm_cert_swap": "Reject",
                    "all_valid": "Admit"}
    for name, expected in expectations.items():
        script = parse_scenario(scenario_text(name))
        report_a = run_scenario(script)
        report_b = run_scenario(script)
        assert json.dumps(report_a.to_json(), sort_keys=True) == \
            json.dumps(report_b.to_json(), sort_keys=True)
        decision = gate(classify(report_a), report_a)
        assert decision.kind.value == expected, (name, decision)
    assert digests() == before
    print("\nACCEPTANCE 7 (sandbox end-to-end): PASS")


def test_criterion_8_exactly_one_log_under_concurrency():
    clock = ManualClock()
    # thresholds far above the workload so nothing gets banned or throttled
    policy = BehaviorPolicyConfig(dos_max_requests=1_000_000, unauth_max=1_000_000,
                                  malformed_max=1_000_000)
    stack = build_stack(clock=clock, policy=policy)
    containers = []
    for i in range(50):
        app_id = f"app-{i}"
        _, _, token = register_app(stack, app_id=app_id, scopes=("weather",))
        containers.append((app_id, token.token_string))

    rng = random.Random(31337)
    workload = [rng.choice(containers) for _ in range(10_000)]
    before = len(stack.audit_log)

    def fire(args):
        app_id, token = args
        return stack.enforce(make_request(app_id, token=token)).status_code

    with ThreadPoolExecutor(max_workers=32) as pool:
        statuses = list(pool.map(fire, workload))
    assert all(s == 200 for s in statuses)
    assert len(stack.audit_log) - before == 10_000
    assert stack.verify_own_chain().ok
    print("\nACCEPTANCE 8 (exactly-one-log under concurrency): PASS")
