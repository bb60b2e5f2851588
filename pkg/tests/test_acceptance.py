"""Acceptance gate: nine end-to-end criteria, one test (and therefore one
pytest pass/fail line) per criterion, each at its stated tolerance.

These intentionally re-verify behavior that unit tests cover piecemeal:
the gate runs the shipped experiment configurations, not reduced stand-ins,
and checks the numbers those runs must produce.
"""

import json
import random
import time

import pytest
import requests

import trustgate.simnet as sim
from trustgate.algorithms import SigAlgorithm, keygen, sign, verify
from trustgate.gateway import GatewayConfig, TrustGateway
from trustgate.origin import OriginServer
from trustgate.token import (
    Attestation,
    TrustDirectory,
    TrustToken,
    decode_token,
    encode_token,
    merge_attestation,
    sign_attestation,
    token_wire_size,
    trust_score,
)
from trustgate.wallet import Wallet, fetch_directory_entry, send

LOGIN = json.dumps({"username": "John Doe", "password": "johndoe"}).encode()


def test_criterion_1_crypto_codec_property_suite(keys, other_keys):
    """>= 1000 randomized round-trip cases per the codec/crypto core; every
    single-byte tamper trial verifies to 0. Runtime < 60 s."""
    started = time.perf_counter()
    rng = random.Random(0xC0DEC)
    cases = tamper_trials = 0

    for algorithm in SigAlgorithm:
        server_key = keys[algorithm]
        subject_key = other_keys[algorithm]

        # sign/verify round trips on random messages
        for _ in range(150):
            message = rng.randbytes(rng.randrange(1, 256))
            signature = sign(server_key, message)
            assert len(signature) == algorithm.signature_len
            assert verify(algorithm, server_key.public_key, signature, message)
            cases += 1

        # token encode/decode round trips with random attestation sets
        issuers = [f"i{j}" for j in range(8)]
        signatures = {
            issuer: sign_attestation(server_key, issuer, subject_key.public_key)
            for issuer in issuers
        }
        for _ in range(150):
            chosen = rng.sample(issuers, rng.randrange(0, len(issuers) + 1))
            token = TrustToken(
                subject_key.public_key,
                tuple(signatures[issuer] for issuer in chosen),
            )
            wire = encode_token(token)
            assert decode_token(wire) == token
            cases += 1

        # single-byte tamper trials: corrupt one signature byte, score drops
        directory = TrustDirectory()
        directory.set_entry("iss", algorithm, server_key.public_key)
        good = sign_attestation(server_key, "iss", subject_key.public_key)
        base_token = TrustToken(subject_key.public_key, (good,))
        assert trust_score(base_token, directory)[0] == 1
        for _ in range(60):
            position = rng.randrange(algorithm.signature_len)
            corrupted = bytearray(good.signature)
            corrupted[position] ^= 0xFF
            bad_token = TrustToken(
                subject_key.public_key,
                (Attestation("iss", bytes(corrupted)),),
            )
            score, per_issuer = trust_score(bad_token, directory)
            assert score == 0 and per_issuer["iss"] == 0
            tamper_trials += 1
            cases += 1

    elapsed = time.perf_counter() - started
    assert cases >= 1000, f"only {cases} randomized cases"
    assert tamper_trials == 60 * len(SigAlgorithm)
    assert elapsed < 60, f"criterion 1 took {elapsed:.1f}s (limit 60s)"


def test_criterion_2_trust_buildup_to_five_and_renewal():
    """Fresh wallet visiting 5 gateways reaches score exactly 5; a second
    full pass renews without growth. Runtime < 30 s."""
    started = time.perf_counter()
    net = sim.boot_network(5)
    try:
        wallet = Wallet.create(SigAlgorithm.ED25519)
        wallet.directory = net.directory.copy()
        session = requests.Session()
        for gateway in net.gateways:
            result = send(
                wallet, "POST", f"{gateway.base_url}/login", LOGIN,
                tofu=False, session=session,
            )
            assert result.status == 200 and result.granted
        assert wallet.score == 5, f"buildup reached {wallet.score}, expected 5"

        before = encode_token(wallet.token)
        for gateway in net.gateways:
            result = send(
                wallet, "POST", f"{gateway.base_url}/login", LOGIN,
                tofu=False, session=session,
            )
            assert result.status == 200
        assert wallet.score == 5, "renewal must not change the score"
        assert len(wallet.token.attestations) == 5
        assert encode_token(wallet.token) == before  # renewals byte-identical
    finally:
        net.stop()
    elapsed = time.perf_counter() - started
    assert elapsed < 30, f"criterion 2 took {elapsed:.1f}s (limit 30s)"


def test_criterion_3_tamper_experiment_full_scale(tmp_path):
    """2 users x 50 requests x 5 servers: tampering user 100% denied with
    zero origin contacts, honest user 100% forwarded, deny median <=
    forward median. Runtime < 2 min."""
    started = time.perf_counter()
    cfg = sim.default_config("tamper")
    assert cfg.n_servers == 5 and cfg.requests_per_user == 50
    result = sim.run_tamper_experiment(cfg, out_dir=str(tmp_path / "tamper"))
    elapsed = time.perf_counter() - started

    stats = result.summary["stats"]
    observed = result.summary["observed"]
    assert stats["tamper_denied"] == 50, f"denied {stats['tamper_denied']}/50"
    assert observed["origin_contacts_during_tamper"] == 0
    assert stats["honest_forwarded"] == 50
    deny_median = stats["groups"]["tamper"]["median"]
    forward_median = stats["groups"]["honest"]["median"]
    assert deny_median <= forward_median, (
        f"deny median {1000 * deny_median:.3f}ms > "
        f"forward median {1000 * forward_median:.3f}ms"
    )
    assert (tmp_path / "tamper" / "rows.csv").exists()
    assert (tmp_path / "tamper" / "plot.png").exists()
    assert elapsed < 120, f"criterion 3 took {elapsed:.1f}s (limit 120s)"


def test_criterion_4_cold_start_forwarded_scored_zero_and_granted():
    """A 0-attestation request under default policy is forwarded, recorded
    with score 0, and earns a grant."""
    net = sim.boot_network(1)
    try:
        gateway = net.gateways[0]
        wallet = Wallet.create(SigAlgorithm.ED25519)
        wallet.directory = net.directory.copy()
        assert wallet.score == 0
        result = send(wallet, "POST", f"{gateway.base_url}/login", LOGIN, tofu=False)
        assert result.status == 200
        assert result.granted and result.grant_issuer == "s1"
        record = gateway.records()[-1]
        assert record.outcome == "forwarded"
        assert record.score == 0
        entry = gateway.score_table.get(wallet.key.public_key)
        assert entry is not None and entry[0] == 0
        assert wallet.score == 1  # the earned grant merged into the wallet
    finally:
        net.stop()


def test_criterion_5_rotation_revokes_exactly_one_attestation():
    """After one gateway rotates its key, the stale attestation scores 0
    under a refreshed directory and the total drops by exactly 1."""
    net = sim.boot_network(5)
    try:
        wallet = Wallet.create(SigAlgorithm.ED25519)
        wallet.directory = net.directory.copy()
        session = requests.Session()
        for gateway in net.gateways:
            send(
                wallet, "POST", f"{gateway.base_url}/login", LOGIN,
                tofu=False, session=session,
            )
        assert wallet.score == 5

        net.gateways[2].rotate_server_key()
        refreshed = net.refresh_directory()
        _, _, rotated_pk = fetch_directory_entry(net.gateways[2].base_url)
        assert refreshed.get("s3").public_key == rotated_pk

        score, per_issuer = trust_score(wallet.token, refreshed)
        assert per_issuer["s3"] == 0, "stale attestation must stop verifying"
        assert score == 4, f"score after revocation is {score}, expected 4"
        others = {k: v for k, v in per_issuer.items() if k != "s3"}
        assert set(others.values()) == {1}
    finally:
        net.stop()


def test_criterion_6_flat_verification_cost(tmp_path):
    """0 vs 5 attestations over >= 500 requests each: verification-phase
    difference < 5 ms absolute, end-to-end mean difference < 50 ms."""
    cfg = sim.default_config("latency")
    assert cfg.n_servers == 5 and cfg.requests_per_user == 500
    result = sim.run_latency_comparison(cfg, out_dir=str(tmp_path / "latency"))

    stats = result.summary["stats"]
    observed = result.summary["observed"]
    assert stats["groups"]["zero"]["count"] == 500
    assert stats["groups"]["full"]["count"] == 500
    assert observed["verify_micros"]["zero"]["count"] == 500
    assert observed["verify_micros"]["full"]["count"] == 500

    verify_diff_micros = observed["verify_mean_diff_micros"]
    assert abs(verify_diff_micros) < 5000, (
        f"verification-phase difference {verify_diff_micros:.0f}us "
        f"exceeds 5ms"
    )
    e2e_diff = stats["mean_diff_seconds"]
    assert abs(e2e_diff) < 0.050, (
        f"end-to-end mean difference {1000 * e2e_diff:.3f}ms exceeds 50ms"
    )


def test_criterion_7_size_report_exact(tmp_path):
    """Emitted size series match token_wire_size exactly; slopes 256/64/64
    and intercepts 256/64/32 bytes for RSA2048/ECP256/ED25519."""
    result = sim.run_size_report(max_n=100, out_dir=str(tmp_path / "sizes"))
    for algorithm_name, n, size in result.rows:
        assert size == token_wire_size(SigAlgorithm.parse(algorithm_name), n)
    stats = result.summary["stats"]
    assert (stats["rsa2048"]["slope"], stats["rsa2048"]["intercept"]) == (256, 256)
    assert (stats["ecp256"]["slope"], stats["ecp256"]["intercept"]) == (64, 64)
    assert (stats["ed25519"]["slope"], stats["ed25519"]["intercept"]) == (64, 32)


def test_criterion_8_load_ramp_desk_scale(tmp_path):
    """200 users ramped: conservation holds, the smoothed probe trend is
    monotone-segmented, and the first-phase mean stays within 2x of an
    unloaded baseline. Runtime < 5 min."""
    started = time.perf_counter()

    baseline_cfg = sim.ExperimentConfig(
        n_servers=5,
        users=sim.UserSpec(count=0, spawn_interval=0.1),
        think_time=0.5,
        request_pacing=0.03,
        probe_requests=300,
    )
    baseline = sim.run_load_ramp(baseline_cfg)
    baseline_mean = baseline.summary["stats"]["probe"]["mean"]

    cfg = sim.default_config("ramp")
    assert cfg.users.count == 200
    result = sim.run_load_ramp(cfg, out_dir=str(tmp_path / "ramp"))
    elapsed = time.perf_counter() - started

    stats = result.summary["stats"]
    observed = result.summary["observed"]
    assert observed["background_users_spawned"] == 200
    assert observed["truncated"] is None

    conserved = stats["conservation"]
    assert conserved["forwarded"] + conserved["denied"] == conserved["issued"], (
        f"conservation violated: {conserved}"
    )

    trend = stats["moving_average"]
    assert len(trend) == cfg.probe_requests
    assert all(v > 0 for v in trend)
    assert stats["monotone_segmented"], f"segments not monotone: {stats['segments']}"
    first_phase = stats["first_phase_mean"]
    assert first_phase <= 2 * baseline_mean, (
        f"first phase mean {1000 * first_phase:.3f}ms exceeds 2x unloaded "
        f"baseline {1000 * baseline_mean:.3f}ms"
    )
    assert elapsed < 300, f"criterion 8 took {elapsed:.1f}s (limit 300s)"


def test_criterion_9_score_table_survives_restart(tmp_path):
    """Gateway restart preserves the exact sorted score snapshot,
    byte for byte."""
    origin = OriginServer()
    origin.start()
    helpers = []
    gateway = None
    try:
        config = GatewayConfig(
            server_id="s1",
            upstream_addr=origin.address,
            score_table_path=str(tmp_path / "scores.tsv"),
            key_path=str(tmp_path / "key.json"),
        )
        gateway = TrustGateway(config)
        gateway.start()
        for server_id in ("s2", "s3"):
            helper_origin = OriginServer()
            helper_origin.start()
            helper = TrustGateway(
                GatewayConfig(server_id=server_id, upstream_addr=helper_origin.address)
            )
            helper.start()
            helpers.append((helper, helper_origin))

        directory = TrustDirectory()
        for node in [gateway] + [h for h, _ in helpers]:
            server_id, algorithm, public_key = fetch_directory_entry(node.base_url)
            directory.set_entry(server_id, algorithm, public_key)
        for node in [gateway] + [h for h, _ in helpers]:
            node.set_directory(directory)

        # three wallets presenting 2, 1, and 0 attestations to s1
        wallets = [Wallet.create(SigAlgorithm.ED25519) for _ in range(3)]
        for wallet in wallets:
            wallet.directory = directory.copy()
        for wallet, visits in zip(wallets, (["s2", "s3"], ["s2"], [])):
            for helper, _ in helpers:
                if helper.server_id in visits:
                    send(wallet, "POST", f"{helper.base_url}/login", LOGIN, tofu=False)
            result = send(wallet, "POST", f"{gateway.base_url}/login", LOGIN, tofu=False)
            assert result.status == 200

        snapshot_before = gateway.score_table.render_snapshot()
        scores = [gateway.score_table.get(w.key.public_key)[0] for w in wallets]
        assert scores == [2, 1, 0]

        gateway.stop()
        gateway = TrustGateway(config)  # same key_path and score_table_path
        gateway.start()
        snapshot_after = gateway.score_table.render_snapshot()
        assert snapshot_after == snapshot_before, "snapshot changed across restart"
    finally:
        if gateway is not None:
            gateway.stop()
        for helper, helper_origin in helpers:
            helper.stop()
            helper_origin.stop()
        origin.stop()
