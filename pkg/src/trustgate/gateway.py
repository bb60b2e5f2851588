"""Reverse-proxy policy enforcement point.

Sits in front of one origin server and inspects every inbound request for
the `User-Key-Signatures` header. Requests are denied (403 with a JSON body
naming a rule id) or forwarded unmodified; successful upstream responses get
a fresh attestation attached via `User-Key-Signature-Grant` so the client
can grow its token.

Deny rules:

* 10009 `missing-header`    - no trust header and the policy requires one
* 10010 `invalid-signatures` - header fails to parse, or (strict mode) at
  least one attestation fails verification against the trust directory
* 10011 `insufficient-score` - verified score below `min_score_to_forward`
* 10012 `invalid-pop`       - proof-of-possession required and missing/bad

The gateway also serves `GET /.trustzero/pubkey` itself (never proxied) so
peers and clients can bootstrap a trust directory from live nodes.
"""

from __future__ import annotations

import argparse
import hashlib
import http.client
import json
import logging
import os
import socket
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any, Dict, Iterable, List, Mapping, Optional, Tuple

from .algorithms import (
    KeyMaterial,
    SigAlgorithm,
    algorithm_for_public_key,
    keygen,
    sign,
    verify,
)
from .configio import load_config_file, parse_addr
from .scoretable import ScoreTable
from .token import (
    DEFAULT_MAX_ATTESTATIONS,
    DecodeError,
    TrustDirectory,
    b64u_decode,
    b64u_encode,
    decode_token,
    trust_score,
    validate_server_id,
)

logger = logging.getLogger("trustgate.gateway")

TRUST_HEADER = "User-Key-Signatures"
GRANT_HEADER = "User-Key-Signature-Grant"
POP_HEADER = "User-Key-PoP"
PUBKEY_PATH = "/.trustzero/pubkey"

RULE_MISSING_HEADER = 10009
RULE_INVALID_SIGNATURES = 10010
RULE_INSUFFICIENT_SCORE = 10011
RULE_INVALID_POP = 10012

OUTCOME_DENY_MISSING_HEADER = "deny_missing_header"
OUTCOME_DENY_PARSE_ERROR = "deny_parse_error"
OUTCOME_DENY_INVALID_SIGNATURE = "deny_invalid_signature"
OUTCOME_DENY_BELOW_MIN_SCORE = "deny_below_min_score"
OUTCOME_FORWARDED = "forwarded"
OUTCOME_UPSTREAM_ERROR = "upstream_error"

_HOP_BY_HOP = frozenset(
    {
        "connection",
        "keep-alive",
        "proxy-authenticate",
        "proxy-authorization",
        "te",
        "trailers",
        "transfer-encoding",
        "upgrade",
    }
)


def request_digest(method: str, path: str, body: bytes) -> bytes:
    """Digest a proof-of-possession signature covers:
    SHA-256 over `<METHOD> "\\n" <PATH> "\\n" <raw body>`."""
    h = hashlib.sha256()
    h.update(method.upper().encode("ascii"))
    h.update(b"\n")
    h.update(path.encode("utf-8"))
    h.update(b"\n")
    h.update(body)
    return h.digest()


@dataclass(frozen=True)
class GatewayPolicy:
    require_header: bool = True
    strict_mode: bool = True
    min_score_to_forward: int = 0
    issue_on_status: frozenset = frozenset({200})
    require_proof_of_possession: bool = False

    def __post_init__(self):
        if self.min_score_to_forward < 0:
            raise ValueError("min_score_to_forward must be >= 0")
        object.__setattr__(self, "issue_on_status", frozenset(self.issue_on_status))
        if not self.issue_on_status:
            raise ValueError("issue_on_status must not be empty")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "GatewayPolicy":
        kwargs: Dict[str, Any] = {}
        for key in (
            "require_header",
            "strict_mode",
            "min_score_to_forward",
            "issue_on_status",
            "require_proof_of_possession",
        ):
            if key in data:
                kwargs[key] = data[key]
        return cls(**kwargs)


@dataclass(frozen=True)
class DecisionRecord:
    """One enforcement decision, as written to the structured log."""

    timestamp: float
    method: str
    path: str
    outcome: str
    subject_pk: Optional[bytes]
    score: Optional[int]
    rule: Optional[int]
    upstream_status: Optional[int]
    granted: bool
    verify_micros: int
    processing_micros: int

    def to_json_obj(self) -> Dict[str, Any]:
        return {
            "timestamp": round(self.timestamp, 6),
            "method": self.method,
            "path": self.path,
            "outcome": self.outcome,
            "subject_pk": b64u_encode(self.subject_pk) if self.subject_pk else None,
            "score": self.score,
            "rule": self.rule,
            "upstream_status": self.upstream_status,
            "granted": self.granted,
            "verify_micros": self.verify_micros,
            "processing_micros": self.processing_micros,
        }


@dataclass
class GatewayConfig:
    server_id: str
    upstream_addr: str
    listen_addr: str = "127.0.0.1:0"
    algorithm: SigAlgorithm = SigAlgorithm.ED25519
    policy: GatewayPolicy = field(default_factory=GatewayPolicy)
    score_table_path: Optional[str] = None
    decision_log_path: Optional[str] = None
    key_path: Optional[str] = None
    directory_path: Optional[str] = None
    max_attestations: int = DEFAULT_MAX_ATTESTATIONS
    upstream_timeout: float = 30.0
    decision_history: int = 100_000

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "GatewayConfig":
        known = {
            "server_id",
            "upstream_addr",
            "listen_addr",
            "algorithm",
            "score_table_path",
            "decision_log_path",
            "key_path",
            "directory_path",
            "max_attestations",
            "upstream_timeout",
            "decision_history",
        }
        kwargs: Dict[str, Any] = {k: v for k, v in data.items() if k in known}
        unknown = set(data) - known - {"policy"}
        if unknown:
            raise ValueError(f"unknown gateway config keys: {sorted(unknown)}")
        if "algorithm" in kwargs:
            kwargs["algorithm"] = SigAlgorithm.parse(kwargs["algorithm"])
        if "policy" in data:
            kwargs["policy"] = GatewayPolicy.from_dict(data["policy"])
        return cls(**kwargs)


class UpstreamError(Exception):
    """Origin could not be reached or dropped the connection twice."""


class _NoDelayHTTPConnection(http.client.HTTPConnection):
    """Upstream connection with Nagle disabled, so proxied requests are not
    exposed to delayed-ACK stalls on the origin leg."""

    def connect(self):
        super().connect()
        self.sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)


class _GatewayHTTPServer(ThreadingHTTPServer):
    daemon_threads = True
    request_queue_size = 128
    app: "TrustGateway"

    def handle_error(self, request, client_address):
        logger.debug("connection error from %s", client_address, exc_info=True)


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    server_version = "trustgate"
    timeout = 65
    # Responses go out as separate header/body writes; without TCP_NODELAY
    # the second write can stall ~40ms behind the peer's delayed ACK.
    disable_nagle_algorithm = True

    def _dispatch(self):
        length = int(self.headers.get("Content-Length") or 0)
        body = self.rfile.read(length) if length > 0 else b""
        status, headers, payload = self.server.app.handle(
            self.command, self.path, self.headers, body
        )
        self.send_response(status)
        for name, value in headers:
            self.send_header(name, value)
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        if self.command != "HEAD" and payload:
            self.wfile.write(payload)

    do_GET = _dispatch
    do_HEAD = _dispatch
    do_POST = _dispatch
    do_PUT = _dispatch
    do_DELETE = _dispatch
    do_PATCH = _dispatch
    do_OPTIONS = _dispatch

    def log_message(self, format, *args):
        logger.debug("%s %s", self.address_string(), format % args)


def _lookup_header(headers: Mapping[str, str], name: str) -> Optional[str]:
    value = headers.get(name)
    if value is not None:
        return value
    wanted = name.lower()
    for key in headers:
        if key.lower() == wanted:
            return headers[key]
    return None


def _json_response(obj: Any, status: int = 200) -> Tuple[int, List[Tuple[str, str]], bytes]:
    body = json.dumps(obj).encode("utf-8")
    return status, [("Content-Type", "application/json")], body


class TrustGateway:
    """One policy enforcement point bound to one origin.

    The instance owns the server identity (key pair), the trust directory
    it verifies against, the persistent score table, and the decision log.
    `start()` binds the listener (port 0 picks a free port); `process()` is
    the testable request path and is also what the HTTP plumbing calls.
    """

    def __init__(self, config: GatewayConfig, directory: Optional[TrustDirectory] = None):
        validate_server_id(config.server_id)
        self.config = config
        self._identity_lock = threading.Lock()
        self._key = self._load_or_create_key()
        base = directory
        if base is None and config.directory_path and os.path.exists(config.directory_path):
            base = TrustDirectory.load_file(config.directory_path)
        self._directory = base.copy() if base is not None else TrustDirectory()
        self._publish_own_entry()
        self.score_table = ScoreTable(config.score_table_path)
        self._records: deque = deque(maxlen=config.decision_history)
        self._records_lock = threading.Lock()
        self._decision_log = None
        self._decision_log_lock = threading.Lock()
        if config.decision_log_path:
            self._decision_log = open(config.decision_log_path, "a", encoding="utf-8")
        self._upstream_host, self._upstream_port = parse_addr(config.upstream_addr)
        self._local = threading.local()
        self._server: Optional[_GatewayHTTPServer] = None
        self._thread: Optional[threading.Thread] = None
        self._bound_addr: Optional[Tuple[str, int]] = None

    # -- identity and directory ------------------------------------------

    def _load_or_create_key(self) -> KeyMaterial:
        path = self.config.key_path
        if path and os.path.exists(path):
            with open(path, "r", encoding="utf-8") as fh:
                blob = json.load(fh)
            algorithm = SigAlgorithm.parse(blob["algorithm"])
            if algorithm is not self.config.algorithm:
                raise ValueError(
                    f"key file algorithm {algorithm.value} does not match "
                    f"configured {self.config.algorithm.value}"
                )
            return KeyMaterial(
                algorithm=algorithm,
                public_key=b64u_decode(blob["public_key_b64url"]),
                private_key=b64u_decode(blob["private_key_b64url"]),
            )
        key = keygen(self.config.algorithm)
        if path:
            self._persist_key(key)
        return key

    def _persist_key(self, key: KeyMaterial) -> None:
        path = self.config.key_path
        blob = {
            "algorithm": key.algorithm.value,
            "public_key_b64url": b64u_encode(key.public_key),
            "private_key_b64url": b64u_encode(key.private_key),
        }
        tmp = path + ".tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            os.fchmod(fh.fileno(), 0o600)
            json.dump(blob, fh)
        os.replace(tmp, path)

    def _publish_own_entry(self) -> None:
        self._directory.set_entry(
            self.config.server_id, self._key.algorithm, self._key.public_key
        )

    def _identity(self) -> Tuple[KeyMaterial, TrustDirectory]:
        with self._identity_lock:
            return self._key, self._directory

    @property
    def server_id(self) -> str:
        return self.config.server_id

    @property
    def public_key(self) -> bytes:
        with self._identity_lock:
            return self._key.public_key

    def directory_entry(self) -> Tuple[str, SigAlgorithm, bytes]:
        with self._identity_lock:
            return self.config.server_id, self._key.algorithm, self._key.public_key

    def directory(self) -> TrustDirectory:
        with self._identity_lock:
            return self._directory.copy()

    def set_directory(self, directory: TrustDirectory) -> None:
        """Install a new trust directory; the gateway's own current entry
        is always (re)applied on top."""
        with self._identity_lock:
            self._directory = directory.copy()
            self._publish_own_entry()

    def rotate_server_key(self) -> KeyMaterial:
        """Swap in a fresh key pair atomically. Grants issued from now on
        use the new key, and the pubkey endpoint serves it; everything this
        server signed before stops verifying against the new entry."""
        new_key = keygen(self.config.algorithm)
        if self.config.key_path:
            self._persist_key(new_key)
        with self._identity_lock:
            self._key = new_key
            self._directory = self._directory.copy()
            self._publish_own_entry()
        logger.info("%s rotated server key", self.config.server_id)
        return new_key

    # -- request path ------------------------------------------------------

    def handle(
        self, method: str, path: str, headers: Mapping[str, str], body: bytes
    ) -> Tuple[int, List[Tuple[str, str]], bytes]:
        try:
            status, out_headers, payload, _ = self.process(method, path, headers, body)
            return status, out_headers, payload
        except Exception:
            logger.exception("unhandled error processing %s %s", method, path)
            return _json_response({"error": "internal"}, status=500)

    def process(
        self, method: str, path: str, headers: Mapping[str, str], body: bytes
    ) -> Tuple[int, List[Tuple[str, str]], bytes, Optional[DecisionRecord]]:
        started = time.perf_counter_ns()
        wall = time.time()
        key, directory = self._identity()

        bare_path = path.split("?", 1)[0]
        if method in ("GET", "HEAD") and bare_path == PUBKEY_PATH:
            status, out_headers, payload = _json_response(
                {
                    "server_id": self.config.server_id,
                    "algorithm": key.algorithm.value,
                    "public_key_b64url": b64u_encode(key.public_key),
                }
            )
            return status, out_headers, payload, None

        policy = self.config.policy
        token = None
        score: Optional[int] = None

        def deny(
            rule: int, reason: str, detail: str, outcome: str
        ) -> Tuple[int, List[Tuple[str, str]], bytes, DecisionRecord]:
            verify_ns = time.perf_counter_ns() - started
            status, out_headers, payload = _json_response(
                {"rule": rule, "reason": reason, "detail": detail}, status=403
            )
            record = self._record(
                DecisionRecord(
                    timestamp=wall,
                    method=method,
                    path=path,
                    outcome=outcome,
                    subject_pk=token.subject_public_key if token else None,
                    score=score,
                    rule=rule,
                    upstream_status=None,
                    granted=False,
                    verify_micros=verify_ns // 1000,
                    processing_micros=(time.perf_counter_ns() - started) // 1000,
                )
            )
            return status, out_headers, payload, record

        header_value = _lookup_header(headers, TRUST_HEADER)
        if header_value is None:
            if policy.require_header:
                return deny(
                    RULE_MISSING_HEADER,
                    "missing-header",
                    "Missing User-Key-Signatures header",
                    OUTCOME_DENY_MISSING_HEADER,
                )
        else:
            try:
                token = decode_token(header_value, self.config.max_attestations)
            except DecodeError as exc:
                return deny(
                    RULE_INVALID_SIGNATURES,
                    "invalid-signatures",
                    f"Error in signatures: {exc}",
                    OUTCOME_DENY_PARSE_ERROR,
                )
            score, per_issuer = trust_score(token, directory)
            if policy.strict_mode and any(v == 0 for v in per_issuer.values()):
                failed = sorted(i for i, v in per_issuer.items() if v == 0)
                return deny(
                    RULE_INVALID_SIGNATURES,
                    "invalid-signatures",
                    f"Error in signatures: attestation rejected for {failed}",
                    OUTCOME_DENY_INVALID_SIGNATURE,
                )
            if policy.require_proof_of_possession:
                pop_value = _lookup_header(headers, POP_HEADER)
                ok = False
                if pop_value is not None:
                    try:
                        pop_sig = b64u_decode(pop_value)
                        ok = (
                            verify(
                                algorithm_for_public_key(token.subject_public_key),
                                token.subject_public_key,
                                pop_sig,
                                request_digest(method, path, body),
                            )
                            == 1
                        )
                    except DecodeError:
                        ok = False
                if not ok:
                    return deny(
                        RULE_INVALID_POP,
                        "invalid-pop",
                        "Missing or invalid User-Key-PoP header",
                        OUTCOME_DENY_INVALID_SIGNATURE,
                    )
        if token is not None and score is not None and score < policy.min_score_to_forward:
            return deny(
                RULE_INSUFFICIENT_SCORE,
                "insufficient-score",
                f"score {score} below minimum {policy.min_score_to_forward}",
                OUTCOME_DENY_BELOW_MIN_SCORE,
            )
        verify_ns = time.perf_counter_ns() - started

        try:
            upstream_status, upstream_headers, upstream_body = self._forward(
                method, path, headers, body
            )
        except UpstreamError as exc:
            logger.warning("upstream unreachable: %s", exc)
            status, out_headers, payload = _json_response(
                {"error": "upstream-unreachable"}, status=502
            )
            record = self._record(
                DecisionRecord(
                    timestamp=wall,
                    method=method,
                    path=path,
                    outcome=OUTCOME_UPSTREAM_ERROR,
                    subject_pk=token.subject_public_key if token else None,
                    score=score,
                    rule=None,
                    upstream_status=None,
                    granted=False,
                    verify_micros=verify_ns // 1000,
                    processing_micros=(time.perf_counter_ns() - started) // 1000,
                )
            )
            return status, out_headers, payload, record

        out_headers = [
            (name, value)
            for name, value in upstream_headers
            if name.lower() not in _HOP_BY_HOP and name.lower() != "content-length"
        ]
        granted = False
        if token is not None and upstream_status in policy.issue_on_status:
            grant_sig = sign(key, token.subject_public_key)
            out_headers.append(
                (GRANT_HEADER, f"{self.config.server_id}={b64u_encode(grant_sig)}")
            )
            self.score_table.update(
                token.subject_public_key, score or 0, int(wall * 1_000_000)
            )
            granted = True

        record = self._record(
            DecisionRecord(
                timestamp=wall,
                method=method,
                path=path,
                outcome=OUTCOME_FORWARDED,
                subject_pk=token.subject_public_key if token else None,
                score=score,
                rule=None,
                upstream_status=upstream_status,
                granted=granted,
                verify_micros=verify_ns // 1000,
                processing_micros=(time.perf_counter_ns() - started) // 1000,
            )
        )
        return upstream_status, out_headers, upstream_body, record

    def _record(self, record: DecisionRecord) -> DecisionRecord:
        with self._records_lock:
            self._records.append(record)
        if self._decision_log is not None:
            line = json.dumps(record.to_json_obj())
            with self._decision_log_lock:
                try:
                    self._decision_log.write(line + "\n")
                    self._decision_log.flush()
                except OSError as exc:
                    logger.error("decision log write failed: %s", exc)
        return record

    def records(self) -> List[DecisionRecord]:
        with self._records_lock:
            return list(self._records)

    def clear_records(self) -> None:
        with self._records_lock:
            self._records.clear()

    # -- upstream ----------------------------------------------------------

    def _upstream_connection(self) -> http.client.HTTPConnection:
        conn = getattr(self._local, "conn", None)
        if conn is None:
            conn = _NoDelayHTTPConnection(
                self._upstream_host,
                self._upstream_port,
                timeout=self.config.upstream_timeout,
            )
            self._local.conn = conn
        return conn

    def _drop_upstream_connection(self) -> None:
        conn = getattr(self._local, "conn", None)
        if conn is not None:
            conn.close()
            self._local.conn = None

    def _forward(
        self, method: str, path: str, headers: Mapping[str, str], body: bytes
    ) -> Tuple[int, List[Tuple[str, str]], bytes]:
        out_headers = {}
        for name in headers:
            lowered = name.lower()
            if lowered in _HOP_BY_HOP or lowered in ("host", "content-length"):
                continue
            out_headers[name] = headers[name]
        last_error: Optional[Exception] = None
        for attempt in (1, 2):
            conn = self._upstream_connection()
            try:
                conn.request(method, path, body=body or None, headers=out_headers)
                response = conn.getresponse()
                payload = response.read()
                return response.status, response.getheaders(), payload
            except (
                http.client.RemoteDisconnected,
                BrokenPipeError,
                ConnectionResetError,
            ) as exc:
                # A kept-alive connection the origin already closed; retry
                # once on a fresh one.
                self._drop_upstream_connection()
                last_error = exc
            except (OSError, http.client.HTTPException) as exc:
                self._drop_upstream_connection()
                raise UpstreamError(str(exc)) from exc
        raise UpstreamError(str(last_error))

    # -- lifecycle ---------------------------------------------------------

    def start(self) -> str:
        host, port = parse_addr(self.config.listen_addr)
        server = _GatewayHTTPServer((host, port), _Handler)
        server.app = self
        self._server = server
        self._bound_addr = (server.server_address[0], server.server_address[1])
        self._thread = threading.Thread(
            target=server.serve_forever,
            name=f"gateway-{self.config.server_id}",
            daemon=True,
        )
        self._thread.start()
        logger.info("%s listening on %s", self.config.server_id, self.address)
        return self.address

    @property
    def address(self) -> str:
        if self._bound_addr is None:
            raise RuntimeError("gateway not started")
        return f"{self._bound_addr[0]}:{self._bound_addr[1]}"

    @property
    def base_url(self) -> str:
        return f"http://{self.address}"

    def stop(self) -> None:
        if self._server is not None:
            self._server.shutdown()
            self._server.server_close()
            self._server = None
        if self._thread is not None:
            self._thread.join(timeout=5)
            self._thread = None
        if self._decision_log is not None:
            with self._decision_log_lock:
                self._decision_log.close()
                self._decision_log = None


def main(argv: Optional[Iterable[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="trustgate-gateway",
        description="Run a policy-enforcing reverse proxy in front of one origin.",
    )
    parser.add_argument("--config", required=True, help="TOML or JSON config file")
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(list(argv) if argv is not None else None)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    config = GatewayConfig.from_dict(load_config_file(args.config))
    gateway = TrustGateway(config)
    gateway.start()
    print(f"gateway {config.server_id} listening on {gateway.address}", flush=True)
    try:
        while True:
            time.sleep(3600)
    except KeyboardInterrupt:
        pass
    finally:
        gateway.stop()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
