"""User-side wallet: identity, attestation store, and the send path.

The wallet owns the user key pair and the current trust token, persisted as
a single JSON document (private key included, so the file is created with
owner-only permissions). Grants arriving on responses are verified against
the wallet's pinned directory before they are merged; unverifiable grants
are dropped and logged. Server keys are pinned trust-on-first-use from each
gateway's `/.trustzero/pubkey` endpoint, or loaded from a directory file.
"""

from __future__ import annotations

import fcntl
import json
import logging
import os
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Tuple
from urllib.parse import urlsplit

import requests

from .algorithms import KeyMaterial, SigAlgorithm, keygen, sign, verify
from .gateway import GRANT_HEADER, POP_HEADER, PUBKEY_PATH, TRUST_HEADER, request_digest
from .token import (
    Attestation,
    TrustDirectory,
    TrustToken,
    b64u_decode,
    b64u_encode,
    encode_token,
    fingerprint,
    merge_attestation,
    trust_score,
    validate_server_id,
)

logger = logging.getLogger("trustgate.wallet")

WALLET_FORMAT_VERSION = 1


class WalletError(Exception):
    """Wallet file missing, malformed, or an operation was refused."""


class TransportError(Exception):
    """The request never completed (connection refused, timeout, ...)."""


@dataclass
class Wallet:
    key: KeyMaterial
    token: TrustToken
    directory: TrustDirectory = field(default_factory=TrustDirectory)
    hosts: Dict[str, str] = field(default_factory=dict)  # "host:port" -> server id
    path: Optional[str] = None

    def __post_init__(self):
        if self.token.subject_public_key != self.key.public_key:
            raise WalletError("token subject does not match wallet key")

    @classmethod
    def create(cls, algorithm: SigAlgorithm, path: Optional[str] = None) -> "Wallet":
        key = keygen(algorithm)
        token = TrustToken(subject_public_key=key.public_key, attestations=())
        return cls(key=key, token=token, path=path)

    @property
    def score(self) -> int:
        return trust_score(self.token, self.directory)[0]

    def to_json_obj(self) -> Dict[str, Any]:
        return {
            "version": WALLET_FORMAT_VERSION,
            "algorithm": self.key.algorithm.value,
            "public_key": b64u_encode(self.key.public_key),
            "private_key": b64u_encode(self.key.private_key),
            "attestations": [
                {"issuer": att.issuer, "signature": b64u_encode(att.signature)}
                for att in self.token.attestations
            ],
            "directory": self.directory.to_json_obj(),
            "hosts": dict(sorted(self.hosts.items())),
        }

    @classmethod
    def from_json_obj(cls, obj: Dict[str, Any], path: Optional[str] = None) -> "Wallet":
        try:
            algorithm = SigAlgorithm.parse(obj["algorithm"])
            key = KeyMaterial(
                algorithm=algorithm,
                public_key=b64u_decode(obj["public_key"]),
                private_key=b64u_decode(obj["private_key"]),
            )
            attestations = tuple(
                Attestation(issuer=att["issuer"], signature=b64u_decode(att["signature"]))
                for att in obj.get("attestations", [])
            )
            token = TrustToken(subject_public_key=key.public_key, attestations=attestations)
            directory = TrustDirectory.from_json_obj(obj.get("directory", {"servers": {}}))
            hosts = dict(obj.get("hosts", {}))
        except (KeyError, TypeError, ValueError) as exc:
            raise WalletError(f"malformed wallet file: {exc}") from exc
        return cls(key=key, token=token, directory=directory, hosts=hosts, path=path)


def wallet_init(
    algorithm: SigAlgorithm, path: str, force: bool = False
) -> Wallet:
    if os.path.exists(path) and not force:
        raise WalletError(f"wallet already exists: {path} (use --force to overwrite)")
    wallet = Wallet.create(algorithm, path=path)
    wallet_save(wallet)
    return wallet


def wallet_load(path: str) -> Wallet:
    if not os.path.exists(path):
        raise WalletError(f"no wallet file at {path}")
    with open(path, "r", encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except ValueError as exc:
            raise WalletError(f"malformed wallet file: {exc}") from exc
    return Wallet.from_json_obj(obj, path=path)


def wallet_save(wallet: Wallet) -> None:
    if wallet.path is None:
        return
    payload = json.dumps(wallet.to_json_obj(), indent=2, sort_keys=True) + "\n"
    tmp = wallet.path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        os.fchmod(fh.fileno(), 0o600)
        fh.write(payload)
    os.replace(tmp, wallet.path)


@contextmanager
def wallet_lock(path: str):
    """Serialize concurrent CLI invocations touching the same wallet file."""
    lock_path = path + ".lock"
    with open(lock_path, "a+") as fh:
        fcntl.flock(fh.fileno(), fcntl.LOCK_EX)
        try:
            yield
        finally:
            fcntl.flock(fh.fileno(), fcntl.LOCK_UN)


# -- tampering test hook -------------------------------------------------------


def tamper_header(token: TrustToken, selector: str) -> str:
    """Corrupt the outgoing header per `field:byteindex`.

    `field` is `pk` (the subject public key) or `sigN` (the Nth attestation's
    signature; bare `sig` means `sig0`). The chosen byte is flipped in the
    decoded binary field and the token re-encoded, so the result still parses
    but no longer verifies.
    """
    name, sep, index_text = selector.partition(":")
    if not sep or not index_text.lstrip("-").isdigit():
        raise ValueError(f"tamper selector must be field:byteindex, got {selector!r}")
    index = int(index_text)

    def flip(raw: bytes) -> bytes:
        if not 0 <= index < len(raw):
            raise ValueError(
                f"tamper index {index} out of range for {len(raw)}-byte field"
            )
        out = bytearray(raw)
        out[index] ^= 0xFF
        return bytes(out)

    if name == "pk":
        mutated = TrustToken(
            subject_public_key=flip(token.subject_public_key),
            attestations=token.attestations,
        )
    elif name == "sig" or (name.startswith("sig") and name[3:].isdigit()):
        position = 0 if name == "sig" else int(name[3:])
        if not 0 <= position < len(token.attestations):
            raise ValueError(
                f"tamper target {name!r} but token has "
                f"{len(token.attestations)} attestations"
            )
        attestations = list(token.attestations)
        target = attestations[position]
        attestations[position] = Attestation(
            issuer=target.issuer, signature=flip(target.signature)
        )
        mutated = TrustToken(
            subject_public_key=token.subject_public_key,
            attestations=tuple(attestations),
        )
    else:
        raise ValueError(f"unknown tamper field {name!r} (expected pk or sigN)")
    return encode_token(mutated)


# -- directory bootstrap -------------------------------------------------------


def fetch_directory_entry(
    base_url: str, session: Optional[requests.Session] = None, timeout: float = 10.0
) -> Tuple[str, SigAlgorithm, bytes]:
    requester = session or requests
    try:
        response = requester.get(base_url.rstrip("/") + PUBKEY_PATH, timeout=timeout)
        response.raise_for_status()
        body = response.json()
        server_id = body["server_id"]
        algorithm = SigAlgorithm.parse(body["algorithm"])
        public_key = b64u_decode(body["public_key_b64url"])
    except requests.RequestException as exc:
        raise TransportError(f"pubkey fetch failed: {exc}") from exc
    except (KeyError, TypeError, ValueError) as exc:
        raise WalletError(f"malformed pubkey response: {exc}") from exc
    validate_server_id(server_id)
    return server_id, algorithm, public_key


def pin_from_url(
    wallet: Wallet,
    base_url: str,
    session: Optional[requests.Session] = None,
    replace: bool = False,
) -> Tuple[str, bool]:
    """Trust-on-first-use pin. Returns (server_id, whether the pin changed).

    A key that differs from an existing pin is refused unless `replace`;
    silent re-pinning would defeat the point of pinning.
    """
    server_id, algorithm, public_key = fetch_directory_entry(base_url, session=session)
    existing = wallet.directory.get(server_id)
    host = _host_of(base_url)
    if existing is not None and existing.public_key == public_key:
        wallet.hosts.setdefault(host, server_id)
        return server_id, False
    if existing is not None and not replace:
        raise WalletError(
            f"server {server_id} presented a key that differs from the pinned one"
        )
    wallet.directory.set_entry(server_id, algorithm, public_key)
    wallet.hosts[host] = server_id
    return server_id, True


def pin_from_file(wallet: Wallet, directory_path: str) -> int:
    pinned = TrustDirectory.load_file(directory_path)
    for server_id, entry in pinned.entries.items():
        wallet.directory.set_entry(server_id, entry.algorithm, entry.public_key)
    return len(pinned)


def _host_of(url: str) -> str:
    parts = urlsplit(url if "//" in url else f"http://{url}")
    return parts.netloc


# -- the send path ---------------------------------------------------------------


@dataclass(frozen=True)
class SendResult:
    status: int
    latency_seconds: float
    granted: bool
    rule: Optional[int] = None
    reason: Optional[str] = None
    grant_issuer: Optional[str] = None

    @property
    def denied(self) -> bool:
        return self.rule is not None


def send(
    wallet: Wallet,
    method: str,
    url: str,
    body: bytes = b"",
    *,
    tamper: Optional[str] = None,
    tofu: bool = True,
    merge_grants: bool = True,
    attach_pop: bool = False,
    content_type: str = "application/json",
    session: Optional[requests.Session] = None,
    timeout: float = 30.0,
) -> SendResult:
    """One request through a gateway, with grant harvesting.

    The current token rides the `User-Key-Signatures` header (optionally
    corrupted via `tamper`). A grant header on the response is verified
    against the pinned directory and merged into the wallet, which is then
    persisted; pass merge_grants=False to measure with a frozen token.
    Latency spans request start to response body end. Transport
    failures raise TransportError; policy denials come back as a normal
    result with the 403 body's rule surfaced.
    """
    requester = session or requests
    host = _host_of(url)
    if tofu and host not in wallet.hosts:
        try:
            pin_from_url(wallet, _base_of(url), session=session)
            wallet_save(wallet)
        except (TransportError, WalletError) as exc:
            logger.warning("trust-on-first-use pin for %s failed: %s", host, exc)

    header_value = tamper_header(wallet.token, tamper) if tamper else encode_token(wallet.token)
    headers = {TRUST_HEADER: header_value}
    if body:
        headers["Content-Type"] = content_type
    if attach_pop:
        path = urlsplit(url).path or "/"
        pop_sig = sign(wallet.key, request_digest(method, path, body))
        headers[POP_HEADER] = b64u_encode(pop_sig)

    started = time.perf_counter()
    try:
        response = requester.request(
            method, url, data=body or None, headers=headers, timeout=timeout
        )
    except requests.RequestException as exc:
        raise TransportError(str(exc)) from exc
    latency = time.perf_counter() - started

    rule = None
    reason = None
    if response.status_code == 403:
        try:
            denial = response.json()
            rule = denial.get("rule")
            reason = denial.get("reason")
        except ValueError:
            pass

    granted = False
    grant_issuer = None
    grant_value = response.headers.get(GRANT_HEADER)
    if grant_value is not None and merge_grants and tamper is None:
        merged = harvest_grant(wallet, grant_value)
        if merged is not None:
            granted = True
            grant_issuer = merged
            wallet_save(wallet)

    return SendResult(
        status=response.status_code,
        latency_seconds=latency,
        granted=granted,
        rule=rule,
        reason=reason,
        grant_issuer=grant_issuer,
    )


def harvest_grant(wallet: Wallet, grant_value: str) -> Optional[str]:
    """Verify a `<issuer>=<b64url sig>` grant and merge it. Returns the
    issuer id on success, None (with a log line) when rejected."""
    issuer, sep, sig_b64 = grant_value.partition("=")
    if not sep:
        logger.warning("grant header missing '=' separator; dropped")
        return None
    try:
        validate_server_id(issuer)
        signature = b64u_decode(sig_b64)
    except ValueError as exc:
        logger.warning("unparseable grant from %r dropped: %s", issuer, exc)
        return None
    entry = wallet.directory.get(issuer)
    if entry is None:
        logger.warning("grant from unpinned server %r dropped", issuer)
        return None
    if verify(entry.algorithm, entry.public_key, signature, wallet.key.public_key) != 1:
        logger.warning("grant from %r failed verification; dropped", issuer)
        return None
    wallet.token = merge_attestation(
        wallet.token, Attestation(issuer=issuer, signature=signature)
    )
    return issuer


def _base_of(url: str) -> str:
    parts = urlsplit(url if "//" in url else f"http://{url}")
    return f"{parts.scheme}://{parts.netloc}"


# -- display ---------------------------------------------------------------------


def wallet_show(wallet: Wallet, directory: Optional[TrustDirectory] = None) -> str:
    """Human-readable listing; score computed against `directory` when given,
    else against the wallet's own pinned directory."""
    against = directory if directory is not None else wallet.directory
    score, per_issuer = trust_score(wallet.token, against)
    lines = [
        f"wallet: {wallet.path or '(in memory)'}",
        f"algorithm: {wallet.key.algorithm.value}",
        f"public key: {fingerprint(wallet.key.public_key)}",
        f"{len(wallet.token.attestations)} attestations, score {score}",
    ]
    for att in wallet.token.attestations:
        status = per_issuer[att.issuer]
        if status == 1:
            label = "valid"
        elif status == 0:
            label = "invalid"
        else:
            label = "unknown issuer"
        lines.append(f"  {att.issuer}  {fingerprint(att.signature)}  {label}")
    if len(against) != len(wallet.directory) or directory is not None:
        lines.append(f"(scored against supplied directory of {len(against)} servers)")
    return "\n".join(lines)


def wallet_show_json(wallet: Wallet, directory: Optional[TrustDirectory] = None) -> Dict[str, Any]:
    against = directory if directory is not None else wallet.directory
    score, per_issuer = trust_score(wallet.token, against)
    return {
        "path": wallet.path,
        "algorithm": wallet.key.algorithm.value,
        "public_key": b64u_encode(wallet.key.public_key),
        "score": score,
        "attestations": [
            {
                "issuer": att.issuer,
                "signature_fingerprint": fingerprint(att.signature),
                "status": per_issuer[att.issuer],
            }
            for att in wallet.token.attestations
        ],
        "pinned_servers": sorted(wallet.directory.entries),
    }
