"""Trust tokens: attestations over a user's public key, and their wire codec.

A trust token is the user's public key plus an ordered list of attestations,
each being one server's signature over those public key bytes. The header
wire form is

    b64url(subject_pk) ":" count [":" issuer "=" b64url(sig)]*

with unpadded RFC 4648 base64url and a decimal count that must equal the
number of attestation fields. The trust score of a token is the number of
attestations that verify against a directory of server public keys.
"""

from __future__ import annotations

import base64
import binascii
import json
import re
from dataclasses import dataclass, field
from typing import Dict, Iterable, Tuple, Union

from .algorithms import (
    CodecError,
    KeyMaterial,
    SigAlgorithm,
    algorithm_for_public_key,
    sign,
    verify,
)

DEFAULT_MAX_ATTESTATIONS = 100

# Per-issuer score entry for an attestation whose issuer has no directory key.
UNKNOWN_ISSUER = "unknown"

_SERVER_ID_RE = re.compile(r"^[A-Za-z0-9._-]{1,64}$")
_COUNT_RE = re.compile(r"^(0|[1-9][0-9]*)$")
_B64U_RE = re.compile(r"^[A-Za-z0-9_-]*$")

# Longest legitimate field is a base64url RSA2048 key or signature (342 chars);
# anything bigger is rejected before decoding.
_MAX_B64_FIELD = 512


class DecodeError(ValueError):
    """Header value outside the token grammar. `reason` is machine-readable."""

    def __init__(self, reason: str, detail: str = ""):
        self.reason = reason
        super().__init__(f"{reason}: {detail}" if detail else reason)


def b64u_encode(raw: bytes) -> str:
    return base64.urlsafe_b64encode(raw).decode("ascii").rstrip("=")


def b64u_decode(text: str) -> bytes:
    if not _B64U_RE.match(text):
        raise DecodeError("bad-base64", "invalid character")
    pad = -len(text) % 4
    if pad == 3:
        raise DecodeError("bad-base64", "impossible length")
    try:
        return base64.urlsafe_b64decode(text + "=" * pad)
    except (binascii.Error, ValueError) as exc:
        raise DecodeError("bad-base64", str(exc)) from exc


def validate_server_id(server_id: str) -> str:
    """Server ids are 1-64 chars of [A-Za-z0-9._-]; no ':' or '=' can appear."""
    if not _SERVER_ID_RE.match(server_id):
        raise ValueError(f"invalid server id: {server_id!r}")
    return server_id


@dataclass(frozen=True)
class Attestation:
    """One server's signature over a subject's public key bytes."""

    issuer: str
    signature: bytes


@dataclass(frozen=True)
class TrustToken:
    """A subject public key plus its ordered attestations (one per issuer)."""

    subject_public_key: bytes
    attestations: Tuple[Attestation, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "attestations", tuple(self.attestations))
        issuers = [a.issuer for a in self.attestations]
        if len(set(issuers)) != len(issuers):
            raise ValueError("duplicate issuer in token")

    def issuer_ids(self) -> Tuple[str, ...]:
        return tuple(a.issuer for a in self.attestations)


@dataclass(frozen=True)
class DirectoryEntry:
    algorithm: SigAlgorithm
    public_key: bytes

    def __post_init__(self) -> None:
        if len(self.public_key) != self.algorithm.public_key_len:
            raise CodecError(
                f"directory key for {self.algorithm.value} must be "
                f"{self.algorithm.public_key_len} bytes"
            )


@dataclass
class TrustDirectory:
    """Mapping from server id to that server's current public key."""

    entries: Dict[str, DirectoryEntry] = field(default_factory=dict)

    def set_entry(
        self, server_id: str, algorithm: SigAlgorithm, public_key: bytes
    ) -> None:
        validate_server_id(server_id)
        self.entries[server_id] = DirectoryEntry(algorithm, public_key)

    def get(self, server_id: str) -> Union[DirectoryEntry, None]:
        return self.entries.get(server_id)

    def __len__(self) -> int:
        return len(self.entries)

    def copy(self) -> "TrustDirectory":
        return TrustDirectory(dict(self.entries))

    def to_json_obj(self) -> dict:
        return {
            "servers": {
                sid: {
                    "algorithm": entry.algorithm.value,
                    "public_key": b64u_encode(entry.public_key),
                }
                for sid, entry in sorted(self.entries.items())
            }
        }

    @classmethod
    def from_json_obj(cls, obj: dict) -> "TrustDirectory":
        directory = cls()
        for sid, entry in obj.get("servers", {}).items():
            directory.set_entry(
                sid,
                SigAlgorithm.parse(entry["algorithm"]),
                b64u_decode(entry["public_key"]),
            )
        return directory

    def save_file(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json_obj(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load_file(cls, path: str) -> "TrustDirectory":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json_obj(json.load(fh))


def sign_attestation(
    server_key: KeyMaterial, issuer: str, subject_pk: bytes
) -> Attestation:
    """Sign the subject's raw public key bytes with the server's key."""
    validate_server_id(issuer)
    algorithm_for_public_key(subject_pk)  # CodecError on malformed subjects
    return Attestation(issuer=issuer, signature=sign(server_key, subject_pk))


def verify_attestation(
    att: Attestation,
    issuer_pk: bytes,
    issuer_alg: SigAlgorithm,
    subject_pk: bytes,
) -> int:
    """Return 1 iff the attestation verifies under the issuer key, else 0."""
    return int(verify(issuer_alg, issuer_pk, att.signature, subject_pk))


def trust_score(
    token: TrustToken, directory: TrustDirectory
) -> Tuple[int, Dict[str, Union[int, str]]]:
    """Count attestations that verify against the directory.

    Returns (score, per_issuer) where per_issuer maps each issuer to 1
    (valid), 0 (invalid) or UNKNOWN_ISSUER when the directory has no key
    for it. Unknown issuers contribute 0 to the score without being
    treated as verification failures.
    """
    score = 0
    per_issuer: Dict[str, Union[int, str]] = {}
    for att in token.attestations:
        entry = directory.get(att.issuer)
        if entry is None:
            per_issuer[att.issuer] = UNKNOWN_ISSUER
            continue
        outcome = verify_attestation(
            att, entry.public_key, entry.algorithm, token.subject_public_key
        )
        per_issuer[att.issuer] = outcome
        score += outcome
    return score, per_issuer


def encode_token(
    token: TrustToken, max_attestations: int = DEFAULT_MAX_ATTESTATIONS
) -> str:
    """Render the canonical header value for `token`."""
    if len(token.attestations) > max_attestations:
        raise ValueError(
            f"token has {len(token.attestations)} attestations, "
            f"maximum is {max_attestations}"
        )
    parts = [b64u_encode(token.subject_public_key), str(len(token.attestations))]
    for att in token.attestations:
        validate_server_id(att.issuer)
        parts.append(f"{att.issuer}={b64u_encode(att.signature)}")
    return ":".join(parts)


def decode_token(
    header_value: str, max_attestations: int = DEFAULT_MAX_ATTESTATIONS
) -> TrustToken:
    """Parse a header value back into a token; exact inverse of encode_token.

    Raises DecodeError with a machine-readable reason for anything outside
    the grammar: bad base64, a count that does not match the attestation
    fields, duplicate issuers, oversized fields, or a subject key whose
    length matches no supported algorithm.
    """
    parts = header_value.split(":")
    if len(parts) < 2:
        raise DecodeError("bad-structure", "expected '<pk>:<count>' at minimum")
    pk_b64, count_text = parts[0], parts[1]
    if len(pk_b64) > _MAX_B64_FIELD:
        raise DecodeError("oversized-field", "subject public key field too long")
    if not _COUNT_RE.match(count_text):
        raise DecodeError("bad-count", f"not a canonical decimal: {count_text!r}")
    count = int(count_text)
    if count > max_attestations:
        raise DecodeError(
            "too-many-attestations", f"{count} > maximum {max_attestations}"
        )
    fields = parts[2:]
    if len(fields) != count:
        raise DecodeError(
            "count-mismatch",
            f"declared {count} attestations, found {len(fields)}",
        )
    subject_pk = b64u_decode(pk_b64)
    if len(subject_pk) not in (256, 64, 32):
        raise DecodeError(
            "bad-public-key-length",
            f"{len(subject_pk)} bytes matches no supported algorithm",
        )
    attestations = []
    seen = set()
    for raw in fields:
        if len(raw) > _MAX_B64_FIELD + 65:
            raise DecodeError("oversized-field", "attestation field too long")
        issuer, eq, sig_b64 = raw.partition("=")
        if not eq:
            raise DecodeError("bad-attestation-field", f"missing '=' in {raw!r}")
        if not _SERVER_ID_RE.match(issuer):
            raise DecodeError("bad-issuer-id", repr(issuer))
        if issuer in seen:
            raise DecodeError("duplicate-issuer", issuer)
        seen.add(issuer)
        if len(sig_b64) > _MAX_B64_FIELD:
            raise DecodeError("oversized-field", "signature field too long")
        attestations.append(Attestation(issuer=issuer, signature=b64u_decode(sig_b64)))
    return TrustToken(subject_public_key=subject_pk, attestations=tuple(attestations))


def merge_attestation(
    token: TrustToken,
    att: Attestation,
    max_attestations: int = DEFAULT_MAX_ATTESTATIONS,
) -> TrustToken:
    """Renew in place if the issuer is already present, otherwise append."""
    validate_server_id(att.issuer)
    existing = list(token.attestations)
    for i, current in enumerate(existing):
        if current.issuer == att.issuer:
            existing[i] = att
            return TrustToken(token.subject_public_key, tuple(existing))
    if len(existing) + 1 > max_attestations:
        raise ValueError(f"token would exceed {max_attestations} attestations")
    existing.append(att)
    return TrustToken(token.subject_public_key, tuple(existing))


def token_wire_size(algorithm: SigAlgorithm, n_attestations: int) -> int:
    """Raw payload bytes for a token: one public key plus n signatures."""
    if n_attestations < 0:
        raise ValueError("attestation count must be non-negative")
    return algorithm.public_key_len + n_attestations * algorithm.signature_len


def fingerprint(raw: bytes, length: int = 12) -> str:
    """Short hex digest used when listing keys and signatures for humans."""
    import hashlib

    return hashlib.sha256(raw).hexdigest()[:length]
