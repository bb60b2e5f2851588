"""Signature algorithms and key material.

Every algorithm pins a canonical fixed-length public key encoding and a
fixed signature length, so keys and signatures can travel in headers and
be validated by size alone:

    RSA2048  -> 256-byte public key (big-endian modulus, e = 65537),
                256-byte PKCS#1 v1.5 / SHA-256 signature (deterministic)
    ECP256   -> 64-byte public key (raw X || Y on P-256),
                64-byte signature (raw r || s)
    ED25519  -> 32-byte public key, 64-byte signature

Private keys are serialized as PKCS#8 DER regardless of algorithm.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from functools import lru_cache

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import ec, ed25519, padding, rsa
from cryptography.hazmat.primitives.asymmetric import utils as asym_utils

RSA_PUBLIC_EXPONENT = 65537


class CodecError(ValueError):
    """Structurally malformed key or signature material."""


class SigAlgorithm(str, Enum):
    RSA2048 = "rsa2048"
    ECP256 = "ecp256"
    ED25519 = "ed25519"

    @property
    def public_key_len(self) -> int:
        return _SIZES[self][0]

    @property
    def signature_len(self) -> int:
        return _SIZES[self][1]

    @classmethod
    def parse(cls, name: str) -> "SigAlgorithm":
        try:
            return cls(name.strip().lower())
        except ValueError:
            raise CodecError(f"unknown signature algorithm: {name!r}") from None


_SIZES = {
    SigAlgorithm.RSA2048: (256, 256),
    SigAlgorithm.ECP256: (64, 64),
    SigAlgorithm.ED25519: (32, 64),
}

# Public key lengths are pairwise distinct, so a key's length identifies
# its algorithm.
_ALG_BY_PK_LEN = {alg.public_key_len: alg for alg in SigAlgorithm}


def algorithm_for_public_key(public_key: bytes) -> SigAlgorithm:
    """Identify the algorithm of a canonical public key by its length."""
    alg = _ALG_BY_PK_LEN.get(len(public_key))
    if alg is None:
        raise CodecError(
            f"public key length {len(public_key)} matches no supported algorithm"
        )
    return alg


@dataclass(frozen=True)
class KeyMaterial:
    """An asymmetric key pair: canonical public bytes plus PKCS#8 private bytes."""

    algorithm: SigAlgorithm
    public_key: bytes
    private_key: bytes

    def __post_init__(self) -> None:
        if len(self.public_key) != self.algorithm.public_key_len:
            raise CodecError(
                f"{self.algorithm.value} public key must be "
                f"{self.algorithm.public_key_len} bytes, got {len(self.public_key)}"
            )


def keygen(algorithm: SigAlgorithm) -> KeyMaterial:
    """Generate a fresh key pair for `algorithm`.

    Entropy comes from the operating system CSPRNG via the cryptography
    library; two calls return distinct keys except with negligible
    probability.
    """
    if algorithm is SigAlgorithm.RSA2048:
        priv = rsa.generate_private_key(
            public_exponent=RSA_PUBLIC_EXPONENT, key_size=2048
        )
        n = priv.public_key().public_numbers().n
        public = n.to_bytes(256, "big")
    elif algorithm is SigAlgorithm.ECP256:
        priv = ec.generate_private_key(ec.SECP256R1())
        nums = priv.public_key().public_numbers()
        public = nums.x.to_bytes(32, "big") + nums.y.to_bytes(32, "big")
    elif algorithm is SigAlgorithm.ED25519:
        priv = ed25519.Ed25519PrivateKey.generate()
        public = priv.public_key().public_bytes(
            serialization.Encoding.Raw, serialization.PublicFormat.Raw
        )
    else:  # pragma: no cover - closed enumeration
        raise CodecError(f"unsupported algorithm {algorithm}")
    private = priv.private_bytes(
        serialization.Encoding.DER,
        serialization.PrivateFormat.PKCS8,
        serialization.NoEncryption(),
    )
    return KeyMaterial(algorithm=algorithm, public_key=public, private_key=private)


@lru_cache(maxsize=128)
def _private_key_object(private_key: bytes):
    try:
        return serialization.load_der_private_key(private_key, password=None)
    except (ValueError, TypeError) as exc:
        raise CodecError(f"cannot load private key: {exc}") from exc


@lru_cache(maxsize=1024)
def _public_key_object(algorithm: SigAlgorithm, public_key: bytes):
    if len(public_key) != algorithm.public_key_len:
        raise CodecError(
            f"{algorithm.value} public key must be "
            f"{algorithm.public_key_len} bytes, got {len(public_key)}"
        )
    try:
        if algorithm is SigAlgorithm.RSA2048:
            n = int.from_bytes(public_key, "big")
            return rsa.RSAPublicNumbers(RSA_PUBLIC_EXPONENT, n).public_key()
        if algorithm is SigAlgorithm.ECP256:
            x = int.from_bytes(public_key[:32], "big")
            y = int.from_bytes(public_key[32:], "big")
            return ec.EllipticCurvePublicNumbers(x, y, ec.SECP256R1()).public_key()
        return ed25519.Ed25519PublicKey.from_public_bytes(public_key)
    except ValueError as exc:
        raise CodecError(f"cannot load {algorithm.value} public key: {exc}") from exc


def sign(key: KeyMaterial, message: bytes) -> bytes:
    """Sign `message`, returning a signature of the algorithm's fixed length."""
    priv = _private_key_object(key.private_key)
    if key.algorithm is SigAlgorithm.RSA2048:
        return priv.sign(message, padding.PKCS1v15(), hashes.SHA256())
    if key.algorithm is SigAlgorithm.ECP256:
        der = priv.sign(message, ec.ECDSA(hashes.SHA256()))
        r, s = asym_utils.decode_dss_signature(der)
        return r.to_bytes(32, "big") + s.to_bytes(32, "big")
    return priv.sign(message)


def verify(
    algorithm: SigAlgorithm, public_key: bytes, signature: bytes, message: bytes
) -> bool:
    """Check `signature` over `message` under `public_key`.

    Invalid signatures return False, never raise. A key that cannot be
    decoded at all (wrong length, point off curve) raises CodecError,
    which is a distinct outcome from an invalid signature.
    """
    if len(signature) != algorithm.signature_len:
        return False
    pub = _public_key_object(algorithm, public_key)
    try:
        if algorithm is SigAlgorithm.RSA2048:
            pub.verify(signature, message, padding.PKCS1v15(), hashes.SHA256())
        elif algorithm is SigAlgorithm.ECP256:
            r = int.from_bytes(signature[:32], "big")
            s = int.from_bytes(signature[32:], "big")
            der = asym_utils.encode_dss_signature(r, s)
            pub.verify(der, message, ec.ECDSA(hashes.SHA256()))
        else:
            pub.verify(signature, message)
    except InvalidSignature:
        return False
    except ValueError:
        # e.g. r/s out of range for the curve: the signature, not the key
        return False
    return True
