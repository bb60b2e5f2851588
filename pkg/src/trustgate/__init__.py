"""Portable trust tokens, a scoring reverse-proxy gateway, and a desk-scale
experiment harness.

The pieces compose as: clients hold a wallet (key pair plus earned
attestations) and send the token in a request header; a gateway in front of
each origin verifies the attestations against a directory of server keys,
denies or forwards, and grants a fresh attestation on success; the simnet
harness boots many gateway/origin pairs and runs the measurement
experiments.
"""

from .algorithms import CodecError, KeyMaterial, SigAlgorithm, keygen
from .gateway import (
    DecisionRecord,
    GatewayConfig,
    GatewayPolicy,
    TrustGateway,
    UpstreamError,
)
from .origin import OriginConfig, OriginServer
from .token import (
    Attestation,
    DecodeError,
    TrustDirectory,
    TrustToken,
    decode_token,
    encode_token,
    merge_attestation,
    sign_attestation,
    token_wire_size,
    trust_score,
    verify_attestation,
)
from .wallet import (
    SendResult,
    TransportError,
    Wallet,
    WalletError,
    send,
    wallet_init,
    wallet_load,
    wallet_save,
)

__all__ = [
    "Attestation",
    "CodecError",
    "DecisionRecord",
    "DecodeError",
    "GatewayConfig",
    "GatewayPolicy",
    "KeyMaterial",
    "OriginConfig",
    "OriginServer",
    "SendResult",
    "SigAlgorithm",
    "TransportError",
    "TrustDirectory",
    "TrustGateway",
    "TrustToken",
    "UpstreamError",
    "Wallet",
    "WalletError",
    "decode_token",
    "encode_token",
    "keygen",
    "merge_attestation",
    "send",
    "sign_attestation",
    "token_wire_size",
    "trust_score",
    "verify_attestation",
    "wallet_init",
    "wallet_load",
    "wallet_save",
]

__version__ = "0.1.0"
