"""`trustwallet` command line: init, send, show, directory pin.

Exit codes: 0 on success (send: response status < 400), 1 on wallet errors
or error responses (denial rules are printed), 3 when the request never
completed (connection refused, timeout).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from typing import Iterable, Optional

from .algorithms import SigAlgorithm
from .token import TrustDirectory, fingerprint
from .wallet import (
    TransportError,
    WalletError,
    pin_from_file,
    pin_from_url,
    send,
    wallet_init,
    wallet_load,
    wallet_lock,
    wallet_save,
    wallet_show,
    wallet_show_json,
)


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--wallet", default="wallet.json", help="wallet file (default: wallet.json)"
    )
    common.add_argument(
        "--json", action="store_true", dest="as_json", help="machine-readable output"
    )
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(
        prog="trustwallet", description="Manage a user trust wallet."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_init = sub.add_parser("init", parents=[common], help="create a fresh identity")
    p_init.add_argument(
        "--algorithm",
        default="ed25519",
        choices=[alg.value for alg in SigAlgorithm],
    )
    p_init.add_argument("--force", action="store_true", help="overwrite an existing wallet")

    p_send = sub.add_parser(
        "send", parents=[common], help="send a request with the trust header attached"
    )
    p_send.add_argument("url")
    p_send.add_argument("--method", default="POST")
    p_send.add_argument(
        "--body", default="", help="request body; prefix with @ to read a file"
    )
    p_send.add_argument("--content-type", default="application/json")
    p_send.add_argument(
        "--tamper",
        metavar="FIELD:BYTEINDEX",
        help="corrupt the outgoing header (pk or sigN field) for testing",
    )
    p_send.add_argument(
        "--no-tofu",
        action="store_true",
        help="do not pin unknown gateways before sending",
    )
    p_send.add_argument(
        "--pop", action="store_true", help="attach a proof-of-possession signature"
    )
    p_send.add_argument("--timeout", type=float, default=30.0)

    p_show = sub.add_parser("show", parents=[common], help="inspect the wallet")
    p_show.add_argument(
        "--directory", help="score against this directory file instead of pinned keys"
    )

    p_dir = sub.add_parser("directory", parents=[common], help="manage pinned server keys")
    dir_sub = p_dir.add_subparsers(dest="directory_command", required=True)
    p_pin = dir_sub.add_parser("pin", parents=[common], help="pin server keys")
    p_pin.add_argument("--url", help="gateway base URL to fetch the key from")
    p_pin.add_argument("--file", help="directory JSON file to pin from")
    p_pin.add_argument(
        "--replace", action="store_true", help="allow replacing a differing pinned key"
    )
    return parser


def _cmd_init(args) -> int:
    wallet = wallet_init(
        SigAlgorithm.parse(args.algorithm), args.wallet, force=args.force
    )
    if args.as_json:
        print(
            json.dumps(
                {
                    "path": wallet.path,
                    "algorithm": wallet.key.algorithm.value,
                    "public_key_fingerprint": fingerprint(wallet.key.public_key),
                }
            )
        )
    else:
        print(
            f"initialized {wallet.key.algorithm.value} wallet at {wallet.path} "
            f"(public key {fingerprint(wallet.key.public_key)})"
        )
    return 0


def _cmd_send(args) -> int:
    body = args.body
    if body.startswith("@"):
        with open(body[1:], "rb") as fh:
            payload = fh.read()
    else:
        payload = body.encode("utf-8")
    with wallet_lock(args.wallet):
        wallet = wallet_load(args.wallet)
        result = send(
            wallet,
            args.method.upper(),
            args.url,
            payload,
            tamper=args.tamper,
            tofu=not args.no_tofu,
            attach_pop=args.pop,
            content_type=args.content_type,
            timeout=args.timeout,
        )
    if args.as_json:
        print(
            json.dumps(
                {
                    "status": result.status,
                    "latency_seconds": round(result.latency_seconds, 6),
                    "granted": result.granted,
                    "grant_issuer": result.grant_issuer,
                    "rule": result.rule,
                    "reason": result.reason,
                    "score": wallet.score,
                }
            )
        )
    else:
        millis = result.latency_seconds * 1000
        if result.denied:
            print(f"denied (rule {result.rule} {result.reason}) in {millis:.1f} ms")
        else:
            line = f"{result.status} in {millis:.1f} ms"
            if result.granted:
                line += f"; grant from {result.grant_issuer} merged (score {wallet.score})"
            print(line)
    return 0 if result.status < 400 else 1


def _cmd_show(args) -> int:
    wallet = wallet_load(args.wallet)
    directory = (
        TrustDirectory.load_file(args.directory) if args.directory else None
    )
    if args.as_json:
        print(json.dumps(wallet_show_json(wallet, directory), indent=2))
    else:
        print(wallet_show(wallet, directory))
    return 0


def _cmd_directory_pin(args) -> int:
    if not args.url and not args.file:
        print("error: directory pin needs --url or --file", file=sys.stderr)
        return 1
    with wallet_lock(args.wallet):
        wallet = wallet_load(args.wallet)
        messages = []
        if args.url:
            server_id, changed = pin_from_url(wallet, args.url, replace=args.replace)
            entry = wallet.directory.get(server_id)
            state = "pinned" if changed else "already pinned"
            messages.append(
                {
                    "server_id": server_id,
                    "changed": changed,
                    "fingerprint": fingerprint(entry.public_key),
                    "text": f"{state} {server_id} ({fingerprint(entry.public_key)})",
                }
            )
        if args.file:
            count = pin_from_file(wallet, args.file)
            messages.append(
                {
                    "pinned_from_file": count,
                    "text": f"pinned {count} servers from {args.file}",
                }
            )
        wallet_save(wallet)
    if args.as_json:
        print(json.dumps(messages))
    else:
        for message in messages:
            print(message["text"])
    return 0


def main(argv: Optional[Iterable[str]] = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(list(argv) if argv is not None else None)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s %(message)s",
    )
    try:
        if args.command == "init":
            return _cmd_init(args)
        if args.command == "send":
            return _cmd_send(args)
        if args.command == "show":
            return _cmd_show(args)
        if args.command == "directory":
            return _cmd_directory_pin(args)
    except WalletError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except TransportError as exc:
        print(f"network error: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    raise AssertionError("unreachable")


if __name__ == "__main__":
    raise SystemExit(main())
