"""Minimal upstream login server used behind each gateway.

Accepts or denies a JSON credential pair on the login path and exposes two
scaffolding endpoints: `GET /health` (liveness) and `GET /.test/count`,
which reports how many non-scaffolding requests have reached the origin.
The counter is what fail-closed tests assert against: a denied request must
never move it.
"""

from __future__ import annotations

import argparse
import json
import logging
import threading
import time
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any, Dict, Iterable, Mapping, Optional, Tuple

from .configio import load_config_file, parse_addr

logger = logging.getLogger("trustgate.origin")

HEALTH_PATH = "/health"
COUNT_PATH = "/.test/count"

DEFAULT_FIXTURES = {"John Doe": "johndoe"}


@dataclass
class OriginConfig:
    listen_addr: str = "127.0.0.1:0"
    login_path: str = "/login"
    fixtures: Dict[str, str] = field(default_factory=lambda: dict(DEFAULT_FIXTURES))

    def __post_init__(self):
        for username, password in self.fixtures.items():
            if not username or not password:
                raise ValueError("credential fixtures must have non-empty fields")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "OriginConfig":
        kwargs: Dict[str, Any] = {}
        for key in ("listen_addr", "login_path", "fixtures"):
            if key in data:
                kwargs[key] = data[key]
        return cls(**kwargs)


class _OriginHTTPServer(ThreadingHTTPServer):
    daemon_threads = True
    request_queue_size = 128
    app: "OriginServer"

    def handle_error(self, request, client_address):
        logger.debug("connection error from %s", client_address, exc_info=True)


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    server_version = "trustgate-origin"
    timeout = 65
    # Responses go out as separate header/body writes; without TCP_NODELAY
    # the second write can stall ~40ms behind the peer's delayed ACK.
    disable_nagle_algorithm = True

    def _dispatch(self):
        length = int(self.headers.get("Content-Length") or 0)
        body = self.rfile.read(length) if length > 0 else b""
        status, payload = self.server.app.handle(self.command, self.path, body)
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        if self.command != "HEAD" and payload:
            self.wfile.write(payload)

    do_GET = _dispatch
    do_HEAD = _dispatch
    do_POST = _dispatch
    do_PUT = _dispatch
    do_DELETE = _dispatch

    def log_message(self, format, *args):
        logger.debug("%s %s", self.address_string(), format % args)


class OriginServer:
    """Login stub with an atomic served-request counter."""

    def __init__(self, config: Optional[OriginConfig] = None):
        self.config = config or OriginConfig()
        self._count = 0
        self._count_lock = threading.Lock()
        self._server: Optional[_OriginHTTPServer] = None
        self._thread: Optional[threading.Thread] = None
        self._bound_addr: Optional[Tuple[str, int]] = None

    def handle(self, method: str, path: str, body: bytes) -> Tuple[int, bytes]:
        bare_path = path.split("?", 1)[0]
        if bare_path == HEALTH_PATH:
            return 200, json.dumps({"status": "ok"}).encode("utf-8")
        if bare_path == COUNT_PATH:
            return 200, json.dumps({"count": self.request_count}).encode("utf-8")
        with self._count_lock:
            self._count += 1
        if bare_path == self.config.login_path and method == "POST":
            return self._login(body)
        return 404, json.dumps({"error": "not-found"}).encode("utf-8")

    def _login(self, body: bytes) -> Tuple[int, bytes]:
        try:
            payload = json.loads(body.decode("utf-8"))
            username = payload["username"]
            password = payload["password"]
        except (ValueError, KeyError, TypeError, UnicodeDecodeError):
            return 400, json.dumps({"error": "malformed-body"}).encode("utf-8")
        if not isinstance(username, str) or not isinstance(password, str):
            return 400, json.dumps({"error": "malformed-body"}).encode("utf-8")
        if self.config.fixtures.get(username) == password:
            return 200, json.dumps({"ok": True}).encode("utf-8")
        return 401, json.dumps({"ok": False, "error": "invalid-credentials"}).encode(
            "utf-8"
        )

    @property
    def request_count(self) -> int:
        with self._count_lock:
            return self._count

    def start(self) -> str:
        host, port = parse_addr(self.config.listen_addr)
        server = _OriginHTTPServer((host, port), _Handler)
        server.app = self
        self._server = server
        self._bound_addr = (server.server_address[0], server.server_address[1])
        self._thread = threading.Thread(
            target=server.serve_forever, name="origin", daemon=True
        )
        self._thread.start()
        logger.info("origin listening on %s", self.address)
        return self.address

    @property
    def address(self) -> str:
        if self._bound_addr is None:
            raise RuntimeError("origin not started")
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


def main(argv: Optional[Iterable[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="trustgate-origin", description="Run the login origin stub."
    )
    parser.add_argument("--config", help="TOML or JSON config file")
    parser.add_argument("--listen", help="host:port (overrides config)")
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(list(argv) if argv is not None else None)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    config = (
        OriginConfig.from_dict(load_config_file(args.config))
        if args.config
        else OriginConfig()
    )
    if args.listen:
        config.listen_addr = args.listen
    origin = OriginServer(config)
    origin.start()
    print(f"origin listening on {origin.address}", flush=True)
    try:
        while True:
            time.sleep(3600)
    except KeyboardInterrupt:
        pass
    finally:
        origin.stop()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
