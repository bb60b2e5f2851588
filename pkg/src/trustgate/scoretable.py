"""Per-gateway persistent table of user public keys and their last scores.

Storage is a line-oriented append log, one entry per update:

    <b64url public key> <score> <unix micros>

The log is compacted on startup (latest entry per key wins, file rewritten
atomically), then appended to. A write failure must never fail the request
being served; it is logged and the in-memory table stays authoritative.
"""

from __future__ import annotations

import logging
import os
import threading
from typing import Dict, List, Optional, Tuple

from .token import b64u_decode, b64u_encode

logger = logging.getLogger("trustgate.scoretable")


class ScoreTable:
    def __init__(self, path: Optional[str] = None):
        self._path = path
        self._lock = threading.Lock()
        self._entries: Dict[bytes, Tuple[int, int]] = {}
        if path:
            self._load_and_compact(path)

    def _load_and_compact(self, path: str) -> None:
        if os.path.exists(path):
            with open(path, "r", encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    try:
                        pk_b64, score_text, micros_text = line.split(" ")
                        self._entries[b64u_decode(pk_b64)] = (
                            int(score_text),
                            int(micros_text),
                        )
                    except (ValueError, KeyError):
                        logger.warning("skipping corrupt score line: %r", line)
        tmp = path + ".tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            for pk, (score, micros) in self._entries.items():
                fh.write(f"{b64u_encode(pk)} {score} {micros}\n")
        os.replace(tmp, path)

    def update(self, public_key: bytes, score: int, timestamp_micros: int) -> None:
        with self._lock:
            self._entries[public_key] = (score, timestamp_micros)
            if self._path:
                try:
                    with open(self._path, "a", encoding="utf-8") as fh:
                        fh.write(
                            f"{b64u_encode(public_key)} {score} {timestamp_micros}\n"
                        )
                except OSError as exc:
                    logger.error("score table append failed: %s", exc)

    def get(self, public_key: bytes) -> Optional[Tuple[int, int]]:
        with self._lock:
            return self._entries.get(public_key)

    def __len__(self) -> int:
        with self._lock:
            return len(self._entries)

    def snapshot(self) -> List[Tuple[bytes, int]]:
        """Point-in-time (public_key, score) listing, highest score first;
        ties break on the key bytes for determinism."""
        with self._lock:
            items = [(pk, score) for pk, (score, _) in self._entries.items()]
        items.sort(key=lambda item: (-item[1], item[0]))
        return items

    def render_snapshot(self) -> str:
        """The snapshot as stable text, one `<b64url pk> <score>` per line."""
        return "".join(
            f"{b64u_encode(pk)} {score}\n" for pk, score in self.snapshot()
        )
