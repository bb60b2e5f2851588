"""Experiment runners over a booted local network.

Each runner drives wallets against live gateways and returns an
ExperimentResult; given an output directory it also emits `rows.csv` (one
line per issued request), `summary.json`, and `plot.png`. Everything under
summary["stats"] is derived strictly from the row values written to the
CSV, so it can be recomputed from the emitted file and must match exactly;
summary["observed"] carries side-channel facts (origin counters, score
tables) that have no row representation.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import os
import queue
import random
import threading
import time
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import matplotlib

matplotlib.use("Agg")
from matplotlib import pyplot as plt  # noqa: E402  (backend must be set first)

import requests  # noqa: E402

from ..algorithms import SigAlgorithm  # noqa: E402
from ..token import token_wire_size, trust_score  # noqa: E402
from ..wallet import TransportError, Wallet, send  # noqa: E402
from .analysis import (  # noqa: E402
    boxplot_stats,
    conservation,
    is_monotone_segmented,
    moving_average,
    segment_phases,
)
from .network import Network, boot_network  # noqa: E402

logger = logging.getLogger("trustgate.simnet")

LOGIN_BODY = json.dumps({"username": "John Doe", "password": "johndoe"}).encode()

REQUEST_COLUMNS = [
    "seq",
    "user",
    "server",
    "attestations",
    "outcome",
    "status",
    "latency_seconds",
]


@dataclass(frozen=True)
class Row:
    seq: int
    user: str
    server: str
    attestations: int
    outcome: str
    status: int
    latency_seconds: float


@dataclass(frozen=True)
class UserSpec:
    count: int = 2
    spawn_interval: float = 0.0
    behavior: str = "honest"

    def __post_init__(self):
        if self.count < 0:
            raise ValueError("user count must be >= 0")
        if self.spawn_interval < 0:
            raise ValueError("spawn interval must be >= 0")
        if self.behavior not in ("honest", "tamper"):
            raise ValueError(f"unknown behavior {self.behavior!r}")


@dataclass
class ExperimentConfig:
    n_servers: int = 5
    algorithm: SigAlgorithm = SigAlgorithm.ED25519
    users: UserSpec = field(default_factory=UserSpec)
    requests_per_user: int = 50
    seed: int = 0
    think_time: float = 0.05
    request_pacing: float = 0.02
    spawn_start_delay: float = 0.0
    probe_requests: int = 800
    moving_average_window: int = 100

    def __post_init__(self):
        if self.n_servers < 1:
            raise ValueError("n_servers must be >= 1")
        if self.requests_per_user < 1:
            raise ValueError("requests_per_user must be >= 1")
        if self.probe_requests < 1:
            raise ValueError("probe_requests must be >= 1")
        if self.think_time < 0 or self.request_pacing < 0 or self.spawn_start_delay < 0:
            raise ValueError("delays must be >= 0")
        if self.moving_average_window < 1:
            raise ValueError("moving_average_window must be >= 1")

    @classmethod
    def from_dict(
        cls, data: Dict[str, Any], base: Optional["ExperimentConfig"] = None
    ) -> "ExperimentConfig":
        config = replace(base) if base is not None else cls()
        known = {
            "n_servers",
            "algorithm",
            "users",
            "requests_per_user",
            "seed",
            "think_time",
            "request_pacing",
            "spawn_start_delay",
            "probe_requests",
            "moving_average_window",
        }
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown experiment config keys: {sorted(unknown)}")
        updates: Dict[str, Any] = dict(data)
        if "algorithm" in updates:
            updates["algorithm"] = SigAlgorithm.parse(updates["algorithm"])
        if "users" in updates:
            user_updates = dict(updates["users"])
            updates["users"] = replace(config.users, **user_updates)
        return replace(config, **updates)


def default_config(experiment: str) -> ExperimentConfig:
    """Desk-scale defaults per experiment (smaller than the original
    measurements but preserving their structure)."""
    if experiment == "tamper":
        return ExperimentConfig(requests_per_user=50)
    if experiment == "latency":
        return ExperimentConfig(requests_per_user=500)
    if experiment == "ramp":
        # Calibrated for a single-core host: peak demand sits near (but not
        # past) what the in-process fleet can serve, so latency climbs
        # visibly without a runaway queue; the spawn delay leaves a clean
        # unloaded phase at the head of the probe series.
        return ExperimentConfig(
            users=UserSpec(count=200, spawn_interval=0.1),
            think_time=0.5,
            request_pacing=0.03,
            spawn_start_delay=2.0,
            probe_requests=800,
        )
    raise ValueError(f"unknown experiment {experiment!r}")


@dataclass
class ExperimentResult:
    name: str
    columns: List[str]
    rows: List[Any]  # Row instances, or plain tuples matching columns
    summary: Dict[str, Any]

    def row_tuples(self) -> List[Tuple]:
        return [
            dataclasses.astuple(row) if isinstance(row, Row) else tuple(row)
            for row in self.rows
        ]


# -- deterministic schedules ---------------------------------------------------


@dataclass(frozen=True)
class PlannedRequest:
    user: str
    server_index: int
    tamper: Optional[str] = None


def plan_tamper(cfg: ExperimentConfig) -> List[PlannedRequest]:
    """Schedule for the tamper experiment: the tampering user first, then
    the honest user, each cycling through all servers. Tamper positions
    (which attestation, which signature byte) come from the seed."""
    rng = random.Random(cfg.seed)
    plan = []
    for i in range(cfg.requests_per_user):
        attestation = rng.randrange(cfg.n_servers)
        byte_index = rng.randrange(cfg.algorithm.signature_len)
        plan.append(
            PlannedRequest("tamper", i % cfg.n_servers, f"sig{attestation}:{byte_index}")
        )
    for i in range(cfg.requests_per_user):
        plan.append(PlannedRequest("honest", i % cfg.n_servers, None))
    return plan


def plan_latency(cfg: ExperimentConfig) -> List[PlannedRequest]:
    plan = [
        PlannedRequest("zero", i % cfg.n_servers, None)
        for i in range(cfg.requests_per_user)
    ]
    plan.extend(
        PlannedRequest("full", i % cfg.n_servers, None)
        for i in range(cfg.requests_per_user)
    )
    return plan


# -- shared plumbing -----------------------------------------------------------


class _Collector:
    """Single-writer row sink fed by any number of producer threads."""

    def __init__(self):
        self._queue: queue.Queue = queue.Queue()
        self._rows: List[Row] = []
        self._thread = threading.Thread(target=self._drain, daemon=True)
        self._thread.start()

    def _drain(self):
        while True:
            item = self._queue.get()
            if item is None:
                return
            user, server, attestations, outcome, status, latency = item
            self._rows.append(
                Row(
                    seq=len(self._rows),
                    user=user,
                    server=server,
                    attestations=attestations,
                    outcome=outcome,
                    status=status,
                    latency_seconds=latency,
                )
            )

    def put(self, user, server, attestations, outcome, status, latency):
        self._queue.put((user, server, attestations, outcome, status, latency))

    def finish(self) -> List[Row]:
        self._queue.put(None)
        self._thread.join()
        return self._rows


def _outcome_for(status: int) -> str:
    if status == 0:
        return "error"
    if status == 403:
        return "denied"
    return "forwarded"


def _send_once(
    wallet: Wallet,
    base_url: str,
    session: requests.Session,
    tamper: Optional[str] = None,
    merge_grants: bool = True,
    timeout: float = 30.0,
) -> Tuple[int, float]:
    started = time.perf_counter()
    try:
        result = send(
            wallet,
            "POST",
            f"{base_url}/login",
            LOGIN_BODY,
            tamper=tamper,
            tofu=False,
            merge_grants=merge_grants,
            session=session,
            timeout=timeout,
        )
        return result.status, round(result.latency_seconds, 9)
    except TransportError:
        return 0, round(time.perf_counter() - started, 9)


def _fresh_wallet(cfg: ExperimentConfig, network: Network) -> Wallet:
    wallet = Wallet.create(cfg.algorithm)
    wallet.directory = network.directory.copy()
    return wallet


def _warm_up(wallet: Wallet, network: Network, session: requests.Session) -> None:
    """Unmeasured pass over every gateway so the wallet holds one
    attestation per server before measurement starts."""
    for gateway in network.gateways:
        result = send(
            wallet,
            "POST",
            f"{gateway.base_url}/login",
            LOGIN_BODY,
            tofu=False,
            session=session,
        )
        if result.status != 200 or not result.granted:
            raise RuntimeError(
                f"warm-up against {gateway.server_id} failed "
                f"(status {result.status}, granted {result.granted})"
            )
    if len(wallet.token.attestations) != len(network.nodes):
        raise RuntimeError("warm-up did not produce one attestation per server")


def _config_echo(cfg: ExperimentConfig) -> Dict[str, Any]:
    echo = dataclasses.asdict(cfg)
    echo["algorithm"] = cfg.algorithm.value
    return echo


def _group_latencies(rows: Sequence[Row], user: str) -> List[float]:
    return [row.latency_seconds for row in rows if row.user == user]


# -- experiment 1: tampering vs honest user -------------------------------------


def run_tamper_experiment(
    cfg: ExperimentConfig, out_dir: Optional[str] = None
) -> ExperimentResult:
    """Two sequential users, 50 requests each across all servers: one sends
    corrupted signatures every time, one behaves. The tampering user must
    be denied on every request without the origin ever seeing traffic."""
    network = boot_network(cfg.n_servers, cfg.algorithm)
    try:
        network.health_check()
        plan = plan_tamper(cfg)
        collector = _Collector()
        session = requests.Session()

        tamper_wallet = _fresh_wallet(cfg, network)
        _warm_up(tamper_wallet, network, session)
        counts_before = network.origin_counts()
        for planned in (p for p in plan if p.user == "tamper"):
            gateway = network.gateways[planned.server_index]
            presented = len(tamper_wallet.token.attestations)
            status, latency = _send_once(
                tamper_wallet, gateway.base_url, session, tamper=planned.tamper
            )
            collector.put(
                "tamper",
                gateway.server_id,
                presented,
                _outcome_for(status),
                status,
                latency,
            )
        tamper_origin_contacts = sum(network.origin_counts()) - sum(counts_before)

        honest_wallet = _fresh_wallet(cfg, network)
        for planned in (p for p in plan if p.user == "honest"):
            gateway = network.gateways[planned.server_index]
            presented = len(honest_wallet.token.attestations)
            status, latency = _send_once(honest_wallet, gateway.base_url, session)
            collector.put(
                "honest",
                gateway.server_id,
                presented,
                _outcome_for(status),
                status,
                latency,
            )
        session.close()

        rows = collector.finish()
        tamper_latencies = _group_latencies(rows, "tamper")
        honest_latencies = _group_latencies(rows, "honest")
        honest_score = trust_score(honest_wallet.token, network.directory)[0]
        reported = {}
        for gateway in network.gateways:
            entry = gateway.score_table.get(honest_wallet.key.public_key)
            reported[gateway.server_id] = entry[0] if entry else None

        stats = {
            "conservation": conservation(row.outcome for row in rows),
            "groups": {
                "tamper": boxplot_stats(tamper_latencies),
                "honest": boxplot_stats(honest_latencies),
            },
            "tamper_denied": sum(1 for r in rows if r.user == "tamper" and r.outcome == "denied"),
            "honest_forwarded": sum(
                1 for r in rows if r.user == "honest" and r.outcome == "forwarded"
            ),
        }
        summary = {
            "experiment": "tamper",
            "config": _config_echo(cfg),
            "stats": stats,
            "observed": {
                "origin_contacts_during_tamper": tamper_origin_contacts,
                "honest_final_score": honest_score,
                "gateway_reported_scores": reported,
            },
        }
        result = ExperimentResult("tamper", REQUEST_COLUMNS, rows, summary)
        if out_dir:
            write_result(result, out_dir)
        return result
    finally:
        network.stop()


# -- experiment 2: latency by token size ----------------------------------------


def run_latency_comparison(
    cfg: ExperimentConfig, out_dir: Optional[str] = None
) -> ExperimentResult:
    """Two users with frozen tokens (0 attestations vs one per server) each
    issue the configured number of requests; per-request end-to-end latency
    and the gateways' internal verification-phase timings are reported."""
    network = boot_network(cfg.n_servers, cfg.algorithm)
    try:
        network.health_check()
        collector = _Collector()
        session = requests.Session()

        zero_wallet = _fresh_wallet(cfg, network)
        full_wallet = _fresh_wallet(cfg, network)
        _warm_up(full_wallet, network, session)
        for gateway in network.gateways:
            gateway.clear_records()  # drop warm-up from verification stats

        wallets = {"zero": zero_wallet, "full": full_wallet}
        for planned in plan_latency(cfg):
            gateway = network.gateways[planned.server_index]
            wallet = wallets[planned.user]
            status, latency = _send_once(
                wallet, gateway.base_url, session, merge_grants=False
            )
            collector.put(
                planned.user,
                gateway.server_id,
                len(wallet.token.attestations),
                _outcome_for(status),
                status,
                latency,
            )
        session.close()

        rows = collector.finish()
        zero_latencies = _group_latencies(rows, "zero")
        full_latencies = _group_latencies(rows, "full")
        zero_stats = boxplot_stats(zero_latencies)
        full_stats = boxplot_stats(full_latencies)

        verify_micros: Dict[str, List[int]] = {"zero": [], "full": []}
        subjects = {
            "zero": zero_wallet.key.public_key,
            "full": full_wallet.key.public_key,
        }
        for gateway in network.gateways:
            for record in gateway.records():
                for user, subject in subjects.items():
                    if record.subject_pk == subject and record.outcome == "forwarded":
                        verify_micros[user].append(record.verify_micros)

        stats = {
            "conservation": conservation(row.outcome for row in rows),
            "groups": {"zero": zero_stats, "full": full_stats},
            "mean_diff_seconds": full_stats["mean"] - zero_stats["mean"],
            "median_diff_seconds": full_stats["median"] - zero_stats["median"],
        }
        summary = {
            "experiment": "latency",
            "config": _config_echo(cfg),
            "stats": stats,
            "observed": {
                "verify_micros": {
                    user: boxplot_stats(values) if values else None
                    for user, values in verify_micros.items()
                },
                "verify_mean_diff_micros": (
                    (sum(verify_micros["full"]) / len(verify_micros["full"]))
                    - (sum(verify_micros["zero"]) / len(verify_micros["zero"]))
                    if verify_micros["zero"] and verify_micros["full"]
                    else None
                ),
            },
        }
        result = ExperimentResult("latency", REQUEST_COLUMNS, rows, summary)
        if out_dir:
            write_result(result, out_dir)
        return result
    finally:
        network.stop()


# -- experiment 3: load ramp ------------------------------------------------------


def run_load_ramp(
    cfg: ExperimentConfig, out_dir: Optional[str] = None
) -> ExperimentResult:
    """Spawn background users at a fixed interval while one pre-warmed probe
    user is measured throughout. Background users stick to one server each
    and loop until the probe finishes; the probe's latency series carries
    the trend that gets smoothed and segmented into phases."""
    network = boot_network(cfg.n_servers, cfg.algorithm)
    truncated: Optional[str] = None
    try:
        network.health_check()
        collector = _Collector()
        stop_event = threading.Event()

        probe_session = requests.Session()
        probe_wallet = _fresh_wallet(cfg, network)
        _warm_up(probe_wallet, network, probe_session)

        def background_user(index: int) -> None:
            wallet = _fresh_wallet(cfg, network)
            gateway = network.gateways[index % cfg.n_servers]
            with requests.Session() as user_session:
                while not stop_event.is_set():
                    presented = len(wallet.token.attestations)
                    status, latency = _send_once(
                        wallet, gateway.base_url, user_session, timeout=60.0
                    )
                    collector.put(
                        f"u{index:03d}",
                        gateway.server_id,
                        presented,
                        _outcome_for(status),
                        status,
                        latency,
                    )
                    if stop_event.wait(cfg.think_time):
                        break

        workers: List[threading.Thread] = []

        def spawner() -> None:
            if cfg.spawn_start_delay and stop_event.wait(cfg.spawn_start_delay):
                return
            for index in range(cfg.users.count):
                if stop_event.is_set():
                    return
                worker = threading.Thread(
                    target=background_user, args=(index,), daemon=True
                )
                worker.start()
                workers.append(worker)
                if stop_event.wait(cfg.users.spawn_interval):
                    return

        spawn_thread = threading.Thread(target=spawner, daemon=True)
        spawn_thread.start()

        try:
            for i in range(cfg.probe_requests):
                gateway = network.gateways[i % cfg.n_servers]
                presented = len(probe_wallet.token.attestations)
                status, latency = _send_once(
                    probe_wallet, gateway.base_url, probe_session, timeout=60.0
                )
                collector.put(
                    "probe",
                    gateway.server_id,
                    presented,
                    _outcome_for(status),
                    status,
                    latency,
                )
                if cfg.request_pacing:
                    time.sleep(cfg.request_pacing)
        except (MemoryError, OSError) as exc:
            truncated = f"{type(exc).__name__}: {exc}"
            logger.error("load ramp truncated: %s", truncated)
        finally:
            stop_event.set()
            spawn_thread.join(timeout=30)
            for worker in workers:
                worker.join(timeout=60)
            probe_session.close()

        rows = collector.finish()
        probe_latencies = _group_latencies(rows, "probe")
        trend = moving_average(probe_latencies, cfg.moving_average_window)
        segments = segment_phases(trend)
        stats = {
            "conservation": conservation(row.outcome for row in rows),
            "probe": boxplot_stats(probe_latencies),
            "moving_average_window": cfg.moving_average_window,
            "moving_average": trend,
            "segments": segments,
            "monotone_segmented": is_monotone_segmented(segments),
            "first_phase_mean": segments[0]["mean"],
        }
        summary = {
            "experiment": "ramp",
            "config": _config_echo(cfg),
            "stats": stats,
            "observed": {
                "background_users_spawned": len(workers),
                "truncated": truncated,
            },
        }
        result = ExperimentResult("ramp", REQUEST_COLUMNS, rows, summary)
        if out_dir:
            write_result(result, out_dir)
        return result
    finally:
        network.stop()


# -- experiment 4: size report -----------------------------------------------------


def run_size_report(max_n: int = 100, out_dir: Optional[str] = None) -> ExperimentResult:
    """Token wire size for every algorithm and attestation count 0..max_n."""
    if max_n < 1:
        raise ValueError("max_n must be >= 1")
    columns = ["algorithm", "attestations", "bytes"]
    rows: List[Tuple] = []
    series: Dict[str, List[int]] = {}
    for algorithm in SigAlgorithm:
        sizes = [token_wire_size(algorithm, n) for n in range(max_n + 1)]
        series[algorithm.value] = sizes
        rows.extend((algorithm.value, n, size) for n, size in enumerate(sizes))
    stats = {
        algorithm.value: {
            "intercept": series[algorithm.value][0],
            "slope": series[algorithm.value][1] - series[algorithm.value][0],
            "max": series[algorithm.value][-1],
        }
        for algorithm in SigAlgorithm
    }
    summary = {
        "experiment": "sizes",
        "max_n": max_n,
        "stats": stats,
    }
    result = ExperimentResult("sizes", columns, rows, summary)
    if out_dir:
        write_result(result, out_dir)
    return result


# -- emission --------------------------------------------------------------------


def write_result(result: ExperimentResult, out_dir: str) -> Dict[str, str]:
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "rows": os.path.join(out_dir, "rows.csv"),
        "summary": os.path.join(out_dir, "summary.json"),
        "plot": os.path.join(out_dir, "plot.png"),
    }
    import csv

    with open(paths["rows"], "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(result.columns)
        writer.writerows(result.row_tuples())
    with open(paths["summary"], "w", encoding="utf-8") as fh:
        json.dump(result.summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _PLOTTERS[result.name](result, paths["plot"])
    logger.info("wrote %s results to %s", result.name, out_dir)
    return paths


def _plot_tamper(result: ExperimentResult, path: str) -> None:
    fig, ax = plt.subplots(figsize=(8, 4.5))
    for user, color in (("tamper", "tab:red"), ("honest", "tab:green")):
        latencies = [
            1000 * row.latency_seconds for row in result.rows if row.user == user
        ]
        ax.plot(range(len(latencies)), latencies, ".", label=user, color=color, alpha=0.7)
    ax.set_xlabel("request #")
    ax.set_ylabel("latency (ms)")
    ax.set_title("Per-request latency: tampering vs honest user")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _plot_latency(result: ExperimentResult, path: str) -> None:
    groups = ["zero", "full"]
    data = [
        [1000 * row.latency_seconds for row in result.rows if row.user == user]
        for user in groups
    ]
    fig, ax = plt.subplots(figsize=(6, 4.5))
    ax.boxplot(data, tick_labels=["0 attestations", "full token"], showfliers=True)
    ax.set_ylabel("latency (ms)")
    ax.set_title("End-to-end latency by token size")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _plot_ramp(result: ExperimentResult, path: str) -> None:
    probe = [1000 * row.latency_seconds for row in result.rows if row.user == "probe"]
    trend = [1000 * v for v in result.summary["stats"]["moving_average"]]
    fig, ax = plt.subplots(figsize=(8, 4.5))
    ax.plot(range(len(probe)), probe, ".", color="0.7", markersize=2, label="probe request")
    ax.plot(range(len(trend)), trend, color="tab:blue", label="moving average")
    for segment in result.summary["stats"]["segments"][1:]:
        ax.axvline(segment["start"], color="tab:orange", linestyle="--", linewidth=1)
    ax.set_xlabel("probe request #")
    ax.set_ylabel("latency (ms)")
    ax.set_title("Probe latency under user ramp")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _plot_sizes(result: ExperimentResult, path: str) -> None:
    fig, ax = plt.subplots(figsize=(7, 4.5))
    by_algorithm: Dict[str, List[Tuple[int, int]]] = {}
    for algorithm, n, size in result.rows:
        by_algorithm.setdefault(algorithm, []).append((n, size))
    for algorithm, points in by_algorithm.items():
        xs, ys = zip(*sorted(points))
        ax.plot(xs, ys, label=algorithm)
    ax.set_xlabel("attestations")
    ax.set_ylabel("token size (bytes)")
    ax.set_title("Token wire size by algorithm")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


_PLOTTERS = {
    "tamper": _plot_tamper,
    "latency": _plot_latency,
    "ramp": _plot_ramp,
    "sizes": _plot_sizes,
}
