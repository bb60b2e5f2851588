"""Boot and tear down a local fleet of gateway+origin pairs.

Every node binds port 0, so the OS hands out free ports and parallel
networks never collide. The trust directory is assembled the same way a
real client would build it: by fetching each gateway's pubkey endpoint
over HTTP, then pushing the combined directory to every gateway so
cross-node attestations verify.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, Optional

import requests

from ..algorithms import SigAlgorithm
from ..gateway import GatewayConfig, GatewayPolicy, TrustGateway
from ..origin import OriginServer
from ..token import TrustDirectory
from ..wallet import fetch_directory_entry

logger = logging.getLogger("trustgate.simnet")


@dataclass
class Node:
    gateway: TrustGateway
    origin: OriginServer


class Network:
    def __init__(self, nodes: List[Node], directory: TrustDirectory):
        self.nodes = nodes
        self.directory = directory

    @property
    def gateways(self) -> List[TrustGateway]:
        return [node.gateway for node in self.nodes]

    @property
    def origins(self) -> List[OriginServer]:
        return [node.origin for node in self.nodes]

    def origin_counts(self) -> List[int]:
        return [origin.request_count for origin in self.origins]

    def health_check(self, session: Optional[requests.Session] = None) -> None:
        """Probe every node; raises RuntimeError if anything is unhealthy."""
        requester = session or requests
        for node in self.nodes:
            try:
                fetch_directory_entry(node.gateway.base_url, session=session)
                response = requester.get(f"{node.origin.base_url}/health", timeout=5)
                response.raise_for_status()
            except Exception as exc:
                raise RuntimeError(
                    f"node {node.gateway.server_id} failed health check: {exc}"
                ) from exc

    def refresh_directory(self, session: Optional[requests.Session] = None) -> TrustDirectory:
        """Re-fetch every gateway's current key (picking up rotations) and
        push the combined directory to all gateways."""
        directory = TrustDirectory()
        for node in self.nodes:
            server_id, algorithm, public_key = fetch_directory_entry(
                node.gateway.base_url, session=session
            )
            directory.set_entry(server_id, algorithm, public_key)
        for node in self.nodes:
            node.gateway.set_directory(directory)
        self.directory = directory
        return directory

    def stop(self) -> None:
        for node in self.nodes:
            node.gateway.stop()
            node.origin.stop()


def boot_network(
    n_servers: int,
    algorithm: SigAlgorithm = SigAlgorithm.ED25519,
    policy: Optional[GatewayPolicy] = None,
    server_prefix: str = "s",
) -> Network:
    if n_servers < 1:
        raise ValueError("n_servers must be >= 1")
    nodes: List[Node] = []
    try:
        for i in range(1, n_servers + 1):
            origin = OriginServer()
            origin.start()
            gateway = TrustGateway(
                GatewayConfig(
                    server_id=f"{server_prefix}{i}",
                    upstream_addr=origin.address,
                    algorithm=algorithm,
                    policy=policy or GatewayPolicy(),
                )
            )
            gateway.start()
            nodes.append(Node(gateway=gateway, origin=origin))
    except Exception:
        for node in nodes:
            node.gateway.stop()
            node.origin.stop()
        raise

    with requests.Session() as session:
        directory = TrustDirectory()
        for node in nodes:
            server_id, alg, public_key = fetch_directory_entry(
                node.gateway.base_url, session=session
            )
            directory.set_entry(server_id, alg, public_key)
    for node in nodes:
        node.gateway.set_directory(directory)
    network = Network(nodes, directory)
    logger.info(
        "booted %d nodes on %s", n_servers, [n.gateway.address for n in nodes]
    )
    return network
