"""Trusted-relay network routing on top of per-edge key buffers.

Serve probabilities come from the edge's one-time-pad buffer versus the
offered load; flooding discovery enumerates every simple path; datagram
selection maximizes the product of edge probabilities; virtual-circuit
selection trades that product against hop count and then pins the chosen
path with per-relay commitment handles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace


class AlreadyReservedError(Exception):
    """Raised when a traffic spec tries to reserve a second circuit."""


@dataclass(frozen=True)
class TrafficSpec:
    source: str
    destination: str
    n_packets: int
    packet_len: int

    def __post_init__(self):
        if self.n_packets < 1:
            raise ValueError("n_packets must be >= 1")
        if self.packet_len < 1:
            raise ValueError("packet_len must be >= 1")

    def key(self) -> tuple:
        return (self.source, self.destination, self.n_packets, self.packet_len)


class NetworkGraph:
    """Undirected relay graph; each edge carries a key-buffer size in bits."""

    def __init__(self, nodes, edges):
        self.nodes = tuple(nodes)
        if len(set(self.nodes)) != len(self.nodes):
            raise ValueError("duplicate node identifiers")
        self.buffers: dict[frozenset, int] = {}
        self.adj: dict[str, list[str]] = {n: [] for n in self.nodes}
        for a, b, buffer_bits in edges:
            if a == b:
                raise ValueError(f"self-loop at {a}")
            if a not in self.adj or b not in self.adj:
                raise ValueError(f"edge ({a}, {b}) references unknown node")
            key = frozenset((a, b))
            if key in self.buffers:
                raise ValueError(f"duplicate edge ({a}, {b})")
            if buffer_bits < 0:
                raise ValueError("buffer_bits must be non-negative")
            self.buffers[key] = int(buffer_bits)
            self.adj[a].append(b)
            self.adj[b].append(a)
        for n in self.adj:
            self.adj[n].sort()

    @classmethod
    def from_json(cls, doc: dict) -> "NetworkGraph":
        try:
            nodes = doc["nodes"]
            edges = [(e["a"], e["b"], e["buffer_bits"]) for e in doc["edges"]]
        except (KeyError, TypeError) as exc:
            raise ValueError(f"malformed network document: {exc}") from exc
        if not nodes:
            raise ValueError("network has no nodes")
        return cls(nodes, edges)

    def buffer_bits(self, a: str, b: str) -> int:
        return self.buffers[frozenset((a, b))]


@dataclass(frozen=True)
class PathChoice:
    """A simple path with its per-edge serve probabilities and a score."""

    nodes: tuple[str, ...]
    edge_probs: tuple[float, ...]
    score: float = 0.0

    @property
    def hops(self) -> int:
        return len(self.nodes) - 1

    def product(self) -> float:
        return math.prod(self.edge_probs)

    @property
    def viable(self) -> bool:
        return all(p > 0.0 for p in self.edge_probs)


def serve_probability(buffer_bits: int, n_packets: int, packet_len: int) -> float:
    """Chance that one of ``n_packets`` length-L packets finds pad on the
    edge: b/(nL) when b < nL, else 1."""
    if n_packets < 1:
        raise ValueError("n_packets must be >= 1")
    if packet_len < 1:
        raise ValueError("packet_len must be >= 1")
    if buffer_bits < 0:
        raise ValueError("buffer_bits must be non-negative")
    demand = n_packets * packet_len
    if buffer_bits < demand:
        return buffer_bits / demand
    return 1.0


def _simple_paths(graph: NetworkGraph, src: str, dst: str) -> list[tuple[str, ...]]:
    paths = []
    seen = {src}
    route = [src]

    def dfs(node):
        if node == dst:
            paths.append(tuple(route))
            return
        for nxt in graph.adj[node]:
            if nxt not in seen:
                seen.add(nxt)
                route.append(nxt)
                dfs(nxt)
                route.pop()
                seen.remove(nxt)

    dfs(src)
    return sorted(paths)


def _edges_of(nodes: tuple[str, ...]):
    return [frozenset((a, b)) for a, b in zip(nodes, nodes[1:])]


def _build_choices(
    graph: NetworkGraph,
    traffic: TrafficSpec,
    paths: list[tuple[str, ...]],
) -> list[PathChoice]:
    load: dict[frozenset, int] = {}
    for nodes in paths:
        for edge in _edges_of(nodes):
            load[edge] = load.get(edge, 0) + 1
    choices = []
    for nodes in paths:
        probs = tuple(
            serve_probability(
                graph.buffers[edge],
                load[edge] * traffic.n_packets,
                traffic.packet_len,
            )
            for edge in _edges_of(nodes)
        )
        choices.append(PathChoice(nodes, probs, score=math.prod(probs)))
    return choices


def flood_discover(graph: NetworkGraph, traffic: TrafficSpec) -> list[PathChoice]:
    """Every simple path from source to destination.

    During discovery each edge's offered load is the number of candidate
    paths crossing it times ``n_packets``; the per-edge serve
    probabilities reflect that load.  Returns [] when no path exists.
    """
    if traffic.source not in graph.adj or traffic.destination not in graph.adj:
        raise ValueError("source or destination not in graph")
    paths = _simple_paths(graph, traffic.source, traffic.destination)
    return _build_choices(graph, traffic, paths)


def _tie_key(choice: PathChoice) -> tuple:
    return (choice.hops, choice.nodes)


def datagram_select(paths: list[PathChoice]) -> PathChoice:
    """Path with the maximum product of edge serve probabilities; ties go
    to fewer hops, then lexicographic node order."""
    if not paths:
        raise ValueError("empty path set")
    best = max(paths, key=lambda c: (c.product(),))
    top = [c for c in paths if c.product() == best.product()]
    chosen = min(top, key=_tie_key)
    return replace(chosen, score=chosen.product())


def vc_select(paths: list[PathChoice], alpha: float) -> PathChoice:
    """Virtual-circuit choice: maximize sum(log2 p_e) - alpha * hops.

    alpha = 0 reduces exactly to :func:`datagram_select`.  Paths with a
    zero-probability edge score -inf; if every candidate does, the
    returned choice has score -inf and ``viable`` False (no viable
    circuit), with the same tie-breaks as the datagram rule.
    """
    if not paths:
        raise ValueError("empty path set")
    if alpha < 0.0:
        raise ValueError("alpha must be non-negative")

    def score(c: PathChoice) -> float:
        if not c.viable:
            return -math.inf
        return sum(math.log2(p) for p in c.edge_probs) - alpha * c.hops

    best_score = max(score(c) for c in paths)
    top = [c for c in paths if score(c) == best_score]
    chosen = min(top, key=_tie_key)
    return replace(chosen, score=best_score)


class ReservationLedger:
    """Commitment handles per traffic spec; single-writer by contract."""

    def __init__(self):
        self._entries: dict[tuple, dict] = {}

    def is_reserved(self, traffic: TrafficSpec) -> bool:
        return traffic.key() in self._entries

    def record(self, traffic: TrafficSpec, entry: dict) -> None:
        if traffic.key() in self._entries:
            raise AlreadyReservedError(
                f"traffic {traffic.key()} already holds a committed circuit"
            )
        self._entries[traffic.key()] = entry

    def entry(self, traffic: TrafficSpec) -> dict:
        return self._entries[traffic.key()]


@dataclass
class ReservationReport:
    """Outcome of a circuit reservation, JSON-exportable."""

    path: tuple[str, ...]
    before_probs: tuple[float, ...]
    after_probs: tuple[float, ...]
    handles: list = field(default_factory=list)

    def to_json_dict(self) -> dict:
        return {
            "path": list(self.path),
            "before_probs": list(self.before_probs),
            "after_probs": list(self.after_probs),
            "handles": self.handles,
        }


def reserve_circuit(
    graph: NetworkGraph,
    chosen: PathChoice,
    all_paths: list[PathChoice],
    traffic: TrafficSpec,
    ledger: ReservationLedger | None = None,
    full: bool = False,
    seed: int = 0,
) -> ReservationReport:
    """Commit the source to ``chosen`` and release every other candidate.

    Each relay on the chosen path gets a commitment handle (a ledger stub
    in fast mode; a full commit-protocol session per relay when ``full``).
    Edges on non-chosen candidates drop their provisional load, so the
    chosen path's recomputed serve probabilities never decrease.
    """
    if chosen.nodes not in {c.nodes for c in all_paths}:
        raise ValueError("chosen path is not in the candidate set")
    if ledger is not None and ledger.is_reserved(traffic):
        raise AlreadyReservedError(
            f"traffic {traffic.key()} already holds a committed circuit"
        )

    after = tuple(
        serve_probability(graph.buffers[edge], traffic.n_packets, traffic.packet_len)
        for edge in _edges_of(chosen.nodes)
    )
    handles = []
    for i, relay in enumerate(chosen.nodes):
        handle = {
            "relay": relay,
            "handle": f"commit:{traffic.source}->{traffic.destination}:{relay}",
        }
        if full:
            # deferred import: routing stays usable without the protocol
            from .commitment_protocol import SessionConfig, run_session

            transcript = run_session(
                SessionConfig(seed=seed + i, frame_budget=200)
            )
            handle["session_status"] = transcript.status
        handles.append(handle)

    report = ReservationReport(
        path=chosen.nodes,
        before_probs=chosen.edge_probs,
        after_probs=after,
        handles=handles,
    )
    if ledger is not None:
        ledger.record(traffic, report.to_json_dict())
    return report
