"""Mesh network-on-chip timing model.

2D mesh, X-then-Y dimension-order routing, one event per flit, one flit per
link per cycle. Multicast flits follow the union of the XY paths to all
destinations and replicate at branch routers.

Two traffic phases exist per layer and they get different treatment:

* feed (storage PE -> compute PEs): a single source injecting at most one
  flit per cycle onto one shared tree can never self-collide, so arrivals are
  computed directly as injection + hops * hop_latency
* collect (compute PEs -> storage PE): many sources contend near the storage
  node; flits take a deterministic queued walk with one-flit-per-cycle links
  and age-ordered arbitration
"""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass(frozen=True)
class MeshConfig:
    rows: int
    cols: int
    hop_latency: int = 1

    @property
    def nodes(self) -> int:
        return self.rows * self.cols


@dataclass(slots=True)
class Flit:
    src: int
    dst: int          # primary destination (multicast carries the dest set separately)
    inject_cycle: int
    seq: int = 0
    payload: object = None


def node_coords(node: int, mesh: MeshConfig) -> tuple:
    """(x, y) = (column, row) of a node id laid out row-major."""
    return node % mesh.cols, node // mesh.cols


def route(src: int, dst: int, mesh: MeshConfig) -> list:
    """Node sequence of the X-then-Y path, endpoints included."""
    if not (0 <= src < mesh.nodes and 0 <= dst < mesh.nodes):
        raise ValueError(f"node outside {mesh.rows}x{mesh.cols} mesh")
    sx, sy = node_coords(src, mesh)
    dx, dy = node_coords(dst, mesh)
    path = [src]
    x, y = sx, sy
    while x != dx:
        x += 1 if dx > x else -1
        path.append(y * mesh.cols + x)
    while y != dy:
        y += 1 if dy > y else -1
        path.append(y * mesh.cols + x)
    return path


def hop_count(src: int, dst: int, mesh: MeshConfig) -> int:
    sx, sy = node_coords(src, mesh)
    dx, dy = node_coords(dst, mesh)
    return abs(sx - dx) + abs(sy - dy)


def multicast_tree(src: int, dests, mesh: MeshConfig):
    """Union of the XY paths from src to each destination.

    Returns (links, hops) where links is the set of directed (a, b) pairs the
    tree uses (each carries one flit copy per multicast) and hops maps each
    destination to its distance down the tree.
    """
    links = set()
    hops = {}
    for d in dests:
        path = route(src, d, mesh)
        hops[d] = len(path) - 1
        for a, b in zip(path, path[1:]):
            links.add((a, b))
    return links, hops


@dataclass
class NocTelemetry:
    flits: int = 0
    flit_hops: int = 0
    queue_delay_total: int = 0
    queue_delay_max: int = 0

    def merge(self, other: "NocTelemetry"):
        self.flits += other.flits
        self.flit_hops += other.flit_hops
        self.queue_delay_total += other.queue_delay_total
        self.queue_delay_max = max(self.queue_delay_max, other.queue_delay_max)


def feed_arrivals(n_flits: int, src: int, dests, mesh: MeshConfig, start_cycle: int):
    """Arrival schedule for the multicast feed phase.

    Flit i leaves the source at start_cycle + i (single injection port) and
    reaches destination d hops[d] * hop_latency cycles later. Returns
    ({dest: [arrival cycles]}, NocTelemetry). n_flits counts the payload
    events plus any terminal marker the caller appends.
    """
    links, hops = multicast_tree(src, dests, mesh)
    arrivals = {d: [start_cycle + i + hops[d] * mesh.hop_latency for i in range(n_flits)]
                for d in dests}
    tele = NocTelemetry(flits=n_flits, flit_hops=n_flits * len(links))
    return arrivals, tele


def collect_arrivals(flits: list, dst: int, mesh: MeshConfig):
    """Queued walk of collection flits to one destination.

    flits: list of Flit with src and inject_cycle (ready time at the source
    router). Discrete-event walk: each link carries one flit per cycle and is
    work-conserving; when several flits want the same link in the same cycle,
    the oldest (earliest inject, then source id, then sequence) wins. Returns
    a list of (arrival_cycle, flit) plus telemetry. Per-source FIFO order is
    preserved because a source injects in sequence over one fixed path.
    """
    import heapq

    paths = {}
    heap = []
    for f in flits:
        path = route(f.src, dst, mesh)
        paths[id(f)] = path
        heapq.heappush(heap, (f.inject_cycle, f.inject_cycle, f.src, f.seq, 0, id(f), f))
    last_use: dict = {}
    out = []
    tele = NocTelemetry()
    while heap:
        ready, inject, src, seq, idx, _, f = heapq.heappop(heap)
        path = paths[id(f)]
        link = (path[idx], path[idx + 1])
        free = last_use.get(link, ready - 1) + 1
        if ready < free:
            heapq.heappush(heap, (free, inject, src, seq, idx, id(f), f))
            continue
        last_use[link] = ready
        arrive = ready + mesh.hop_latency
        if idx + 2 == len(path):
            hops = len(path) - 1
            delay = arrive - (f.inject_cycle + hops * mesh.hop_latency)
            tele.flits += 1
            tele.flit_hops += hops
            tele.queue_delay_total += delay
            tele.queue_delay_max = max(tele.queue_delay_max, delay)
            out.append((arrive, f))
        else:
            heapq.heappush(heap, (arrive, inject, src, seq, idx + 1, id(f), f))
    out.sort(key=lambda p: (p[0], p[1].src, p[1].seq))
    return out, tele
