"""Network-level cycle simulation.

Layers run to a barrier, matching an accelerator that reloads weights
between layers. Per layer:

1. the storage PE scans the activation tensor into events and multicasts
   them over the mesh to every PE mapped to the layer
2. each PE runs its pipeline model to completion
3. fired outputs flow back to the storage PE, followed by one
   end-of-stream marker per PE; the layer ends when the last marker lands
4. the storage PE rebuilds the activation tensor from the fired records
   (everything else sits at the fire threshold)

Standalone max-pool layers are folded into the storage PE's scan at zero
cycle cost. PEs within a layer interact only through precomputed arrival
times, so simulating them on worker threads is bit-identical to the serial
walk.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .events import event_stream
from .mapping import MappedNetwork, map_network
from .metrics import (
    EnergyBreakdown,
    EnergyModel,
    LayerStats,
    SimReport,
    counter_energy,
    dram_weight_load_energy,
    new_report,
)
from .model import HardwareConfig, NetworkSpec, Tensor, WeightStore
from .noc import Flit, MeshConfig, collect_arrivals, feed_arrivals
from .oracle import dense_maxpool, dense_network
from .pe import PeCounters, PeLayerSim


@dataclass
class SimResult:
    output: Tensor
    report: SimReport
    mapped: MappedNetwork
    layer_outputs: list = field(default_factory=list)


def _rebuild_tensor(layer, fired) -> Tensor:
    shape = layer.output_shape()
    arr = np.full(shape, np.int8(layer.fire_threshold), dtype=np.int8)
    if layer.kind == "conv":
        for r in fired:
            arr[r.channel, r.y, r.x] = np.int8(r.value)
    else:
        for r in fired:
            arr[r.neuron] = np.int8(r.value)
    return Tensor(arr)


def _layer_utilization(pes, multipliers):
    busy = sum(p.c.busy_lane_cycles for p in pes)
    active = sum(p.c.active_cycles for p in pes)
    total = sum(p.c.total_cycles for p in pes)
    ua = busy / (multipliers * active) if active else 0.0
    ut = busy / (multipliers * total) if total else 0.0
    return ua, ut


def simulate_network(net: NetworkSpec, weights: WeightStore, inp: Tensor,
                     hw: HardwareConfig | None = None,
                     energy: EnergyModel | None = None,
                     seed: int = 0,
                     parallel_pes: bool = False,
                     extra_digest: tuple = ()) -> SimResult:
    hw = hw or HardwareConfig()
    energy = energy or EnergyModel()
    mapped = map_network(net, hw)
    mesh = MeshConfig(mapped.grid_rows, mapped.grid_cols, hop_latency=hw.hop_latency)
    storage = mapped.storage_pe

    report = new_report(net.name, hw, energy, seed, extra_digest)
    report.num_pes_used = mapped.compute_pes + 1

    cur = inp
    now = 0
    layer_outputs = []
    wi = 0   # parameterized-layer cursor into the weight store

    for li, layer in enumerate(net.layers):
        if layer.kind == "maxpool":
            g = layer.geometry
            cur = Tensor(dense_maxpool(cur.data, g.window, g.stride))
            layer_outputs.append(cur)
            report.layers.append(LayerStats(
                index=li, name=layer.name or f"layer{li}", kind="maxpool",
                pe_count=0, cycles=0, counters=PeCounters(),
                energy=EnergyBreakdown(), utilization_active=0.0,
                utilization_total=0.0))
            continue

        warr = weights.arrays[wi]
        wi += 1
        mapping = mapped.layers[li]
        nodes = [a.pe for a in mapping.assignments]

        events, enc_stats = event_stream(cur, layer.geometry, layer_index=li)
        times, feed_tel = feed_arrivals(len(events), storage, nodes, mesh, now)

        pes = []
        for a in mapping.assignments:
            arrivals = list(zip(times[a.pe], events))
            pes.append(PeLayerSim(hw, layer, warr, a.owned, arrivals, now))
        if parallel_pes and len(pes) > 1:
            with ThreadPoolExecutor(max_workers=len(pes)) as pool:
                list(pool.map(lambda p: p.run(), pes))
        else:
            for p in pes:
                p.run()

        flits = []
        for node, p in zip(nodes, pes):
            for i, r in enumerate(p.fired):
                flits.append(Flit(src=node, dst=storage, inject_cycle=r.emit_cycle,
                                  seq=i, payload=r))
            flits.append(Flit(src=node, dst=storage, inject_cycle=p.end_cycle + 1,
                              seq=len(p.fired), payload=None))
        arrived, coll_tel = collect_arrivals(flits, storage, mesh)
        layer_end = max(cycle for cycle, f in arrived if f.payload is None)

        fired = [f.payload for _, f in arrived if f.payload is not None]
        cur = _rebuild_tensor(layer, fired)
        layer_outputs.append(cur)

        counters = PeCounters()
        for p in pes:
            counters.add(p.c)
        hops = feed_tel.flit_hops + coll_tel.flit_hops
        ua, ut = _layer_utilization(pes, hw.multipliers_per_pe)
        stats = LayerStats(
            index=li, name=layer.name or f"layer{li}", kind=layer.kind,
            pe_count=mapping.pe_count, cycles=layer_end - now,
            counters=counters, energy=counter_energy(counters, energy, hops),
            utilization_active=ua, utilization_total=ut,
            noc_flit_hops=hops, skipped_no_output=enc_stats.skipped_no_output)
        report.layers.append(stats)
        now = layer_end

    for s in report.layers:
        report.energy.add(s.energy)
    total_weight_bytes = sum(a.nbytes for a in weights.arrays)
    report.energy.dram_pj += dram_weight_load_energy(total_weight_bytes, energy)
    report.total_cycles = now
    report.finish()
    return SimResult(output=cur, report=report, mapped=mapped,
                     layer_outputs=layer_outputs)


def first_divergence(got: Tensor, want: Tensor):
    """(flat index, got, want) of the first mismatch, or None when equal."""
    a, b = got.flat(), want.flat()
    if a.shape != b.shape:
        return (-1, a.shape, b.shape)
    bad = np.flatnonzero(a != b)
    if bad.size == 0:
        return None
    i = int(bad[0])
    return (i, int(a[i]), int(b[i]))


def verify_against_oracle(net: NetworkSpec, weights: WeightStore, inp: Tensor,
                          output: Tensor):
    """Check a simulated output against the dense reference."""
    return first_divergence(output, dense_network(net, weights, inp))
