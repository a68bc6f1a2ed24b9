"""Layer-to-PE mapping.

Every PE owns whole output channels (conv) or whole output neurons (fc); a
channel or neuron never splits across PEs, so partial sums never cross the
mesh. One extra PE per network acts as storage: it feeds each layer's events
and collects fired results between layers. PEs are reused layer to layer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .model import ConvLayerGeometry, FcLayerGeometry, HardwareConfig, NetworkSpec


class UnmappableLayer(Exception):
    """The layer cannot fit the per-PE capacity model at any PE count."""


@dataclass(frozen=True)
class PeCapacity:
    """What one PE can hold: N 32-bit accumulators, W 8-bit weights."""

    neurons: int
    weights: int

    @classmethod
    def from_hardware(cls, hw: HardwareConfig) -> "PeCapacity":
        return cls(neurons=hw.acc_sram_bytes // 4, weights=hw.weight_sram_bytes)


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def conv_pe_count(g: ConvLayerGeometry, cap: PeCapacity) -> int:
    """Minimum PEs for a conv layer under the whole-channel rule.

    A PE holds channels_per_pe = min(N // (out_h*out_w), W // (k*k*in_c))
    complete output channels; the layer needs ceil(out_channels / that).
    """
    positions = g.out_h * g.out_w
    filter_bytes = g.kernel * g.kernel * g.in_channels
    if positions > cap.neurons:
        raise UnmappableLayer(
            f"one output channel needs {positions} accumulators, PE holds {cap.neurons}")
    if filter_bytes > cap.weights:
        raise UnmappableLayer(
            f"one channel's filters need {filter_bytes} weight bytes, PE holds {cap.weights}")
    channels_per_pe = min(cap.neurons // positions, cap.weights // filter_bytes)
    return _ceil_div(g.out_channels, channels_per_pe)


def fc_pe_count(g: FcLayerGeometry, cap: PeCapacity) -> int:
    """Minimum PEs for a fully connected layer, fractional-packing form:
    ceil(max(out_neurons / N, in_neurons*out_neurons / W))."""
    if cap.neurons < 1 or cap.weights < 1:
        raise UnmappableLayer("PE has no accumulator or weight capacity")
    return max(_ceil_div(g.out_neurons, cap.neurons),
               _ceil_div(g.in_neurons * g.out_neurons, cap.weights))


@dataclass
class PeAssignment:
    """One PE's share of one layer."""

    pe: int
    start: int          # first owned output channel (conv) / neuron (fc)
    stop: int           # one past the last
    acc_words: int      # 32-bit accumulators used
    weight_bytes: int   # weight SRAM bytes used

    @property
    def owned(self) -> range:
        return range(self.start, self.stop)

    @property
    def count(self) -> int:
        return self.stop - self.start


@dataclass
class LayerMapping:
    layer_index: int
    kind: str
    pe_count: int
    assignments: list  # list[PeAssignment]; empty for maxpool layers


@dataclass
class MappedNetwork:
    layers: list            # list[LayerMapping]
    compute_pes: int        # max per-layer count; PEs are reused across layers
    storage_pe: int         # node id of the storage PE
    grid_rows: int
    grid_cols: int
    capacity: PeCapacity


def _split_even(total: int, parts: int) -> list:
    """Contiguous near-even split: first (total % parts) parts get one extra."""
    base, extra = divmod(total, parts)
    bounds = []
    start = 0
    for i in range(parts):
        size = base + (1 if i < extra else 0)
        bounds.append((start, start + size))
        start += size
    return bounds


def map_conv_layer(index: int, g: ConvLayerGeometry, cap: PeCapacity) -> LayerMapping:
    count = conv_pe_count(g, cap)
    positions = g.out_h * g.out_w
    filter_bytes = g.kernel * g.kernel * g.in_channels
    assigns = []
    for pe, (lo, hi) in enumerate(_split_even(g.out_channels, count)):
        assigns.append(PeAssignment(pe=pe, start=lo, stop=hi,
                                    acc_words=(hi - lo) * positions,
                                    weight_bytes=(hi - lo) * filter_bytes))
    return LayerMapping(index, "conv", count, assigns)


def map_fc_layer(index: int, g: FcLayerGeometry, cap: PeCapacity) -> LayerMapping:
    count = fc_pe_count(g, cap)
    # the closed form packs weights fractionally; owning whole neurons needs
    # floor(W / in_neurons) per PE, so raise the count when granularity binds
    per_pe_limit = min(cap.neurons, cap.weights // g.in_neurons)
    if per_pe_limit < 1:
        raise UnmappableLayer(
            f"one output neuron needs {g.in_neurons} weight bytes, PE holds {cap.weights}")
    count = max(count, _ceil_div(g.out_neurons, per_pe_limit))
    assigns = []
    for pe, (lo, hi) in enumerate(_split_even(g.out_neurons, count)):
        assigns.append(PeAssignment(pe=pe, start=lo, stop=hi,
                                    acc_words=hi - lo,
                                    weight_bytes=(hi - lo) * g.in_neurons))
    return LayerMapping(index, "fc", count, assigns)


def map_network(net: NetworkSpec, hw: HardwareConfig) -> MappedNetwork:
    """Map every layer, pick the mesh, place the storage PE.

    Raises UnmappableLayer when a layer cannot fit, or when the network needs
    more PEs (compute + storage) than the hardware provides.
    """
    cap = PeCapacity.from_hardware(hw)
    mappings = []
    for i, layer in enumerate(net.layers):
        if layer.kind == "conv":
            m = map_conv_layer(i, layer.geometry, cap)
        elif layer.kind == "fc":
            m = map_fc_layer(i, layer.geometry, cap)
        else:
            m = LayerMapping(i, "maxpool", 0, [])
        for a in m.assignments:
            assert a.acc_words <= cap.neurons and a.weight_bytes <= cap.weights, \
                f"layer {i} pe {a.pe} assignment exceeds capacity"
        mappings.append(m)
    compute = max((m.pe_count for m in mappings), default=0)
    if compute == 0:
        raise UnmappableLayer("network has no compute layers")
    total = compute + 1  # plus the storage PE
    if total > hw.num_pes:
        raise UnmappableLayer(
            f"network needs {total} PEs ({compute} compute + 1 storage), "
            f"hardware has {hw.num_pes}")
    side = math.isqrt(total)
    if side * side < total:
        side += 1
    return MappedNetwork(layers=mappings, compute_pes=compute, storage_pe=compute,
                         grid_rows=side, grid_cols=side, capacity=cap)
