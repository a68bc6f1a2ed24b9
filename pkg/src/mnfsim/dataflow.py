"""Functional multiply-and-fire execution.

The multiply phase replays each event into (weight address, neuron address)
pairs and accumulates weight*value into 32-bit partial sums; the fire phase
requantizes, optionally pools, thresholds, and hands fired values to the next
layer. This module is purely functional (no timing); the cycle simulator in
pe.py applies the exact same arithmetic and must agree bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .events import ConvEvent, EncodeStats, EndOfData, FcEvent, event_stream
from .model import (
    ACC_MAX,
    ACC_MIN,
    ConvLayerGeometry,
    FcLayerGeometry,
    LayerSpec,
    NetworkSpec,
    PoolGeometry,
    Tensor,
    WeightStore,
    requantize_array,
)


class AccumulatorOverflow(Exception):
    """A partial sum left the signed 32-bit range. Hard fault by design:
    saturating silently would hide mis-sized quantization."""


@dataclass
class Accumulators:
    """Partial-sum state for one layer.

    conv: sums[channel][neuron] over out_h*out_w neuron addresses
    fc:   sums[0][neuron] over out_neurons
    Storage is int64 so the 32-bit overflow check is exact.
    """

    sums: np.ndarray

    @classmethod
    def for_conv(cls, g: ConvLayerGeometry, channels: int | None = None) -> "Accumulators":
        n = channels if channels is not None else g.out_channels
        return cls(np.zeros((n, g.out_h * g.out_w), dtype=np.int64))

    @classmethod
    def for_fc(cls, n_out: int) -> "Accumulators":
        return cls(np.zeros((1, n_out), dtype=np.int64))

    def check_range(self, touched: np.ndarray):
        if touched.size and (touched.max() > ACC_MAX or touched.min() < ACC_MIN):
            raise AccumulatorOverflow(
                f"partial sum outside [{ACC_MIN}, {ACC_MAX}]; "
                "rescale the layer quantization")


def expand_conv_event(e: ConvEvent, g: ConvLayerGeometry) -> list:
    """Replay one conv event into ordered (weight_addr, neuron_addr) pairs.

    Transcription of the hardware walk: inner x loop decrements the weight
    address by stride and increments the neuron address by one; each row
    restart jumps the weight address back by nc_filter*stride and the neuron
    address forward by nc_output.
    """
    pairs = []
    neuron_addr = e.start_neuron
    weight_addr = e.start_weight
    for y in range(e.y_jump + 1):
        for x in range(e.x_jump + 1):
            pairs.append((weight_addr, neuron_addr))
            neuron_addr += 1
            weight_addr -= g.stride
        weight_addr = e.start_weight - g.nc_filter * (y + 1) * g.stride
        neuron_addr = e.start_neuron + g.nc_output * (y + 1)
    _check_pair_bounds(pairs, g)
    return pairs


def expand_conv_event_arrays(e: ConvEvent, g: ConvLayerGeometry):
    """Closed-form version of expand_conv_event returning two int arrays
    (weight addresses, neuron addresses) in the same walk order. Used on hot
    paths; tests pin it against the loop transcription."""
    xs = np.arange(e.x_jump + 1)
    ys = np.arange(e.y_jump + 1)
    w = (e.start_weight - ys[:, None] * g.nc_filter * g.stride - xs[None, :] * g.stride).reshape(-1)
    n = (e.start_neuron + ys[:, None] * g.nc_output + xs[None, :]).reshape(-1)
    if w.size:
        if w.min() < 0 or w.max() >= g.kernel * g.kernel:
            raise IndexError(f"weight address outside filter (event {e})")
        if n.min() < 0 or n.max() >= g.out_positions:
            raise IndexError(f"neuron address outside output map (event {e})")
    return w, n


def _check_pair_bounds(pairs: list, g: ConvLayerGeometry):
    limit_w = g.kernel * g.kernel
    limit_n = g.out_positions
    for w, n in pairs:
        if not (0 <= w < limit_w) or not (0 <= n < limit_n):
            raise IndexError(f"replayed address ({w}, {n}) outside filter/output bounds; "
                             "event does not belong to this geometry")


def apply_conv_event(e: ConvEvent, weights: np.ndarray, acc: Accumulators,
                     g: ConvLayerGeometry, channel_range: range | None = None) -> int:
    """Accumulate one conv event for every (owned) output channel.

    weights: int8 [out_channels][in_channels][k][k] (full store; channel_range
    selects the resident slice, defaulting to all channels).
    Returns the number of multiply-accumulates performed.
    """
    widx, nidx = expand_conv_event_arrays(e, g)
    lo, hi = (channel_range.start, channel_range.stop) if channel_range else (0, weights.shape[0])
    flat = weights.reshape(weights.shape[0], weights.shape[1], -1)
    taps = flat[lo:hi, e.ch_id, :][:, widx].astype(np.int64)
    block = acc.sums[lo:hi]
    block[:, nidx] += taps * e.value
    acc.check_range(block[:, nidx])
    return (hi - lo) * len(widx)


def apply_fc_event(e: FcEvent, weights: np.ndarray, acc: Accumulators,
                   g: FcLayerGeometry, neuron_range: range | None = None) -> int:
    """Accumulate one fc event across the (owned) output neurons.

    The walk is trivial: weight address runs along the event's weight row while
    the neuron address increments in step.
    """
    lo, hi = (neuron_range.start, neuron_range.stop) if neuron_range else (0, g.out_neurons)
    row = weights[e.neuron_addr, lo:hi].astype(np.int64)
    acc.sums[0, lo:hi] += row * e.value
    acc.check_range(acc.sums[0, lo:hi])
    return hi - lo


@dataclass
class FireResult:
    output: Tensor
    fired: int                    # values strictly above the threshold
    events: Optional[list] = None  # next-layer events incl. EndOfData


def fire(acc: Accumulators, layer: LayerSpec, next_geometry=None,
         next_layer_index: int = 0) -> FireResult:
    """Fire phase: requantize (+bias), pool fused windows, threshold.

    Values above the layer threshold fire; everything else is recorded as the
    threshold floor. When next_geometry is given, fired values are re-encoded
    as that layer's input events (zero values cannot be events, so with a
    negative threshold a fired zero still contributes nothing downstream).
    """
    acc.check_range(acc.sums)
    g = layer.geometry
    sums = acc.sums
    if layer.bias is not None:
        if layer.kind == "conv":
            sums = sums + layer.bias.astype(np.int64)[:, None]
        else:
            sums = sums + layer.bias.astype(np.int64)[None, :]
    q = requantize_array(sums, layer.quant)
    if layer.kind == "conv":
        q = q.reshape(g.out_channels, g.out_h, g.out_w)
        if layer.fuse_maxpool is not None:
            fp = layer.fuse_maxpool
            q = _maxpool3(q, fp.window, fp.stride)
    else:
        q = q.reshape(-1)
    threshold = np.int8(layer.fire_threshold)
    fired = int(np.count_nonzero(q > threshold))
    out = Tensor(np.maximum(q, threshold))
    events = None
    if next_geometry is not None:
        feed = out if not isinstance(next_geometry, FcLayerGeometry) else Tensor(out.flat())
        events, _ = event_stream(feed, next_geometry, layer_index=next_layer_index)
    return FireResult(output=out, fired=fired, events=events)


def _maxpool3(arr: np.ndarray, window: int, stride: int) -> np.ndarray:
    c, h, w = arr.shape
    oh = (h - window) // stride + 1
    ow = (w - window) // stride + 1
    out = np.empty((c, oh, ow), dtype=arr.dtype)
    for oy in range(oh):
        for ox in range(ow):
            out[:, oy, ox] = arr[:, oy * stride:oy * stride + window,
                                 ox * stride:ox * stride + window].max(axis=(1, 2))
    return out


@dataclass
class LayerRunStats:
    events: int = 0
    macs: int = 0
    fired: int = 0
    skipped_no_output: int = 0


def run_layer_functional(layer: LayerSpec, weights_arr, inp: Tensor):
    """Encode, multiply, fire for a single conv/fc layer.
    Returns (output Tensor, LayerRunStats)."""
    g = layer.geometry
    stats = LayerRunStats()
    if layer.kind == "maxpool":
        pooled = _maxpool3(inp.data, g.window, g.stride)
        return Tensor(pooled), stats
    if layer.kind == "conv":
        events, estats = event_stream(inp, g)
        acc = Accumulators.for_conv(g)
        for ev in events:
            if isinstance(ev, EndOfData):
                break
            stats.macs += apply_conv_event(ev, weights_arr, acc, g)
            stats.events += 1
    else:
        events, estats = event_stream(Tensor(inp.flat()), g)
        acc = Accumulators.for_fc(g.out_neurons)
        for ev in events:
            if isinstance(ev, EndOfData):
                break
            stats.macs += apply_fc_event(ev, weights_arr, acc, g)
            stats.events += 1
    stats.skipped_no_output = estats.skipped_no_output
    res = fire(acc, layer)
    stats.fired = res.fired
    return res.output, stats


def run_network_functional(net: NetworkSpec, weights: WeightStore, inp: Tensor):
    """Event-driven functional execution of the whole network.

    Returns (output Tensor, per-layer LayerRunStats list). The result must be
    bit-identical to oracle.dense_network for every valid network and input;
    that equivalence is the core correctness property of the event encoding.
    """
    cur = inp
    per_layer = []
    wi = 0  # the store holds arrays for parameterized layers only
    for layer in net.layers:
        arr = None
        if layer.kind in ("conv", "fc"):
            arr = weights.arrays[wi]
            wi += 1
        cur, stats = run_layer_functional(layer, arr, cur)
        per_layer.append(stats)
    return cur, per_layer
