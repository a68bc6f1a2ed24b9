"""Event encoding: nonzero activations become addressed work descriptors.

A conv event carries everything a PE needs to replay one input pixel against
every filter window that covers it: the first weight address, the first output
neuron address, and how far the x/y walk extends. An fc event is just the
input neuron index plus its value. Zero activations never become events.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import ConvLayerGeometry, FcLayerGeometry, Tensor


@dataclass(slots=True)
class ConvEvent:
    value: int          # nonzero int8 activation
    ch_id: int          # input channel
    start_weight: int   # first weight address inside one flattened filter
    start_neuron: int   # first output neuron address
    x_jump: int         # extra walk steps along x (0 => single column)
    y_jump: int

    @property
    def pair_count(self) -> int:
        return (self.x_jump + 1) * (self.y_jump + 1)


@dataclass(slots=True)
class FcEvent:
    value: int
    neuron_addr: int    # input neuron index


@dataclass(slots=True)
class EndOfData:
    """Terminal marker flushed after the last event of a layer."""

    layer: int = 0


@dataclass
class EncodeStats:
    skipped_no_output: int = 0  # nonzero pixels covered by no output window


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def encode_conv_event(iy: int, ix: int, value: int, ch_id: int,
                      g: ConvLayerGeometry, stats: EncodeStats | None = None):
    """Encode one nonzero input pixel, or None if no output window covers it
    (possible when stride exceeds kernel).

    The window range covering input row iy is
      oy in [ceil((iy + pad - k + 1) / s), floor((iy + pad) / s)]
    clipped to the output map; columns are symmetric.
    """
    if value == 0:
        return None
    k, s, p = g.kernel, g.stride, g.padding
    oy_min = max(0, _ceil_div(iy + p - k + 1, s))
    oy_max = min(g.out_h - 1, (iy + p) // s)
    ox_min = max(0, _ceil_div(ix + p - k + 1, s))
    ox_max = min(g.out_w - 1, (ix + p) // s)
    if oy_min > oy_max or ox_min > ox_max:
        if stats is not None:
            stats.skipped_no_output += 1
        return None
    start_weight = (iy + p - oy_min * s) * g.nc_filter + (ix + p - ox_min * s)
    start_neuron = oy_min * g.nc_output + ox_min
    return ConvEvent(value=int(value), ch_id=ch_id,
                     start_weight=start_weight, start_neuron=start_neuron,
                     x_jump=ox_max - ox_min, y_jump=oy_max - oy_min)


def encode_fc_event(idx: int, value: int):
    """Encode one nonzero input neuron."""
    if value == 0:
        return None
    return FcEvent(value=int(value), neuron_addr=idx)


def event_stream(t: Tensor, g, layer_index: int = 0):
    """Scan a tensor into its event list (channel-major, row-major order),
    terminated by EndOfData. Returns (events, EncodeStats).

    For ConvLayerGeometry the tensor must be [in_channels, in_h, in_w];
    for FcLayerGeometry a flat [in_neurons] vector.
    """
    stats = EncodeStats()
    events: list = []
    if isinstance(g, ConvLayerGeometry):
        if t.dims != (g.in_channels, g.in_h, g.in_w):
            raise ValueError(f"tensor dims {t.dims} do not match conv input "
                             f"({g.in_channels}, {g.in_h}, {g.in_w})")
        data = t.data
        for ch, iy, ix in zip(*np.nonzero(data)):
            ev = encode_conv_event(int(iy), int(ix), int(data[ch, iy, ix]),
                                   int(ch), g, stats)
            if ev is not None:
                events.append(ev)
    elif isinstance(g, FcLayerGeometry):
        flat = t.flat()
        if flat.shape != (g.in_neurons,):
            raise ValueError(f"tensor has {flat.size} values, fc input expects {g.in_neurons}")
        for idx in np.flatnonzero(flat):
            events.append(FcEvent(value=int(flat[idx]), neuron_addr=int(idx)))
    else:
        raise TypeError(f"unsupported geometry {type(g).__name__}")
    events.append(EndOfData(layer=layer_index))
    return events, stats
