"""Shared data model: tensors, layer geometry, quantization, hardware profile.

Everything downstream (event encoding, the dense reference, the cycle
simulator) hangs off the types in this module. Conventions:

* activations and weights are signed 8-bit, partial sums are signed 32-bit
* tensors are channel-major, row-major within a channel ([c, h, w], C order)
* conv filters are square; output width doubles as the neuron row pitch
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

INT8_MIN = -128
INT8_MAX = 127
ACC_BITS = 32
ACC_MIN = -(1 << (ACC_BITS - 1))
ACC_MAX = (1 << (ACC_BITS - 1)) - 1


# ====================== quantization ======================


@dataclass(frozen=True)
class QuantParams:
    """Fixed-point affine requantization of a 32-bit sum to int8.

    The effective scale is scale_multiplier / 2**shift and must lie in (0, 1].
    """

    scale_multiplier: int = 1
    shift: int = 0
    zero_point: int = 0

    def scale(self) -> float:
        return self.scale_multiplier / (1 << self.shift)


def round_half_away_div_pow2(value: int, shift: int) -> int:
    """Divide by 2**shift rounding halves away from zero. Integer only."""
    if shift == 0:
        return value
    half = 1 << (shift - 1)
    if value >= 0:
        return (value + half) >> shift
    return -((-value + half) >> shift)


def requantize(acc: int, q: QuantParams) -> int:
    """Collapse a 32-bit accumulator to int8.

    result = clamp(round(acc * mult / 2**shift) + zero_point, -128, 127),
    rounding halves away from zero. Monotone non-decreasing in acc.
    """
    scaled = round_half_away_div_pow2(int(acc) * q.scale_multiplier, q.shift)
    return max(INT8_MIN, min(INT8_MAX, scaled + q.zero_point))


def requantize_array(acc: np.ndarray, q: QuantParams) -> np.ndarray:
    """Vectorized requantize. acc is integer-typed; result is int8."""
    v = acc.astype(np.int64) * q.scale_multiplier
    if q.shift:
        half = 1 << (q.shift - 1)
        mag = (np.abs(v) + half) >> q.shift
        v = np.sign(v) * mag
    v = v + q.zero_point
    return np.clip(v, INT8_MIN, INT8_MAX).astype(np.int8)


# ====================== tensors ======================


@dataclass
class Tensor:
    """An int8 activation tensor. dims is (c, h, w) or (length,)."""

    data: np.ndarray

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.int8)

    @property
    def dims(self) -> tuple:
        return self.data.shape

    def nonzero_count(self) -> int:
        return int(np.count_nonzero(self.data))

    def flat(self) -> np.ndarray:
        # channel-major, row-major flattening; matches fc input indexing
        return self.data.reshape(-1)


# ====================== layer geometry ======================


@dataclass(frozen=True)
class ConvLayerGeometry:
    in_channels: int
    out_channels: int
    in_h: int
    in_w: int
    kernel: int            # square filters only
    stride: int = 1
    padding: int = 0
    out_h: int = -1        # declared; computed when left at -1
    out_w: int = -1

    def __post_init__(self):
        if self.out_h < 0:
            object.__setattr__(self, "out_h", conv_out_dim(self.in_h, self.kernel, self.stride, self.padding))
        if self.out_w < 0:
            object.__setattr__(self, "out_w", conv_out_dim(self.in_w, self.kernel, self.stride, self.padding))

    @property
    def nc_filter(self) -> int:
        """Row pitch of the filter address space (columns per filter row)."""
        return self.kernel

    @property
    def nc_output(self) -> int:
        """Row pitch of the output neuron address space."""
        return self.out_w

    @property
    def out_positions(self) -> int:
        return self.out_h * self.out_w


def conv_out_dim(in_dim: int, kernel: int, stride: int, padding: int) -> int:
    return (in_dim + 2 * padding - kernel) // stride + 1


@dataclass(frozen=True)
class FcLayerGeometry:
    in_neurons: int
    out_neurons: int


@dataclass(frozen=True)
class PoolGeometry:
    """Max-pool over each channel. stride defaults to the window."""

    channels: int
    in_h: int
    in_w: int
    window: int
    stride: int = -1

    def __post_init__(self):
        if self.stride < 0:
            object.__setattr__(self, "stride", self.window)

    @property
    def out_h(self) -> int:
        return (self.in_h - self.window) // self.stride + 1

    @property
    def out_w(self) -> int:
        return (self.in_w - self.window) // self.stride + 1


@dataclass(frozen=True)
class PoolSpec:
    """Fused max-pool applied by the activation path after requantization."""

    window: int
    stride: int = -1

    def __post_init__(self):
        if self.stride < 0:
            object.__setattr__(self, "stride", self.window)


@dataclass
class LayerSpec:
    kind: str  # conv | fc | maxpool
    geometry: object  # ConvLayerGeometry | FcLayerGeometry | PoolGeometry
    fire_threshold: int = 0
    quant: QuantParams = field(default_factory=QuantParams)
    fuse_maxpool: Optional[PoolSpec] = None
    bias: Optional[np.ndarray] = None  # int32, one per output channel/neuron
    name: str = ""

    def output_shape(self) -> tuple:
        g = self.geometry
        if self.kind == "conv":
            oh, ow = g.out_h, g.out_w
            if self.fuse_maxpool is not None:
                p = self.fuse_maxpool
                oh = (oh - p.window) // p.stride + 1
                ow = (ow - p.window) // p.stride + 1
            return (g.out_channels, oh, ow)
        if self.kind == "fc":
            return (g.out_neurons,)
        return (g.channels, g.out_h, g.out_w)

    def input_shape(self) -> tuple:
        g = self.geometry
        if self.kind == "conv":
            return (g.in_channels, g.in_h, g.in_w)
        if self.kind == "fc":
            return (g.in_neurons,)
        return (g.channels, g.in_h, g.in_w)


@dataclass
class NetworkSpec:
    layers: list
    name: str = "net"

    def input_shape(self) -> tuple:
        return self.layers[0].input_shape()

    def output_shape(self) -> tuple:
        return self.layers[-1].output_shape()


# ====================== weights ======================


def filter_linear_addr(ky: int, kx: int, nc_filter: int) -> int:
    """Position of tap (ky, kx) inside one flattened square filter."""
    return ky * nc_filter + kx


@dataclass
class WeightStore:
    """Weight arrays for the parameterized layers, in network order.

    conv: int8 [out_channels][in_channels][ky][kx], row-major
    fc:   int8 [in_neurons][out_neurons], row-major by input neuron
    maxpool layers own no entry, so arrays[i] belongs to the i-th conv/fc
    layer, not the i-th network layer.
    """

    arrays: list

    def conv_filters_flat(self, index: int) -> np.ndarray:
        """View [out_channels][in_channels][kernel*kernel] for address lookups."""
        w = self.arrays[index]
        return w.reshape(w.shape[0], w.shape[1], -1)


# ====================== hardware profile ======================


@dataclass(frozen=True)
class HardwareConfig:
    """Simulated accelerator profile. Defaults describe the shipped design
    point: 11 PEs, 9 MAC modules x 3 multipliers each, 691.2 KB weight SRAM
    and 67.5 KB accumulator SRAM per PE, 200 MHz.
    """

    num_pes: int = 11
    mac_modules_per_pe: int = 9
    multipliers_per_mac: int = 3
    weight_sram_bytes: int = 691200
    acc_sram_bytes: int = 67500
    fifo_depth: int = 4
    frequency_mhz: float = 200.0
    hop_latency: int = 1
    hazard_policy: str = "forward"    # forward | stall
    weight_read_mode: str = "group"   # group | event

    @property
    def multipliers_per_pe(self) -> int:
        return self.mac_modules_per_pe * self.multipliers_per_mac

    def with_overrides(self, **kwargs) -> "HardwareConfig":
        return replace(self, **kwargs)


# ====================== validation ======================


@dataclass
class Violation:
    layer: int
    rule: str
    message: str

    def __str__(self):
        return f"layer {self.layer}: [{self.rule}] {self.message}"


def _check_pool_dims(v: list, i: int, h: int, w: int, window: int, stride: int):
    if window < 1 or stride < 1:
        v.append(Violation(i, "pool-shape", f"pool window {window} stride {stride} must be >= 1"))
        return
    if h < window or w < window:
        v.append(Violation(i, "pool-shape", f"pool window {window} exceeds input {h}x{w}"))
        return
    if (h - window) % stride or (w - window) % stride:
        v.append(Violation(i, "pool-divisibility",
                           f"{h}x{w} input not divisible by pool window {window} stride {stride}"))


def _check_quant(v: list, i: int, layer: LayerSpec):
    q = layer.quant
    if not (0 <= q.shift <= 31):
        v.append(Violation(i, "quant-shift", f"shift {q.shift} outside [0, 31]"))
    if q.scale_multiplier < 1:
        v.append(Violation(i, "quant-scale", f"scale_multiplier {q.scale_multiplier} must be >= 1"))
    elif 0 <= q.shift <= 31 and q.scale_multiplier > (1 << q.shift):
        v.append(Violation(i, "quant-scale",
                           f"scale {q.scale_multiplier}/2^{q.shift} exceeds 1"))
    if not (INT8_MIN <= q.zero_point <= INT8_MAX):
        v.append(Violation(i, "quant-zero-point", f"zero_point {q.zero_point} outside int8"))
    if not (INT8_MIN <= layer.fire_threshold <= INT8_MAX):
        v.append(Violation(i, "threshold-range", f"threshold {layer.fire_threshold} outside int8"))


def validate_network(net: NetworkSpec) -> list:
    """Static checks before any simulation. Returns a list of Violations;
    empty means the network is runnable."""
    v: list = []
    for i, layer in enumerate(net.layers):
        g = layer.geometry
        if layer.kind == "conv":
            if g.kernel < 1 or g.stride < 1 or g.padding < 0:
                v.append(Violation(i, "conv-shape", f"kernel {g.kernel} stride {g.stride} padding {g.padding}"))
                continue
            if g.in_channels < 1 or g.out_channels < 1 or g.in_h < 1 or g.in_w < 1:
                v.append(Violation(i, "conv-shape", "non-positive channel or spatial dimension"))
                continue
            eh = conv_out_dim(g.in_h, g.kernel, g.stride, g.padding)
            ew = conv_out_dim(g.in_w, g.kernel, g.stride, g.padding)
            if eh < 1 or ew < 1:
                v.append(Violation(i, "conv-shape", f"empty output map {eh}x{ew}"))
                continue
            if (g.out_h, g.out_w) != (eh, ew):
                v.append(Violation(i, "conv-out-mismatch",
                                   f"declared out {g.out_h}x{g.out_w}, formula gives {eh}x{ew}"))
            if layer.fuse_maxpool is not None:
                p = layer.fuse_maxpool
                _check_pool_dims(v, i, eh, ew, p.window, p.stride)
            _check_quant(v, i, layer)
            if layer.bias is not None and len(layer.bias) != g.out_channels:
                v.append(Violation(i, "bias-shape", f"{len(layer.bias)} bias values for {g.out_channels} channels"))
        elif layer.kind == "fc":
            if g.in_neurons < 1 or g.out_neurons < 1:
                v.append(Violation(i, "fc-shape", "non-positive neuron count"))
                continue
            _check_quant(v, i, layer)
            if layer.fuse_maxpool is not None:
                v.append(Violation(i, "fc-pool", "fc layers cannot fuse pooling"))
            if layer.bias is not None and len(layer.bias) != g.out_neurons:
                v.append(Violation(i, "bias-shape", f"{len(layer.bias)} bias values for {g.out_neurons} neurons"))
        elif layer.kind == "maxpool":
            if g.channels < 1 or g.in_h < 1 or g.in_w < 1:
                v.append(Violation(i, "pool-shape", "non-positive dimension"))
                continue
            _check_pool_dims(v, i, g.in_h, g.in_w, g.window, g.stride)
        else:
            v.append(Violation(i, "layer-kind", f"unknown layer kind {layer.kind!r}"))
            continue

        if i + 1 < len(net.layers):
            nxt = net.layers[i + 1]
            produced = layer.output_shape()
            expected = nxt.input_shape()
            if len(expected) == 1:
                if math.prod(produced) != expected[0]:
                    v.append(Violation(i + 1, "chain-shape",
                                       f"layer {i} produces {produced} ({math.prod(produced)} values), "
                                       f"layer {i + 1} expects {expected[0]}"))
            elif produced != expected:
                v.append(Violation(i + 1, "chain-shape",
                                   f"layer {i} produces {produced}, layer {i + 1} expects {expected}"))
    return v


def validate_weights(net: NetworkSpec, weights: WeightStore) -> list:
    """Shape-check a weight store against a network's parameterized layers."""
    v: list = []
    param_layers = [(i, l) for i, l in enumerate(net.layers)
                    if l.kind in ("conv", "fc")]
    if len(weights.arrays) != len(param_layers):
        v.append(Violation(-1, "weights-count",
                           f"{len(weights.arrays)} weight entries for "
                           f"{len(param_layers)} parameterized layers"))
        return v
    for arr, (i, layer) in zip(weights.arrays, param_layers):
        g = layer.geometry
        if layer.kind == "conv":
            want = (g.out_channels, g.in_channels, g.kernel, g.kernel)
        else:
            want = (g.in_neurons, g.out_neurons)
        if arr is None or arr.shape != want:
            v.append(Violation(i, "weights-shape",
                               f"{layer.kind} weights "
                               f"{None if arr is None else arr.shape}, expected {want}"))
    return v
