"""Workload generation: preset networks, weights, inputs, calibration.

Inputs are generated with an exact nonzero count, round(density * size),
placed by a seeded permutation, so measured density tracks the request to
within rounding of a single element.

Quantization calibration runs the network densely once and picks, per
parameterized layer, the largest power-of-two-scaled multiplier that maps
the observed accumulator range into int8. An optional activation-density
target moves the zero point so roughly that fraction of outputs clears the
fire threshold.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from .model import (
    ConvLayerGeometry,
    FcLayerGeometry,
    LayerSpec,
    NetworkSpec,
    PoolGeometry,
    PoolSpec,
    QuantParams,
    Tensor,
    WeightStore,
    requantize_array,
)
from .oracle import dense_conv, dense_fc, dense_maxpool


def _conv(in_c, out_c, size, kernel, stride=1, padding=0, pool=None, name=""):
    g = ConvLayerGeometry(in_c, out_c, size, size, kernel=kernel,
                          stride=stride, padding=padding)
    fused = PoolSpec(window=pool) if pool else None
    return LayerSpec(kind="conv", geometry=g, fuse_maxpool=fused, name=name)


def _fc(n_in, n_out, name=""):
    return LayerSpec(kind="fc", geometry=FcLayerGeometry(n_in, n_out), name=name)


def _pool(channels, size, window, name=""):
    return LayerSpec(kind="maxpool",
                     geometry=PoolGeometry(channels, size, size, window=window),
                     name=name)


def preset_network(name: str) -> NetworkSpec:
    """Desk-scale topologies. Quantization starts at identity; calibrate()
    sets real parameters."""
    if name == "tiny":
        layers = [_conv(1, 3, 8, 3, padding=1, name="c1"),
                  _fc(3 * 8 * 8, 10, name="out")]
    elif name == "lenet-like":
        layers = [_conv(1, 6, 28, 5, padding=2, pool=2, name="c1"),
                  _conv(6, 16, 14, 5, name="c2"),
                  _pool(16, 10, 2, name="p2"),
                  _fc(16 * 5 * 5, 120, name="f1"),
                  _fc(120, 10, name="out")]
    elif name == "vgg-like":
        layers = [_conv(3, 16, 32, 3, padding=1, name="c1"),
                  _conv(16, 16, 32, 3, padding=1, pool=2, name="c2"),
                  _conv(16, 32, 16, 3, padding=1, name="c3"),
                  _conv(32, 32, 16, 3, padding=1, pool=2, name="c4"),
                  _fc(32 * 8 * 8, 64, name="f1"),
                  _fc(64, 10, name="out")]
    elif name == "alexnet-like":
        layers = [_conv(3, 12, 32, 5, stride=2, padding=2, name="c1"),
                  _conv(12, 24, 16, 3, padding=1, pool=2, name="c2"),
                  _fc(24 * 8 * 8, 48, name="f1"),
                  _fc(48, 10, name="out")]
    else:
        raise ValueError(f"unknown preset {name!r}; have tiny, lenet-like, "
                         f"vgg-like, alexnet-like")
    return NetworkSpec(layers, name=name)


PRESETS = ("tiny", "lenet-like", "vgg-like", "alexnet-like")


def random_weights(net: NetworkSpec, rng: np.random.Generator,
                   magnitude: int = 8) -> WeightStore:
    arrays = []
    for layer in net.layers:
        g = layer.geometry
        if layer.kind == "conv":
            shape = (g.out_channels, g.in_channels, g.kernel, g.kernel)
        elif layer.kind == "fc":
            shape = (g.in_neurons, g.out_neurons)
        else:
            continue
        arrays.append(rng.integers(-magnitude, magnitude + 1,
                                   size=shape).astype(np.int8))
    return WeightStore(arrays)


def exact_density_tensor(shape, density: float, rng: np.random.Generator,
                         magnitude: int = 15) -> Tensor:
    """Signed int8 tensor with exactly round(density * size) nonzeros."""
    if not 0.0 <= density <= 1.0:
        raise ValueError(f"density {density} outside [0, 1]")
    n = int(np.prod(shape))
    k = int(round(density * n))
    flat = np.zeros(n, dtype=np.int8)
    pos = rng.permutation(n)[:k]
    mags = rng.integers(1, magnitude + 1, size=k)
    signs = rng.choice([-1, 1], size=k)
    flat[pos] = (mags * signs).astype(np.int8)
    return Tensor(flat.reshape(shape))


def _raw_conv_acc(x: np.ndarray, w: np.ndarray, layer: LayerSpec) -> np.ndarray:
    g = layer.geometry
    p = g.padding
    xp = np.zeros((g.in_channels, g.in_h + 2 * p, g.in_w + 2 * p), dtype=np.int64)
    xp[:, p:p + g.in_h, p:p + g.in_w] = x
    out = np.zeros((g.out_channels, g.out_h, g.out_w), dtype=np.int64)
    w64 = w.astype(np.int64)
    for oy in range(g.out_h):
        for ox in range(g.out_w):
            patch = xp[:, oy * g.stride:oy * g.stride + g.kernel,
                       ox * g.stride:ox * g.stride + g.kernel]
            out[:, oy, ox] = np.tensordot(w64, patch, axes=3)
    if layer.bias is not None:
        out += layer.bias.astype(np.int64)[:, None, None]
    return out


def _raw_fc_acc(x: np.ndarray, w: np.ndarray, layer: LayerSpec) -> np.ndarray:
    out = x.reshape(-1).astype(np.int64) @ w.astype(np.int64)
    if layer.bias is not None:
        out = out + layer.bias.astype(np.int64)
    return out


def _fit_quant(max_abs: int, shift: int) -> QuantParams:
    top = 1 << shift
    if max_abs <= 127:
        return QuantParams(scale_multiplier=top, shift=shift, zero_point=0)
    mult = int(round(127 / max_abs * top))
    return QuantParams(scale_multiplier=max(1, min(top, mult)),
                       shift=shift, zero_point=0)


def _zero_point_for_density(q: np.ndarray, threshold: int, target: float) -> int:
    """Zero point putting roughly `target` of the values above threshold."""
    want = int(round(target * q.size))
    if want <= 0:
        return 0
    srt = np.sort(q.reshape(-1))[::-1]
    boundary = int(srt[min(want, q.size) - 1])
    return int(np.clip(threshold - boundary + 1, -128, 127))


def calibrate(net: NetworkSpec, weights: WeightStore, calib_input: Tensor,
              shift: int = 15, activation_density: float | None = None) -> NetworkSpec:
    """Per-layer quantization from a dense calibration pass.

    Returns a new NetworkSpec; geometry, thresholds, and biases are shared
    with the input network.
    """
    cur = calib_input.data
    out_layers = []
    wi = 0
    for layer in net.layers:
        if layer.kind == "maxpool":
            g = layer.geometry
            cur = dense_maxpool(cur, g.window, g.stride)
            out_layers.append(layer)
            continue
        w = weights.arrays[wi]
        wi += 1
        if layer.kind == "conv":
            raw = _raw_conv_acc(cur, w, layer)
        else:
            raw = _raw_fc_acc(cur, w, layer)
        q = _fit_quant(int(np.max(np.abs(raw))) if raw.size else 0, shift)
        if activation_density is not None:
            # probe with the plain requantizer: the fire floor would erase
            # the distribution below threshold
            probe = requantize_array(raw, q)
            zp = _zero_point_for_density(probe.astype(np.int64),
                                         layer.fire_threshold,
                                         activation_density)
            q = replace(q, zero_point=zp)
        new_layer = replace(layer, quant=q)
        cur = (dense_conv(cur, w, new_layer) if layer.kind == "conv"
               else dense_fc(cur.reshape(-1), w, new_layer))
        out_layers.append(new_layer)
    return NetworkSpec(out_layers, name=net.name)


def build(preset: str, seed: int, density: float = 0.5,
          activation_density: float | None = None):
    """(calibrated network, weights, input tensor) for one preset and seed."""
    rng = np.random.default_rng(seed)
    net = preset_network(preset)
    weights = random_weights(net, rng)
    inp = exact_density_tensor(net.input_shape(), density, rng)
    calib = exact_density_tensor(net.input_shape(), max(density, 0.5),
                                 np.random.default_rng(seed + 1))
    net = calibrate(net, weights, calib,
                    activation_density=activation_density)
    return net, weights, inp
