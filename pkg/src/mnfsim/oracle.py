"""Dense reference implementations.

Direct loop-nest execution of conv / fc / maxpool over full tensors, with the
same integer quantization as the event-driven model. This module never touches
the event path; it exists so the simulator has an independent ground truth to
be compared against, bit for bit. Clarity over speed.
"""

from __future__ import annotations

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

# Sampling bounds for the randomized equivalence suite. Every instance drawn
# by random_instance stays inside these.
KERNELS = (1, 3, 5)
STRIDES = (1, 2)
PADDINGS = (0, 1)
MAX_CHANNELS = 8
MAX_SIZE = 16
DENSITIES = tuple(round(d * 0.1, 1) for d in range(11))


def dense_conv(inp: np.ndarray, weights: np.ndarray, layer: LayerSpec) -> np.ndarray:
    """Padded direct convolution, requantize, ReLU floor, optional pool.

    inp: int8 [c, h, w]; weights: int8 [out_c, in_c, k, k].
    Returns int8 [out_c, oh, ow] (pooled dims if the layer fuses a pool).
    """
    g = layer.geometry
    k, s, p = g.kernel, g.stride, g.padding
    padded = np.zeros((g.in_channels, g.in_h + 2 * p, g.in_w + 2 * p), dtype=np.int64)
    padded[:, p:p + g.in_h, p:p + g.in_w] = inp
    w64 = weights.astype(np.int64)
    acc = np.zeros((g.out_channels, g.out_h, g.out_w), dtype=np.int64)
    for oy in range(g.out_h):
        for ox in range(g.out_w):
            patch = padded[:, oy * s:oy * s + k, ox * s:ox * s + k]
            acc[:, oy, ox] = np.tensordot(w64, patch, axes=([1, 2, 3], [0, 1, 2]))
    if layer.bias is not None:
        acc += layer.bias.astype(np.int64)[:, None, None]
    out = requantize_array(acc, layer.quant)
    out = np.maximum(out, np.int8(layer.fire_threshold))
    if layer.fuse_maxpool is not None:
        fp = layer.fuse_maxpool
        out = dense_maxpool(out, fp.window, fp.stride)
    return out


def dense_fc(inp: np.ndarray, weights: np.ndarray, layer: LayerSpec) -> np.ndarray:
    """inp: int8 [n_in]; weights: int8 [n_in, n_out]. Returns int8 [n_out]."""
    acc = inp.astype(np.int64) @ weights.astype(np.int64)
    if layer.bias is not None:
        acc += layer.bias.astype(np.int64)
    out = requantize_array(acc, layer.quant)
    return np.maximum(out, np.int8(layer.fire_threshold))


def dense_maxpool(inp: np.ndarray, window: int, stride: int) -> np.ndarray:
    """Per-channel max over each pool window. inp: [c, h, w]."""
    c, h, w = inp.shape
    oh = (h - window) // stride + 1
    ow = (w - window) // stride + 1
    out = np.empty((c, oh, ow), dtype=inp.dtype)
    for oy in range(oh):
        for ox in range(ow):
            out[:, oy, ox] = inp[:, oy * stride:oy * stride + window,
                                 ox * stride:ox * stride + window].max(axis=(1, 2))
    return out


def _masked(values: np.ndarray, density: float, rng: np.random.Generator) -> np.ndarray:
    return (values * (rng.random(values.shape) < density)).astype(np.int8)


def random_instance(rng: np.random.Generator):
    """One randomized small network with weights and an input tensor.

    Geometry is drawn from the module bounds above: a conv layer (sometimes
    with a fused or standalone maxpool behind it), usually followed by a
    fully connected layer. Quantization, bias, and fire threshold vary too,
    so the instance exercises the full integer path.
    """
    k = int(rng.choice(KERNELS))
    s = int(rng.choice(STRIDES))
    p = int(rng.choice(PADDINGS))
    in_c = int(rng.integers(1, MAX_CHANNELS + 1))
    out_c = int(rng.integers(1, MAX_CHANNELS + 1))
    lo = max(k - 2 * p, k, 2)
    size = int(rng.integers(lo, MAX_SIZE + 1))
    g = ConvLayerGeometry(in_c, out_c, size, size, kernel=k, stride=s, padding=p)
    fused = None
    if g.out_h >= 2 and g.out_w >= 2 and rng.random() < 0.3:
        fused = PoolSpec(window=2)
    conv = LayerSpec(
        kind="conv", geometry=g,
        fire_threshold=int(rng.integers(-2, 3)),
        quant=QuantParams(scale_multiplier=int(rng.integers(1, 9)),
                          shift=int(rng.integers(3, 8)),
                          zero_point=int(rng.integers(-4, 5))),
        fuse_maxpool=fused,
        bias=rng.integers(-40, 41, size=out_c).astype(np.int32)
             if rng.random() < 0.5 else None)
    layers = [conv]
    shape = conv.output_shape()
    if fused is None and min(shape[1:]) >= 2 and rng.random() < 0.25:
        layers.append(LayerSpec(kind="maxpool",
                                geometry=PoolGeometry(shape[0], shape[1], shape[2],
                                                      window=2)))
        shape = layers[-1].output_shape()
    if rng.random() < 0.8:
        n_in = int(np.prod(shape))
        n_out = int(rng.integers(1, 13))
        layers.append(LayerSpec(
            kind="fc", geometry=FcLayerGeometry(n_in, n_out),
            fire_threshold=int(rng.integers(-2, 3)),
            quant=QuantParams(scale_multiplier=int(rng.integers(1, 5)),
                              shift=int(rng.integers(4, 9)),
                              zero_point=int(rng.integers(-4, 5))),
            bias=rng.integers(-40, 41, size=n_out).astype(np.int32)
                 if rng.random() < 0.5 else None))
    net = NetworkSpec(layers, name="random-instance")
    arrays = []
    for layer in layers:
        if layer.kind == "conv":
            lg = layer.geometry
            arrays.append(rng.integers(-7, 8, size=(lg.out_channels, lg.in_channels,
                                                    lg.kernel, lg.kernel)).astype(np.int8))
        elif layer.kind == "fc":
            lg = layer.geometry
            arrays.append(rng.integers(-7, 8,
                                       size=(lg.in_neurons, lg.out_neurons)).astype(np.int8))
    density = float(rng.choice(DENSITIES))
    raw = rng.integers(-9, 10, size=net.input_shape())
    return net, WeightStore(arrays), Tensor(_masked(raw, density, rng))


def dense_network(net: NetworkSpec, weights: WeightStore, inp: Tensor) -> Tensor:
    """Run the whole network densely. The final tensor is the ground truth the
    event-driven paths must match exactly."""
    cur = inp.data
    wi = 0  # the store holds arrays for parameterized layers only
    for layer in net.layers:
        if layer.kind == "conv":
            cur = dense_conv(cur, weights.arrays[wi], layer)
            wi += 1
        elif layer.kind == "fc":
            cur = dense_fc(cur.reshape(-1), weights.arrays[wi], layer)
            wi += 1
        elif layer.kind == "maxpool":
            g: PoolGeometry = layer.geometry
            cur = dense_maxpool(cur, g.window, g.stride)
        else:
            raise ValueError(f"unknown layer kind {layer.kind!r}")
    return Tensor(cur)
