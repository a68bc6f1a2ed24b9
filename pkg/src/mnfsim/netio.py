"""File formats: binary tensors, binary weight stores, network text files.

Binary tensor layout, little endian:

    magic   8 bytes  b"MNFTENSR"
    version u16      currently 1
    rank    u16
    dims    u32 * rank
    data    int8 * prod(dims), C order

A weight file is the same idea with magic b"MNFWGHTS" and a record count,
then one rank+dims+data record per parameterized layer in network order.
Biases travel in the network text file, not in weight files.

The network text format is line based. '#' starts a comment. A file is an
optional "network <name>" line followed by "layer <kind>" blocks whose
key-value lines run until the next block:

    network example
    layer conv
      in_channels 1
      out_channels 4
      in_size 8 8
      kernel 3
      stride 1
      padding 1
      pool 2            # fused max-pool window [stride]
      threshold 0
      quant 19661 15 0  # scale_multiplier shift zero_point
      bias 1 -2 0 3
    layer maxpool
      channels 4
      in_size 4 4
      window 2
    layer fc
      in_neurons 16
      out_neurons 10

Errors carry the 1-based line number they were found on.
"""

from __future__ import annotations

import os
import struct
import tempfile

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
)

TENSOR_MAGIC = b"MNFTENSR"
WEIGHTS_MAGIC = b"MNFWGHTS"
FORMAT_VERSION = 1


class FileFormatError(Exception):
    pass


class ParseError(Exception):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


def atomic_write_bytes(path: str, data: bytes) -> None:
    """Write via a same-directory temp file so readers never see a torn file."""
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str, text: str) -> None:
    atomic_write_bytes(path, text.encode())


# ---- binary tensors ----

def _pack_array(arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr, dtype=np.int8)
    head = struct.pack("<H", arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.tobytes()


def _unpack_array(buf: bytes, off: int, where: str):
    if off + 2 > len(buf):
        raise FileFormatError(f"{where}: truncated rank field")
    (rank,) = struct.unpack_from("<H", buf, off)
    off += 2
    if rank == 0 or rank > 8:
        raise FileFormatError(f"{where}: unreasonable rank {rank}")
    if off + 4 * rank > len(buf):
        raise FileFormatError(f"{where}: truncated dims")
    dims = struct.unpack_from(f"<{rank}I", buf, off)
    off += 4 * rank
    n = 1
    for d in dims:
        n *= d
    if off + n > len(buf):
        raise FileFormatError(f"{where}: expected {n} data bytes, file has "
                              f"{len(buf) - off}")
    arr = np.frombuffer(buf, dtype=np.int8, count=n, offset=off).reshape(dims)
    return arr.copy(), off + n


def tensor_to_bytes(t: Tensor) -> bytes:
    return TENSOR_MAGIC + struct.pack("<H", FORMAT_VERSION) + _pack_array(t.data)


def tensor_from_bytes(buf: bytes) -> Tensor:
    if buf[:8] != TENSOR_MAGIC:
        raise FileFormatError("not a tensor file (bad magic)")
    (ver,) = struct.unpack_from("<H", buf, 8)
    if ver != FORMAT_VERSION:
        raise FileFormatError(f"unsupported tensor format version {ver}")
    arr, off = _unpack_array(buf, 10, "tensor")
    if off != len(buf):
        raise FileFormatError(f"{len(buf) - off} trailing bytes after tensor data")
    return Tensor(arr)


def write_tensor(path: str, t: Tensor) -> None:
    atomic_write_bytes(path, tensor_to_bytes(t))


def read_tensor(path: str) -> Tensor:
    with open(path, "rb") as f:
        return tensor_from_bytes(f.read())


# ---- binary weight stores ----

def weights_to_bytes(ws: WeightStore) -> bytes:
    out = WEIGHTS_MAGIC + struct.pack("<HI", FORMAT_VERSION, len(ws.arrays))
    for arr in ws.arrays:
        out += _pack_array(arr)
    return out


def weights_from_bytes(buf: bytes) -> WeightStore:
    if buf[:8] != WEIGHTS_MAGIC:
        raise FileFormatError("not a weights file (bad magic)")
    ver, count = struct.unpack_from("<HI", buf, 8)
    if ver != FORMAT_VERSION:
        raise FileFormatError(f"unsupported weights format version {ver}")
    off = 14
    arrays = []
    for i in range(count):
        arr, off = _unpack_array(buf, off, f"weights record {i}")
        arrays.append(arr)
    if off != len(buf):
        raise FileFormatError(f"{len(buf) - off} trailing bytes after weight records")
    return WeightStore(arrays)


def write_weights(path: str, ws: WeightStore) -> None:
    atomic_write_bytes(path, weights_to_bytes(ws))


def read_weights(path: str) -> WeightStore:
    with open(path, "rb") as f:
        return weights_from_bytes(f.read())


# ---- network text format ----

_CONV_KEYS = {"in_channels", "out_channels", "in_size", "kernel", "stride",
              "padding", "pool", "threshold", "quant", "bias", "name"}
_FC_KEYS = {"in_neurons", "out_neurons", "threshold", "quant", "bias", "name"}
_POOL_KEYS = {"channels", "in_size", "window", "stride", "name"}


def _ints(parts, line, key, want=None):
    try:
        vals = [int(p) for p in parts]
    except ValueError:
        raise ParseError(line, f"{key}: expected integers, got {parts!r}") from None
    if want is not None and len(vals) not in want:
        raise ParseError(line, f"{key}: expected {' or '.join(map(str, want))} "
                               f"values, got {len(vals)}")
    return vals


def _build_layer(kind: str, kv: dict, block_line: int) -> LayerSpec:
    def need(key):
        if key not in kv:
            raise ParseError(block_line, f"{kind} layer is missing '{key}'")
        return kv[key]

    def geti(key, default=None, arity=(1,)):
        if key not in kv:
            return default
        line, parts = kv[key]
        vals = _ints(parts, line, key, want=arity)
        return vals[0] if arity == (1,) else vals

    allowed = {"conv": _CONV_KEYS, "fc": _FC_KEYS, "maxpool": _POOL_KEYS}[kind]
    for key, (line, _) in kv.items():
        if key not in allowed:
            raise ParseError(line, f"'{key}' is not a {kind} layer key")

    name = kv["name"][1][0] if "name" in kv else ""
    threshold = geti("threshold", 0)
    quant = QuantParams()
    if "quant" in kv:
        line, parts = kv["quant"]
        m, s, z = _ints(parts, line, "quant", want=(3,))
        quant = QuantParams(scale_multiplier=m, shift=s, zero_point=z)
    bias = None
    if "bias" in kv:
        line, parts = kv["bias"]
        bias = np.array(_ints(parts, line, "bias"), dtype=np.int32)

    if kind == "conv":
        need("in_channels"), need("out_channels"), need("in_size"), need("kernel")
        h, w = geti("in_size", arity=(2,))
        g = ConvLayerGeometry(
            in_channels=geti("in_channels"), out_channels=geti("out_channels"),
            in_h=h, in_w=w, kernel=geti("kernel"),
            stride=geti("stride", 1), padding=geti("padding", 0))
        fused = None
        if "pool" in kv:
            line, parts = kv["pool"]
            vals = _ints(parts, line, "pool", want=(1, 2))
            fused = PoolSpec(*vals)
        return LayerSpec(kind="conv", geometry=g, fire_threshold=threshold,
                         quant=quant, fuse_maxpool=fused, bias=bias, name=name)
    if kind == "fc":
        need("in_neurons"), need("out_neurons")
        g = FcLayerGeometry(in_neurons=geti("in_neurons"),
                            out_neurons=geti("out_neurons"))
        return LayerSpec(kind="fc", geometry=g, fire_threshold=threshold,
                         quant=quant, bias=bias, name=name)
    # maxpool
    need("channels"), need("in_size"), need("window")
    h, w = geti("in_size", arity=(2,))
    g = PoolGeometry(channels=geti("channels"), in_h=h, in_w=w,
                     window=geti("window"), stride=geti("stride", -1))
    if bias is not None or "quant" in kv or "threshold" in kv:
        raise ParseError(block_line, "maxpool layers take no quant/threshold/bias")
    return LayerSpec(kind="maxpool", geometry=g, name=name)


def parse_network(text: str) -> NetworkSpec:
    name = "net"
    layers = []
    block_kind = None
    block_line = 0
    kv: dict = {}

    def flush():
        if block_kind is not None:
            layers.append(_build_layer(block_kind, kv, block_line))

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        key, rest = parts[0], parts[1:]
        if key == "network":
            if not rest:
                raise ParseError(lineno, "network line needs a name")
            name = " ".join(rest)
        elif key == "layer":
            if len(rest) != 1 or rest[0] not in ("conv", "fc", "maxpool"):
                raise ParseError(lineno, "layer kind must be conv, fc, or maxpool")
            flush()
            block_kind = rest[0]
            block_line = lineno
            kv = {}
        elif block_kind is None:
            raise ParseError(lineno, f"'{key}' before any layer block")
        else:
            if key in kv:
                raise ParseError(lineno, f"duplicate key '{key}'")
            if not rest:
                raise ParseError(lineno, f"'{key}' has no value")
            kv[key] = (lineno, rest)
    flush()
    if not layers:
        raise ParseError(1, "no layers defined")
    return NetworkSpec(layers, name=name)


def read_network(path: str) -> NetworkSpec:
    with open(path, "r") as f:
        return parse_network(f.read())


def render_network(net: NetworkSpec) -> str:
    out = [f"network {net.name}"]
    for layer in net.layers:
        g = layer.geometry
        out.append("")
        out.append(f"layer {layer.kind}")
        if layer.name:
            out.append(f"  name {layer.name}")
        if layer.kind == "conv":
            out.append(f"  in_channels {g.in_channels}")
            out.append(f"  out_channels {g.out_channels}")
            out.append(f"  in_size {g.in_h} {g.in_w}")
            out.append(f"  kernel {g.kernel}")
            out.append(f"  stride {g.stride}")
            out.append(f"  padding {g.padding}")
            if layer.fuse_maxpool is not None:
                p = layer.fuse_maxpool
                out.append(f"  pool {p.window} {p.stride}")
        elif layer.kind == "fc":
            out.append(f"  in_neurons {g.in_neurons}")
            out.append(f"  out_neurons {g.out_neurons}")
        else:
            out.append(f"  channels {g.channels}")
            out.append(f"  in_size {g.in_h} {g.in_w}")
            out.append(f"  window {g.window}")
            out.append(f"  stride {g.stride}")
        if layer.kind != "maxpool":
            out.append(f"  threshold {layer.fire_threshold}")
            q = layer.quant
            out.append(f"  quant {q.scale_multiplier} {q.shift} {q.zero_point}")
            if layer.bias is not None:
                out.append("  bias " + " ".join(str(int(b)) for b in layer.bias))
    return "\n".join(out) + "\n"


def write_network(path: str, net: NetworkSpec) -> None:
    atomic_write_text(path, render_network(net))
