"""Multiply/fire functional core: replay walk, accumulation, equivalence."""

import numpy as np
import pytest

from mnfsim.dataflow import (
    Accumulators,
    AccumulatorOverflow,
    apply_conv_event,
    apply_fc_event,
    expand_conv_event,
    expand_conv_event_arrays,
    fire,
    run_network_functional,
)
from mnfsim.events import ConvEvent, FcEvent, encode_conv_event, event_stream
from mnfsim.model import (
    ConvLayerGeometry,
    FcLayerGeometry,
    LayerSpec,
    NetworkSpec,
    PoolSpec,
    QuantParams,
    Tensor,
    WeightStore,
)
from mnfsim.oracle import dense_conv, dense_fc, dense_network


def test_expand_golden_replay():
    # the canonical worked example: start weight 4, start neuron 0, jumps 1/1,
    # stride 1, filter pitch 3, output pitch 4
    g = ConvLayerGeometry(1, 1, 6, 6, kernel=3, stride=1, padding=0)
    assert (g.nc_filter, g.nc_output) == (3, 4)
    e = ConvEvent(value=100, ch_id=0, start_weight=4, start_neuron=0, x_jump=1, y_jump=1)
    assert expand_conv_event(e, g) == [(4, 0), (3, 1), (1, 4), (0, 5)]


def test_expand_stride_two():
    g = ConvLayerGeometry(1, 1, 5, 5, kernel=3, stride=2, padding=1)
    assert (g.out_h, g.out_w) == (3, 3)
    # jump box 2x2 starting at weight 8, neuron 0... derived walk with pitch 3
    g2 = ConvLayerGeometry(1, 1, 4, 4, kernel=3, stride=2, padding=1)
    assert (g2.nc_filter, g2.nc_output) == (3, 2)
    e = ConvEvent(value=1, ch_id=0, start_weight=8, start_neuron=0, x_jump=1, y_jump=1)
    assert expand_conv_event(e, g2) == [(8, 0), (6, 1), (2, 2), (0, 3)]


def test_expand_arrays_matches_loop():
    rng = np.random.default_rng(2)
    for _ in range(200):
        k = int(rng.choice([1, 3, 5]))
        s = int(rng.choice([1, 2]))
        p = int(rng.integers(0, 2))
        h = int(rng.integers(k, 14))
        g = ConvLayerGeometry(1, 1, h, h, kernel=k, stride=s, padding=p)
        iy, ix = int(rng.integers(0, h)), int(rng.integers(0, h))
        ev = encode_conv_event(iy, ix, 1, 0, g)
        if ev is None:
            continue
        loop = expand_conv_event(ev, g)
        w, n = expand_conv_event_arrays(ev, g)
        assert list(zip(w.tolist(), n.tolist())) == loop


def test_expand_pair_count_and_distinct_neurons():
    g = ConvLayerGeometry(1, 1, 8, 8, kernel=3, stride=1, padding=1)
    ev = encode_conv_event(4, 4, 1, 0, g)
    pairs = expand_conv_event(ev, g)
    assert len(pairs) == (ev.x_jump + 1) * (ev.y_jump + 1) == 9
    assert len({n for _, n in pairs}) == 9


def test_expand_out_of_bounds_rejected():
    g = ConvLayerGeometry(1, 1, 4, 4, kernel=3, stride=1, padding=0)
    bogus = ConvEvent(value=1, ch_id=0, start_weight=20, start_neuron=0, x_jump=1, y_jump=1)
    with pytest.raises(IndexError):
        expand_conv_event(bogus, g)
    bogus = ConvEvent(value=1, ch_id=0, start_weight=4, start_neuron=3, x_jump=1, y_jump=1)
    with pytest.raises(IndexError):
        expand_conv_event(bogus, g)  # neuron walk exits the 2x2 map


def test_apply_conv_event_accumulates_every_channel():
    # single center pixel of a 4x4 map against two 3x3 filters
    g = ConvLayerGeometry(1, 2, 4, 4, kernel=3, stride=1, padding=0)
    w = np.arange(18, dtype=np.int8).reshape(2, 1, 3, 3)
    acc = Accumulators.for_conv(g)
    ev = encode_conv_event(1, 1, 100, 0, g)
    macs = apply_conv_event(ev, w, acc, g)
    assert macs == 2 * 4
    # 2x2 output map: walk (4,0),(3,1),(1,2),(0,3) with row pitch 2
    flat = w.reshape(2, 9)
    for ch in range(2):
        assert acc.sums[ch, 0] == 100 * int(flat[ch, 4])
        assert acc.sums[ch, 1] == 100 * int(flat[ch, 3])
        assert acc.sums[ch, 2] == 100 * int(flat[ch, 1])
        assert acc.sums[ch, 3] == 100 * int(flat[ch, 0])


def test_apply_fc_event_walk():
    g = FcLayerGeometry(5, 4)
    w = np.zeros((5, 4), dtype=np.int8)
    w[1] = [1, 2, 3, 4]
    w[3] = [10, 20, 30, 40]
    acc = Accumulators.for_fc(4)
    macs = apply_fc_event(FcEvent(100, 1), w, acc, g)
    macs += apply_fc_event(FcEvent(100, 3), w, acc, g)
    assert macs == 8
    assert acc.sums[0].tolist() == [1100, 2200, 3300, 4400]


def test_apply_order_independence():
    rng = np.random.default_rng(9)
    g = ConvLayerGeometry(2, 3, 6, 6, kernel=3, stride=1, padding=1)
    w = rng.integers(-40, 41, size=(3, 2, 3, 3)).astype(np.int8)
    t = Tensor(rng.integers(-9, 10, size=(2, 6, 6)).astype(np.int8))
    events, _ = event_stream(t, g)
    events = events[:-1]
    acc1 = Accumulators.for_conv(g)
    for e in events:
        apply_conv_event(e, w, acc1, g)
    acc2 = Accumulators.for_conv(g)
    for e in reversed(events):
        apply_conv_event(e, w, acc2, g)
    assert np.array_equal(acc1.sums, acc2.sums)


def test_accumulator_overflow_faults():
    g = FcLayerGeometry(1, 1)
    w = np.array([[127]], dtype=np.int8)
    acc = Accumulators.for_fc(1)
    acc.sums[0, 0] = 2**31 - 100
    with pytest.raises(AccumulatorOverflow):
        apply_fc_event(FcEvent(127, 0), w, acc, g)


def test_fire_threshold_counts_and_floor():
    layer = LayerSpec("fc", FcLayerGeometry(1, 4))
    acc = Accumulators.for_fc(4)
    acc.sums[0] = [-1, 0, 1, 5]
    res = fire(acc, layer)
    assert res.fired == 2          # strictly positive values only
    assert res.output.data.tolist() == [0, 0, 1, 5]


def test_fire_strict_inequality_at_threshold():
    layer = LayerSpec("fc", FcLayerGeometry(1, 3), fire_threshold=5)
    acc = Accumulators.for_fc(3)
    acc.sums[0] = [5, 6, 4]
    res = fire(acc, layer)
    assert res.fired == 1
    assert res.output.data.tolist() == [5, 6, 5]


def test_fire_fused_pool_reduces_then_thresholds():
    g = ConvLayerGeometry(1, 1, 3, 3, kernel=2)  # out 2x2
    layer = LayerSpec("conv", g, fuse_maxpool=PoolSpec(2))
    acc = Accumulators.for_conv(g)
    acc.sums[0] = [3, 7, -2, 5]
    res = fire(acc, layer)
    assert res.fired == 1
    assert res.output.data.tolist() == [[[7]]]


def test_fire_emits_next_layer_events():
    layer = LayerSpec("fc", FcLayerGeometry(1, 4))
    acc = Accumulators.for_fc(4)
    acc.sums[0] = [-1, 0, 1, 5]
    res = fire(acc, layer, next_geometry=FcLayerGeometry(4, 2), next_layer_index=1)
    body = res.events[:-1]
    assert [(e.neuron_addr, e.value) for e in body] == [(2, 1), (3, 5)]


def test_functional_equals_dense_single_conv():
    rng = np.random.default_rng(21)
    for trial in range(30):
        k = int(rng.choice([1, 3, 5]))
        s = int(rng.choice([1, 2]))
        p = int(rng.integers(0, 2))
        h = int(rng.integers(k + 1, 12))
        ci, co = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        g = ConvLayerGeometry(ci, co, h, h, kernel=k, stride=s, padding=p)
        layer = LayerSpec("conv", g, quant=QuantParams(3, 4, int(rng.integers(-5, 6))))
        w = rng.integers(-60, 61, size=(co, ci, k, k)).astype(np.int8)
        t = Tensor((rng.random((ci, h, h)) < 0.5) * rng.integers(-60, 61, (ci, h, h)))
        net = NetworkSpec([layer])
        got, stats = run_network_functional(net, WeightStore([w]), t)
        want = dense_conv(t.data, w, layer)
        assert np.array_equal(got.data, want), f"trial {trial}"
        # every nonzero becomes an event unless no window covers it (stride > kernel)
        assert stats[0].events == t.nonzero_count() - stats[0].skipped_no_output


def test_functional_zero_input_produces_zero_events():
    g = ConvLayerGeometry(1, 2, 5, 5, kernel=3, stride=1, padding=1)
    net = NetworkSpec([LayerSpec("conv", g)])
    w = WeightStore([np.ones((2, 1, 3, 3), dtype=np.int8)])
    out, stats = run_network_functional(net, w, Tensor(np.zeros((1, 5, 5), dtype=np.int8)))
    assert stats[0].events == 0 and stats[0].macs == 0
    assert not out.data.any()


def test_functional_mac_count_laws():
    rng = np.random.default_rng(33)
    # conv: sum over events of out_channels * pair_count; fc: events * out_neurons
    g = ConvLayerGeometry(2, 3, 7, 7, kernel=3, stride=2, padding=1)
    layer = LayerSpec("conv", g, quant=QuantParams(1, 3, 0))
    w = rng.integers(-20, 21, size=(3, 2, 3, 3)).astype(np.int8)
    t = Tensor((rng.random((2, 7, 7)) < 0.6) * rng.integers(-20, 21, (2, 7, 7)))
    events, _ = event_stream(t, g)
    expected_macs = sum(3 * e.pair_count for e in events[:-1])
    _, stats = run_network_functional(NetworkSpec([layer]), WeightStore([w]), t)
    assert stats[0].macs == expected_macs

    gf = FcLayerGeometry(20, 7)
    wf = rng.integers(-20, 21, size=(20, 7)).astype(np.int8)
    tf = Tensor((rng.random(20) < 0.5) * rng.integers(-20, 21, 20))
    _, stats = run_network_functional(NetworkSpec([LayerSpec("fc", gf)]), WeightStore([wf]), tf)
    assert stats[0].macs == tf.nonzero_count() * 7


def test_functional_equals_dense_full_networks():
    rng = np.random.default_rng(77)
    for trial in range(20):
        h = int(rng.choice([6, 8, 12]))
        c1 = int(rng.integers(1, 3))
        c2 = int(rng.integers(1, 5))
        g1 = ConvLayerGeometry(c1, c2, h, h, kernel=3, stride=1, padding=1)
        pool = PoolSpec(2) if h % 2 == 0 else None
        l1 = LayerSpec("conv", g1, quant=QuantParams(1, 5, 0), fuse_maxpool=pool,
                       bias=rng.integers(-100, 101, c2).astype(np.int32))
        oh = h // 2 if pool else h
        l2 = LayerSpec("fc", FcLayerGeometry(c2 * oh * oh, 6), quant=QuantParams(1, 4, 0))
        net = NetworkSpec([l1, l2])
        weights = WeightStore([
            rng.integers(-50, 51, size=(c2, c1, 3, 3)).astype(np.int8),
            rng.integers(-50, 51, size=(c2 * oh * oh, 6)).astype(np.int8),
        ])
        t = Tensor((rng.random((c1, h, h)) < 0.5) * rng.integers(-50, 51, (c1, h, h)))
        got, _ = run_network_functional(net, weights, t)
        want = dense_network(net, weights, t)
        assert np.array_equal(got.data, want.data), f"trial {trial}"
