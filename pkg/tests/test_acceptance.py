"""Acceptance gate. One test per shipping criterion, run in order; each prints
a single PASS/FAIL line (visible with -s, and mirrored by the -v test status).

Tolerances are pinned here and nowhere else:
  replay golden       exact match, < 1 ms
  mapping counts      exact integers
  equivalence suite   500 instances, zero tolerance, < 5 min
  utilization         >= 0.95 at every density, spread <= 0.05
  count laws          exact integers
  monotonicity        non-strict, 50 nested pairs
  energy example      20.144 pJ to 1e-9; linearity to 1e-12 relative
  throughput bound    bound <= cycles <= 1.25 * bound; fps identity exact
  determinism         byte-identical reports
"""

import math
import time

import numpy as np
import pytest

from mnfsim.cli import main as cli_main
from mnfsim.dataflow import expand_conv_event, run_network_functional
from mnfsim.events import ConvEvent
from mnfsim.gen import build, exact_density_tensor
from mnfsim.mapping import PeCapacity, conv_pe_count, fc_pe_count, map_network
from mnfsim.metrics import EnergyModel, counter_energy, render_json
from mnfsim.model import (
    ConvLayerGeometry,
    FcLayerGeometry,
    HardwareConfig,
    LayerSpec,
    NetworkSpec,
    PoolGeometry,
    QuantParams,
    Tensor,
    WeightStore,
)
from mnfsim.oracle import dense_network, random_instance
from mnfsim.pe import PeCounters, throughput_lower_bound
from mnfsim.sim import first_divergence, simulate_network

HW = HardwareConfig()


def verdict(num: int, desc: str, ok: bool, detail: str = ""):
    line = f"[criterion {num}] {'PASS' if ok else 'FAIL'} {desc}"
    if detail:
        line += f" ({detail})"
    print(line, flush=True)
    assert ok, line


# ---- shared 500-instance suite, run once ----

@pytest.fixture(scope="module")
def suite():
    t0 = time.perf_counter()
    records = []
    for seed in range(500):
        rng = np.random.default_rng(seed)
        net, w, t = random_instance(rng)
        want = dense_network(net, w, t)
        func_out, _ = run_network_functional(net, w, t)
        res = simulate_network(net, w, t)
        records.append({
            "seed": seed,
            "func_diff": first_divergence(func_out, want),
            "sim_diff": first_divergence(res.output, want),
            "net": net,
            "input": t,
            "layer_outputs": res.layer_outputs,
            "stats": res.report.layers,
        })
    return {"elapsed": time.perf_counter() - t0, "records": records}


def test_criterion_1_event_replay_golden():
    g = ConvLayerGeometry(1, 1, 6, 6, kernel=3)   # nc_filter 3, nc_output 4
    assert g.nc_filter == 3 and g.nc_output == 4
    e = ConvEvent(value=1, ch_id=0, start_weight=4, start_neuron=0,
                  x_jump=1, y_jump=1)
    expand_conv_event(e, g)   # warm
    t0 = time.perf_counter()
    pairs = expand_conv_event(e, g)
    dt = time.perf_counter() - t0
    ok = pairs == [(4, 0), (3, 1), (1, 4), (0, 5)] and dt < 1e-3
    verdict(1, "event replay matches the worked walk", ok,
            f"pairs={pairs}, {dt * 1e6:.0f} us")


def test_criterion_2_mapping_reproductions():
    cap = PeCapacity(neurons=800, weights=9000)
    conv = conv_pe_count(ConvLayerGeometry(1, 2, 28, 28, kernel=3, padding=1), cap)
    fc = fc_pe_count(FcLayerGeometry(1568, 128), cap)
    net = NetworkSpec([
        LayerSpec(kind="conv",
                  geometry=ConvLayerGeometry(1, 2, 28, 28, kernel=3, padding=1)),
        LayerSpec(kind="maxpool", geometry=PoolGeometry(2, 28, 28, window=2)),
        LayerSpec(kind="fc", geometry=FcLayerGeometry(392, 10)),
    ], name="three-pe")
    mapped = map_network(net, HW.with_overrides(acc_sram_bytes=800 * 4,
                                                weight_sram_bytes=9000))
    total = mapped.compute_pes + 1
    ok = conv == 2 and fc == 23 and total == 3
    verdict(2, "mapping counts reproduce", ok,
            f"conv={conv}, fc={fc}, small net total={total}")


def test_criterion_3_equivalence_suite(suite):
    func_bad = [r["seed"] for r in suite["records"] if r["func_diff"] is not None]
    sim_bad = [r["seed"] for r in suite["records"] if r["sim_diff"] is not None]
    ok = not func_bad and not sim_bad and suite["elapsed"] < 300.0
    verdict(3, "500 randomized networks match the dense reference exactly", ok,
            f"functional mismatches={func_bad[:5]}, cycle mismatches={sim_bad[:5]}, "
            f"{suite['elapsed']:.1f}s")


def test_criterion_4_utilization_high_and_flat():
    g = ConvLayerGeometry(1, 3, 48, 48, kernel=3, padding=1)
    net = NetworkSpec([LayerSpec(kind="conv", geometry=g,
                                 quant=QuantParams(scale_multiplier=1, shift=5))],
                      name="util")
    w = WeightStore([np.random.default_rng(42)
                     .integers(-7, 8, size=(3, 1, 3, 3)).astype(np.int8)])
    us = []
    for i in range(1, 10):
        t = exact_density_tensor((1, 48, 48), i / 10,
                                 np.random.default_rng([7, i]))
        rep = simulate_network(net, w, t).report
        us.append(rep.layers[0].utilization_active)
    spread = max(us) - min(us)
    ok = min(us) >= 0.95 and spread <= 0.05
    verdict(4, "multiplier utilization stays high and flat across densities", ok,
            f"min={min(us):.4f}, spread={spread:.4f}")


def _window_span(i: int, pad: int, k: int, s: int, out: int) -> int:
    lo = max(0, math.ceil((i + pad - k + 1) / s))
    hi = min(out - 1, (i + pad) // s)
    return max(0, hi - lo + 1)


def _analytic_counts(layer: LayerSpec, inp: np.ndarray):
    """(events, macs) straight from the counting laws, no event machinery."""
    g = layer.geometry
    if layer.kind == "fc":
        n = int(np.count_nonzero(inp))
        return n, n * g.out_neurons
    events = macs = 0
    for ch, iy, ix in zip(*np.nonzero(inp)):
        ny = _window_span(int(iy), g.padding, g.kernel, g.stride, g.out_h)
        nx = _window_span(int(ix), g.padding, g.kernel, g.stride, g.out_w)
        if ny and nx:
            events += 1
            macs += g.out_channels * ny * nx
    return events, macs


def test_criterion_5_count_laws(suite):
    bad = []
    for r in suite["records"]:
        inputs = [r["input"]] + r["layer_outputs"][:-1]
        for layer, t, s in zip(r["net"].layers, inputs, r["stats"]):
            if layer.kind == "maxpool":
                continue
            nonzeros = int(np.count_nonzero(t.data))
            if s.counters.events + s.skipped_no_output != nonzeros:
                bad.append((r["seed"], s.index, "events"))
            ev, macs = _analytic_counts(layer, t.data)
            if s.counters.events != ev or s.counters.macs != macs:
                bad.append((r["seed"], s.index, "macs"))
    verdict(5, "event and MAC counts obey the analytic laws on every instance",
            not bad, f"violations={bad[:5]}")


def test_criterion_6_sparsity_monotonic():
    bad = []
    for i in range(50):
        rng = np.random.default_rng(2000 + i)
        net, w, ta = random_instance(rng)
        mask = rng.random(ta.data.shape) < 0.3
        tb = Tensor(np.where(mask, 0, ta.data).astype(np.int8))
        ra = simulate_network(net, w, ta).report
        rb = simulate_network(net, w, tb).report
        if rb.total_cycles > ra.total_cycles:
            bad.append((2000 + i, "cycles", ra.total_cycles, rb.total_cycles))
        if rb.energy.total_pj > ra.energy.total_pj + 1e-9:
            bad.append((2000 + i, "energy", ra.energy.total_pj, rb.energy.total_pj))
    verdict(6, "zeroing more activations never costs cycles or energy",
            not bad, f"violations={bad[:3]}")


def test_criterion_7_energy_worked_example():
    em = EnergyModel()
    c = PeCounters(weight_reads=1, acc_reads=1, acc_writes=1, macs=1)
    one = counter_energy(c, em).total_pj
    ten = counter_energy(PeCounters(weight_reads=10, acc_reads=10, acc_writes=10,
                                    macs=10), em).total_pj
    ok = abs(one - 20.144) < 1e-9 and abs(ten - 10 * one) < 1e-12 * ten
    verdict(7, "per-access energy example totals 20.144 pJ and scales linearly",
            ok, f"one={one!r}")


def test_criterion_8_throughput_bound_and_rate_identity():
    net, w, t = build("vgg-like", seed=11, density=0.5)
    rep = simulate_network(net, w, t, hw=HW).report
    bound = sum(throughput_lower_bound(s.counters, HW) for s in rep.layers)
    ratio = rep.total_cycles / bound
    fps_exact = rep.frames_per_second == HW.frequency_mhz * 1e6 / rep.total_cycles
    ok = bound <= rep.total_cycles <= 1.25 * bound and fps_exact
    verdict(8, "cycles sit within 1.25x of the throughput floor; frame rate "
               "is the cycle identity", ok,
            f"cycles={rep.total_cycles}, bound={bound}, ratio={ratio:.4f}")


def test_criterion_9_byte_identical_reports(tmp_path):
    net, w, t = build("tiny", seed=5, density=0.4)
    renders = [render_json(simulate_network(net, w, t, seed=3,
                                            parallel_pes=par).report)
               for par in (False, False, True)]
    d = tmp_path
    assert cli_main(["gen", "--preset", "tiny", "--out-dir", str(d),
                     "--seed", "5"]) == 0
    sweeps = []
    for name, jobs in (("s1.csv", "1"), ("s2.csv", "2")):
        assert cli_main(["run", "--network", str(d / "network.txt"),
                         "--weights", str(d / "weights.mnfw"),
                         "--density-sweep", "0.2:0.6:0.2", "--jobs", jobs,
                         "--out", str(d / name)]) == 0
        sweeps.append((d / name).read_bytes())
    ok = renders[0] == renders[1] == renders[2] and sweeps[0] == sweeps[1]
    verdict(9, "reruns and parallel runs produce byte-identical reports", ok)
