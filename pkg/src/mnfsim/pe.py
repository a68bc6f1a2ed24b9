"""Cycle-approximate PE microarchitecture model.

One PE is a short decoupled pipeline fed by its router interface:

    landing queue -> in_fifo -> load (decode + weight-vector issue)
        -> ld_fifo -> dispatcher -> per-MAC-module fifos -> MAC modules
        -> (end of data) activation drain -> fired-event emission

Timing rules, all single-cycle stages with initiation interval 1:

* the load stage decodes one event per cycle and issues one weight-vector
  read per lane group per cycle (the weight SRAM is single ported; one read
  fetches every multiplier's weight for the group)
* a lane group covers up to mac_modules output positions of one event times
  up to multipliers_per_mac of this PE's output channels; the tail group of
  an event leaves lanes idle
* the dispatcher unpacks one group per cycle, routing each position to the
  MAC module that owns its accumulator bank; if several positions of one
  group land on the same bank the group occupies the dispatcher for extra
  cycles, counted as bank-conflict stalls
* each MAC module retires one chunk (<= multipliers_per_mac lane ops,
  read-modify-write on its bank) per cycle; with hazard_policy="stall" a
  chunk touching an address written in the previous two cycles waits for
  the write to land, with the default "forward" policy results bypass and
  reuse never stalls
* after the end-of-data marker flushes through, the activation path drains
  one accumulator per bank per cycle for requantization, then fired events
  leave through the router egress at one per cycle

The arithmetic is applied at decode time at event granularity, so the
accumulator contents are bit-identical to the functional model no matter
how the pipeline stalls. The pipeline itself carries only addresses and
lane counts.

Accumulator bank of output position (oy, ox): when the module count is a
perfect square r*r, bank = (oy mod r) * r + (ox mod r), which spreads the
positions of a dense convolution window over distinct banks. Otherwise,
and for fully connected layers, bank = linear index mod module count.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from .dataflow import Accumulators, expand_conv_event_arrays
from .events import ConvEvent, EndOfData, FcEvent
from .model import HardwareConfig, LayerSpec, requantize_array


@dataclass
class PeCounters:
    events: int = 0
    macs: int = 0                 # lane ops retired
    busy_lane_cycles: int = 0     # sum over cycles of busy multipliers
    active_cycles: int = 0        # cycles with at least one busy multiplier
    total_cycles: int = 0
    idle_input_cycles: int = 0    # pipeline empty, waiting on arrivals
    weight_reads: int = 0         # weight-vector reads
    acc_reads: int = 0            # 32-bit accumulator accesses, read side
    acc_writes: int = 0
    fired: int = 0
    stall_fifo_full: int = 0
    stall_bank_conflict: int = 0
    stall_raw_hazard: int = 0
    stall_backpressure: int = 0   # arrivals held out of a full in_fifo

    def add(self, other: "PeCounters") -> None:
        for f in self.__dataclass_fields__:
            setattr(self, f, getattr(self, f) + getattr(other, f))


def utilization(counters: PeCounters, multipliers: int) -> tuple[float, float]:
    """(active-basis, total-basis) multiplier utilization.

    Active cycles are cycles where the MAC cluster retired at least one lane
    op, so the active basis measures lane packing alone, independent of
    feed gaps, drain, and emission time.
    """
    active = 0.0
    if counters.active_cycles:
        active = counters.busy_lane_cycles / (multipliers * counters.active_cycles)
    total = 0.0
    if counters.total_cycles:
        total = counters.busy_lane_cycles / (multipliers * counters.total_cycles)
    return active, total


def throughput_lower_bound(counters: PeCounters, hw: HardwareConfig) -> int:
    """Cycles can never beat the wider of the MAC array and the weight port."""
    mult = hw.multipliers_per_pe
    return max(-(-counters.macs // mult), counters.weight_reads)


@dataclass(slots=True)
class _Group:
    """One weight-vector's worth of lane work.

    module_ops: [(module, [chunk, ...]), ...] where one chunk is the lane
    work of a single bank access (one output position times this group's
    channel block, or one aligned run of fc neurons), as flat addresses
    into this PE's accumulator array. A module with several chunks costs
    the group extra dispatcher cycles.
    """

    module_ops: list
    lane_ops: int
    needs_read: bool = True


_EOD = object()   # end-of-data token inside the pipeline


@dataclass(slots=True)
class FiredRecord:
    """One fired output with its position, as handed to the router."""

    emit_cycle: int
    value: int
    channel: int = 0   # global output channel (conv)
    y: int = 0
    x: int = 0
    neuron: int = 0    # global output neuron (fc)


class PeLayerSim:
    """One PE over one layer. Drive with step(), or run() to completion.

    arrivals: [(cycle, ConvEvent | FcEvent | EndOfData), ...] sorted by
    cycle with the EndOfData marker last. owned: this PE's contiguous range
    of output channels (conv) or output neurons (fc). weights: the full
    layer weight array; the owned slice is taken here.
    """

    def __init__(self, hw: HardwareConfig, layer: LayerSpec, weights: np.ndarray,
                 owned: range, arrivals: list, start_cycle: int = 0):
        self.hw = hw
        self.layer = layer
        self.g = layer.geometry
        self.owned = owned
        self.arrivals = arrivals
        self.start_cycle = start_cycle
        self.now = start_cycle
        self.c = PeCounters()

        self.modules = hw.mac_modules_per_pe
        self.mpm = hw.multipliers_per_mac
        self.is_conv = layer.kind == "conv"
        lo, hi = owned.start, owned.stop
        if self.is_conv:
            self.acc = Accumulators.for_conv(self.g, channels=len(owned))
            self.acc_pitch = self.g.out_positions
            # owned filters, flat tap axis, widened once
            self._wflat = weights[lo:hi].reshape(hi - lo, self.g.in_channels,
                                                 -1).astype(np.int64)
            r = math.isqrt(self.modules)
            self.bank_square = r if r * r == self.modules else 0
        else:
            self.acc = Accumulators(np.zeros((1, len(owned)), dtype=np.int64))
            self.acc_pitch = len(owned)
            self._wown = weights[:, lo:hi]
            self.bank_square = 0

        self._ai = 0                      # arrivals cursor
        self.in_fifo: deque = deque()
        self.pending_groups: deque = deque()
        self.ld_fifo: deque = deque()
        self.cur_group = None
        self.cur_remaining: dict = {}     # module -> deque of chunks
        self.mac_fifos = [deque() for _ in range(self.modules)]
        self._recent_writes = deque([frozenset(), frozenset()], maxlen=2)
        self._module_eod = [False] * self.modules
        self._flush_left = -1
        self.phase = "mac"                # mac -> drain -> emit -> done
        self._drain_left = 0
        self._emit_queue: deque = deque()
        self.fired: list[FiredRecord] = []
        self.outputs = None               # owned int8 outputs after fire
        self.end_cycle = None

    # ---- decode: arithmetic now, lane groups for the pipeline ----

    def _decode_conv(self, ev: ConvEvent) -> list:
        widx, nidx = expand_conv_event_arrays(ev, self.g)
        taps = self._wflat[:, ev.ch_id, :][:, widx]
        self.acc.sums[:, nidx] += taps * ev.value
        self.acc.check_range(self.acc.sums[:, nidx])
        n_ch = len(self.owned)
        self.c.events += 1
        self.c.macs += len(widx) * n_ch

        if self.bank_square:
            r = self.bank_square
            banks = (nidx // self.g.nc_output % r) * r + (nidx % self.g.nc_output % r)
        else:
            banks = nidx % self.modules
        groups = []
        for cb in range(0, n_ch, self.mpm):
            ch_block = min(self.mpm, n_ch - cb)
            for pb in range(0, len(nidx), self.modules):
                pe_n = nidx[pb:pb + self.modules]
                pe_b = banks[pb:pb + self.modules]
                module_ops: dict = {}
                for nrn, bank in zip(pe_n, pe_b):
                    module_ops.setdefault(int(bank), []).append(
                        [(cb + k) * self.acc_pitch + int(nrn)
                         for k in range(ch_block)])
                groups.append(_Group(sorted(module_ops.items()),
                                     len(pe_n) * ch_block))
        return groups

    def _decode_fc(self, ev: FcEvent) -> list:
        row = self._wown[ev.neuron_addr].astype(np.int64)
        self.acc.sums[0] += row * ev.value
        self.acc.check_range(self.acc.sums[0])
        n = len(self.owned)
        self.c.events += 1
        self.c.macs += n
        # neurons are banked in aligned runs of mpm so one access feeds all
        # multipliers of a module
        groups = []
        lane_width = self.modules * self.mpm
        for base in range(0, n, lane_width):
            width = min(lane_width, n - base)
            module_ops: dict = {}
            for cstart in range(base, base + width, self.mpm):
                bank = (cstart // self.mpm) % self.modules
                module_ops.setdefault(bank, []).append(
                    list(range(cstart, min(cstart + self.mpm, base + width))))
            groups.append(_Group(sorted(module_ops.items()), width))
        return groups

    # ---- cycle step ----

    def step(self) -> None:
        if self.phase == "mac":
            self._step_mac()
        elif self.phase == "drain":
            take = min(self._drain_left, self.modules)
            self._drain_left -= take
            self.c.acc_reads += take
            if self._drain_left == 0:
                self._finish_drain()
        elif self.phase == "emit":
            rec = self._emit_queue.popleft()
            rec.emit_cycle = self.now
            self.fired.append(rec)
            if not self._emit_queue:
                self.phase = "done"
                self.end_cycle = self.now
        self.c.total_cycles += 1
        self.now += 1

    def _step_mac(self) -> None:
        # stages run downstream first so each sees last cycle's state

        # MAC modules: one chunk each
        busy = 0
        written = set()
        for m in range(self.modules):
            if self._module_eod[m]:
                continue
            fifo = self.mac_fifos[m]
            if not fifo:
                continue
            head = fifo[0]
            if head is _EOD:
                fifo.popleft()
                self._module_eod[m] = True
                continue
            if self.hw.hazard_policy == "stall":
                recent = self._recent_writes[0] | self._recent_writes[1]
                if any(a in recent for a in head):
                    self.c.stall_raw_hazard += 1
                    continue
            fifo.popleft()
            busy += len(head)
            written.update(head)
        self._recent_writes.append(frozenset(written))
        if busy:
            self.c.busy_lane_cycles += busy
            self.c.active_cycles += 1
            self.c.acc_reads += busy
            self.c.acc_writes += busy

        if all(self._module_eod):
            if self._flush_left < 0:
                self._flush_left = 2   # let the last writes land
            self._flush_left -= 1
            if self._flush_left < 0:
                self._begin_drain()
            return

        # dispatcher: one chunk per module of the group in flight
        if self.cur_group is None and self.ld_fifo:
            g = self.ld_fifo.popleft()
            self.cur_group = g
            if g is not _EOD:
                self.cur_remaining = {m: deque(chunks)
                                      for m, chunks in g.module_ops}
                passes = max(len(v) for v in self.cur_remaining.values())
                if passes > 1:
                    self.c.stall_bank_conflict += passes - 1
        if self.cur_group is _EOD:
            if all(len(f) < self.hw.fifo_depth for f in self.mac_fifos):
                for f in self.mac_fifos:
                    f.append(_EOD)
                self.cur_group = None
            else:
                self.c.stall_fifo_full += 1
        elif self.cur_group is not None:
            progressed = False
            for m in list(self.cur_remaining):
                if len(self.mac_fifos[m]) < self.hw.fifo_depth:
                    self.mac_fifos[m].append(self.cur_remaining[m].popleft())
                    progressed = True
                    if not self.cur_remaining[m]:
                        del self.cur_remaining[m]
            if not self.cur_remaining:
                self.cur_group = None
            elif not progressed:
                self.c.stall_fifo_full += 1

        # load, issue half: one weight vector per group into ld_fifo
        if self.pending_groups and len(self.ld_fifo) < self.hw.fifo_depth:
            g = self.pending_groups.popleft()
            if g is not _EOD and g.needs_read:
                self.c.weight_reads += 1
            self.ld_fifo.append(g)

        # load, decode half: one event per cycle while group backlog is short
        if self.in_fifo and len(self.pending_groups) <= self.hw.fifo_depth:
            item = self.in_fifo.popleft()
            if isinstance(item, EndOfData):
                self.pending_groups.append(_EOD)
            else:
                groups = (self._decode_conv(item) if self.is_conv
                          else self._decode_fc(item))
                if self.hw.weight_read_mode == "event":
                    for i, g in enumerate(groups):
                        g.needs_read = i == 0
                self.pending_groups.extend(groups)

        # router interface: land due arrivals
        while self._ai < len(self.arrivals) and self.arrivals[self._ai][0] <= self.now:
            if len(self.in_fifo) < self.hw.fifo_depth:
                self.in_fifo.append(self.arrivals[self._ai][1])
                self._ai += 1
            else:
                self.c.stall_backpressure += 1
                break

    def _begin_drain(self) -> None:
        self.phase = "drain"
        self._drain_left = self.acc.sums.size

    def _finish_drain(self) -> None:
        layer = self.layer
        sums = self.acc.sums
        if layer.bias is not None:
            bias = layer.bias.astype(np.int64)
            if self.is_conv:
                sums = sums + bias[self.owned.start:self.owned.stop, None]
            else:
                sums = sums + bias[None, self.owned.start:self.owned.stop]
        q = requantize_array(sums, layer.quant)
        threshold = np.int8(layer.fire_threshold)
        if self.is_conv:
            g = self.g
            q = q.reshape(len(self.owned), g.out_h, g.out_w)
            if layer.fuse_maxpool is not None:
                from .dataflow import _maxpool3
                q = _maxpool3(q, layer.fuse_maxpool.window, layer.fuse_maxpool.stride)
            self.outputs = np.maximum(q, threshold)
            for ch, y, x in np.argwhere(q > threshold):
                self._emit_queue.append(FiredRecord(
                    -1, int(q[ch, y, x]),
                    channel=self.owned.start + int(ch), y=int(y), x=int(x)))
        else:
            q = q.reshape(-1)
            self.outputs = np.maximum(q, threshold)
            for j in np.flatnonzero(q > threshold):
                self._emit_queue.append(FiredRecord(
                    -1, int(q[j]), neuron=self.owned.start + int(j)))
        self.c.fired = len(self._emit_queue)
        if self._emit_queue:
            self.phase = "emit"
        else:
            self.phase = "done"
            self.end_cycle = self.now

    def _pipeline_empty(self) -> bool:
        return (not self.in_fifo and not self.pending_groups and not self.ld_fifo
                and self.cur_group is None and all(not f for f in self.mac_fifos)
                and not any(self._module_eod))

    def run(self) -> "PeLayerSim":
        limit = 50_000_000
        while self.phase != "done":
            if (self.phase == "mac" and self._pipeline_empty()
                    and self._ai < len(self.arrivals)
                    and self.arrivals[self._ai][0] > self.now):
                skip = self.arrivals[self._ai][0] - self.now
                self.c.total_cycles += skip
                self.c.idle_input_cycles += skip
                self.now += skip
            self.step()
            limit -= 1
            if limit <= 0:
                raise RuntimeError("PE simulation did not converge")
        return self
