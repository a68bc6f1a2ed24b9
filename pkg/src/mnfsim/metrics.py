"""Energy accounting and simulation reports.

Energy is derived from event counters, never from wall-clock time. All
figures are picojoules. Float formatting goes through repr so a report is
byte-identical across runs with the same configuration and seed.
"""

from __future__ import annotations

import hashlib
import io
import json
from dataclasses import dataclass, field, fields, replace

from ._version import __version__ as _pkg_version
from .model import HardwareConfig
from .pe import PeCounters


@dataclass(frozen=True)
class EnergyModel:
    """Per-access costs in pJ.

    weight_read_pj covers one weight-vector fetch. acc_access_pj is one
    32-bit accumulator SRAM access, charged separately for the read and the
    write of a read-modify-write. registers_per_mac pipeline registers are
    charged per lane op. noc_hop_pj of 0 keeps interconnect energy out of
    the totals unless a cost is supplied. dram_per_word_pj applies to the
    optional one-time weight load, 32 bits per word, off by default.
    """

    weight_read_pj: float = 12.35
    acc_access_pj: float = 3.87
    register_pj: float = 0.018
    registers_per_mac: int = 3
    noc_hop_pj: float = 0.0
    dram_per_word_pj: float = 256.0
    charge_dram_weight_load: bool = False

    def with_overrides(self, **kw) -> "EnergyModel":
        return replace(self, **kw)


@dataclass
class EnergyBreakdown:
    weight_sram_pj: float = 0.0
    acc_sram_pj: float = 0.0
    register_pj: float = 0.0
    noc_pj: float = 0.0
    dram_pj: float = 0.0

    @property
    def total_pj(self) -> float:
        return (self.weight_sram_pj + self.acc_sram_pj + self.register_pj
                + self.noc_pj + self.dram_pj)

    def add(self, other: "EnergyBreakdown") -> None:
        for f in fields(self):
            setattr(self, f.name, getattr(self, f.name) + getattr(other, f.name))


def counter_energy(c: PeCounters, em: EnergyModel, flit_hops: int = 0) -> EnergyBreakdown:
    return EnergyBreakdown(
        weight_sram_pj=c.weight_reads * em.weight_read_pj,
        acc_sram_pj=(c.acc_reads + c.acc_writes) * em.acc_access_pj,
        register_pj=c.macs * em.registers_per_mac * em.register_pj,
        noc_pj=flit_hops * em.noc_hop_pj,
    )


def dram_weight_load_energy(total_weight_bytes: int, em: EnergyModel) -> float:
    if not em.charge_dram_weight_load:
        return 0.0
    words = -(-total_weight_bytes // 4)
    return words * em.dram_per_word_pj


@dataclass
class LayerStats:
    """One simulated layer, counters summed over its PEs."""

    index: int
    name: str
    kind: str
    pe_count: int
    cycles: int                  # wall clock from layer start to barrier
    counters: PeCounters
    energy: EnergyBreakdown
    utilization_active: float
    utilization_total: float
    noc_flit_hops: int = 0
    skipped_no_output: int = 0


@dataclass
class SimReport:
    network: str
    version: str
    config_hash: str
    seed: int
    frequency_mhz: float
    num_pes_used: int
    layers: list
    total_cycles: int
    energy: EnergyBreakdown
    frames_per_second: float = 0.0
    frames_per_joule: float = 0.0

    def finish(self) -> "SimReport":
        """Derive the rate figures from cycles and energy."""
        if self.total_cycles:
            self.frames_per_second = self.frequency_mhz * 1e6 / self.total_cycles
        if self.energy.total_pj:
            self.frames_per_joule = 1.0 / (self.energy.total_pj * 1e-12)
        return self


def config_digest(hw: HardwareConfig, em: EnergyModel, extra: tuple = ()) -> str:
    parts = [f"hw.{f.name}={getattr(hw, f.name)!r}" for f in fields(hw)]
    parts += [f"energy.{f.name}={getattr(em, f.name)!r}" for f in fields(em)]
    parts += [str(x) for x in extra]
    return hashlib.sha256("\n".join(parts).encode()).hexdigest()


def new_report(network: str, hw: HardwareConfig, em: EnergyModel, seed: int,
               extra_digest: tuple = ()) -> SimReport:
    return SimReport(
        network=network,
        version=_pkg_version,
        config_hash=config_digest(hw, em, extra_digest),
        seed=seed,
        frequency_mhz=hw.frequency_mhz,
        num_pes_used=0,
        layers=[],
        total_cycles=0,
        energy=EnergyBreakdown(),
    )


# ---- rendering ----

_CSV_COLUMNS = [
    "layer", "name", "kind", "pe_count", "cycles", "events", "macs", "fired",
    "weight_reads", "acc_reads", "acc_writes",
    "stall_fifo_full", "stall_bank_conflict", "stall_raw_hazard",
    "stall_backpressure", "noc_flit_hops",
    "utilization_active", "utilization_total",
    "weight_sram_pj", "acc_sram_pj", "register_pj", "noc_pj", "dram_pj",
    "total_pj",
]


def _layer_row(s: LayerStats) -> list:
    c, e = s.counters, s.energy
    return [s.index, s.name, s.kind, s.pe_count, s.cycles, c.events, c.macs,
            c.fired, c.weight_reads, c.acc_reads, c.acc_writes,
            c.stall_fifo_full, c.stall_bank_conflict, c.stall_raw_hazard,
            c.stall_backpressure, s.noc_flit_hops,
            repr(s.utilization_active), repr(s.utilization_total),
            repr(e.weight_sram_pj), repr(e.acc_sram_pj), repr(e.register_pj),
            repr(e.noc_pj), repr(e.dram_pj), repr(e.total_pj)]


def _total_row(r: SimReport) -> list:
    c = PeCounters()
    for s in r.layers:
        c.add(s.counters)
    hops = sum(s.noc_flit_hops for s in r.layers)
    e = r.energy
    return ["TOTAL", r.network, "", r.num_pes_used, r.total_cycles, c.events,
            c.macs, c.fired, c.weight_reads, c.acc_reads, c.acc_writes,
            c.stall_fifo_full, c.stall_bank_conflict, c.stall_raw_hazard,
            c.stall_backpressure, hops, "", "",
            repr(e.weight_sram_pj), repr(e.acc_sram_pj), repr(e.register_pj),
            repr(e.noc_pj), repr(e.dram_pj), repr(e.total_pj)]


def render_csv(report: SimReport) -> str:
    import csv

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(_CSV_COLUMNS)
    for s in report.layers:
        w.writerow(_layer_row(s))
    w.writerow(_total_row(report))
    return buf.getvalue()


def _breakdown_dict(e: EnergyBreakdown) -> dict:
    return {"weight_sram_pj": e.weight_sram_pj, "acc_sram_pj": e.acc_sram_pj,
            "register_pj": e.register_pj, "noc_pj": e.noc_pj,
            "dram_pj": e.dram_pj, "total_pj": e.total_pj}


def render_json(report: SimReport) -> str:
    layers = []
    for s in report.layers:
        c = s.counters
        layers.append({
            "layer": s.index, "name": s.name, "kind": s.kind,
            "pe_count": s.pe_count, "cycles": s.cycles,
            "events": c.events, "macs": c.macs, "fired": c.fired,
            "weight_reads": c.weight_reads,
            "acc_reads": c.acc_reads, "acc_writes": c.acc_writes,
            "stalls": {
                "fifo_full": c.stall_fifo_full,
                "bank_conflict": c.stall_bank_conflict,
                "raw_hazard": c.stall_raw_hazard,
                "backpressure": c.stall_backpressure,
            },
            "noc_flit_hops": s.noc_flit_hops,
            "skipped_no_output": s.skipped_no_output,
            "utilization_active": s.utilization_active,
            "utilization_total": s.utilization_total,
            "energy": _breakdown_dict(s.energy),
        })
    doc = {
        "network": report.network,
        "version": report.version,
        "config_hash": report.config_hash,
        "seed": report.seed,
        "frequency_mhz": report.frequency_mhz,
        "num_pes_used": report.num_pes_used,
        "total_cycles": report.total_cycles,
        "frames_per_second": report.frames_per_second,
        "frames_per_joule": report.frames_per_joule,
        "energy": _breakdown_dict(report.energy),
        "layers": layers,
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def render_text(report: SimReport) -> str:
    out = []
    out.append(f"network: {report.network}")
    out.append(f"version: {report.version}")
    out.append(f"config:  {report.config_hash}")
    out.append(f"seed:    {report.seed}")
    out.append("")
    header = (f"{'layer':>5} {'kind':<5} {'pes':>3} {'cycles':>10} "
              f"{'events':>9} {'macs':>11} {'fired':>9} {'wreads':>9} "
              f"{'util':>7} {'energy_pj':>16}")
    out.append(header)
    out.append("-" * len(header))
    for s in report.layers:
        c = s.counters
        out.append(f"{s.index:>5} {s.kind:<5} {s.pe_count:>3} {s.cycles:>10} "
                   f"{c.events:>9} {c.macs:>11} {c.fired:>9} "
                   f"{c.weight_reads:>9} {s.utilization_active:>7.4f} "
                   f"{s.energy.total_pj:>16.3f}")
    out.append("-" * len(header))
    e = report.energy
    out.append(f"total cycles:      {report.total_cycles}")
    out.append(f"total energy (pJ): {repr(e.total_pj)}")
    out.append(f"  weight sram:     {repr(e.weight_sram_pj)}")
    out.append(f"  acc sram:        {repr(e.acc_sram_pj)}")
    out.append(f"  registers:       {repr(e.register_pj)}")
    out.append(f"  noc:             {repr(e.noc_pj)}")
    out.append(f"  dram:            {repr(e.dram_pj)}")
    out.append(f"frames/s:          {repr(report.frames_per_second)}")
    out.append(f"frames/J:          {repr(report.frames_per_joule)}")
    return "\n".join(out) + "\n"


def parse_report_json(text: str) -> SimReport:
    """Rebuild a SimReport from render_json output."""
    doc = json.loads(text)
    layers = []
    for l in doc["layers"]:
        st = l["stalls"]
        c = PeCounters(
            events=l["events"], macs=l["macs"], fired=l["fired"],
            weight_reads=l["weight_reads"], acc_reads=l["acc_reads"],
            acc_writes=l["acc_writes"], stall_fifo_full=st["fifo_full"],
            stall_bank_conflict=st["bank_conflict"],
            stall_raw_hazard=st["raw_hazard"],
            stall_backpressure=st["backpressure"])
        e = l["energy"]
        layers.append(LayerStats(
            index=l["layer"], name=l["name"], kind=l["kind"],
            pe_count=l["pe_count"], cycles=l["cycles"], counters=c,
            energy=EnergyBreakdown(
                weight_sram_pj=e["weight_sram_pj"], acc_sram_pj=e["acc_sram_pj"],
                register_pj=e["register_pj"], noc_pj=e["noc_pj"],
                dram_pj=e["dram_pj"]),
            utilization_active=l["utilization_active"],
            utilization_total=l["utilization_total"],
            noc_flit_hops=l["noc_flit_hops"],
            skipped_no_output=l["skipped_no_output"]))
    te = doc["energy"]
    return SimReport(
        network=doc["network"], version=doc["version"],
        config_hash=doc["config_hash"], seed=doc["seed"],
        frequency_mhz=doc["frequency_mhz"], num_pes_used=doc["num_pes_used"],
        layers=layers, total_cycles=doc["total_cycles"],
        energy=EnergyBreakdown(
            weight_sram_pj=te["weight_sram_pj"], acc_sram_pj=te["acc_sram_pj"],
            register_pj=te["register_pj"], noc_pj=te["noc_pj"],
            dram_pj=te["dram_pj"]),
        frames_per_second=doc["frames_per_second"],
        frames_per_joule=doc["frames_per_joule"])


RENDERERS = {"text": render_text, "json": render_json, "csv": render_csv}
