"""Command line interface.

Subcommands: run, map, gen, verify, report. Exit codes: 0 success, 1 usage,
2 validation or file-format failure, 3 output mismatch against the dense
reference or an expected tensor.

Hardware and energy parameters are overridden with dotted flags handled
before normal option parsing, e.g.

    mnfsim run --network n.txt ... --hw.fifo_depth=8 --energy.noc_hop_pj=0.1
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields

import numpy as np

from ._version import __version__
from .gen import PRESETS, build, exact_density_tensor
from .mapping import UnmappableLayer, map_network
from .metrics import RENDERERS, EnergyModel, parse_report_json
from .model import HardwareConfig, NetworkSpec, Tensor, validate_network, validate_weights
from .netio import (
    FileFormatError,
    ParseError,
    atomic_write_text,
    read_network,
    read_tensor,
    read_weights,
    write_network,
    write_tensor,
    write_weights,
)
from .sim import first_divergence, simulate_network, verify_against_oracle

USAGE_EXIT = 1
VALIDATION_EXIT = 2
MISMATCH_EXIT = 3


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    """argparse maps usage problems to exit code 2; this tool reserves 2 for
    validation failures, so usage errors are remapped to 1."""

    def error(self, message):
        raise CliError(USAGE_EXIT, f"{self.prog}: {message}")


def _split_override_flags(argv):
    rest, hw_kv, en_kv = [], {}, {}
    for a in argv:
        for prefix, sink in (("--hw.", hw_kv), ("--energy.", en_kv)):
            if a.startswith(prefix):
                body = a[len(prefix):]
                if "=" not in body:
                    raise CliError(USAGE_EXIT,
                                   f"{a!r}: expected {prefix}<field>=<value>")
                k, v = body.split("=", 1)
                sink[k] = v
                break
        else:
            rest.append(a)
    return rest, hw_kv, en_kv


def _coerce_overrides(cls, kv, what):
    defaults = cls()
    valid = {f.name for f in fields(cls)}
    out = {}
    for k, v in kv.items():
        if k not in valid:
            raise CliError(VALIDATION_EXIT,
                           f"unknown {what} field '{k}' (have: {', '.join(sorted(valid))})")
        cur = getattr(defaults, k)
        try:
            if isinstance(cur, bool):
                if v.lower() not in ("0", "1", "true", "false", "yes", "no"):
                    raise ValueError(v)
                out[k] = v.lower() in ("1", "true", "yes")
            elif isinstance(cur, int):
                out[k] = int(v)
            elif isinstance(cur, float):
                out[k] = float(v)
            else:
                out[k] = v
        except ValueError:
            raise CliError(VALIDATION_EXIT,
                           f"{what}.{k}: cannot parse {v!r} as {type(cur).__name__}") from None
    return out


def _load_configs(hw_kv, en_kv):
    hw = HardwareConfig(**_coerce_overrides(HardwareConfig, hw_kv, "hw"))
    en = EnergyModel(**_coerce_overrides(EnergyModel, en_kv, "energy"))
    return hw, en


def _load_network(path: str) -> NetworkSpec:
    net = read_network(path)
    violations = validate_network(net)
    if violations:
        lines = [f"  layer {v.layer}: [{v.rule}] {v.message}" for v in violations]
        raise CliError(VALIDATION_EXIT,
                       "network validation failed:\n" + "\n".join(lines))
    return net


def _load_bundle(args):
    net = _load_network(args.network)
    weights = read_weights(args.weights)
    violations = validate_weights(net, weights)
    if violations:
        lines = [f"  layer {v.layer}: [{v.rule}] {v.message}" for v in violations]
        raise CliError(VALIDATION_EXIT,
                       "weight validation failed:\n" + "\n".join(lines))
    return net, weights


def _check_input_shape(net: NetworkSpec, t: Tensor):
    want = net.input_shape()
    flat_ok = len(want) == 1 and t.data.size == want[0]
    if t.dims != want and not flat_ok:
        raise CliError(VALIDATION_EXIT,
                       f"input tensor is {t.dims}, network expects {want}")


def _emit(text: str, out_path):
    if out_path:
        atomic_write_text(out_path, text)
    else:
        sys.stdout.write(text)


def _digest_extra(args) -> tuple:
    return (f"network={os.path.basename(args.network)}",
            f"input={os.path.basename(args.input) if args.input else ''}")


# ---- run ----

def _parse_sweep(spec: str):
    try:
        a, b, step = (float(x) for x in spec.split(":"))
    except ValueError:
        raise CliError(USAGE_EXIT,
                       f"--density-sweep {spec!r}: expected start:stop:step") from None
    if step <= 0 or a < 0 or b > 1 or a > b:
        raise CliError(VALIDATION_EXIT,
                       f"--density-sweep {spec!r}: need 0 <= start <= stop <= 1, step > 0")
    out = []
    d = a
    while d <= b + 1e-9:
        out.append(round(d, 10))
        d += step
    return out


def _sweep_point(job):
    """Top level so a process pool can pickle it."""
    net, weights, density, seed, index, hw, en, parallel, verify = job
    rng = np.random.default_rng([seed, index])
    t = exact_density_tensor(net.input_shape(), density, rng)
    res = simulate_network(net, weights, t, hw=hw, energy=en,
                           seed=seed, parallel_pes=parallel)
    bad = verify_against_oracle(net, weights, t, res.output) if verify else None
    r = res.report
    ua = (sum(s.counters.busy_lane_cycles for s in r.layers)
          / max(1, hw.multipliers_per_pe
                * sum(s.counters.active_cycles for s in r.layers)))
    ut = (sum(s.counters.busy_lane_cycles for s in r.layers)
          / max(1, hw.multipliers_per_pe
                * sum(s.counters.total_cycles for s in r.layers)))
    return {
        "density": density,
        "cycles": r.total_cycles,
        "events": sum(s.counters.events for s in r.layers),
        "macs": sum(s.counters.macs for s in r.layers),
        "fired": sum(s.counters.fired for s in r.layers),
        "utilization_active": ua,
        "utilization_total": ut,
        "total_pj": r.energy.total_pj,
        "frames_per_second": r.frames_per_second,
        "mismatch": bad,
    }


def _sweep_csv(rows) -> str:
    cols = ["density", "cycles", "events", "macs", "fired",
            "utilization_active", "utilization_total", "total_pj",
            "frames_per_second"]
    lines = [",".join(cols)]
    for r in rows:
        lines.append(",".join(repr(r[c]) if isinstance(r[c], float) else str(r[c])
                              for c in cols))
    return "\n".join(lines) + "\n"


def _cmd_run(args, hw, en):
    net, weights = _load_bundle(args)

    if args.density_sweep:
        densities = _parse_sweep(args.density_sweep)
        jobs = [(net, weights, d, args.seed, i, hw, en, args.parallel_pes,
                 not args.no_verify)
                for i, d in enumerate(densities)]
        if args.jobs > 1:
            with ProcessPoolExecutor(max_workers=args.jobs) as pool:
                rows = list(pool.map(_sweep_point, jobs))
        else:
            rows = [_sweep_point(j) for j in jobs]
        for r in rows:
            if r["mismatch"] is not None:
                i, got, want = r["mismatch"]
                raise CliError(MISMATCH_EXIT,
                               f"density {r['density']}: output diverges from "
                               f"reference at flat index {i}: got {got}, want {want}")
            del r["mismatch"]
        _emit(_sweep_csv(rows), args.out)
        if args.out:
            from .plots import save_energy_vs_density, save_utilization_vs_density
            stem = os.path.splitext(args.out)[0]
            paths = [save_utilization_vs_density(rows, stem + "-utilization.png"),
                     save_energy_vs_density(rows, stem + "-energy.png")]
            sys.stderr.write("".join(f"wrote {p}\n" for p in [args.out] + paths))
        return 0

    if not args.input:
        raise CliError(USAGE_EXIT, "run needs --input (or --density-sweep)")
    t = read_tensor(args.input)
    _check_input_shape(net, t)
    res = simulate_network(net, weights, t, hw=hw, energy=en, seed=args.seed,
                           parallel_pes=args.parallel_pes,
                           extra_digest=_digest_extra(args))
    if not args.no_verify:
        bad = verify_against_oracle(net, weights, t, res.output)
        if bad is not None:
            i, got, want = bad
            raise CliError(MISMATCH_EXIT,
                           f"output diverges from reference at flat index {i}: "
                           f"got {got}, want {want}")
    _emit(RENDERERS[args.format](res.report), args.out)
    if args.save_output:
        write_tensor(args.save_output, res.output)
    if args.figures:
        if not args.out:
            raise CliError(USAGE_EXIT, "--figures needs --out to anchor file names")
        from .plots import save_layer_breakdown
        p = save_layer_breakdown(res.report, os.path.splitext(args.out)[0]
                                 + "-layers.png")
        sys.stderr.write(f"wrote {p}\n")
    return 0


# ---- map ----

def _cmd_map(args, hw, en):
    net = _load_network(args.network)
    mapped = map_network(net, hw)
    lines = [f"network: {net.name}",
             f"mesh: {mapped.grid_rows}x{mapped.grid_cols} "
             f"({mapped.compute_pes} compute + 1 storage)",
             f"pe capacity: {mapped.capacity.neurons} accumulators, "
             f"{mapped.capacity.weights} weight bytes"]
    cap = mapped.capacity
    for m, layer in zip(mapped.layers, net.layers):
        if m.pe_count == 0:
            lines.append(f"layer {m.layer_index} ({m.kind}): storage only")
            continue
        spans = ", ".join(
            f"pe{a.pe}:[{a.start},{a.stop}) acc {a.acc_words}/{cap.neurons} "
            f"wB {a.weight_bytes}/{cap.weights}"
            for a in m.assignments)
        lines.append(f"layer {m.layer_index} ({m.kind}): {m.pe_count} PEs  {spans}")
    _emit("\n".join(lines) + "\n", args.out)
    return 0


# ---- gen ----

def _cmd_gen(args, hw, en):
    net, weights, inp = build(args.preset, seed=args.seed, density=args.density,
                              activation_density=args.activation_density)
    os.makedirs(args.out_dir, exist_ok=True)
    net_path = os.path.join(args.out_dir, "network.txt")
    w_path = os.path.join(args.out_dir, "weights.mnfw")
    t_path = os.path.join(args.out_dir, "input.mnft")
    write_network(net_path, net)
    write_weights(w_path, weights)
    write_tensor(t_path, inp)
    sys.stdout.write("".join(f"wrote {p}\n" for p in (net_path, w_path, t_path)))
    return 0


# ---- verify ----

def _cmd_verify(args, hw, en):
    net, weights = _load_bundle(args)
    t = read_tensor(args.input)
    _check_input_shape(net, t)
    res = simulate_network(net, weights, t, hw=hw, energy=en, seed=args.seed)
    if args.expected:
        want = read_tensor(args.expected)
        bad = first_divergence(res.output, want)
        against = "expected tensor"
    else:
        bad = verify_against_oracle(net, weights, t, res.output)
        against = "dense reference"
    if bad is not None:
        i, got, want_v = bad
        raise CliError(MISMATCH_EXIT,
                       f"mismatch vs {against} at flat index {i}: "
                       f"got {got}, want {want_v}")
    sys.stdout.write(f"output matches {against} "
                     f"({res.output.data.size} values)\n")
    return 0


# ---- report ----

def _cmd_report(args, hw, en):
    with open(args.input_report, "r") as f:
        report = parse_report_json(f.read())
    _emit(RENDERERS[args.format](report), args.out)
    if args.figures:
        if not args.out:
            raise CliError(USAGE_EXIT, "--figures needs --out to anchor file names")
        from .plots import save_layer_breakdown
        p = save_layer_breakdown(report, os.path.splitext(args.out)[0]
                                 + "-layers.png")
        sys.stderr.write(f"wrote {p}\n")
    return 0


# ---- wiring ----

def _build_parser():
    p = _Parser(prog="mnfsim",
                description="event-driven sparse CNN accelerator simulator")
    p.add_argument("--version", action="version", version=f"mnfsim {__version__}")
    sub = p.add_subparsers(dest="cmd", required=True)

    run = sub.add_parser("run", help="simulate a network on an input")
    run.add_argument("--network", required=True)
    run.add_argument("--weights", required=True)
    run.add_argument("--input")
    run.add_argument("--out", help="report file (default: stdout)")
    run.add_argument("--format", choices=sorted(RENDERERS), default="text")
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--no-verify", action="store_true",
                     help="skip the dense reference check")
    run.add_argument("--figures", action="store_true",
                     help="render per-layer figures next to --out")
    run.add_argument("--save-output", help="write the output tensor here")
    run.add_argument("--density-sweep", metavar="A:B:STEP",
                     help="sweep generated inputs over densities; writes CSV")
    run.add_argument("--jobs", type=int, default=1,
                     help="process workers for the sweep")
    run.add_argument("--parallel-pes", action="store_true",
                     help="simulate PEs on threads (identical results)")
    run.set_defaults(fn=_cmd_run)

    mp = sub.add_parser("map", help="show the PE mapping for a network")
    mp.add_argument("--network", required=True)
    mp.add_argument("--out")
    mp.set_defaults(fn=_cmd_map)

    gen = sub.add_parser("gen", help="generate a preset workload")
    gen.add_argument("--preset", choices=PRESETS, required=True)
    gen.add_argument("--out-dir", required=True)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--density", type=float, default=0.5)
    gen.add_argument("--activation-density", type=float, default=None)
    gen.set_defaults(fn=_cmd_gen)

    ver = sub.add_parser("verify", help="check simulation output")
    ver.add_argument("--network", required=True)
    ver.add_argument("--weights", required=True)
    ver.add_argument("--input", required=True)
    ver.add_argument("--expected", help="tensor file to compare against "
                                        "(default: dense reference)")
    ver.add_argument("--seed", type=int, default=0)
    ver.set_defaults(fn=_cmd_verify)

    rep = sub.add_parser("report", help="re-render a saved JSON report")
    rep.add_argument("--in", dest="input_report", required=True)
    rep.add_argument("--format", choices=sorted(RENDERERS), default="text")
    rep.add_argument("--out")
    rep.add_argument("--figures", action="store_true")
    rep.set_defaults(fn=_cmd_report)
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        rest, hw_kv, en_kv = _split_override_flags(argv)
        hw, en = _load_configs(hw_kv, en_kv)
        args = _build_parser().parse_args(rest)
        return args.fn(args, hw, en)
    except CliError as e:
        sys.stderr.write(f"error: {e}\n")
        return e.code
    except (ParseError, FileFormatError, UnmappableLayer, UnicodeDecodeError) as e:
        sys.stderr.write(f"error: {e}\n")
        return VALIDATION_EXIT
    except OSError as e:
        sys.stderr.write(f"error: {e}\n")
        return VALIDATION_EXIT


if __name__ == "__main__":
    sys.exit(main())
