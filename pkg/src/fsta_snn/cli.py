"""Command-line entry point: ``fsta-snn <command> <config.yaml> [--seed N] [--out DIR]``.

Exit codes: 0 success, 1 invalid input (usage, config, architecture), 2 runtime failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import numerics as nx
from .analysis import (EnergyModel, FiringStats, OpCounts, compare_runs, count_ops, energy,
                       spectrum_report)
from .config import ConfigError, RunConfig, network_spec, parse_config, serialize
from .data import gen_synthetic, load_dataset, save_dataset_containers
from .io import load_tensor_container, read_csv, sha256_file, write_csv, write_matrix_csv, write_pgm
from .model import BuildError, Network
from .train import Dataset, Metrics, evaluate, fit

log = logging.getLogger("fsta_snn")

COMMANDS = ("train", "eval", "spectrum", "energy", "compare", "gen-data")
REPORT_ROOT_ENV = "FSTA_REPORT_ROOT"
EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fsta-snn", description="Spiking networks with frequency-based attention.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", metavar="{" + ",".join(COMMANDS) + "}")
    helps = {
        "train": "train a network and write a checkpoint plus metrics",
        "eval": "evaluate a checkpoint: accuracy, loss, firing rates",
        "spectrum": "spike-map DFT magnitudes per layer and timestep",
        "energy": "synaptic-operation counts and the energy estimate",
        "compare": "firing-rate reduction between two firing.csv files",
        "gen-data": "write a synthetic dataset as tensor containers",
    }
    for name in COMMANDS:
        sp = sub.add_parser(name, help=helps[name])
        sp.add_argument("config", type=Path, help="YAML run configuration")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--out", type=Path, help="override the report root")
    return p


# ------------------------------------------------------------------- runs
@dataclasses.dataclass
class Run:
    command: str
    config: RunConfig
    directory: Path
    artifacts: list[Path] = dataclasses.field(default_factory=list)

    def path(self, *parts) -> Path:
        p = self.directory.joinpath(*parts)
        p.parent.mkdir(parents=True, exist_ok=True)
        self.artifacts.append(p)
        return p

    def write_manifest(self, started: float) -> Path:
        snapshot = serialize(self.config)
        (self.directory / "config.yaml").write_text(snapshot)
        manifest = {
            "command": self.command,
            "run_id": self.directory.name,
            "seed": self.config.seed,
            "version": __version__,
            "numpy": np.__version__,
            "seconds": round(time.time() - started, 3),
            "config": snapshot,
            "artifacts": {str(p.relative_to(self.directory)): sha256_file(p)
                          for p in [self.directory / "config.yaml", *self.artifacts] if p.exists()},
        }
        out = self.directory / "manifest.json"
        out.write_text(json.dumps(manifest, indent=2) + "\n")
        return out


def report_root(cfg: RunConfig) -> Path:
    return Path(cfg.out or os.environ.get(REPORT_ROOT_ENV) or "reports")


def default_run_id(command: str, cfg: RunConfig) -> str:
    digest = hashlib.sha256(serialize(cfg).encode()).hexdigest()[:8]
    return f"{command}-{digest}"


def _firing_rows(stats: FiringStats):
    return [(l, s, n, r) for l, s, n, r in zip(stats.layers, stats.spikes, stats.slots, stats.rates)]


def write_firing_csv(path: Path, stats: FiringStats) -> None:
    write_csv(path, ["layer", "spikes", "slots", "rate"], _firing_rows(stats))


def read_firing_csv(path) -> FiringStats:
    rows = read_csv(path)
    if not rows or set(rows[0]) != {"layer", "spikes", "slots", "rate"}:
        raise ValueError(f"{path}: not a firing.csv (expected columns layer, spikes, slots, rate)")
    return FiringStats([r["layer"] for r in rows], [int(r["spikes"]) for r in rows],
                       [int(r["slots"]) for r in rows])


def _datasets(cfg: RunConfig) -> tuple[Dataset, Dataset]:
    return load_dataset(cfg.data)


def _build(cfg: RunConfig, reference: Dataset) -> Network:
    nx.set_default_dtype(np.dtype(cfg.train.dtype).type)
    spec = network_spec(cfg, reference.x.shape[1:], reference.num_classes)
    return Network(spec, cfg.seed)


def save_checkpoint(path: Path, net: Network, cfg: RunConfig, epoch: int) -> None:
    meta = {"network": net.spec.name, "epoch": epoch, "seed": cfg.seed, "config": serialize(cfg)}
    with path.open("wb") as fh:
        np.savez(fh, __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **net.state_dict())


def load_checkpoint(path, net: Network) -> dict:
    with np.load(path) as z:
        meta = json.loads(bytes(z["__meta__"]).decode()) if "__meta__" in z.files else {}
        if meta.get("network") not in (None, net.spec.name):
            raise BuildError(f"checkpoint holds {meta['network']!r}, config builds {net.spec.name!r}")
        try:
            net.load_state_dict({k: z[k] for k in z.files if k != "__meta__"})
        except (KeyError, nx.ShapeError) as exc:
            raise BuildError(f"checkpoint does not match the configured network: {exc}") from None
    return meta


def _network_for_inference(run: Run, split: str) -> tuple[Network, Dataset]:
    cfg = run.config
    train_set, test_set = _datasets(cfg)
    data = test_set if split == "test" else train_set
    net = _build(cfg, data)
    if cfg.checkpoint:
        load_checkpoint(cfg.checkpoint, net)
    else:
        log.warning("no checkpoint given; using freshly initialised weights (seed %d)", cfg.seed)
    return net.eval(), data


def _subset(data: Dataset, n: int) -> Dataset:
    return Dataset(data.x[:n], data.y[:n], data.name, data.num_classes)


# --------------------------------------------------------------- commands
def cmd_train(run: Run) -> None:
    cfg = run.config
    train_set, test_set = _datasets(cfg)
    net = _build(cfg, train_set)
    log.info("training %s (%d params) on %d samples", net.spec.name, net.parameter_count(), len(train_set))
    rows = []

    def on_epoch(m):
        rows.append(dataclasses.astuple(m))
        log.info("epoch %d  loss %.4f  train %.4f  test %.4f  rate %.4f  (%.1fs)",
                 m.epoch, m.train_loss, m.train_acc, m.test_acc, m.firing_rate, m.seconds)

    fit(net, train_set, test_set, cfg.train, log=on_epoch)
    write_csv(run.path("metrics.csv"), [f.name for f in dataclasses.fields(Metrics)], rows)
    save_checkpoint(run.path("checkpoint.npz"), net, cfg, cfg.train.epochs)
    ev = evaluate(net, test_set, cfg.train.timesteps, cfg.train.eval_batch_size, cfg.train.dtype, cfg.train.loss)
    write_firing_csv(run.path("firing.csv"), ev.firing)
    print(f"accuracy {ev.accuracy:.4f}  loss {ev.loss:.4f}  firing rate {ev.firing.network_rate:.4f}")


def cmd_eval(run: Run) -> None:
    cfg = run.config
    if not cfg.checkpoint:
        raise ConfigError("eval needs 'checkpoint'")
    net, data = _network_for_inference(run, "test")
    ev = evaluate(net, data, cfg.train.timesteps, cfg.train.eval_batch_size, cfg.train.dtype, cfg.train.loss)
    write_csv(run.path("metrics.csv"), ["split", "samples", "loss", "accuracy", "firing_rate"],
              [("test", len(data), ev.loss, ev.accuracy, ev.firing.network_rate)])
    write_firing_csv(run.path("firing.csv"), ev.firing)
    print(f"accuracy {ev.accuracy:.4f}  loss {ev.loss:.4f}  firing rate {ev.firing.network_rate:.4f}")
    for layer, rate in zip(ev.firing.layers, ev.firing.rates):
        print(f"  {layer:<24} {rate:.4f}")


def _load_trace_spikes(path: Path) -> dict[str, np.ndarray]:
    files = sorted(path.glob("*.fsta")) if path.is_dir() else [path]
    if not files:
        raise FileNotFoundError(f"no .fsta spike containers in {path}")
    return {f.stem: load_tensor_container(f) for f in files}


def _traced_batches(net: Network, data: Dataset, cfg: RunConfig, limit: int):
    sub = _subset(data, limit)
    bs = cfg.train.eval_batch_size
    for start in range(0, len(sub), bs):
        xb = sub.x[start:start + bs].astype(cfg.train.dtype)
        yield net.forward(xb, cfg.train.timesteps, trace=True, training=False)[1]


def cmd_spectrum(run: Run) -> None:
    cfg, sc = run.config, run.config.spectrum
    if sc.trace:
        traces = [_load_trace_spikes(Path(sc.trace))]
        source = sc.trace
    else:
        net, data = _network_for_inference(run, sc.split)
        traces = list(_traced_batches(net, data, cfg, sc.max_samples))
        source = net.spec.name
    report = spectrum_report(traces, sc.per_channel, tuple(sc.halfwidths), {"source": source})
    layers = report.layers()
    band_cols = list(report.entries[0].bands)
    rows = []
    for e in report.entries:
        li = layers.index(e.layer)
        stem = f"layer{li}_t{e.timestep}" + (f"_c{e.channel}" if e.channel is not None else "")
        write_matrix_csv(run.path("spectrum", f"{stem}.csv"), e.magnitude)
        write_pgm(run.path("spectrum", f"{stem}.pgm"), e.log_magnitude)
        rows.append((li, e.layer, e.timestep, "" if e.channel is None else e.channel,
                     *[e.bands[b] for b in band_cols]))
    write_csv(run.path("spectrum", "bands.csv"), ["layer_index", "layer", "timestep", "channel", *band_cols], rows)
    print(f"spectrum: {len(report.entries)} maps over {len(layers)} layers -> {run.directory / 'spectrum'}")


def format_energy_mj(joules: float) -> str:
    return f"{joules * 1e3:.2f} mJ"


def cmd_energy(run: Run) -> None:
    cfg, ec = run.config, run.config.energy
    model = EnergyModel(ec.e_ac_pj * 1e-12, ec.e_mac_pj * 1e-12)
    if ec.acs is not None:
        counts = OpCounts(ec.acs, ec.macs)
        source = "config"
    else:
        net, data = _network_for_inference(run, ec.split)
        total = None
        for tr in _traced_batches(net, data, cfg, ec.max_samples):
            c = count_ops(net, tr)
            total = c if total is None else OpCounts(total.acs + c.acs, total.macs + c.macs, c.params,
                                                     c.frozen_params, total.samples + c.samples)
        counts = total.per_sample()
        source = net.spec.name
    e = energy(counts, model)
    write_csv(run.path("energy.csv"), ["source", "acs", "macs", "e_ac_pj", "e_mac_pj", "energy_j", "energy_mj"],
              [(source, float(counts.acs), float(counts.macs), ec.e_ac_pj, ec.e_mac_pj, e, e * 1e3)])
    print(f"ACs {counts.acs / 1e6:.2f}M  MACs {counts.macs / 1e6:.2f}M")
    print(f"Energy: {format_energy_mj(e)}")


def cmd_compare(run: Run) -> None:
    cc = run.config.compare
    if not (cc.base and cc.fsta):
        raise ConfigError("compare needs both 'compare.base' and 'compare.fsta'")
    rep = compare_runs(read_firing_csv(cc.base), read_firing_csv(cc.fsta))
    rows = list(zip(rep.layers, rep.base, rep.fsta, rep.reduction))
    rows.append(("network", rep.network_base, rep.network_fsta, rep.network_reduction))
    write_csv(run.path("reduction.csv"), ["layer", "base_rate", "fsta_rate", "reduction"], rows)
    for layer, b, f, r in rows:
        red = "n/a" if r is None else f"{100 * r:+.2f}%"
        print(f"{layer:<24} {b:.4f} -> {f:.4f}  {red}")


def cmd_gen_data(run: Run) -> None:
    cfg = run.config
    if not cfg.data.kind.startswith("synthetic_"):
        raise ConfigError(f"gen-data needs a synthetic data kind, got {cfg.data.kind!r}")
    train_set, test_set = gen_synthetic(cfg.data)
    paths = save_dataset_containers(run.directory / "data", train_set, test_set)
    run.artifacts.extend(paths)
    print(f"wrote {len(train_set)} train / {len(test_set)} test samples to {run.directory / 'data'}")


HANDLERS = {"train": cmd_train, "eval": cmd_eval, "spectrum": cmd_spectrum, "energy": cmd_energy,
            "compare": cmd_compare, "gen-data": cmd_gen_data}


def run(command: str, cfg: RunConfig) -> Path:
    """Execute ``command`` and return the run directory; exceptions propagate."""
    if command not in HANDLERS:
        raise UsageError(f"unknown command {command!r}; choose from {', '.join(COMMANDS)}")
    started = time.time()
    run_id = cfg.run_id or default_run_id(command, cfg)
    directory = report_root(cfg) / run_id
    directory.mkdir(parents=True, exist_ok=True)
    r = Run(command, cfg, directory)
    HANDLERS[command](r)
    r.write_manifest(started)
    return directory


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage().rstrip() + "\nfsta-snn: error: a command is required")
        cfg = parse_config(args.config)
        if args.seed is not None:
            cfg = dataclasses.replace(cfg, seed=args.seed)
        if args.out is not None:
            cfg = dataclasses.replace(cfg, out=str(args.out))
        run(args.command, cfg)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_INVALID
    except (ConfigError, BuildError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # runtime failures: I/O, corrupt inputs, numerical trouble
        print(f"failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
