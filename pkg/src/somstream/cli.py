"""Command line: ``somstream {generate,train,run,evaluate,pipeline}``.

Every command takes an optional ``--config`` key-value file whose keys mirror
the long flags (dashes become underscores); flags given on the command line
win over config keys. The default output directory comes from
``$SOMSTREAM_OUTPUT_DIR`` or ``./somstream-out``.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

from .core import ConfigError, DataError, ParseError, UsageError
from .evaluation import emit_report, windowed_evaluate
from .kvfile import read_kv
from .offline import ModelVersionError, atomic_write_text, load_model, save_model, train_offline
from .online import DEFAULT_ETA, OnlineState, format_log, process_stream, read_log
from .som import BatchTrainConfig
from .streams import SphericalStreamConfig, generate_spherical, load_delimited, split_offline, write_stream

log = logging.getLogger("somstream")

OUTPUT_ENV = "SOMSTREAM_OUTPUT_DIR"


class SchemaError(ValueError):
    """A model and a stream file disagree on features or classes."""


@dataclass
class RunConfig:
    stream: Optional[str] = None
    generator: Optional[str] = None
    grid_dim: int = 2
    eta: float = DEFAULT_ETA
    # None leaves a generator's own rng_seed alone; training then uses 0
    seed: Optional[int] = None
    windows: int = 50
    offline_fraction: float = 0.10
    split_mode: str = "head"
    avg_output_mode: str = "verbatim"
    variant: str = "adaptive"
    scaling: bool = True
    max_epochs: int = 100
    output_dir: Optional[str] = None

    def validate(self) -> "RunConfig":
        if self.grid_dim < 1:
            raise ConfigError("grid_dim must be >= 1")
        if not 0.0 < self.eta < 1.0:
            raise ConfigError("eta must lie in (0, 1)")
        if self.windows < 1:
            raise ConfigError("windows must be >= 1")
        if not 0.0 < self.offline_fraction < 1.0:
            raise ConfigError("offline_fraction must lie in (0, 1)")
        if self.split_mode not in ("head", "stratified"):
            raise ConfigError("split_mode must be 'head' or 'stratified'")
        if self.variant not in ("adaptive", "frozen"):
            raise ConfigError("variant must be 'adaptive' or 'frozen'")
        if self.avg_output_mode not in ("verbatim", "running_mean"):
            raise ConfigError("avg_output_mode must be 'verbatim' or 'running_mean'")
        return self

    @property
    def out(self) -> Path:
        return Path(self.output_dir or os.environ.get(OUTPUT_ENV) or "somstream-out")

    def train_config(self) -> BatchTrainConfig:
        return BatchTrainConfig(max_epochs=self.max_epochs, rng_seed=self.seed or 0)

    @classmethod
    def build(cls, config_path: Optional[str] = None, **overrides) -> "RunConfig":
        """Defaults, then the config file, then non-``None`` overrides."""
        cfg = cls()
        if config_path:
            for key, value in read_kv(config_path).items():
                if key not in _CONVERTERS:
                    raise ConfigError(f"unknown run config key {key!r} in {config_path}")
                try:
                    setattr(cfg, key, _CONVERTERS[key](value))
                except ValueError:
                    raise ConfigError(f"invalid value for {key!r}: {value!r}") from None
        for key, value in overrides.items():
            if key not in _CONVERTERS:
                raise ConfigError(f"unknown run config key {key!r}")
            if value is not None:
                setattr(cfg, key, value)
        return cfg.validate()


def _boolean(value: str) -> bool:
    lowered = value.lower()
    if lowered in ("true", "yes", "1"):
        return True
    if lowered in ("false", "no", "0"):
        return False
    raise ValueError(value)


_CONVERTERS = {
    "stream": str, "generator": str, "grid_dim": int, "eta": float, "seed": int,
    "windows": int, "offline_fraction": float, "split_mode": str, "avg_output_mode": str,
    "variant": str, "scaling": _boolean, "max_epochs": int, "output_dir": str,
}


class Outputs:
    """Tracks files a command writes so a failed command leaves none behind."""

    def __init__(self):
        self.paths: list[Path] = []

    def add(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.paths.append(path)
        return path

    def discard(self):
        for path in reversed(self.paths):
            if path.is_file():
                path.unlink()


def _json(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


# -- commands ---------------------------------------------------------------------


def cmd_generate(config_path, out_path, seed: Optional[int] = None, outputs: Optional[Outputs] = None) -> Path:
    """Write a synthetic stream file plus ``<out>.cfg`` echoing the effective config."""
    outputs = outputs or Outputs()
    items = read_kv(config_path)
    if seed is not None:
        items["rng_seed"] = str(seed)
    gen_cfg = SphericalStreamConfig.from_mapping(items)
    out_path = outputs.add(out_path)
    echo = outputs.add(out_path.with_name(out_path.name + ".cfg"))
    write_stream(out_path, list(generate_spherical(gen_cfg)), gen_cfg.n_features, gen_cfg.n_classes)
    atomic_write_text(echo, gen_cfg.to_text())
    return out_path


def _split(cfg: RunConfig, data):
    return split_offline(data.instances, data.n_classes, cfg.offline_fraction, cfg.split_mode)


def cmd_train(stream_path, cfg: RunConfig, model_path=None, outputs: Optional[Outputs] = None) -> Path:
    """Train on the offline portion of ``stream_path``; writes the model and a summary."""
    outputs = outputs or Outputs()
    data = load_delimited(stream_path)
    split = _split(cfg, data)
    if split.missing_classes:
        raise ConfigError(f"classes absent from the offline portion: {split.missing_classes}")
    model = train_offline(split.train, data.n_classes, cfg.grid_dim, cfg.train_config(),
                          scaling=cfg.scaling, avg_output_mode=cfg.avg_output_mode)
    model_path = outputs.add(model_path or cfg.out / "model.json")
    summary_path = outputs.add(model_path.with_name(model_path.stem + ".train.json"))
    save_model(model, model_path)
    atomic_write_text(summary_path, _json({
        "grid_dim": cfg.grid_dim,
        "seed": cfg.train_config().rng_seed,
        "n_train": len(split.train),
        "neurons_per_map": model.map_sizes(),
        "k": model.k,
        "z": model.cardinality.z,
        "N": model.cardinality.N,
    }))
    return model_path


def cmd_run(model_path, stream_path, cfg: RunConfig, log_path=None, snapshot_path=None,
            whole_stream: bool = False, outputs: Optional[Outputs] = None) -> Path:
    """Run the online phase; the adaptive variant also writes the adapted model."""
    outputs = outputs or Outputs()
    model = load_model(model_path)
    data = load_delimited(stream_path)
    if data.n_features != model.meta.n_features or data.n_classes != model.n_classes:
        raise SchemaError(
            f"stream has {data.n_features} features/{data.n_classes} classes, "
            f"model expects {model.meta.n_features}/{model.n_classes}"
        )
    stream = data.instances if whole_stream else _split(cfg, data).stream
    state = OnlineState(model, eta=cfg.eta, adaptive=cfg.variant == "adaptive", keep_log=False)
    entries = process_stream(state, stream)
    log_path = outputs.add(log_path or cfg.out / cfg.variant / "predictions.tsv")
    atomic_write_text(log_path, format_log(entries))
    if state.rejects:
        log.warning("%d malformed instances skipped", state.rejects)
    if cfg.variant == "adaptive":
        snapshot_path = outputs.add(snapshot_path or log_path.with_name("model_final.json"))
        save_model(state.model, snapshot_path)
    return log_path


def cmd_evaluate(log_path, stream_path, cfg: RunConfig, report_dir=None, outputs: Optional[Outputs] = None):
    """Score a prediction log against the truth columns of its stream file."""
    outputs = outputs or Outputs()
    entries = read_log(log_path)
    data = load_delimited(stream_path)
    truths = {inst.sequence_id: inst.truth for inst in data.instances}
    for sid, _ in entries:
        if sid not in truths:
            raise DataError(f"prediction log id {sid} does not exist in {stream_path}")
    report = windowed_evaluate(entries, truths, data.n_classes, cfg.windows, metadata={
        "grid_dim": cfg.grid_dim, "eta": cfg.eta, "seed": cfg.seed,
        "dataset": Path(stream_path).name, "variant": cfg.variant,
    })
    report_dir = Path(report_dir or cfg.out / cfg.variant / "report")
    outputs.add(report_dir / "windows.csv")
    outputs.add(report_dir / "summary.json")
    emit_report(report, report_dir)
    return report


def cmd_pipeline(cfg: RunConfig, outputs: Optional[Outputs] = None) -> Path:
    """generate (optional), train, run both variants, evaluate both, compare."""
    outputs = outputs or Outputs()
    out = cfg.out
    if cfg.generator:
        stream = cmd_generate(cfg.generator, out / "stream.csv", seed=cfg.seed, outputs=outputs)
    elif cfg.stream:
        stream = Path(cfg.stream)
    else:
        raise ConfigError("pipeline needs either 'generator' or 'stream'")
    model = cmd_train(stream, cfg, out / "model.json", outputs=outputs)
    reports = {}
    for variant in ("adaptive", "frozen"):
        vcfg = RunConfig(**{**asdict(cfg), "variant": variant})
        log_path = cmd_run(model, stream, vcfg, out / variant / "predictions.tsv", outputs=outputs)
        reports[variant] = cmd_evaluate(log_path, stream, vcfg, out / variant / "report", outputs=outputs)

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["window_index", "adaptive_macro_f", "frozen_macro_f", "delta"])
    for wa, wf in zip(reports["adaptive"].windows, reports["frozen"].windows):
        writer.writerow([wa.window_index, repr(wa.macro_f), repr(wf.macro_f), repr(wa.macro_f - wf.macro_f)])
    comparison = outputs.add(out / "comparison.csv")
    atomic_write_text(comparison, buf.getvalue())
    tail = min(10, cfg.windows)
    atomic_write_text(outputs.add(out / "comparison.json"), _json({
        "adaptive_mean_macro_f": reports["adaptive"].mean_macro_f,
        "frozen_mean_macro_f": reports["frozen"].mean_macro_f,
        f"adaptive_last{tail}_macro_f": reports["adaptive"].tail_mean(tail),
        f"frozen_last{tail}_macro_f": reports["frozen"].tail_mean(tail),
        "n_windows": cfg.windows,
    }))
    return comparison


# -- argument parsing ---------------------------------------------------------------


def _run_options(p: argparse.ArgumentParser):
    p.add_argument("--config", help="key-value run config file")
    p.add_argument("--grid-dim", type=int, dest="grid_dim")
    p.add_argument("--eta", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--windows", type=int)
    p.add_argument("--offline-fraction", type=float, dest="offline_fraction")
    p.add_argument("--split-mode", choices=("head", "stratified"), dest="split_mode")
    p.add_argument("--avg-output-mode", choices=("verbatim", "running_mean"), dest="avg_output_mode")
    p.add_argument("--variant", choices=("adaptive", "frozen"))
    p.add_argument("--no-scaling", action="store_const", const=False, dest="scaling")
    p.add_argument("--max-epochs", type=int, dest="max_epochs")
    p.add_argument("--output-dir", dest="output_dir")


_RUN_KEYS = ("grid_dim", "eta", "seed", "windows", "offline_fraction", "split_mode",
             "avg_output_mode", "variant", "scaling", "max_epochs", "output_dir")


def _run_config(args, **extra) -> RunConfig:
    overrides = {k: getattr(args, k, None) for k in _RUN_KEYS}
    overrides.update(extra)
    return RunConfig.build(args.config, **overrides)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="somstream", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic spherical-cluster stream")
    p.add_argument("generator_config")
    p.add_argument("out")
    p.add_argument("--seed", type=int)

    p = sub.add_parser("train", help="offline phase on the head of a stream file")
    p.add_argument("stream")
    p.add_argument("--out", help="model file (default: <output-dir>/model.json)")
    _run_options(p)

    p = sub.add_parser("run", help="online phase over the evaluation portion")
    p.add_argument("model")
    p.add_argument("stream")
    p.add_argument("--log", help="prediction log (default: <output-dir>/<variant>/predictions.tsv)")
    p.add_argument("--snapshot", help="adapted model file (adaptive only)")
    p.add_argument("--whole-stream", action="store_true", help="do not skip the offline portion")
    _run_options(p)

    p = sub.add_parser("evaluate", help="windowed macro F of a prediction log")
    p.add_argument("log")
    p.add_argument("stream")
    p.add_argument("--report-dir")
    _run_options(p)

    p = sub.add_parser("pipeline", help="generate/train/run both variants/evaluate/compare")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--generator", help="generator config file")
    g.add_argument("--stream", help="existing stream file")
    _run_options(p)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    outputs = Outputs()
    try:
        if args.command == "generate":
            cmd_generate(args.generator_config, args.out, args.seed, outputs)
        elif args.command == "train":
            cmd_train(args.stream, _run_config(args), args.out, outputs)
        elif args.command == "run":
            cmd_run(args.model, args.stream, _run_config(args), args.log, args.snapshot,
                    args.whole_stream, outputs)
        elif args.command == "evaluate":
            cmd_evaluate(args.log, args.stream, _run_config(args), args.report_dir, outputs)
        elif args.command == "pipeline":
            cmd_pipeline(_run_config(args, generator=args.generator, stream=args.stream), outputs)
    except (ConfigError, DataError, ParseError, UsageError, SchemaError, ModelVersionError, OSError) as e:
        outputs.discard()
        print(f"somstream {args.command}: error: {e}", file=sys.stderr)
        return 1
    except BaseException:
        outputs.discard()
        raise
    return 0


if __name__ == "__main__":
    sys.exit(main())
