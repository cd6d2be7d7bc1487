"""Command-line entry point: corpus generation, training, evaluation, benchmarks, ablation sweeps.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric error.
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys
import time
from dataclasses import asdict
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .data import (ActivityGrammar, ParseError, SplitError, VideoSample, action_vocabulary, demo_grammars,
                   generate_corpus, load_corpus, make_observation, save_corpus)
from .evaluation import (DEFAULT_ALPHAS, DEFAULT_BETAS, EvalReport, benchmark_decoding, evaluate,
                         export_attention, grid_key)
from .model import ConfigError, ModelConfig, ModelParams, forward
from .objectives import LossConfig
from .tensor import NumericError, no_grad
from .training import (CheckpointError, ScheduleConfig, TrainConfig, TrainResult, load_checkpoint,
                       save_checkpoint, save_training_state, train)

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
DECODING_MODES = ("parallel", "masked_parallel", "autoregressive")


class DataError(Exception):
    pass


# -- run configuration --------------------------------------------------------------

def default_run_config() -> dict:
    return {"model": ModelConfig().to_dict(), "schedule": asdict(ScheduleConfig()),
            "train": TrainConfig().to_dict()}


def _merge(base: dict, update: dict, path: str, explicit: set) -> None:
    for key, value in update.items():
        dotted = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {dotted!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {dotted!r} must be an object")
            _merge(base[key], value, dotted + ".", explicit)
        else:
            base[key] = value
            explicit.add(dotted)


def parse_override(text: str) -> Tuple[str, object]:
    key, sep, raw = text.partition("=")
    if not sep or not key:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def apply_override(cfg: dict, key: str, value, explicit: set) -> None:
    parts = key.split(".")
    node = cfg
    for i, part in enumerate(parts):
        if not isinstance(node, dict) or part not in node:
            raise ConfigError(f"unknown config key {'.'.join(parts[:i + 1])!r}")
        if i == len(parts) - 1:
            if isinstance(node[part], dict):
                raise ConfigError(f"config key {key!r} is a section, not a value")
            node[part] = value
        else:
            node = node[part]
    explicit.add(key)


def load_run_config(path: Optional[str], overrides: Sequence[str] = ()) -> Tuple[dict, set]:
    """Defaults, then the JSON file, then dotted overrides. Returns (config, explicitly set keys)."""
    cfg = default_run_config()
    explicit: set = set()
    if path:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        try:
            data = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{p}: top level must be an object")
        _merge(cfg, data, "", explicit)
    for text in overrides:
        apply_override(cfg, *parse_override(text), explicit)
    return cfg, explicit


def build_configs(cfg: dict) -> Tuple[ModelConfig, ScheduleConfig, TrainConfig]:
    try:
        model = ModelConfig.from_dict(cfg["model"])
        schedule = ScheduleConfig(**cfg["schedule"])
        train_d = dict(cfg["train"])
        train_d["loss"] = LossConfig(**train_d["loss"])
        return model, schedule, TrainConfig(**train_d)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def fit_to_corpus(cfg: dict, explicit: set, num_classes: int, feature_dim: int) -> None:
    """Take class count and feature width from the corpus unless set explicitly."""
    for key, value in (("num_classes", num_classes), ("input_dim", feature_dim)):
        if f"model.{key}" in explicit and cfg["model"][key] != value:
            raise ConfigError(f"model.{key}={cfg['model'][key]} does not match the corpus ({value})")
        cfg["model"][key] = value


def resolve_seed(seed: Optional[int]) -> int:
    if seed is not None:
        return seed
    env = os.environ.get("FUTR_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError as exc:
        raise ConfigError(f"FUTR_SEED must be an integer, got {env!r}") from exc


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _echo(out: Path, command: str, seed: int, payload: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "config.json", {"command": command, "seed": seed, **payload})


def _run_manifest(out: Path, command: str, outputs: Sequence[str]) -> None:
    _write_json(out / "run_manifest.json", {"command": command, "outputs": sorted(outputs)})


def _floats(text: str) -> Tuple[float, ...]:
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError as exc:
        raise ConfigError(f"bad number list {text!r}") from exc


def _corpus(data_dir: str, split: Optional[str]) -> Tuple[List[VideoSample], List[str], dict]:
    root = Path(data_dir)
    if not (root / "manifest.json").exists():
        raise DataError(f"no corpus manifest at {root / 'manifest.json'}")
    samples, names = load_corpus(root, split)
    manifest = json.loads((root / "manifest.json").read_text())
    return samples, names, manifest


def _check_compatible(cfg: ModelConfig, samples: Sequence[VideoSample]) -> None:
    for s in samples:
        if s.features.shape[1] != cfg.input_dim:
            raise ConfigError(f"checkpoint expects {cfg.input_dim}-dim features, "
                              f"video {s.video_id} has {s.features.shape[1]}")
        if s.frame_labels.size and int(s.frame_labels.max()) >= cfg.num_classes:
            raise ConfigError(f"checkpoint has {cfg.num_classes} classes, "
                              f"video {s.video_id} uses label {int(s.frame_labels.max())}")


def _load_ckpt(path: str):
    if not Path(path).exists():
        raise DataError(f"checkpoint not found: {path}")
    return load_checkpoint(path)


# -- gen --------------------------------------------------------------------------------

def load_grammar_file(path: str) -> Tuple[List[ActivityGrammar], dict]:
    p = Path(path)
    if not p.exists():
        raise DataError(f"grammar file not found: {p}")
    try:
        data = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: {exc}") from exc
    options = {}
    if isinstance(data, dict):
        unknown = set(data) - {"grammars", "feature_dim", "length_range", "test_fraction"}
        if unknown:
            raise ConfigError(f"{p}: unknown keys {sorted(unknown)}")
        options = {k: v for k, v in data.items() if k != "grammars"}
        data = data.get("grammars")
    if not isinstance(data, list) or not data:
        raise ConfigError(f"{p}: expected a non-empty list of grammars")
    try:
        grammars = [ActivityGrammar.from_dict(g) for g in data]
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{p}: bad grammar: {exc}") from exc
    return grammars, options


def cmd_gen(args) -> int:
    grammars, options = load_grammar_file(args.grammars)
    seed = resolve_seed(args.seed)
    feature_dim = args.feature_dim or int(options.get("feature_dim", 64))
    length_range = options.get("length_range")
    test_fraction = float(options.get("test_fraction", 0.2))
    out = Path(args.out)
    _echo(out, "gen", seed, {"grammars": [g.to_dict() for g in grammars], "count": args.count,
                             "feature_dim": feature_dim, "length_range": length_range,
                             "test_fraction": test_fraction})
    samples = generate_corpus(grammars, args.count, feature_dim, seed,
                              tuple(length_range) if length_range else None)
    manifest = save_corpus(out, samples, action_vocabulary(grammars), test_fraction,
                           extra={"seed": seed, "grammars": [g.to_dict() for g in grammars]})
    if not samples:
        manifest["feature_dim"] = feature_dim
        _write_json(out / "manifest.json", manifest)
    print(f"wrote {len(samples)} videos to {out}")
    return EXIT_OK


# -- train ------------------------------------------------------------------------------

def cmd_train(args) -> int:
    cfg, explicit = load_run_config(args.config, args.override or ())
    seed = resolve_seed(args.seed)
    samples, names, manifest = _corpus(args.data, "train")
    if not samples:
        raise DataError(f"{args.data}: corpus has no training videos")
    fit_to_corpus(cfg, explicit, len(names), int(samples[0].features.shape[1]))
    model_cfg, schedule, train_cfg = build_configs(cfg)
    out = Path(args.out)
    _echo(out, "train", seed, {"data": str(args.data), "resume": args.resume, **cfg})

    resume = None
    if args.resume:
        resume = _load_ckpt(args.resume)
        if resume.config != model_cfg:
            raise ConfigError(f"{args.resume}: checkpoint model config differs from the effective config")
    ckpt_dir = out / "checkpoints"
    ckpt_dir.mkdir(exist_ok=True)
    log_path = out / "loss_log.jsonl"
    prior = list(resume.extra.get("log", [])) if resume else []
    log_path.write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in prior))
    extra = {"schedule": cfg["schedule"], "train": cfg["train"], "seed": seed}
    outputs = ["config.json", "loss_log.jsonl", "final.ckpt"]

    def on_epoch_end(result: TrainResult) -> None:
        rec = result.log[-1]
        with log_path.open("a") as fh:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
        name = f"checkpoints/epoch_{result.epoch:03d}.ckpt"
        save_training_state(out / name, result, extra)
        outputs.append(name)
        if not args.quiet:
            print(f"epoch {rec['epoch']:3d}  lr {rec['lr']:.2e}  seg {rec['seg']:.4f}  "
                  f"action {rec['action']:.4f}  duration {rec['duration']:.4f}  total {rec['total']:.4f}",
                  flush=True)

    result = train(samples, model_cfg, schedule, train_cfg, seed=seed, resume=resume, on_epoch_end=on_epoch_end)
    save_training_state(out / "final.ckpt", result, extra)
    _run_manifest(out, "train", outputs)
    return EXIT_OK


# -- eval / bench / attn ------------------------------------------------------------------

def cmd_eval(args) -> int:
    seed = resolve_seed(args.seed)
    alphas, betas = _floats(args.alphas), _floats(args.betas)
    out = Path(args.out)
    _echo(out, "eval", seed, {"ckpt": args.ckpt, "data": args.data, "split": args.split, "alphas": list(alphas),
                              "betas": list(betas), "stride": args.stride, "jobs": args.jobs})
    ckpt = _load_ckpt(args.ckpt)
    samples, _, _ = _corpus(args.data, args.split or None)
    if not samples:
        raise DataError(f"{args.data}: no videos in split {args.split!r}")
    _check_compatible(ckpt.config, samples)
    report = evaluate(ckpt.params, samples, alphas, betas, args.stride, jobs=args.jobs)
    (out / "eval_report.json").write_text(report.to_json())
    for key in sorted(report.moc):
        print(f"{key}  MoC {report.moc[key]:.4f}")
    _run_manifest(out, "eval", ["config.json", "eval_report.json"])
    return EXIT_OK


def _modes(text: str) -> Tuple[str, ...]:
    modes = DECODING_MODES if text == "all" else tuple(m.strip() for m in text.split(",") if m.strip())
    bad = [m for m in modes if m not in DECODING_MODES]
    if bad or not modes:
        raise ConfigError(f"unknown decoding modes {bad}; choose from {DECODING_MODES}")
    return modes


def cmd_bench(args) -> int:
    seed = resolve_seed(args.seed)
    modes = _modes(args.modes)
    out = Path(args.out)
    _echo(out, "bench", seed, {"ckpt": args.ckpt, "modes": list(modes), "repeats": args.repeats,
                               "warmup": args.warmup, "frames": args.frames})
    ckpt = _load_ckpt(args.ckpt)
    if args.frames > ckpt.config.max_len:
        raise ConfigError(f"--frames {args.frames} exceeds the model's max_len {ckpt.config.max_len}")
    features = np.random.default_rng(seed).normal(size=(args.frames, ckpt.config.input_dim))
    stats = benchmark_decoding(ckpt.params, features, modes, args.repeats, args.warmup)
    _write_json(out / "bench.json", {"frames": args.frames, "threads": 1, "latency_ms": stats})
    for mode, s in stats.items():
        print(f"{mode:16s} {s['mean_ms']:8.3f} ms  (std {s['std_ms']:.3f})")
    _run_manifest(out, "bench", ["config.json", "bench.json"])
    return EXIT_OK


def cmd_attn(args) -> int:
    seed = resolve_seed(args.seed)
    out = Path(args.out)
    _echo(out, "attn", seed, {"ckpt": args.ckpt, "data": args.data, "video": args.video, "alpha": args.alpha,
                              "beta": args.beta, "stride": args.stride, "layer": args.layer})
    ckpt = _load_ckpt(args.ckpt)
    samples, names, _ = _corpus(args.data, None)
    match = [s for s in samples if s.video_id == args.video]
    if not match:
        raise DataError(f"unknown video id {args.video!r}")
    _check_compatible(ckpt.config, match)
    obs = make_observation(match[0], args.alpha, args.beta, args.stride)
    with no_grad():
        fwd = forward(ckpt.params, obs.features)
    if not -ckpt.config.decoder_layers <= args.layer < ckpt.config.decoder_layers:
        raise ConfigError(f"--layer {args.layer} out of range for {ckpt.config.decoder_layers} decoder layers")
    csv_path, sidecar = export_attention(fwd, out / f"attn_{args.video}.csv", 0, args.layer, names)
    print(f"wrote {csv_path} and {sidecar}")
    _run_manifest(out, "attn", ["config.json", csv_path.name, sidecar.name])
    return EXIT_OK


# -- repro ------------------------------------------------------------------------------------

TABLES = ("2", "3", "4", "5", "6", "S3", "S5")
TABLE_TITLES = {
    "2": "Parallel vs autoregressive decoding",
    "3": "Global vs local self-attention",
    "4": "Output structuring",
    "5": "Loss ablation",
    "6": "Number of action queries",
    "S3": "Positional embedding placement",
    "S5": "Duration loss",
}


def table_rows(table: str) -> List[Tuple[str, Dict[str, object]]]:
    """(row label, dotted overrides) for each row of an ablation table."""
    if table == "2":
        return [("FUTR-A", {"model.decoding_mode": "autoregressive"}),
                ("FUTR-M", {"model.decoding_mode": "masked_parallel"}),
                ("FUTR", {"model.decoding_mode": "parallel"})]
    if table == "3":
        kinds = {"LSA": "local", "GSA": "global"}
        return [(f"{e} / {d}", {"model.encoder_attention": kinds[e], "model.decoder_attention": kinds[d]})
                for e, d in (("LSA", "LSA"), ("GSA", "LSA"), ("LSA", "GSA"), ("GSA", "GSA"))]
    if table == "4":
        return [("FUTR-S (sequential, start-end)", {"model.head_mode": "start_end",
                                                    "train.loss.assignment": "sequential"}),
                ("FUTR-H (Hungarian, start-end)", {"model.head_mode": "start_end",
                                                   "train.loss.assignment": "hungarian"}),
                ("FUTR (sequential, duration)", {"model.head_mode": "duration",
                                                 "train.loss.assignment": "sequential"})]
    if table == "5":
        return [("without segmentation loss", {"train.loss.use_seg": False}),
                ("with segmentation loss", {"train.loss.use_seg": True})]
    if table == "6":
        return [(f"M = {m}", {"model.num_queries": m}) for m in range(6, 11)]
    if table == "S3":
        return [(mode, {"model.posembed_mode": mode})
                for mode in ("none", "sinusoidal_input", "learnable_input", "learnable_per_attention")]
    if table == "S5":
        return [(v, {"train.loss.duration_variant": v}) for v in ("L1", "smoothL1", "L2")]
    raise ConfigError(f"unknown table {table!r}; choose from {TABLES}")


def repro_base_config() -> dict:
    """Desk-scale starting point for ablation sweeps."""
    cfg = default_run_config()
    cfg["model"].update(hidden_dim=64, num_heads=4, max_len=512)
    cfg["schedule"].update(total_epochs=30)
    return cfg


def run_table(table: str, train_set: Sequence[VideoSample], test_set: Sequence[VideoSample], base: dict,
              seeds: Sequence[int], alphas=DEFAULT_ALPHAS, betas=DEFAULT_BETAS, bench_repeats: int = 20,
              log=print) -> dict:
    rows = []
    for label, overrides in table_rows(table):
        cfg = copy.deepcopy(base)
        for key, value in overrides.items():
            apply_override(cfg, key, value, set())
        model_cfg, schedule, train_cfg = build_configs(cfg)
        mocs, times = [], []
        for seed in seeds:
            result = train(train_set, model_cfg, schedule, train_cfg, seed=seed)
            report = evaluate(result.params, test_set, alphas, betas, train_cfg.stride)
            mocs.append(report.moc)
            if table == "2":
                obs = make_observation(test_set[0], max(alphas), max(betas), train_cfg.stride)
                stats = benchmark_decoding(result.params, obs.features, (model_cfg.decoding_mode,),
                                           bench_repeats, min(10, bench_repeats))
                times.append(stats[model_cfg.decoding_mode]["mean_ms"])
        row = {"label": label, "overrides": overrides,
               "moc": {k: float(np.mean([m[k] for m in mocs])) for k in sorted(mocs[0])},
               "moc_per_seed": mocs}
        if times:
            row["time_ms"] = float(np.mean(times))
        log(f"  {label}: " + ", ".join(f"{k} {v:.4f}" for k, v in row["moc"].items()))
        rows.append(row)
    return {"table": table, "title": TABLE_TITLES[table], "seeds": list(seeds), "rows": rows}


def table_markdown(result: dict, alphas=DEFAULT_ALPHAS, betas=DEFAULT_BETAS) -> str:
    timed = any("time_ms" in r for r in result["rows"])
    cols = [grid_key(a, b) for a in alphas for b in betas]
    head = ["config"] + [f"a={a:g} b={b:g}" for a in alphas for b in betas] + (["time (ms)"] if timed else [])
    lines = [f"# Table {result['table']}: {result['title']} (synthetic corpus)", "",
             "Desk-scale run on a synthetic corpus; values are not comparable to results on real video datasets.",
             f"MoC in percent, mean over seeds {result['seeds']}.", "",
             "| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
    for row in result["rows"]:
        cells = [row["label"]] + [f"{100 * row['moc'][c]:.2f}" if c in row["moc"] else "-" for c in cols]
        if timed:
            cells.append(f"{row['time_ms']:.2f}")
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def cmd_repro(args) -> int:
    if args.table not in TABLES:
        raise ConfigError(f"unknown table {args.table!r}; choose from {TABLES}")
    seed = resolve_seed(args.seed)
    base = repro_base_config()
    explicit: set = set()
    for text in args.override or ():
        apply_override(base, *parse_override(text), explicit)
    if args.data:
        train_set, names, _ = _corpus(args.data, "train")
        test_set, _, _ = _corpus(args.data, "test")
    else:
        grammars = demo_grammars(3, 4, (0.7, 0.3), (12, 24), noise_std=0.3)
        names = action_vocabulary(grammars)
        corpus = generate_corpus(grammars, args.count, 32, seed)
        cut = int(round(0.8 * len(corpus)))
        train_set, test_set = corpus[:cut], corpus[cut:]
    if not train_set or not test_set:
        raise DataError("repro needs non-empty train and test splits")
    fit_to_corpus(base, explicit, len(names), int(train_set[0].features.shape[1]))
    build_configs(base)
    seeds = [seed + i for i in range(args.seeds)]
    out = Path(args.out)
    _echo(out, "repro", seed, {"table": args.table, "data": args.data, "count": args.count,
                               "seeds": seeds, "base": base})
    print(f"table {args.table}: {TABLE_TITLES[args.table]}")
    result = run_table(args.table, train_set, test_set, base, seeds, bench_repeats=args.bench_repeats)
    stem = f"table_{args.table}"
    _write_json(out / f"{stem}.json", result)
    (out / f"{stem}.md").write_text(table_markdown(result))
    print(table_markdown(result))
    _run_manifest(out, "repro", ["config.json", f"{stem}.json", f"{stem}.md"])
    return EXIT_OK


# -- entry point --------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="futr", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic corpus")
    p.add_argument("--grammars", required=True, help="JSON grammar file")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--feature-dim", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train a model on a corpus")
    p.add_argument("--config", help="JSON run config (model, schedule, train sections)")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--override", action="append", metavar="KEY=VALUE")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--seed", type=int)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="MoC over an observation/prediction grid")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", help="manifest split to evaluate ('' for all videos)")
    p.add_argument("--alphas", default=",".join(map(str, DEFAULT_ALPHAS)))
    p.add_argument("--betas", default=",".join(map(str, DEFAULT_BETAS)))
    p.add_argument("--stride", type=int, default=3)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="single-thread decoding latency")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--modes", default="all", help="'all' or a comma list of decoding modes")
    p.add_argument("--repeats", type=int, default=100)
    p.add_argument("--warmup", type=int, default=10)
    p.add_argument("--frames", type=int, default=150, help="observed tokens per input")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("attn", help="export one video's cross-attention map")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--video", required=True)
    p.add_argument("--alpha", type=float, default=0.3)
    p.add_argument("--beta", type=float, default=0.5)
    p.add_argument("--stride", type=int, default=3)
    p.add_argument("--layer", type=int, default=-1)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_attn)

    p = sub.add_parser("repro", help="desk-scale ablation sweep")
    p.add_argument("--table", required=True, help=f"one of {', '.join(TABLES)}")
    p.add_argument("--data", help="corpus directory; a stochastic corpus is generated when omitted")
    p.add_argument("--count", type=int, default=120, help="videos to generate when --data is omitted")
    p.add_argument("--seeds", type=int, default=1, help="number of seeds to average")
    p.add_argument("--bench-repeats", type=int, default=20)
    p.add_argument("--override", action="append", metavar="KEY=VALUE")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_repro)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, CheckpointError, ParseError, SplitError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, FloatingPointError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
