"""Command-line entry point.

Subcommands: gen (build a dataset file), train (fit and save the best
checkpoint), eval (score a checkpoint on a dataset), sample (decode
latent draws for a caption), gradcheck (run the gradient verification
battery), sweep (train once per caption-step ratio), and ablate (train
the caption-blind twin).

Every value resolves as defaults < --config JSON file < explicit flags,
and each run echoes its fully resolved configuration as one JSON line on
stdout before doing anything; feeding that line back via --config
reproduces the run. Exit codes: 0 success, 1 contract/config/format
problems, 2 numeric failures; failures also emit one structured JSON
line on stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import struct
import sys
from pathlib import Path

import numpy as np

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .dataset import generate_dataset, read_dataset, write_dataset
from .errors import ConfigError, ContractError, FormatError, NumericError
from .metrics import error_map
from .scene import GeneratorConfig
from .text import tokenize
from .trainer import (
    TrainConfig,
    evaluate,
    fit,
    infer_text,
    run_caption_ablation,
    run_ratio_sweep,
)
from .verify import DEFAULT_SEEDS, run_full_battery

EXPORT_METERS_PER_UNIT = 1e-3
PGM_MAX = 65535

_TRAIN_FIELDS = {f.name: f.default for f in dataclasses.fields(TrainConfig)}


def export_depth(depth, path, fmt: str,
                 meters_per_unit: float = EXPORT_METERS_PER_UNIT) -> None:
    """Write one depth (or error) map as binary pgm16 or raw32.

    pgm16 is a binary PGM ("P5", maxval 65535, big-endian samples) whose
    pixel values are round(depth / meters_per_unit); the scale rides in a
    header comment. raw32 is a u32 height, u32 width prefix followed by
    row-major float32, everything little-endian.
    """
    arr = np.asarray(depth)
    if arr.ndim != 2:
        raise ContractError(f"expected a 2-d map, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise NumericError("map contains non-finite values")
    if (arr < 0).any():
        raise ContractError("map values must be non-negative")
    if fmt == "pgm16":
        if meters_per_unit <= 0:
            raise ConfigError("meters_per_unit must be positive")
        units = np.rint(arr / meters_per_unit)
        if units.max() > PGM_MAX:
            worst = float(arr.reshape(-1)[int(np.argmax(units))])
            raise ContractError(
                f"value {worst} exceeds the pgm16 range at "
                f"meters_per_unit={meters_per_unit}"
            )
        h, w = arr.shape
        header = f"P5\n# meters_per_unit {meters_per_unit}\n{w} {h}\n{PGM_MAX}\n"
        with open(path, "wb") as f:
            f.write(header.encode("ascii"))
            f.write(units.astype(">u2").tobytes())
    elif fmt == "raw32":
        h, w = arr.shape
        with open(path, "wb") as f:
            f.write(struct.pack("<II", h, w))
            f.write(arr.astype("<f4").tobytes())
    else:
        raise ConfigError(f"unknown export format '{fmt}'")


def read_raw32(path) -> np.ndarray:
    """Read a raw32 map back as float32 (inverse of export_depth raw32)."""
    with open(path, "rb") as f:
        head = f.read(8)
        if len(head) < 8:
            raise FormatError("raw32 file shorter than its dims prefix")
        h, w = struct.unpack("<II", head)
        body = f.read()
    if len(body) != 4 * h * w:
        raise FormatError(f"raw32 body has {len(body)} bytes, "
                          f"expected {4 * h * w}")
    return np.frombuffer(body, dtype="<f4").reshape(h, w).copy()


def read_pgm16(path):
    """Read a pgm16 file back as (units uint16 array, meters_per_unit)."""
    raw = Path(path).read_bytes()
    fields, mpu, pos = [], None, 0
    if not raw.startswith(b"P5"):
        raise FormatError("not a binary PGM file")
    pos = 2
    while len(fields) < 3:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            end = raw.index(b"\n", pos)
            comment = raw[pos + 1:end].decode("ascii").split()
            if comment[:1] == ["meters_per_unit"]:
                mpu = float(comment[1])
            pos = end + 1
            continue
        end = pos
        while end < len(raw) and not raw[end:end + 1].isspace():
            end += 1
        fields.append(int(raw[pos:end]))
        pos = end
    pos += 1  # the single whitespace byte after maxval
    w, h, maxval = fields
    if maxval != PGM_MAX:
        raise FormatError(f"expected maxval {PGM_MAX}, found {maxval}")
    body = raw[pos:pos + 2 * w * h]
    if len(body) != 2 * w * h:
        raise FormatError("PGM raster shorter than its dimensions")
    return np.frombuffer(body, dtype=">u2").reshape(h, w).copy(), mpu


class _Parser(argparse.ArgumentParser):
    """argparse variant that reports bad usage as a ConfigError."""

    def error(self, message):
        raise ConfigError(message)


# Per-subcommand schemas: every resolvable key with its default. None
# means "must be provided by the config file or a flag".
_SCHEMAS = {
    "gen": {"seed": 0, "count": None, "out": None, "max_objects": 3,
            "height": 32, "width": 32, "focal": 64.0},
    "train": {"data": None, "val": None, "out_ckpt": None, **_TRAIN_FIELDS},
    "eval": {"ckpt": None, "data": None, "report": None, "error_maps": None},
    "sample": {"ckpt": None, "caption": None, "n": 8, "seed": 0,
               "out_dir": None},
    "gradcheck": {"seed": None, "trials": 3},
    "sweep": {"data": None, "val": None, "report": None,
              "p_list": [0.0, 0.01, 0.5, 1.0],
              **{k: v for k, v in _TRAIN_FIELDS.items() if k != "p"}},
    "ablate": {"data": None, "val": None, "report": None, **_TRAIN_FIELDS},
}

_REQUIRED = {
    "gen": ("count", "out"),
    "train": ("data", "val", "out_ckpt"),
    "eval": ("ckpt", "data", "report"),
    "sample": ("ckpt", "caption", "out_dir"),
    "gradcheck": (),
    "sweep": ("data", "val", "report"),
    "ablate": ("data", "val", "report"),
}


def _parse_p_list(text: str) -> list[float]:
    try:
        values = [float(tok) for tok in text.split(",") if tok.strip() != ""]
    except ValueError as bad:
        raise ConfigError(f"cannot parse --p-list: {bad}")
    if not values:
        raise ConfigError("--p-list must name at least one ratio")
    return values


def _add_train_flags(sub, with_p: bool = True) -> None:
    if with_p:
        sub.add_argument("--p", type=float)
    sub.add_argument("--alpha", type=float)
    sub.add_argument("--beta", type=float)
    sub.add_argument("--gamma", type=float)
    sub.add_argument("--epochs", type=int)
    sub.add_argument("--batch", dest="batch_size", type=int)
    sub.add_argument("--lr-start", dest="lr_start", type=float)
    sub.add_argument("--lr-end", dest="lr_end", type=float)
    sub.add_argument("--seed", type=int)
    sub.add_argument("--latent-dim", dest="latent_dim", type=int)


def _build_parser() -> _Parser:
    parser = _Parser(prog="langdepth")
    subs = parser.add_subparsers(dest="subcommand", required=True)

    gen = subs.add_parser("gen", description="Generate a synthetic dataset file.")
    gen.add_argument("--seed", type=int)
    gen.add_argument("--count", type=int)
    gen.add_argument("--out")
    gen.add_argument("--max-objects", dest="max_objects", type=int)
    gen.add_argument("--height", type=int)
    gen.add_argument("--width", type=int)
    gen.add_argument("--focal", type=float)

    train = subs.add_parser("train", description="Train and save the best checkpoint.")
    train.add_argument("--data")
    train.add_argument("--val")
    train.add_argument("--out-ckpt", dest="out_ckpt")
    _add_train_flags(train)

    ev = subs.add_parser("eval", description="Score a checkpoint on a dataset.")
    ev.add_argument("--ckpt")
    ev.add_argument("--data")
    ev.add_argument("--report")
    ev.add_argument("--error-maps", dest="error_maps")

    sample = subs.add_parser("sample", description="Decode latent draws for a caption.")
    sample.add_argument("--ckpt")
    sample.add_argument("--caption")
    sample.add_argument("--n", type=int)
    sample.add_argument("--seed", type=int)
    sample.add_argument("--out-dir", dest="out_dir")

    gc = subs.add_parser("gradcheck", description="Run the gradient verification battery.")
    gc.add_argument("--seed", type=int)
    gc.add_argument("--trials", type=int)

    sweep = subs.add_parser("sweep", description="Train once per caption-step ratio.")
    sweep.add_argument("--data")
    sweep.add_argument("--val")
    sweep.add_argument("--p-list", dest="p_list", type=_parse_p_list)
    sweep.add_argument("--report")
    _add_train_flags(sweep, with_p=False)

    ablate = subs.add_parser("ablate", description="Train the caption-blind twin.")
    ablate.add_argument("--data")
    ablate.add_argument("--val")
    ablate.add_argument("--report")
    _add_train_flags(ablate)

    for sub in (gen, train, ev, sample, gc, sweep, ablate):
        sub.add_argument("--config", help="JSON file of defaults (flags win)")
    return parser


def _resolve(args: argparse.Namespace) -> dict:
    sub = args.subcommand
    schema = dict(_SCHEMAS[sub])
    resolved = dict(schema)
    if args.config is not None:
        try:
            loaded = json.loads(Path(args.config).read_text())
        except json.JSONDecodeError as bad:
            raise ConfigError(f"config file is not valid JSON: {bad}")
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a JSON object")
        claimed = loaded.pop("subcommand", sub)
        if claimed != sub:
            raise ConfigError(
                f"config file was echoed by '{claimed}', not '{sub}'")
        unknown = set(loaded) - set(schema)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        resolved.update(loaded)
    for key in schema:
        flag = getattr(args, key, None)
        if flag is not None:
            resolved[key] = flag
    missing = [k for k in _REQUIRED[sub] if resolved[k] is None]
    if missing:
        raise ConfigError(f"missing required values: {missing}")
    return resolved


def _train_config(resolved: dict) -> TrainConfig:
    return TrainConfig.from_dict(
        {k: resolved[k] for k in _TRAIN_FIELDS if k in resolved})


def _emit(record: dict) -> None:
    print(json.dumps(record, sort_keys=True), flush=True)


def _cmd_gen(resolved: dict) -> int:
    config = GeneratorConfig(height=resolved["height"],
                             width=resolved["width"],
                             focal_px=resolved["focal"],
                             max_objects=resolved["max_objects"])
    samples, vocab = generate_dataset(resolved["seed"], resolved["count"],
                                      config)
    write_dataset(resolved["out"], samples, vocab)
    _emit({"written": resolved["out"], "count": len(samples),
           "vocab_size": len(vocab)})
    return 0


def _cmd_train(resolved: dict) -> int:
    cfg = _train_config(resolved)
    train_samples, vocab, _ = read_dataset(resolved["data"])
    val_samples, _, _ = read_dataset(resolved["val"])
    result = fit(cfg, train_samples, vocab, val_samples,
                 log_fn=lambda line: print(line, flush=True))
    if result.best is None:
        raise NumericError("training never produced a scorable model")
    save_checkpoint(resolved["out_ckpt"], result.best)
    _emit({"out_ckpt": resolved["out_ckpt"], "best_epoch": result.best_epoch,
           "best_abs_rel": result.best_abs_rel, "steps": result.steps,
           "skipped": result.skipped})
    return 0


def _load_model(path):
    params, _, vocab = load_checkpoint(path).restore()
    return params, vocab


def _check_tokens(samples, params) -> None:
    vocab_rows = params.embedder.vocab_size
    worst = max((max(s.tokens) for s in samples if s.tokens), default=0)
    if worst >= vocab_rows:
        raise ContractError(
            f"dataset token id {worst} outside the checkpoint's vocabulary "
            f"({vocab_rows} entries)"
        )


def _cmd_eval(resolved: dict) -> int:
    params, _ = _load_model(resolved["ckpt"])
    samples, _, _ = read_dataset(resolved["data"])
    _check_tokens(samples, params)
    report = evaluate(params, samples)
    payload = report.to_dict()
    Path(resolved["report"]).write_text(json.dumps(payload, sort_keys=True))
    if resolved["error_maps"] is not None:
        out_dir = Path(resolved["error_maps"])
        out_dir.mkdir(parents=True, exist_ok=True)
        from .trainer import infer_image
        for i, s in enumerate(samples):
            pred = infer_image(s.image[None], [s.tokens], params)[0]
            export_depth(error_map(pred, s.depth, s.mask),
                         out_dir / f"error_{i:04d}.pgm", "pgm16")
    _emit(payload)
    return 0


def _cmd_sample(resolved: dict) -> int:
    params, vocab = _load_model(resolved["ckpt"])
    if resolved["n"] < 1:
        raise ConfigError("--n must be at least 1")
    tokens = tokenize(resolved["caption"], vocab)
    depths, mu, sigma = infer_text(tokens, params, resolved["n"],
                                   resolved["seed"])
    out_dir = Path(resolved["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    for i in range(depths.shape[0]):
        export_depth(depths[i], out_dir / f"sample_{i:03d}.pgm", "pgm16")
    latent = {"caption": resolved["caption"], "tokens": tokens,
              "mu": [float(v) for v in mu],
              "sigma": [float(v) for v in sigma]}
    (out_dir / "latent.json").write_text(json.dumps(latent, sort_keys=True))
    _emit({"out_dir": str(out_dir), "n": int(depths.shape[0]),
           "mean_depth": float(depths.mean())})
    return 0


def _cmd_gradcheck(resolved: dict) -> int:
    if resolved["trials"] < 1:
        raise ConfigError("--trials must be at least 1")
    if resolved["seed"] is None:
        seeds = DEFAULT_SEEDS[:resolved["trials"]]
    else:
        seeds = tuple(range(resolved["seed"],
                            resolved["seed"] + resolved["trials"]))
    reports = run_full_battery(seeds=seeds)
    for name in sorted(reports):
        r = reports[name]
        _emit({"check": name, "passed": r.passed, "worst": r.worst})
    failures = sorted(n for n, r in reports.items() if not r.passed)
    if failures:
        raise NumericError(f"gradient checks failed: {failures}")
    return 0


def _cmd_sweep(resolved: dict) -> int:
    cfg = _train_config({**resolved, "p": 0.0})
    train_samples, vocab, _ = read_dataset(resolved["data"])
    val_samples, _, _ = read_dataset(resolved["val"])
    out = run_ratio_sweep(cfg, resolved["p_list"], train_samples, vocab,
                          val_samples,
                          log_fn=lambda line: print(line, flush=True))
    payload = {str(p): out[p]["metrics"].to_dict() for p in resolved["p_list"]}
    Path(resolved["report"]).write_text(json.dumps(payload, sort_keys=True))
    _emit(payload)
    return 0


def _cmd_ablate(resolved: dict) -> int:
    cfg = _train_config(resolved)
    train_samples, vocab, _ = read_dataset(resolved["data"])
    val_samples, _, _ = read_dataset(resolved["val"])
    result, report = run_caption_ablation(
        cfg, train_samples, vocab, val_samples,
        log_fn=lambda line: print(line, flush=True))
    payload = {"metrics": report.to_dict(),
               "nonzero_caption_rows": result.nonzero_caption_rows}
    Path(resolved["report"]).write_text(json.dumps(payload, sort_keys=True))
    _emit(payload)
    return 0


_COMMANDS = {
    "gen": _cmd_gen,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "sample": _cmd_sample,
    "gradcheck": _cmd_gradcheck,
    "sweep": _cmd_sweep,
    "ablate": _cmd_ablate,
}


def _fail(exc: Exception) -> None:
    print(json.dumps({"error": type(exc).__name__, "message": str(exc)},
                     sort_keys=True), file=sys.stderr, flush=True)


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        try:
            args = parser.parse_args(argv)
        except SystemExit as leave:  # --help and friends
            return int(leave.code or 0)
        resolved = _resolve(args)
        _emit({"subcommand": args.subcommand, **resolved})
        return _COMMANDS[args.subcommand](resolved)
    except NumericError as exc:
        _fail(exc)
        return 2
    except (ConfigError, ContractError, FormatError, OSError) as exc:
        _fail(exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
