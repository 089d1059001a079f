"""Command-line entry point: ``mambapupil <subcommand> ...``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numeric failure during training.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .augment import augment_sequence, segment_rng
from .config import CONFIG_ENV, RunConfig, dump_config, from_tree, load_config
from .errors import ConfigError, DataError, NumericError
from .events import EventStream, load_events, save_events, save_labels
from .model import VARIANTS, MambaPupil, ModelConfig
from .representations import BinaRep, write_bina_rep
from .synth import SceneModel, generate_dataset, preset_trajectories
from .training import (EncodedSequence, RepresentationConfig, encode_windows, evaluate, format_metrics_csv,
                       load_recording, load_recordings, predict_sequence, split_train_val, train)

log = logging.getLogger("mambapupil")

PRESETS = ("fixation", "blink", "smooth_pursuit", "saccade", "random", "mixed")


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # usage errors exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _run_config(args) -> RunConfig:
    overrides = list(args.set or [])
    for flag, key in (("seed", "seed"), ("precision", "precision"), ("variant", "model.variant"),
                      ("epochs", "train.epochs"), ("data", "paths.data"), ("out", "paths.out")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides.append(f"{key}={value}")
    return load_config(args.config, overrides)


def _ensure_dir(path: Path) -> Path:
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"{path}: cannot create output directory ({exc.strerror})") from exc
    return path


def _write_text(path: Path, text: str) -> None:
    try:
        path.write_text(text, encoding="utf-8", newline="\n")
    except OSError as exc:
        raise DataError(f"{path}: cannot write ({exc.strerror})") from exc


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_synth(args) -> None:
    scene = SceneModel(noise_rate_hz=args.noise_hz)
    out = _ensure_dir(Path(args.out))
    for k in range(args.sequences):
        rng = np.random.default_rng([args.seed, k])
        trajectories = preset_trajectories(args.preset, args.duration, scene, rng)
        events, labels = generate_dataset(trajectories, scene, args.label_rate, seed=args.seed * 1000 + k)
        d = _ensure_dir(out / f"seq_{k:03d}")
        try:
            save_events(d / "events.csv", events)
            save_labels(d / "labels.csv", labels, scene.resolution)
        except OSError as exc:
            raise DataError(f"{d}: cannot write ({exc.strerror})") from exc
        meta = {"resolution": list(scene.resolution), "label_rate_hz": args.label_rate, "preset": args.preset,
                "seed": args.seed, "index": k, "duration_s": args.duration, "n_events": len(events)}
        _write_text(d / "meta.json", json.dumps(meta, indent=2, sort_keys=True) + "\n")
        log.info("%s: %d events, %d labels", d, len(events), len(labels))


def _encode_recording(rec_dir: str, rep: RepresentationConfig) -> tuple[EventStream, np.ndarray]:
    meta = json.loads((Path(rec_dir) / "meta.json").read_text(encoding="utf-8")) \
        if (Path(rec_dir) / "meta.json").exists() else None
    if meta is None:
        raise DataError(f"{rec_dir}: missing meta.json")
    events = load_events(Path(rec_dir) / "events.csv", tuple(meta["resolution"]))
    n = (int(events.t[-1]) + 1) // rep.window_us if len(events) else 0
    return events, encode_windows(events, 0, n, rep)


def cmd_encode(args) -> None:
    cfg = _run_config(args)
    rep = cfg.representation
    if rep.kind != "bina_rep":
        raise ConfigError("representation.kind", "encode writes Bina-rep dumps only")
    _, grids = _encode_recording(args.recording, rep)
    out = _ensure_dir(Path(args.out))
    for k, grid in enumerate(grids):
        write_bina_rep(out / f"window_{k:05d}.brep", BinaRep(rep.bits, grid))
    log.info("wrote %d windows to %s", len(grids), out)


def cmd_augment_preview(args) -> None:
    cfg = _run_config(args)
    rec = load_recording(args.recording)
    seq = EncodedSequence(rec, cfg.representation, np.float64)
    L = min(cfg.segments.seq_len, seq.n)
    start = min(args.start, seq.n - L)
    x, y = seq.segment(start, start + L)
    x, y = augment_sequence(x, y, cfg.augment, segment_rng(cfg.augment.seed, 0, start))
    out = _ensure_dir(Path(args.out))
    np.save(out / "segment.npy", x)
    rows = "".join(f"{start + i},{cx!r},{cy!r}\n" for i, (cx, cy) in enumerate(y.tolist()))
    _write_text(out / "labels.csv", "window,cx,cy\n" + rows)


def _split(cfg: RunConfig):
    if not cfg.paths.data:
        raise ConfigError("paths.data", "no training data given (use --data or paths.data)")
    recs = load_recordings(cfg.paths.data)
    if cfg.paths.val_data:
        return recs, load_recordings(cfg.paths.val_data)
    return split_train_val(recs)


def cmd_train(args) -> None:
    cfg = _run_config(args)
    out = _ensure_dir(Path(cfg.paths.out))
    _write_text(out / "config.yaml", dump_config(cfg))
    train_recs, val_recs = _split(cfg)
    log.info("training on %d recordings, validating on %d", len(train_recs), len(val_recs))
    rows: list[dict] = []

    def on_epoch(row: dict) -> None:
        rows.append(row)
        _write_text(out / "metrics.csv", format_metrics_csv(rows))

    result = train(cfg.model, cfg.representation, cfg.segments, cfg.augment, cfg.schedule, cfg.train,
                   train_recs, val_recs, on_epoch)
    meta = {"config": cfg.to_dict(), "best_epoch": result.best_epoch}
    ad.save_checkpoint(out / "checkpoint.mpck", result.best_state, meta)
    log.info("best epoch %d; checkpoint at %s", result.best_epoch, out / "checkpoint.mpck")


def _load_model(path: str, precision: str | None) -> tuple[MambaPupil, RunConfig]:
    tensors, meta = ad.load_checkpoint(path)
    try:
        cfg = from_tree(meta["config"])
    except KeyError:
        raise DataError(f"{path}: checkpoint carries no configuration") from None
    dtype = np.dtype(precision or cfg.precision)
    model = MambaPupil(cfg.model, seed=0, dtype=dtype)
    try:
        model.load_state_dict(tensors)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from exc
    return model, cfg


def _predictions_csv(t_end: np.ndarray, pred: np.ndarray) -> str:
    lines = ["t,cx,cy"]
    lines += [f"{int(t)},{float(cx)!r},{float(cy)!r}" for t, (cx, cy) in zip(t_end, pred)]
    return "\n".join(lines) + "\n"


def cmd_eval(args) -> None:
    model, cfg = _load_model(args.checkpoint, args.precision)
    recs = load_recordings(args.data)
    seqs = [EncodedSequence(r, cfg.representation, model.dtype) for r in recs]
    pixel_space = tuple(args.pixel_space) if args.pixel_space else cfg.train.pixel_space
    with ad.default_dtype(model.dtype):
        _, metrics, preds = evaluate(model, seqs, cfg.segments, pixel_space, args.skip_closed)
    out = _ensure_dir(Path(args.out))
    _write_text(out / "metrics.json", json.dumps(metrics.as_dict(), indent=2, sort_keys=True) + "\n")
    pred_dir = _ensure_dir(out / "predictions")
    for seq, pred in zip(seqs, preds):
        _write_text(pred_dir / f"{seq.rec.name}.csv", _predictions_csv(seq.t_end, pred))
    print(json.dumps(metrics.as_dict(), sort_keys=True))


def cmd_predict(args) -> None:
    model, cfg = _load_model(args.checkpoint, args.precision)
    events, grids = _encode_recording(args.recording, cfg.representation)
    if len(grids) == 0:
        raise DataError(f"{args.recording}: too few events for one window")
    L = cfg.segments.seq_len
    out = []
    with ad.default_dtype(model.dtype), ad.no_grad():
        for a in range(0, len(grids), L):
            x = ad.Tensor(grids[None, a:a + L].astype(model.dtype), dtype=model.dtype)
            out.append(model(x, training=False).data[0])
    pred = np.concatenate(out)
    t_end = (np.arange(len(pred)) + 1) * cfg.representation.window_us
    text = _predictions_csv(t_end, pred)
    if args.out:
        _ensure_dir(Path(args.out).parent)
        _write_text(Path(args.out), text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help=f"YAML or JSON run config (default: ${CONFIG_ENV})")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config field, e.g. model.gru_hidden=64")
    p.add_argument("--seed", type=int)
    p.add_argument("--precision", choices=("float32", "float64"))


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mambapupil", description="Event-camera pupil tracking toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate synthetic recordings")
    p.add_argument("--preset", choices=PRESETS, default="mixed")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--duration", type=float, default=20.0, help="seconds per recording")
    p.add_argument("--sequences", type=int, default=1)
    p.add_argument("--label-rate", type=int, default=100)
    p.add_argument("--noise-hz", type=float, default=0.0, help="per-pixel background event rate")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("encode", help="write per-window Bina-rep dumps of one recording")
    _config_flags(p)
    p.add_argument("recording")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("augment-preview", help="save one augmented training segment")
    _config_flags(p)
    p.add_argument("recording")
    p.add_argument("--start", type=int, default=0, help="first window of the segment")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_augment_preview)

    p = sub.add_parser("train", help="train a model; writes checkpoint.mpck and metrics.csv")
    _config_flags(p)
    p.add_argument("--data")
    p.add_argument("--out")
    p.add_argument("--epochs", type=int)
    p.add_argument("--variant", choices=VARIANTS)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint; writes metrics.json and predictions")
    p.add_argument("checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--precision", choices=("float32", "float64"))
    p.add_argument("--pixel-space", type=int, nargs=2, metavar=("W", "H"))
    p.add_argument("--skip-closed", action="store_true", help="leave closed-eye samples out of the metrics")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="predict pupil centres for one recording")
    p.add_argument("checkpoint")
    p.add_argument("recording")
    p.add_argument("--out", help="CSV path (default: stdout)")
    p.add_argument("--precision", choices=("float32", "float64"))
    p.set_defaults(func=cmd_predict)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
