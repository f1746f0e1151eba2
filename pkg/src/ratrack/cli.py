"""Command-line pipeline: synth -> train -> track -> eval, connected by files.

Configuration is an INI file with ``[scenario]``, ``[train]`` and
``[tracker]`` sections; ``--set section.key=value`` overrides single
entries. Exit codes: 0 ok, 1 validation error, 2 IO / file-format error,
3 internal invariant violation.
"""
from __future__ import annotations

import argparse
import configparser
import logging
import sys
import time
import typing
from dataclasses import fields
from pathlib import Path
from typing import Optional

from .contrastive import TrainConfig, config_dict, train_ram
from .data import (
    ModelFormatError,
    MotFormatError,
    ScenarioSpec,
    generate_scenario,
    load_model,
    read_mot,
    save_model,
    write_detections,
    write_mot,
)
from .evaluation import evaluate
from .ram import RamKind
from .records import clip_frames, frames_of_boxes
from .tracking import StageConfig, TrackerConfig, track_sequence

EXIT_OK, EXIT_VALIDATION, EXIT_IO, EXIT_INTERNAL = 0, 1, 2, 3
SECTIONS = ("scenario", "train", "tracker")
TRACKER_KEYS = (
    "tau_high", "tau_low", "stage1_alpha", "stage1_gate", "stage2_alpha", "stage2_gate",
    "lam", "max_age", "min_score_new_track", "process_noise_scale",
    "measurement_noise_scale", "single_stage", "ram_kind",
)

log = logging.getLogger("ratrack")


class ConfigError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    """Usage errors are validation errors (exit 1), not argparse's default 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# config

def _parse_value(raw: str, hint):
    raw = raw.strip()
    if typing.get_origin(hint) is typing.Union:  # Optional[T]
        if raw.lower() in ("", "none"):
            return None
        hint = next(a for a in typing.get_args(hint) if a is not type(None))
    if hint is bool:
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    return hint(raw)


def _typed_section(section: dict, cls) -> dict:
    hints = typing.get_type_hints(cls)
    known = {f.name for f in fields(cls)}
    out = {}
    for key, raw in section.items():
        if key not in known:
            raise ConfigError(f"unknown key {key!r} for {cls.__name__}")
        try:
            out[key] = _parse_value(raw, hints[key])
        except ValueError as exc:
            raise ConfigError(f"{cls.__name__}.{key}: {exc}") from None
    return out


def load_config(path: Optional[str], overrides: list[str]) -> dict[str, dict[str, str]]:
    """Raw string sections from the INI file with ``--set`` overrides applied."""
    parser = configparser.ConfigParser(inline_comment_prefixes=(";",))
    if path:
        if not Path(path).is_file():
            raise FileNotFoundError(f"config file not found: {path}")
        parser.read(path)
    unknown = [s for s in parser.sections() if s not in SECTIONS]
    if unknown:
        raise ConfigError(f"unknown config section(s): {', '.join(unknown)}")
    raw = {s: dict(parser[s]) if parser.has_section(s) else {} for s in SECTIONS}
    for item in overrides:
        key, sep, value = item.partition("=")
        section, dot, name = key.strip().partition(".")
        if not sep or not dot or section not in SECTIONS:
            raise ConfigError(f"--set expects section.key=value with section in {SECTIONS}, got {item!r}")
        raw[section][name] = value
    return raw


def scenario_from(raw: dict, seed: Optional[int] = None) -> ScenarioSpec:
    kw = _typed_section(raw["scenario"], ScenarioSpec)
    if seed is not None:
        kw["seed"] = seed
    return ScenarioSpec(**kw)


def train_config_from(raw: dict, seed: Optional[int] = None) -> TrainConfig:
    kw = _typed_section(raw["train"], TrainConfig)
    if seed is not None:
        kw["seed"] = seed
    return TrainConfig(**kw)


def tracker_config_from(raw: dict) -> tuple[TrackerConfig, Optional[RamKind]]:
    """Tracker settings plus the optional ``ram_kind`` expectation."""
    section = dict(raw["tracker"])
    unknown = set(section) - set(TRACKER_KEYS)
    if unknown:
        raise ConfigError(f"unknown tracker key(s): {', '.join(sorted(unknown))}")
    try:
        ram_kind = RamKind.parse(section.pop("ram_kind")) if "ram_kind" in section else None
        single = _parse_value(section.pop("single_stage", "false"), bool)
        stage = {}
        for n in (1, 2):
            a, g = section.pop(f"stage{n}_alpha", None), section.pop(f"stage{n}_gate", None)
            stage[n] = (None if a is None else float(a), None if g is None else float(g))
        base = _typed_section(section, TrackerConfig)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    cfg = TrackerConfig.single_stage(**base) if single else TrackerConfig(**base)
    for n, (a, g) in stage.items():
        old = cfg.stage1 if n == 1 else cfg.stage2
        new = StageConfig(old.alpha if a is None else a, old.gate if g is None else g, old.use_ram)
        if n == 1:
            cfg.stage1 = new
        else:
            cfg.stage2 = new
    cfg.__post_init__()  # re-validate after stage edits
    return cfg, ram_kind


def parse_frames(spec: Optional[str]) -> Optional[tuple[int, int]]:
    if spec is None:
        return None
    a, sep, b = spec.partition("-")
    try:
        first, last = int(a), int(b if sep else a)
    except ValueError:
        raise ConfigError(f"--frames expects FIRST-LAST, got {spec!r}") from None
    if first < 1 or last < first:
        raise ConfigError(f"invalid frame range {spec!r}")
    return first, last


# ---------------------------------------------------------------------------
# commands

def cmd_synth(args, raw) -> int:
    spec = scenario_from(raw, args.seed)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    gt, dets = generate_scenario(spec)
    write_mot(gt, out / "gt.txt")
    write_detections(dets, out / "det.txt")
    n_gt = sum(len(t.points) for t in gt)
    n_det = sum(len(f) for f in dets)
    print(f"wrote {out / 'gt.txt'} ({len(gt)} objects, {n_gt} boxes) and {out / 'det.txt'} ({n_det} detections)")
    return EXIT_OK


def cmd_train(args, raw) -> int:
    cfg = train_config_from(raw, args.seed)
    frame = scenario_from(raw).frame
    kind = RamKind.parse(args.kind)
    mot = read_mot(args.data)
    if not mot.trajectories:
        raise ConfigError(f"{args.data} holds no trajectories (id >= 1 rows)")
    first, last = parse_frames(args.frames) or mot.frame_range()
    frames = frames_of_boxes(mot.trajectories, first, last)
    t0 = time.perf_counter()
    model, report = train_ram(frames, kind, cfg, frame)
    elapsed = time.perf_counter() - t0
    echo = config_dict(cfg)
    echo["source"] = "tracks" if args.from_tracks else "gt"
    echo["frames"] = [first, last]
    save_model(model, args.model, echo, cfg.seed)
    if args.loss_csv:
        report.write_csv(args.loss_csv)
    if report.history:
        e = report.history[-1]
        print(f"epoch {e.epoch}: L_T {e.l_t:.6f}  L_S {e.l_s:.6f}  L_ST {e.l_st:.6f}")
    print(f"saved {kind.value} model to {args.model} in {elapsed:.1f}s")
    return EXIT_OK


def cmd_track(args, raw) -> int:
    cfg, expected = tracker_config_from(raw)
    model = load_model(args.model) if args.model else None
    got = model.kind if model is not None else RamKind.NONE
    if expected is not None and expected is not got:
        raise ConfigError(f"config expects ram_kind {expected.value} but the model is {got.value}")
    mot = read_mot(args.det)
    first, last = parse_frames(args.frames) or mot.frame_range()
    frames = mot.detections_in(first, last)
    t0 = time.perf_counter()
    trajs = track_sequence(frames, cfg, model)
    elapsed = time.perf_counter() - t0
    write_mot(trajs, args.out)
    print(f"{len(trajs)} tracks over frames {first}-{last} in {elapsed:.2f}s -> {args.out}")
    return EXIT_OK


def cmd_eval(args, raw) -> int:
    gt = read_mot(args.gt).trajectories
    hyp = read_mot(args.results).trajectories
    rng = parse_frames(args.frames)
    if rng:
        gt, hyp = clip_frames(gt, *rng), clip_frames(hyp, *rng)
    report = evaluate(gt, hyp, args.iou)
    print(report.table())
    if args.csv:
        report.write_csv(args.csv)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ratrack", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="INI config with [scenario], [train], [tracker] sections")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override one config entry (repeatable)")
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch losses")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a synthetic gt + detection pair")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--seed", type=int, required=True)
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train an alignment model on trajectories")
    t.add_argument("--data", required=True, help="gt file, or tracker output with --from-tracks")
    t.add_argument("--from-tracks", action="store_true", help="input is a previous tracking result")
    t.add_argument("--kind", default="STRAM", help="TRAM, SRAM or STRAM")
    t.add_argument("--frames", help="FIRST-LAST (default: whole file)")
    t.add_argument("--model", required=True, help="output model file")
    t.add_argument("--loss-csv", help="write per-epoch losses here")
    t.add_argument("--seed", type=int, required=True)
    t.set_defaults(func=cmd_train)

    k = sub.add_parser("track", help="associate detections into trajectories")
    k.add_argument("--det", required=True)
    k.add_argument("--model", help="alignment model; omit for the IoU baseline")
    k.add_argument("--out", required=True)
    k.add_argument("--frames", help="FIRST-LAST (default: whole file)")
    k.set_defaults(func=cmd_track)

    e = sub.add_parser("eval", help="score results against ground truth")
    e.add_argument("--gt", required=True)
    e.add_argument("--results", required=True)
    e.add_argument("--frames", help="restrict both files to FIRST-LAST")
    e.add_argument("--iou", type=float, default=0.5, help="match threshold (default 0.5)")
    e.add_argument("--csv", help="also write the metrics as CSV")
    e.set_defaults(func=cmd_eval)
    return p


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        raw = load_config(args.config, args.overrides)
        return args.func(args, raw)
    except (MotFormatError, ModelFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # noqa: BLE001 - anything else is a bug
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
