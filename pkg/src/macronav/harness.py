"""Command-line entry point: train, eval, baseline, plot, dump-map."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .agent import (
    EpisodeStats,
    TrainConfig,
    _scene_cache,
    evaluate,
    episode_seed,
    run_episode,
    train,
    train_scene_seeds,
)
from .config import dump_kv, load_kv
from .errors import EmptySeries, InvalidConfig, MacroNavError, ParseError
from .policy import PolicyConfig
from .qnet import load_checkpoint, save_checkpoint
from .sim import SceneConfig, generate_scene
from .topomap import MapParams, serialize

log = logging.getLogger("macronav")

CSV_HEADER = [
    "episode",
    "mode",
    "n_targets",
    "reward_mode",
    "elementary_steps",
    "macro_decisions",
    "return",
    "success",
    "epsilon",
    "scene_seed",
]

DEFAULT_WINDOW = 10


@dataclass(frozen=True)
class RunRecord:
    episode: int
    mode: str
    n_targets: int
    reward_mode: str
    elementary_steps: int
    macro_decisions: int
    episode_return: float
    success: bool
    epsilon: float
    scene_seed: int

    def __post_init__(self):
        for name in ("episode", "n_targets", "elementary_steps", "macro_decisions", "episode_return", "epsilon", "scene_seed"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    @classmethod
    def from_stats(cls, episode: int, stats: EpisodeStats, cfg: TrainConfig) -> "RunRecord":
        return cls(
            episode,
            stats.mode,
            cfg.n_targets,
            cfg.reward_mode,
            stats.elementary_steps,
            stats.macro_decisions,
            float(stats.episode_return),
            bool(stats.success),
            float(stats.epsilon),
            int(stats.scene_seed),
        )


# ---------------------------------------------------------------- CSV
def _fmt_float(v: float) -> str:
    return repr(float(v))


def write_csv(rows: Sequence[RunRecord], path: Optional[Path] = None) -> str:
    """Serialise rows (header first); also writes ``path`` when given."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        w.writerow(
            [
                r.episode,
                r.mode,
                r.n_targets,
                r.reward_mode,
                r.elementary_steps,
                r.macro_decisions,
                _fmt_float(r.episode_return),
                int(r.success),
                _fmt_float(r.epsilon),
                r.scene_seed,
            ]
        )
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def parse_csv(text: str) -> list[RunRecord]:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError("missing header", 1) from None
    if header != CSV_HEADER:
        raise ParseError(f"unexpected header {header}", 1)
    rows = []
    for lineno, fields in enumerate(reader, start=2):
        if not fields:
            continue
        if len(fields) != len(CSV_HEADER):
            raise ParseError(f"row {lineno - 1}: expected {len(CSV_HEADER)} fields, got {len(fields)}", lineno)
        try:
            success = fields[7]
            if success not in ("0", "1"):
                raise ValueError(f"success must be 0 or 1, got {success!r}")
            rows.append(
                RunRecord(
                    int(fields[0]),
                    fields[1],
                    int(fields[2]),
                    fields[3],
                    int(fields[4]),
                    int(fields[5]),
                    float(fields[6]),
                    success == "1",
                    float(fields[8]),
                    int(fields[9]),
                )
            )
        except ValueError as exc:
            raise ParseError(f"row {lineno - 1}: {exc}", lineno) from None
    return rows


def read_csv(path: str | Path) -> list[RunRecord]:
    return parse_csv(Path(path).read_text())


# ---------------------------------------------------------------- SVG
def moving_average(values: Sequence[float], window: int) -> np.ndarray:
    """Trailing mean over up to ``window`` points (shorter at the start)."""
    v = np.asarray(values, dtype=float)
    if window <= 1:
        return v
    c = np.concatenate([[0.0], np.cumsum(v)])
    idx = np.arange(1, len(v) + 1)
    lo = np.maximum(idx - window, 0)
    return (c[idx] - c[lo]) / (idx - lo)


_PALETTE = ["#1f5fbf", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"]


def emit_svg(series: dict[str, Sequence[float]], window: int = DEFAULT_WINDOW, width: int = 640, height: int = 400) -> str:
    """Line chart of smoothed step counts, one polyline per named series."""
    if not series:
        raise EmptySeries("no series to plot")
    for name, vals in series.items():
        if len(vals) == 0:
            raise EmptySeries(f"series {name!r} is empty")
    left, right, top, bottom = 70, 20, 20, 50
    pw, ph = width - left - right, height - top - bottom
    smooth = {k: moving_average(v, window) for k, v in series.items()}
    n_max = max(len(v) for v in smooth.values())
    y_max = max(float(v.max()) for v in smooth.values())
    y_min = min(0.0, min(float(v.min()) for v in smooth.values()))
    if y_max <= y_min:
        y_max = y_min + 1.0

    def sx(i: float) -> float:
        return left + (pw * i / (n_max - 1) if n_max > 1 else pw / 2)

    def sy(y: float) -> float:
        return top + ph * (1.0 - (y - y_min) / (y_max - y_min))

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>',
        f'<text x="{left + pw / 2:.1f}" y="{height - 12}" text-anchor="middle" font-size="13">episode</text>',
        f'<text x="16" y="{top + ph / 2:.1f}" text-anchor="middle" font-size="13" '
        f'transform="rotate(-90 16 {top + ph / 2:.1f})">elementary steps</text>',
        f'<text x="{left - 6}" y="{sy(y_max) + 4:.1f}" text-anchor="end" font-size="10">{y_max:.0f}</text>',
        f'<text x="{left - 6}" y="{sy(y_min) + 4:.1f}" text-anchor="end" font-size="10">{y_min:.0f}</text>',
        f'<text x="{left}" y="{top + ph + 16}" text-anchor="middle" font-size="10">0</text>',
        f'<text x="{left + pw}" y="{top + ph + 16}" text-anchor="middle" font-size="10">{n_max - 1}</text>',
    ]
    for k, (name, vals) in enumerate(smooth.items()):
        color = _PALETTE[k % len(_PALETTE)]
        pts = " ".join(f"{sx(i):.2f},{sy(float(y)):.2f}" for i, y in enumerate(vals))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        ly = top + 14 + 16 * k
        out.append(f'<line x1="{left + pw - 150}" y1="{ly - 4}" x2="{left + pw - 130}" y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{left + pw - 125}" y="{ly}" font-size="11">{_escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _escape(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


# ---------------------------------------------------------------- config
_FLAG_KEYS = {
    "targets": "n_targets",
    "reward": "reward_mode",
    "episodes": "episodes",
    "scenes": "scenes",
    "seed": "seed",
    "epsilon": "policy.epsilon",
    "temperature": "policy.temperature",
    "bonus_q": "policy.bonus_q",
    "gamma": "gamma",
    "lr": "lr",
    "batch": "batch",
    "replay": "replay",
    "eval_episodes": "eval_episodes",
}

_SECTIONS = {"scene": SceneConfig, "map": MapParams, "policy": PolicyConfig}
# run metadata written to config.txt; ignored when a config.txt is reused
_META_KEYS = {"command", "checkpoint"}


def _coerce(default, raw, key: str):
    if not isinstance(raw, str):
        return raw
    try:
        if isinstance(default, bool):
            if raw.lower() in ("1", "true", "yes"):
                return True
            if raw.lower() in ("0", "false", "no"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise InvalidConfig(f"bad value for {key}: {raw!r}") from None
    return raw


def resolve_config(file_values: dict[str, str], flag_values: dict[str, object]) -> TrainConfig:
    """Defaults, overridden by the config file, overridden by flags.

    Keys are the flat names written to ``config.txt`` (``gamma``,
    ``scene.rooms``, ``policy.epsilon``...). Bare scene keys such as
    ``rooms`` are accepted too, so a previous run's ``config.txt`` can be
    passed back in.
    """
    base = TrainConfig()
    top = {f.name: getattr(base, f.name) for f in dataclasses.fields(TrainConfig) if f.name not in _SECTIONS}
    sections = {name: dataclasses.asdict(getattr(base, name)) for name in _SECTIONS}
    merged: dict[str, object] = dict(file_values)
    merged.update(flag_values)
    for key, raw in merged.items():
        if key in _META_KEYS:
            continue
        if "." in key:
            sec, sub = key.split(".", 1)
            if sec not in sections or sub not in sections[sec]:
                raise InvalidConfig(f"unknown config key {key!r}")
            sections[sec][sub] = _coerce(sections[sec][sub], raw, key)
        elif key in top:
            top[key] = _coerce(top[key], raw, key)
        elif key in sections["scene"]:
            sections["scene"][key] = _coerce(sections["scene"][key], raw, key)
        else:
            raise InvalidConfig(f"unknown config key {key!r}")
    # the task's target count lives at the top level
    sections["scene"]["n_targets"] = top["n_targets"]
    scene = SceneConfig(**sections["scene"])
    scene.validate()
    return TrainConfig(
        scene=scene,
        map=MapParams(**sections["map"]),
        policy=PolicyConfig(**sections["policy"]),
        **top,
    )


def write_config(path: Path, cfg: TrainConfig, command: str, extra: Optional[dict] = None) -> None:
    values: dict[str, object] = {"command": command}
    values.update(extra or {})
    values.update(cfg.flat())
    path.write_text(dump_kv(values))


# ---------------------------------------------------------------- commands
class UsageError(Exception):
    pass


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--targets", type=int, choices=(1, 2, 3))
    common.add_argument("--reward", choices=("immediate", "terminal"))
    common.add_argument("--episodes", type=int)
    common.add_argument("--scenes", type=int)
    common.add_argument("--seed", type=int)
    common.add_argument("--out", type=Path, required=True)
    common.add_argument("--config", type=Path)
    common.add_argument("--epsilon", type=float)
    common.add_argument("--temperature", type=float)
    common.add_argument("--bonus-q", dest="bonus_q", type=float)
    common.add_argument("--gamma", type=float)
    common.add_argument("--lr", type=float)
    common.add_argument("--batch", type=int)
    common.add_argument("--replay", type=int)
    common.add_argument("--eval-episodes", dest="eval_episodes", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="macronav", description="Macro-action navigation on object-centric topological maps.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("train", parents=[common], help="warm up, train, save checkpoint, evaluate on held-out scenes")
    ev = sub.add_parser("eval", parents=[common], help="greedy evaluation of a checkpoint on held-out scenes")
    ev.add_argument("--checkpoint", type=Path, required=True)
    sub.add_parser("baseline", parents=[common], help="random macro agent on the training scenes (and held-out scenes)")
    pl = sub.add_parser("plot", help="SVG of smoothed steps per episode")
    pl.add_argument("--in", dest="inputs", type=Path, nargs="+", required=True)
    pl.add_argument("--out", type=Path, required=True)
    pl.add_argument("--window", type=int, default=DEFAULT_WINDOW)
    dm = sub.add_parser("dump-map", parents=[common], help="run one episode and write its final map")
    dm.add_argument("--checkpoint", type=Path)
    return p


def _resolve(args: argparse.Namespace) -> TrainConfig:
    flags = {}
    for attr, key in _FLAG_KEYS.items():
        v = getattr(args, attr, None)
        if v is not None:
            flags[key] = v
    file_values = load_kv(args.config) if args.config else {}
    return resolve_config(file_values, flags)


def _progress(label: str):
    def cb(k: int, s: EpisodeStats) -> None:
        log.info("%s %d: steps=%d decisions=%d success=%s", label, k, s.elementary_steps, s.macro_decisions, s.success)

    return cb


def cmd_train(args, cfg: TrainConfig) -> None:
    out: Path = args.out
    out.mkdir(parents=True, exist_ok=True)
    write_config(out / "config.txt", cfg, "train")
    res = train(cfg, progress=_progress("train"))
    write_csv([RunRecord.from_stats(k, s, cfg) for k, s in enumerate(res.rows)], out / "curve.csv")
    save_checkpoint(res.params, out / "checkpoint.qnet")
    if cfg.eval_episodes > 0:
        summary = evaluate(res.params, cfg, cfg.eval_episodes, progress=_progress("eval"))
        write_csv([RunRecord.from_stats(k, s, cfg) for k, s in enumerate(summary.rows)], out / "eval.csv")
        print(f"eval median steps {summary.median_steps:g}, success rate {summary.success_rate:.2f}")


def cmd_eval(args, cfg: TrainConfig) -> None:
    out: Path = args.out
    out.mkdir(parents=True, exist_ok=True)
    params = load_checkpoint(args.checkpoint)
    if params.arch != cfg.arch:
        raise InvalidConfig(f"checkpoint architecture {params.arch} does not match the configuration")
    write_config(out / "config.txt", cfg, "eval", {"checkpoint": args.checkpoint})
    summary = evaluate(params, cfg, cfg.eval_episodes, progress=_progress("eval"))
    write_csv([RunRecord.from_stats(k, s, cfg) for k, s in enumerate(summary.rows)], out / "eval.csv")
    print(f"eval median steps {summary.median_steps:g}, success rate {summary.success_rate:.2f}")


def cmd_baseline(args, cfg: TrainConfig) -> None:
    """Random agent on the same scene sequence a training run would see."""
    out: Path = args.out
    out.mkdir(parents=True, exist_ok=True)
    write_config(out / "config.txt", cfg, "baseline")
    seeds = train_scene_seeds(cfg.seed, cfg.scenes)
    scenes = _scene_cache(cfg)
    pick = np.random.default_rng([cfg.seed & 0xFFFFFFFF, 0x5C])
    for _ in range(cfg.warmup_episodes):
        pick.integers(len(seeds))
    rows = []
    for k in range(cfg.episodes):
        scene = scenes(seeds[int(pick.integers(len(seeds)))])
        stats, _ = run_episode(scene, None, cfg, "random", episode_seed(cfg.seed, 2, k), record=False)
        _progress("baseline")(k, stats)
        rows.append(RunRecord.from_stats(k, stats, cfg))
    write_csv(rows, out / "curve.csv")
    if cfg.eval_episodes > 0:
        summary = evaluate(None, cfg, cfg.eval_episodes, mode="random", progress=_progress("eval"))
        write_csv([RunRecord.from_stats(k, s, cfg) for k, s in enumerate(summary.rows)], out / "eval.csv")
        print(f"baseline median steps {summary.median_steps:g}, success rate {summary.success_rate:.2f}")


def cmd_plot(args) -> None:
    if args.window < 1:
        raise UsageError("--window must be at least 1")
    series: dict[str, list[float]] = {}
    for path in args.inputs:
        rows = read_csv(path)
        modes = sorted({r.mode for r in rows})
        name = f"{path.parent.name or path.stem} ({'/'.join(modes) or 'empty'})"
        while name in series:
            name += "'"
        series[name] = [r.elementary_steps for r in rows]
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(emit_svg(series, args.window))


def cmd_dump_map(args, cfg: TrainConfig) -> None:
    """One episode on the first training scene; writes the final map."""
    out: Path = args.out
    out.mkdir(parents=True, exist_ok=True)
    params = load_checkpoint(args.checkpoint) if args.checkpoint else None
    mode = "eval" if params is not None else "random"
    write_config(out / "config.txt", cfg, "dump-map", {"checkpoint": args.checkpoint or "-"})
    scene = generate_scene(train_scene_seeds(cfg.seed, 1)[0], cfg.scene)
    final = {}

    def grab(info):
        final["map"] = info["map"]

    stats, _ = run_episode(scene, params, cfg, mode, episode_seed(cfg.seed, 4, 0), record=False, on_decision=grab)
    if "map" not in final:
        raise MacroNavError("episode ended before the first decision; no map to dump")
    text, blob = serialize(final["map"])
    (out / "map.txt").write_text(text)
    (out / "map.bin").write_bytes(blob)
    write_csv([RunRecord.from_stats(0, stats, cfg)], out / "episode.csv")


def cli_main(argv: Optional[Sequence[str]] = None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING, format="%(message)s")
    try:
        if args.command == "plot":
            cmd_plot(args)
            return 0
        cfg = _resolve(args)
        {"train": cmd_train, "eval": cmd_eval, "baseline": cmd_baseline, "dump-map": cmd_dump_map}[args.command](args, cfg)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (MacroNavError, OSError, ValueError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
