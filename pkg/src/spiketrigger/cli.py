"""Command line entry point: ``spiketrigger {run,compare,gen-scene,replay,report}``.

Any ``--section.key value`` flag is applied as a config override, so every
ExperimentConfig key is reachable from the command line.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .estimator import MapNotInitializedError, UnderConstrainedError
from .events import EventOrderError, EventParseError
from .harness import (PRESETS, CalibrationError, ConfigError, build_world, compare, load_checkpoints, load_config,
                      load_world, run_episode, save_world, write_outputs)
from .metrics import MetricsError

log = logging.getLogger("spiketrigger")

EXIT_OK = 0
EXIT_OTHER = 1
EXIT_CONFIG = 2
EXIT_INPUT = 3
EXIT_ESTIMATOR = 4
EXIT_METRICS = 5


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, (EventParseError, EventOrderError, FileNotFoundError)):
        return EXIT_INPUT
    if isinstance(exc, (CalibrationError, UnderConstrainedError, MapNotInitializedError)):
        return EXIT_ESTIMATOR
    if isinstance(exc, MetricsError):
        return EXIT_METRICS
    return EXIT_OTHER


def _split_overrides(extra: list[str]) -> list[str]:
    """Turn leftover ``--a.b value`` / ``--a.b=value`` flags into ``a.b=value`` strings."""
    out, i = [], 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--") or "." not in tok:
            raise ConfigError(f"unrecognized argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            out.append(key)
            i += 1
            continue
        if i + 1 >= len(extra):
            raise ConfigError(f"missing value for {tok}")
        out.append(f"{key}={extra[i + 1]}")
        i += 2
    return out


def _config(args, extra):
    overrides = list(args.set or []) + _split_overrides(extra)
    return load_config(args.config, args.preset, overrides)


def _summary(report) -> str:
    m = report.metrics
    return (f"{report.policy:<10} seed {report.seed}: APE {m.ape_rms:.2f} cm  TTR {m.ttr_hz:.1f} Hz  "
            f"MTR {m.mtr_hz:.1f} Hz  energy {m.energy_ops / 1e9:.0f} GOPs  "
            f"speed/MTR rho {report.speed_mtr_spearman:+.2f}")


def cmd_run(args, extra) -> int:
    cfg = _config(args, extra)
    report = run_episode(cfg)
    print(_summary(report))
    if args.out:
        write_outputs(report, args.out)
        print(f"outputs in {args.out}")
    return EXIT_OK


def cmd_compare(args, extra) -> int:
    cfg = _config(args, extra)
    policies = [p.strip() for p in args.policies.split(",") if p.strip()]
    table = compare(cfg, policies)
    print(table.to_text(), end="")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "comparison.csv").write_text(table.to_csv())
        for name, rep in zip(table.policies, table.reports):
            write_outputs(rep, out / name)
        print(f"outputs in {args.out}")
    return EXIT_OK


def cmd_gen_scene(args, extra) -> int:
    cfg = _config(args, extra)
    world = build_world(cfg)
    save_world(world, cfg, args.out)
    print(f"{len(world.left)} left / {len(world.right)} right events, {len(world.landmarks)} landmarks "
          f"-> {args.out}")
    return EXIT_OK


def cmd_replay(args, extra) -> int:
    scene = Path(args.scene)
    cfg_path = args.config or (scene / "scene.cfg" if (scene / "scene.cfg").exists() else None)
    cfg = load_config(cfg_path, args.preset, list(args.set or []) + _split_overrides(extra))
    world = load_world(scene, cfg.rig)
    ckpt = load_checkpoints(args.checkpoints) if args.checkpoints else None
    if args.checkpoints and not ckpt:
        raise FileNotFoundError(f"no map_net.npz / track_net.npz in {args.checkpoints}")
    report = run_episode(cfg, world, checkpoints=ckpt)
    print(_summary(report))
    if args.out:
        write_outputs(report, args.out)
    return EXIT_OK


def cmd_report(args, extra) -> int:
    if extra:
        raise ConfigError(f"unrecognized arguments {extra}")
    rows = []
    for p in args.reports:
        path = Path(p)
        if path.is_dir():
            path = path / "report.json"
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not a report ({exc})") from exc
        rows.append((str(p), data))
    cols = ("ape_rms", "ttr_hz", "mtr_hz", "energy_ops")
    print(f"{'report':<32}{'policy':<12}{'seed':>5}" + "".join(f"{c:>14}" for c in cols))
    for name, d in rows:
        m = d["metrics"]
        cells = "".join(f"{(m[c] if m[c] is not None else float('nan')):>14.4g}" for c in cols)
        print(f"{name:<32}{d['policy']:<12}{d['seed']:>5}{cells}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spiketrigger", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True)

    def with_config(sp):
        sp.add_argument("--config", help="flat 'key = value' config file")
        sp.add_argument("--preset", default="defaults", choices=sorted(PRESETS))
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override (repeatable)")

    sp = sub.add_parser("run", help="one seeded episode")
    with_config(sp)
    sp.add_argument("--out", help="output directory")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("compare", help="several policies on one scene")
    with_config(sp)
    sp.add_argument("--policies", default="always,sean", help="comma list; the first is the baseline")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("gen-scene", help="write a synthetic scene (events, trajectory, landmarks)")
    with_config(sp)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_gen_scene)

    sp = sub.add_parser("replay", help="run an episode on a scene directory written by gen-scene")
    with_config(sp)
    sp.add_argument("scene")
    sp.add_argument("--checkpoints", help="directory with map_net.npz / track_net.npz")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_replay)

    sp = sub.add_parser("report", help="tabulate report.json files or run directories")
    sp.add_argument("reports", nargs="+")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args, extra)
    except Exception as exc:  # noqa: BLE001 - mapped to exit categories
        code = _exit_code(exc)
        print(f"error [{type(exc).__name__}]: {exc}", file=sys.stderr)
        log.debug("traceback", exc_info=True)
        return code


if __name__ == "__main__":
    sys.exit(main())
