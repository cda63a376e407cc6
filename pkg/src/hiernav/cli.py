"""Command line entry point: ``hiernav {explore,goal,alias,reconstruct} [options]``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import yaml

from .harness import TASKS, RunConfig, aggregate_csv, run_batch
from .planner import PlannerConfig, Weights

log = logging.getLogger("hiernav")

# config-file keys mirror the long flags (dashes or underscores both accepted)
KEYS = ("rooms", "width", "seeds", "budget", "gamma", "lookahead", "weights",
        "deterministic", "with_prior", "out", "maze_file")


def parse_rooms(text: str) -> tuple[int, int]:
    try:
        r, c = (int(v) for v in str(text).lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"rooms must look like RxC, got {text!r}") from None
    if r < 1 or c < 1:
        raise argparse.ArgumentTypeError("rooms must be positive")
    return r, c


def parse_seeds(text) -> list[int]:
    """``"3"``, ``"0..29"`` (inclusive), ``"1,4,7"`` or a list of ints."""
    if isinstance(text, int):
        return [text]
    if isinstance(text, (list, tuple)):
        return [int(v) for v in text]
    out = []
    for part in str(text).split(","):
        if ".." in part:
            a, b = (int(v) for v in part.split(".."))
            if b < a:
                raise argparse.ArgumentTypeError(f"empty seed range {part!r}")
            out.extend(range(a, b + 1))
        elif part.strip():
            out.append(int(part))
    if not out:
        raise argparse.ArgumentTypeError("no seeds given")
    return out


def parse_weights(text) -> Weights:
    if isinstance(text, (list, tuple)):
        text = ",".join(str(v) for v in text)
    try:
        return Weights.parse(str(text))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def load_config(path: str | Path) -> dict:
    """Read a YAML (or JSON) mapping whose keys match the long flags."""
    data = yaml.safe_load(Path(path).read_text()) or {}
    if not isinstance(data, dict):
        raise ValueError(f"{path}: config must be a mapping")
    data = {k.replace("-", "_"): v for k, v in data.items()}
    unknown = set(data) - set(KEYS) - {"task"}
    if unknown:
        raise ValueError(f"{path}: unknown keys {sorted(unknown)}")
    return data


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hiernav", description=__doc__.splitlines()[0])
    p.add_argument("task", choices=TASKS)
    p.add_argument("--config", help="YAML/JSON file with the same keys as the flags")
    p.add_argument("--rooms", type=parse_rooms, help="room lattice RxC (default 3x3)")
    p.add_argument("--width", type=int, help="room width in tiles, 4..8 (default 4)")
    p.add_argument("--seeds", type=parse_seeds, help="a..b inclusive, or a comma list (default 0)")
    p.add_argument("--budget", type=int, help="step budget (default min(75 x rooms, 1500))")
    p.add_argument("--gamma", type=float, help="policy precision")
    p.add_argument("--lookahead", type=int, help="look-ahead half-width L")
    p.add_argument("--weights", type=parse_weights, help="w1,w2,w3,w4 for the active task")
    p.add_argument("--deterministic", action="store_true", default=None, help="argmax policy selection")
    p.add_argument("--stochastic", dest="deterministic", action="store_false", help="sample policies")
    p.add_argument("--with-prior", action="store_true", default=None, help="goal task: explore first")
    p.add_argument("--out", help="output directory for logs, maps and the CSV")
    p.add_argument("--maze-file", help="run on this maze text file instead of generating")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def merge(args: argparse.Namespace) -> dict:
    """Flags override the config file, which overrides the defaults."""
    opts = load_config(args.config) if args.config else {}
    for k in KEYS:
        v = getattr(args, k)
        if v is not None:
            opts[k] = v
    if "rooms" in opts and not isinstance(opts["rooms"], tuple):
        opts["rooms"] = parse_rooms(opts["rooms"])
    if "seeds" in opts:
        opts["seeds"] = parse_seeds(opts["seeds"])
    if "weights" in opts and not isinstance(opts["weights"], Weights):
        opts["weights"] = parse_weights(opts["weights"])
    return opts


def make_config(task: str, opts: dict) -> RunConfig:
    planner = PlannerConfig()
    if "gamma" in opts:
        planner.gamma = float(opts["gamma"])
    if "lookahead" in opts:
        planner.look_ahead = int(opts["lookahead"])
    if "deterministic" in opts:
        planner.deterministic = bool(opts["deterministic"])
    if "weights" in opts:
        if task == "goal":
            planner.goal_weights = opts["weights"]
        else:
            planner.weights = opts["weights"]
    planner.__post_init__()
    kw = {k: opts[k] for k in ("rooms", "width", "seeds", "budget", "with_prior", "out", "maze_file")
          if k in opts}
    if "width" in kw:
        kw["width"] = int(kw["width"])
    return RunConfig(task=task, planner=planner, **kw)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = make_config(args.task, merge(args))
        results = run_batch(cfg)
    except (ValueError, OSError, argparse.ArgumentTypeError) as exc:
        print(f"hiernav: error: {exc}", file=sys.stderr)
        return 2
    for r in results:
        log.info("seed %d success=%s steps=%s", r.metrics.seed, r.metrics.success,
                 r.metrics.steps_to_success)
    if not cfg.out:
        sys.stdout.write(aggregate_csv(cfg, results))
    return 0


if __name__ == "__main__":
    sys.exit(main())
