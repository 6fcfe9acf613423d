"""``diffvor <subcommand> --config PATH [--seed K] [--out DIR]``

Exit status: 0 on success, 2 for a bad config or unreadable input, 3 when
the geometry degenerates (duplicate/collinear sites, collapsed cells,
sites leaving the boundary).
"""

from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .autodiff import AutodiffError
from .delaunay import TriangulationError
from .experiments import ConfigError, ExperimentConfig, load_config, run_experiment
from .voronoi import DegenerateGeometryError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_GEOMETRY = 3

_SUBCOMMANDS = {
    "tessellate": ("tessellate",),
    "variance": ("variance_bounded", "variance_unbounded"),
    "hospital": ("hospital",),
    "gradcheck": ("gradcheck",),
}


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="diffvor", description="Differentiable Voronoi tessellation experiments.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in _SUBCOMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, help="experiment config (JSON)")
        s.add_argument("--seed", type=int, help="override the config seed")
        s.add_argument("--out", help="override the output directory")
        s.add_argument("--repeat", type=int, default=1,
                       help="run seeds seed..seed+K-1, each into OUT/seed-<k>")
        s.add_argument("--jobs", type=int, default=1, help="parallel processes across seeds")
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def _summary(cfg: ExperimentConfig, art) -> str:
    parts = [f"experiment={cfg.experiment}", f"seed={cfg.seed}", f"out={art.out_dir}"]
    rep = art.report or {}
    for key in ("final_loss", "variance_ratio", "mse_reduction", "max_rel_error", "passed"):
        if key in rep and rep[key] is not None:
            v = rep[key]
            parts.append(f"{key}={v:.6g}" if isinstance(v, float) else f"{key}={v}")
    return " ".join(parts)


def _run_one(cfg: ExperimentConfig) -> tuple[int, str]:
    try:
        art = run_experiment(cfg)
    except ConfigError as exc:
        return EXIT_CONFIG, f"config error: {exc}"
    except OSError as exc:
        return EXIT_CONFIG, f"i/o error: {exc}"
    except (DegenerateGeometryError, TriangulationError, AutodiffError, ValueError) as exc:
        step = getattr(exc, "step", None)
        where = f" at step {step}" if step is not None else ""
        return EXIT_GEOMETRY, f"geometry error{where}: {exc}"
    return EXIT_OK, _summary(cfg, art)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if cfg.experiment not in _SUBCOMMANDS[args.command]:
            raise ConfigError(f"config is for {cfg.experiment!r}, not the {args.command!r} command")
        if args.repeat < 1 or args.jobs < 1:
            raise ConfigError("--repeat and --jobs must be positive")
        cfg = cfg.with_overrides(seed=args.seed, out_dir=args.out)
        if args.repeat == 1:
            runs = [cfg]
        else:
            runs = [cfg.with_overrides(seed=cfg.seed + k, out_dir=str(Path(cfg.out_dir) / f"seed-{cfg.seed + k}"))
                    for k in range(args.repeat)]
    except ConfigError as exc:
        print(f"diffvor: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    if args.jobs > 1 and len(runs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            outcomes = list(pool.map(_run_one, runs))
    else:
        outcomes = [_run_one(c) for c in runs]

    status = EXIT_OK
    for code, msg in outcomes:
        if code == EXIT_OK:
            print(msg)
        else:
            print(f"diffvor: {msg}", file=sys.stderr)
            status = max(status, code)
    return status


if __name__ == "__main__":
    sys.exit(main())
