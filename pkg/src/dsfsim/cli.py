"""Command line entry point: ``dsfsim [run] EXPERIMENT [options]``.

Options may also come from a ``key = value`` config file (``--config``);
command-line flags override it.  Exit status: 0 on success, 1 for invalid
configuration, 2 for runtime or resource failures.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import platform
import sys
import time
from pathlib import Path

import numba
import numpy as np

from . import __version__
from .errors import ConfigError, DSFError, InvariantViolation
from .experiments import CONFIG_FIELDS, EXPERIMENTS, ExperimentConfig, Result, parse_grid, run


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"expected a comma-separated list of numbers, got {text!r}") from None


def _grid(text: str) -> list[float]:
    try:
        return parse_grid(str(text))
    except ValueError:
        raise ConfigError(f"bad time grid {text!r}") from None


# option name -> (config field, converter, help)
OPTIONS = {
    "experiment": ("experiment", str, "experiment to run"),
    "lambda": ("lam", float, "Poisson intensity (default 1)"),
    "kappa": ("kappa", int, "renewal parameter κ, integer >= 6 (default 6)"),
    "seed": ("seed", int, "global seed"),
    "replications": ("replications", int, "number of independent replications"),
    "out": ("out", str, "output directory"),
    "threads": ("threads", int, "worker processes (0 = all cores)"),
    "z0": ("z0", _floats, "initial gaps, comma separated"),
    "t-grid": ("t_grid", _grid, "time grid: 'a..b' (21 log-spaced points) or a comma list"),
    "t-cap": ("t_cap", float, "censoring cap (default 10 x max grid time)"),
    "n": ("n", int, "diffusive scaling parameter"),
    "window": ("window", float, "dual-check window side"),
    "r": ("r", _floats, "radii for rst-chi, comma separated"),
    "rout-factor": ("rout_factor", float, "R_out / r for rst-chi"),
    "walkers": ("walkers", int, "walkers per renewal chain"),
    "renewals": ("renewals", int, "renewals per chain"),
    "step-cap": ("step_cap", int, "step budget per renewal segment"),
    "steps": ("steps", int, "exploration steps for the cone check (trace)"),
    "warmup": ("warmup", int, "warm-up steps before the first-move comparison (trace)"),
    "m0": ("m0", float, "absorption threshold for the Laplace check"),
    "epsilon": ("epsilon", _floats, "interval lengths for eta"),
    "t": ("t", float, "scaled duration for eta"),
    "gamma": ("gamma", float, "use this γ instead of estimating it"),
    "sigma": ("sigma", float, "use this σ instead of estimating it"),
    "gs-replications": ("gs_replications", int, "chains used to estimate γ and σ"),
    "m": ("m", _floats, "horizons for the deviation-scaling statistic"),
}
_BY_KEY = {}
for _opt, (_field, _conv, _) in OPTIONS.items():
    _BY_KEY[_opt] = (_field, _conv)
    _BY_KEY[_opt.replace("-", "_")] = (_field, _conv)
    _BY_KEY[_field] = (_field, _conv)
assert all(f in CONFIG_FIELDS for f, _ in _BY_KEY.values())


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dsfsim", description="Directed spanning forest experiments.")
    p.add_argument("words", nargs="*", help="optional 'run' followed by the experiment name")
    p.add_argument("--config", help="file of 'key = value' lines")
    p.add_argument("--version", action="version", version=f"dsfsim {__version__}")
    for opt, (_, _, helptext) in OPTIONS.items():
        p.add_argument(f"--{opt}", dest=opt.replace("-", "_"), default=None, help=helptext)
    return p


def read_config_file(path: str) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment.  Unknown keys are errors."""
    out = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from None
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        value = value.strip("'\"")
        if key not in _BY_KEY:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        field, conv = _BY_KEY[key]
        try:
            out[field] = conv(value)
        except (ValueError, ConfigError) as e:
            raise ConfigError(f"{path}:{lineno}: bad value for {key}: {e}") from None
    return out


def config_from_args(argv: list[str]) -> ExperimentConfig:
    ns = build_parser().parse_args(argv)
    values: dict = {}
    if ns.config:
        values.update(read_config_file(ns.config))
    words = list(ns.words)
    if words and words[0] == "run":
        words = words[1:]
    if len(words) > 1:
        raise ConfigError(f"unexpected arguments: {' '.join(words[1:])}")
    if words:
        values["experiment"] = words[0]
    for opt, (field, conv, _) in OPTIONS.items():
        v = getattr(ns, opt.replace("-", "_"))
        if v is not None:
            try:
                values[field] = conv(v)
            except ValueError:
                raise ConfigError(f"bad value for --{opt}: {v!r}") from None
    if "experiment" not in values:
        raise ConfigError(f"no experiment given; choose from {', '.join(EXPERIMENTS)}")
    return ExperimentConfig(**values).validate()


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, (float, np.floating)):
        f = float(v)
        return f if math.isfinite(f) else repr(f)
    return v


def invocation(cfg: ExperimentConfig) -> str:
    """The command line reproducing ``cfg``."""
    parts = ["dsfsim", "run", cfg.experiment]
    defaults = ExperimentConfig(experiment=cfg.experiment)
    for opt, (field, _, _) in OPTIONS.items():
        if field in ("experiment",):
            continue
        v = getattr(cfg, field)
        if v != getattr(defaults, field) or field in ("seed", "replications", "out"):
            text = ",".join(_fmt(x) for x in v) if isinstance(v, list) else _fmt(v)
            parts.append(f"--{opt} {text}")
    return " ".join(parts)


def write_outputs(cfg: ExperimentConfig, result: Result, wall: float) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, (header, rows) in result.tables.items():
        write_csv(out / name, header, rows)
    with open(out / "summary.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(_jsonable(result.summary), fh, indent=2, sort_keys=True)
        fh.write("\n")
    manifest = {
        "config": _jsonable(cfg.to_dict()),
        "invocation": invocation(cfg),
        "seed": cfg.seed,
        "outputs": sorted(list(result.tables) + ["summary.json"]),
        "versions": {
            "dsfsim": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "numba": numba.__version__,
        },
        "wall_time_seconds": wall,
    }
    with open(out / "manifest.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        cfg = config_from_args(argv)
    except ConfigError as e:
        print(f"dsfsim: configuration error: {e}", file=sys.stderr)
        return 1
    t0 = time.perf_counter()
    try:
        result = run(cfg)
    except ConfigError as e:
        print(f"dsfsim: configuration error: {e}", file=sys.stderr)
        return 1
    except (DSFError, InvariantViolation, MemoryError) as e:
        print(f"dsfsim: experiment {cfg.experiment} failed: {type(e).__name__}: {e}", file=sys.stderr)
        return 2
    out = write_outputs(cfg, result, time.perf_counter() - t0)
    print(f"dsfsim: {cfg.experiment} finished; outputs in {out}{os.sep}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
