"""Command-line front end: ``sdepca run --preset example1 --out results/``.

Exit codes: 0 success, 1 validation failure, 2 configuration or I/O error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import tomli

from .errors import ConfigurationError, DivergenceError, NewtonError
from .montecarlo import DEFAULT_SEED, Candidate, ExperimentPlan, run_experiment
from .noise import TickGrid
from .problem import make_example
from .report import emit_results, fmt
from .steppers import ADAPTIVE_SOLVERS, SOLVERS, UNIFORM_SOLVERS
from .validation import assumption_checks, noise_checks

__all__ = ["RunConfig", "PRESETS", "parse_config", "build_plan", "validate_mode", "main"]

MODES = ("experiment", "validate", "noise-check")
EXIT_OK, EXIT_VALIDATION, EXIT_CONFIG = 0, 1, 2


@dataclass
class RunConfig:
    """Effective run configuration; every field maps to one flat config key."""

    example: int = 1
    solvers: list = field(default_factory=list)
    M: list = field(default_factory=list)
    steps: list = field(default_factory=list)
    reference: str = "backward_milstein"
    paths: int = 1000
    level: int = 13
    seed: int = DEFAULT_SEED
    p: float = 2.0
    workers: int = 1
    out: str = "sdepca-out"
    mode: str = "experiment"
    backend: str = "auto"
    preset: Optional[str] = None

    @property
    def grid(self) -> TickGrid:
        return TickGrid(self.level, make_example(self.example)[0].horizon)

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}", key="mode")
        if self.example not in (1, 2, 3):
            raise ConfigurationError("example must be 1, 2 or 3", key="example")
        if not 1 <= self.level <= 40:
            raise ConfigurationError("level must be in 1..40", key="level")
        if self.paths < 2:
            raise ConfigurationError("paths must be >= 2", key="paths")
        if self.workers < 1:
            raise ConfigurationError("workers must be >= 1", key="workers")
        if not self.p >= 1:
            raise ConfigurationError("p must be >= 1", key="p")
        if self.backend not in ("auto", "python", "compiled"):
            raise ConfigurationError("backend must be auto, python or compiled", key="backend")
        if self.mode != "experiment":
            return
        if not self.solvers:
            raise ConfigurationError("solver list is missing or empty", key="solvers")
        for s in self.solvers:
            if s not in SOLVERS:
                raise ConfigurationError(f"unknown solver {s!r}", key="solvers")
        if self.reference not in UNIFORM_SOLVERS:
            raise ConfigurationError(f"reference must be one of {UNIFORM_SOLVERS}", key="reference")
        if any(s in ADAPTIVE_SOLVERS for s in self.solvers) and not self.M:
            raise ConfigurationError("adaptive solvers need a list of M values", key="M")
        for m in self.M:
            if isinstance(m, bool) or int(m) != m or m < 1:
                raise ConfigurationError(f"M must be an integer >= 1, got {m!r}", key="M")
        if any(s in UNIFORM_SOLVERS for s in self.solvers) and not self.steps:
            raise ConfigurationError("uniform solvers need a list of step sizes", key="steps")
        grid = self.grid
        for h in self.steps:
            if not isinstance(h, (int, float)) or isinstance(h, bool) or not h > 0:
                raise ConfigurationError(f"step must be a positive number, got {h!r}", key="steps")
            try:
                grid.to_ticks(float(h))
            except ConfigurationError as exc:
                raise ConfigurationError(f"step {h!r} is not a multiple of 2^-{self.level}", key="steps") from exc

    def to_toml(self) -> str:
        """Flat TOML echo of every field, readable back by :func:`parse_config`."""
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if v is None:
                continue
            lines.append(f"{f.name} = {_toml_value(v)}")
        return "\n".join(lines) + "\n"


def _toml_value(v) -> str:
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    if isinstance(v, float):
        return fmt(v) if v != int(v) or abs(v) >= 2**53 else f"{v:.1f}"
    return str(v)


PRESETS = {
    "example1": dict(
        example=1,
        solvers=["adaptive_euler", "adaptive_milstein", "tamed_milstein"],
        M=[8, 16, 32, 64, 128],
        steps=[2.0**-e for e in range(4, 9)],
        reference="backward_milstein",
        paths=5000,
        level=13,
    ),
    "example2": dict(
        example=2,
        solvers=["adaptive_euler", "adaptive_milstein", "tamed_milstein"],
        M=[64, 128, 256, 512],
        steps=[2.0**-e for e in range(6, 10)],
        reference="backward_milstein",
        paths=5000,
        level=13,
    ),
    "example3": dict(
        example=3,
        solvers=["adaptive_euler", "adaptive_milstein", "tamed_milstein"],
        M=[4, 8, 16, 32],
        steps=[2.0**-e for e in range(3, 7)],
        reference="backward_euler",
        paths=5000,
        level=12,
    ),
}

_KEYS = {f.name for f in dataclasses.fields(RunConfig)}
_INT_KEYS = ("example", "paths", "level", "seed", "workers")


def _apply(cfg: RunConfig, values: dict, source: str) -> None:
    for key, v in values.items():
        if key not in _KEYS:
            raise ConfigurationError(f"unknown key {key!r} in {source}", key=key)
        if key in _INT_KEYS and (isinstance(v, bool) or not isinstance(v, int)):
            raise ConfigurationError(f"{key} must be an integer", key=key)
        if key in ("solvers", "M", "steps") and not isinstance(v, list):
            raise ConfigurationError(f"{key} must be a list", key=key)
        setattr(cfg, key, list(v) if isinstance(v, list) else v)


def _preset(name: str) -> dict:
    if name not in PRESETS:
        raise ConfigurationError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}", key="preset")
    return dict(PRESETS[name], preset=name)


def parse_config(config_file=None, preset: Optional[str] = None, overrides: Optional[dict] = None) -> RunConfig:
    """Build a validated :class:`RunConfig`.

    Precedence, lowest first: defaults, the preset (named directly or by the
    file's ``preset`` key), the file, then ``overrides``. ``SDEPCA_WORKERS``
    sets the default worker count.
    """
    cfg = RunConfig()
    env_workers = os.environ.get("SDEPCA_WORKERS")
    if env_workers:
        try:
            cfg.workers = int(env_workers)
        except ValueError as exc:
            raise ConfigurationError("SDEPCA_WORKERS must be an integer", key="workers") from exc
    file_values = {}
    if config_file is not None:
        try:
            with open(config_file, "rb") as fh:
                file_values = tomli.load(fh)
        except OSError as exc:
            raise ConfigurationError(f"cannot read config file {config_file}: {exc}", key="config") from exc
        except tomli.TOMLDecodeError as exc:
            raise ConfigurationError(f"malformed config file {config_file}: {exc}", key="config") from exc
        for key, v in file_values.items():
            if isinstance(v, dict):
                raise ConfigurationError(f"config must be flat; got table {key!r}", key=key)
    name = preset or file_values.get("preset")
    if name is not None:
        _apply(cfg, _preset(name), "preset")
    _apply(cfg, file_values, str(config_file))
    _apply(cfg, {k: v for k, v in (overrides or {}).items() if v is not None}, "flags")
    cfg.validate()
    return cfg


def build_plan(cfg: RunConfig) -> ExperimentPlan:
    problem, cert = make_example(cfg.example)
    notes = {}
    if cfg.example == 2:
        notes["reference"] = ("no reference scheme is prescribed for example 2; "
                              "the drift-implicit scheme at the master tick is used by analogy with example 1")
    cands = []
    for s in cfg.solvers:
        params = cfg.M if s in ADAPTIVE_SOLVERS else cfg.steps
        cands.extend(Candidate(s, int(v) if s in ADAPTIVE_SOLVERS else float(v)) for v in params)
    return ExperimentPlan(
        problem=problem,
        reference=Candidate(cfg.reference, cfg.grid.tick),
        candidates=cands,
        path_count=cfg.paths,
        step_fn=cert.step_fn,
        lower_bound=cert.lower_bound,
        seed=cfg.seed,
        level=cfg.level,
        p=cfg.p,
        backend=cfg.backend,
        notes=notes,
    )


def validate_mode(cfg: RunConfig, stream=None) -> int:
    """Print one PASS/FAIL/INFO line per check; returns the exit code."""
    stream = stream or sys.stdout
    checks = []
    if cfg.mode == "validate":
        checks += [(f"example{cfg.example}", c) for c in assumption_checks(cfg.example, seed=cfg.seed % 2**32)]
    checks += [("noise", c) for c in noise_checks(seed=cfg.seed % 2**32)]
    for group, c in checks:
        print(f"[{group}] {c.line()}", file=stream)
    failed = sum(not c.passed for _, c in checks)
    print(f"{len(checks) - failed}/{len(checks)} checks passed", file=stream)
    return EXIT_OK if failed == 0 else EXIT_VALIDATION


def _echo_config(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "config.toml"
    path.write_text(cfg.to_toml(), encoding="utf-8")
    return path


def run(cfg: RunConfig, stream=None) -> int:
    stream = stream or sys.stdout
    _echo_config(cfg)
    if cfg.mode != "experiment":
        return validate_mode(cfg, stream)
    table = run_experiment(build_plan(cfg), workers=cfg.workers)
    emit_results(table, cfg.out, title=f"example {cfg.example}, {cfg.paths} paths")
    if table.notes:
        text = "".join(f"{k}: {v}\n" for k, v in sorted(table.notes.items()))
        (Path(cfg.out) / "notes.txt").write_text(text, encoding="utf-8")
    for r in table.rows:
        print(f"{r.solver:<18} {r.candidate.param_str():>22} steps={r.mean_steps:10.2f} "
              f"error={r.error_p:.4e} divergences={r.divergences}", file=stream)
    for s, fit in table.fits.items():
        print(f"order {s}: {fit.order:.3f}", file=stream)
    return EXIT_OK


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sdepca", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run an experiment or a check suite")
    src = r.add_mutually_exclusive_group(required=True)
    src.add_argument("--preset", choices=sorted(PRESETS))
    src.add_argument("--config", metavar="FILE", help="flat TOML file")
    r.add_argument("--paths", type=int)
    r.add_argument("--seed", type=int)
    r.add_argument("--level", type=int, help="master grid level L (tick 2^-L)")
    r.add_argument("--workers", type=int)
    r.add_argument("--out", metavar="DIR")
    r.add_argument("--mode", choices=MODES)
    r.add_argument("--backend", choices=("auto", "python", "compiled"))
    r.add_argument("--p", type=float, help="error exponent")
    r.add_argument("--m-values", type=int, nargs="+", dest="M", metavar="M")
    r.add_argument("--steps", type=float, nargs="+", metavar="STEP")
    r.add_argument("--solvers", nargs="+", metavar="SOLVER")
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    overrides = {k: getattr(args, k) for k in
                 ("paths", "seed", "level", "workers", "out", "mode", "backend", "p", "M", "steps", "solvers")}
    try:
        cfg = parse_config(args.config, args.preset, overrides)
        return run(cfg)
    except ConfigurationError as exc:
        key = f" [{exc.key}]" if exc.key else ""
        print(f"configuration error{key}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DivergenceError, NewtonError) as exc:
        print(f"reference solver failed: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
