"""Command-line front end: ``price``, ``verify`` and ``sweep``.

Exit codes: 0 success, 1 failed verification check, 2 configuration error,
3 solver error. Every run writes ``manifest.json`` to the output directory,
also when it fails. Everything except the manifest's ``timing`` block is a
deterministic function of the config and seed.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
import traceback
from datetime import datetime, timezone
from pathlib import Path

import tomli

from . import __version__
from .scenario import SCHEMA_VERSION, ConfigError, ScenarioConfig, run_scenario

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_SOLVER = 3

SWEEP_PARAMETERS = {
    "epsilon": ("epsilon", float),
    "strike": ("strike", float),
    "sigma": ("sigma", float),
    "atoms": ("n_atoms", int),
    "steps": ("n_steps", int),
}


def _clean(obj):
    """JSON-safe copy: NaN and infinities become ``None``."""
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def write_json(path: Path, data) -> None:
    path.write_text(json.dumps(_clean(data), indent=2, sort_keys=True, allow_nan=False) + "\n")


def write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])


class Manifest:
    """Run record written on exit, whatever the outcome."""

    def __init__(self, command: str, out_dir: Path, config_path: str | None, seed: int | None, threads: int):
        self.data = {
            "schema_version": SCHEMA_VERSION,
            "command": command,
            "config_path": config_path,
            "seed": seed,
            "threads": threads,
            "version": __version__,
            "outputs": [],
            "status": "running",
            "error": None,
        }
        self.out_dir = out_dir
        self._t0 = time.perf_counter()
        self._started = datetime.now(timezone.utc).isoformat(timespec="seconds")

    def add(self, path: Path) -> None:
        self.data["outputs"].append(path.name)

    def finish(self, status: str, error: str | None = None) -> Path:
        self.data["status"] = status
        self.data["error"] = error
        self.data["timing"] = {
            "started": self._started,
            "wall_seconds": round(time.perf_counter() - self._t0, 3),
        }
        self.out_dir.mkdir(parents=True, exist_ok=True)
        path = self.out_dir / "manifest.json"
        write_json(path, self.data)
        return path


def load_config(path: str | None, seed: int | None = None) -> ScenarioConfig:
    """Read a TOML config (flat or sectioned); ``seed`` overrides the file."""
    data: dict = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            data = tomli.loads(p.read_text())
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
    cfg = ScenarioConfig.from_dict(data)
    if seed is not None:
        cfg = cfg.replace(seed=seed)
    return cfg


def _fail(manifest: Manifest, code: int, message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    manifest.finish("failed", message)
    return code


def cmd_price(args) -> int:
    out = Path(args.out_dir)
    manifest = Manifest("price", out, args.config, args.seed, args.threads)
    try:
        cfg = load_config(args.config, args.seed)
        manifest.data["seed"] = cfg.seed
        manifest.data["config"] = cfg.to_dict()
    except ConfigError as exc:
        return _fail(manifest, EXIT_CONFIG, str(exc))
    try:
        report = run_scenario(cfg, threads=args.threads)
    except Exception as exc:  # noqa: BLE001 - hard solver failure
        traceback.print_exc(file=sys.stderr)
        return _fail(manifest, EXIT_SOLVER, f"{type(exc).__name__}: {exc}")
    out.mkdir(parents=True, exist_ok=True)
    rpath = out / "report.json"
    write_json(rpath, report.to_dict())
    manifest.add(rpath)
    apath = out / "atoms.csv"
    write_csv(apath, *report.atom_rows())
    manifest.add(apath)
    manifest.finish("ok")
    print(f"base value      {report.base_value:.6f} +- {report.base_stderr:.6f}")
    print(f"expected CEI    {report.expected_cei:.6f} +- {report.expected_cei_stderr:.6f}")
    if report.route_gaps.size:
        print(f"max route gap   {report.max_route_gap:.4%}")
    print(f"wrote {rpath} and {apath}")
    return EXIT_OK


def parse_sweep(text: str) -> tuple[str, list]:
    if "=" not in text:
        raise ConfigError(f"sweep must look like parameter=v1,v2,...; got {text!r}")
    name, values = text.split("=", 1)
    name = name.strip()
    if name not in SWEEP_PARAMETERS:
        raise ConfigError(f"unknown sweep parameter {name!r}; choose from {sorted(SWEEP_PARAMETERS)}")
    _, cast = SWEEP_PARAMETERS[name]
    try:
        vals = [cast(v) for v in values.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad sweep value: {exc}") from exc
    if not vals:
        raise ConfigError("sweep needs at least one value")
    return name, vals


def cmd_sweep(args) -> int:
    out = Path(args.out_dir)
    manifest = Manifest("sweep", out, args.config, args.seed, args.threads)
    try:
        cfg = load_config(args.config, args.seed)
        name, values = parse_sweep(args.sweep)
        field, _ = SWEEP_PARAMETERS[name]
        configs = [cfg.replace(**{field: v}, routes=("transform",)) for v in values]
        manifest.data["seed"] = cfg.seed
        manifest.data["config"] = cfg.to_dict()
        manifest.data["sweep"] = {"parameter": name, "values": values}
    except ConfigError as exc:
        return _fail(manifest, EXIT_CONFIG, str(exc))
    rows = []
    try:
        for v, c in zip(values, configs):
            r = run_scenario(c, threads=args.threads)
            rows.append([name, v, r.base_value, r.expected_cei, r.expected_cei_stderr])
            print(f"{name}={v}: base {r.base_value:.6f}  expected CEI {r.expected_cei:.6f} +- {r.expected_cei_stderr:.6f}")
    except Exception as exc:  # noqa: BLE001
        traceback.print_exc(file=sys.stderr)
        return _fail(manifest, EXIT_SOLVER, f"{type(exc).__name__}: {exc}")
    out.mkdir(parents=True, exist_ok=True)
    path = out / "sweep.csv"
    write_csv(path, ["parameter", "value", "base_value", "expected_cei", "standard_error"], rows)
    manifest.add(path)
    manifest.finish("ok")
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verify import run_checks

    out = Path(args.out_dir)
    manifest = Manifest("verify", out, None, args.seed, args.threads)
    manifest.data["suite"] = args.suite
    try:
        checks = run_checks(args.suite, seed=args.seed, break_skorokhod=args.break_skorokhod)
    except Exception as exc:  # noqa: BLE001
        traceback.print_exc(file=sys.stderr)
        return _fail(manifest, EXIT_SOLVER, f"{type(exc).__name__}: {exc}")
    width = max(len(c.name) for c in checks)
    for c in checks:
        label = ("PASS" if c.passed else "FAIL") if c.gating else "INFO"
        print(f"{label}  {c.suite:<8} {c.name:<{width}}  measured {c.measured:.3e}  tolerance {c.tolerance:.1e}")
    out.mkdir(parents=True, exist_ok=True)
    path = out / "verify.json"
    write_json(path, {"schema_version": SCHEMA_VERSION, "suite": args.suite, "checks": [c.as_dict() for c in checks]})
    manifest.add(path)
    failed = [c.name for c in checks if c.gating and not c.passed]
    if failed:
        manifest.finish("failed", "failed checks: " + ", ".join(failed))
        return EXIT_CHECK_FAILED
    manifest.finish("ok")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    from .verify import SUITES

    parser = argparse.ArgumentParser(prog="insider-acc", description="American claims for a buyer with initial information.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", help="TOML config file")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--out-dir", default="out")

    p = sub.add_parser("price", help="value one scenario")
    common(p)
    p.set_defaults(func=cmd_price)

    p = sub.add_parser("sweep", help="repeat the scenario over one parameter")
    common(p)
    p.add_argument("sweep", metavar="PARAMETER=VALUES", help=f"one of {', '.join(SWEEP_PARAMETERS)}, e.g. epsilon=0.1,1,10")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("verify", help="run invariant checks")
    common(p, config=False)
    p.add_argument("--suite", choices=SUITES, default="all")
    p.add_argument("--break-skorokhod", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    if getattr(args, "threads", 1) < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
