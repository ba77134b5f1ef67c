"""Command line entry point: ``ppbridge <group> <action> --config FILE``.

Configs are INI files whose sections mirror the library modules.  Every run
writes its artifacts plus ``reports.json`` and ``manifest.json`` to
``--out-dir``; the exit status is 1 when any acceptance check fails, 2 on a
configuration or runtime error and 0 otherwise.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import math
import os
import platform
import sys
import time

import numpy as np
import scipy

from . import __version__
from .acceptance import (AcceptanceSettings, bridge_constraint, component_independence, depth_convergence,
                         filter_identity, law_preservation, martingale, optimality, price_quantile_convergence,
                         value_identities, weak_convergence, CRITERIA)
from .equilibrium import ExperimentConfig, build_surface, hjb_residuals
from .errors import ConfigInvalid, IOFailure, PPBridgeError
from .harness import TestReport, _plain
from .kyle import KyleParams, depth0, depth_gm, write_convergence
from .simulator import Strategy, simulate_batch
from .law import BridgeLawParams


def _floats(text: str) -> tuple:
    return tuple(float(v) for v in text.replace(",", " ").split())


def _words(text: str) -> tuple:
    return tuple(v.strip() for v in text.split(",") if v.strip())


REQUIRED = object()

# (section, key) -> (parser, default); REQUIRED marks keys without a default
SCHEMA = {
    ("bridge", "simulate"): {
        ("run", "seed"): (int, REQUIRED),
        ("bridge_law", "beta"): (float, REQUIRED),
        ("bridge_law", "y_target"): (int, REQUIRED),
        ("bridge_simulator", "n_paths"): (int, REQUIRED),
        ("bridge_simulator", "strategy"): (str, "equilibrium"),
        ("bridge_simulator", "member"): (str, "draw"),
    },
    ("verify", "law"): {
        ("run", "seed"): (int, REQUIRED),
        ("bridge_law", "beta"): (float, REQUIRED),
        ("bridge_law", "y_target"): (int, REQUIRED),
        ("verify_harness", "n_paths"): (int, REQUIRED),
        ("verify_harness", "constraint_paths"): (int, 100_000),
    },
    ("verify", "acceptance"): {
        ("run", "seed"): (int, 20240611),
    },
    ("equilibrium", "value"): {
        ("run", "seed"): (int, REQUIRED),
        ("equilibrium_engine", "delta"): (float, REQUIRED),
        ("equilibrium_engine", "beta"): (float, None),
        ("equilibrium_engine", "y_target"): (int, None),
        ("equilibrium_engine", "prior_high"): (float, 0.5),
        ("equilibrium_engine", "y_target_mode"): (str, "adjusted_prior"),
        ("equilibrium_engine", "y_points"): (int, 41),
        ("equilibrium_engine", "t_grid"): (_floats, (0.1, 0.3, 0.5, 0.7, 0.9)),
    },
    ("equilibrium", "optimality"): {
        ("run", "seed"): (int, REQUIRED),
        ("equilibrium_engine", "delta"): (float, REQUIRED),
        ("equilibrium_engine", "beta"): (float, REQUIRED),
        ("equilibrium_engine", "y_target"): (int, REQUIRED),
        ("equilibrium_engine", "n_paths"): (int, REQUIRED),
        ("equilibrium_engine", "strategies"): (_words, REQUIRED),
    },
    ("limit", "depth"): {
        ("run", "seed"): (int, REQUIRED),
        ("kyle_limit", "prior_high"): (float, REQUIRED),
        ("kyle_limit", "deltas"): (_floats, REQUIRED),
        ("kyle_limit", "y_max"): (float, 3.0),
        ("kyle_limit", "times"): (_floats, (0.0, 0.25, 0.5, 0.75)),
    },
    ("limit", "converge"): {
        ("run", "seed"): (int, REQUIRED),
        ("kyle_limit", "prior_high"): (float, REQUIRED),
        ("kyle_limit", "deltas"): (_floats, REQUIRED),
        ("kyle_limit", "n_samples"): (int, REQUIRED),
    },
}


def load_config(path: str | None, command: tuple) -> dict:
    """Parse and validate an INI config; returns ``{"section.key": value}``.

    Unknown sections or keys and missing required keys raise
    :class:`ConfigInvalid` naming the offending key path.
    """
    schema = SCHEMA[command]
    parser = configparser.ConfigParser(interpolation=None)
    if path is not None:
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise IOFailure(f"cannot read config {path}: {exc}") from exc
        except configparser.Error as exc:
            raise ConfigInvalid(f"malformed config {path}: {exc}") from exc
    for section in parser.sections():
        for key in parser[section]:
            if (section, key) not in schema:
                raise ConfigInvalid(f"{section}.{key}: unknown key for {' '.join(command)}")
    out = {}
    for (section, key), (conv, default) in schema.items():
        name = f"{section}.{key}"
        if parser.has_option(section, key):
            raw = parser.get(section, key)
            try:
                out[name] = conv(raw)
            except ValueError as exc:
                raise ConfigInvalid(f"{name}: cannot parse {raw!r}") from exc
        elif default is REQUIRED:
            raise ConfigInvalid(f"{name}: required key missing")
        else:
            out[name] = default
    return out


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _canonical(obj) -> str:
    return json.dumps(_plain(obj), sort_keys=True, separators=(",", ":"))


def _drop_timing(obj):
    # wall-clock values stay in the manifest so that artifacts are byte-stable
    if isinstance(obj, dict):
        return {k: _drop_timing(v) for k, v in obj.items() if k != "seconds"}
    if isinstance(obj, list):
        return [_drop_timing(v) for v in obj]
    return obj


class Run:
    """Collects artifacts and reports for one invocation and writes the manifest."""

    def __init__(self, command: tuple, config: dict, out_dir: str):
        self.command, self.config, self.out_dir = command, config, out_dir
        self.outputs: list[str] = []
        self.reports: list[TestReport] = []
        self.t0 = time.perf_counter()
        try:
            os.makedirs(out_dir, exist_ok=True)
        except OSError as exc:
            raise IOFailure(f"cannot create {out_dir}: {exc}") from exc

    def path(self, name: str) -> str:
        return os.path.join(self.out_dir, name)

    def open(self, name: str):
        self.outputs.append(name)
        try:
            return open(self.path(name), "w", newline="")
        except OSError as exc:
            raise IOFailure(f"cannot write {self.path(name)}: {exc}") from exc

    def add(self, reports) -> None:
        for r in reports:
            print(r.line())
            self.reports.append(r)

    def finish(self) -> int:
        with self.open("reports.json") as fh:
            json.dump([_drop_timing(json.loads(r.to_json())) for r in self.reports], fh, indent=2,
                      sort_keys=True)
            fh.write("\n")
        manifest = {
            "command": " ".join(self.command),
            "config": _plain(self.config),
            "config_hash": hashlib.sha256(_canonical(self.config).encode()).hexdigest(),
            "seed": self.config.get("run.seed"),
            "versions": {"ppbridge": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                         "python": platform.python_version()},
            "outputs": {name: _sha256(self.path(name)) for name in sorted(set(self.outputs))},
            "all_passed": all(r.passed for r in self.reports),
        }
        manifest["manifest_hash"] = hashlib.sha256(_canonical(manifest).encode()).hexdigest()
        manifest["wall_clock_seconds"] = time.perf_counter() - self.t0
        with open(self.path("manifest.json"), "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
        status = "all checks passed" if manifest["all_passed"] else "some checks FAILED"
        print(f"{status}; manifest {manifest['manifest_hash'][:16]} in {self.out_dir}")
        return 0 if manifest["all_passed"] else 1


def _settings(cfg: dict, fast: bool, **kw) -> AcceptanceSettings:
    return AcceptanceSettings(seed=cfg["run.seed"], fast=fast, **kw)


def cmd_bridge_simulate(run: Run, cfg: dict, fast: bool) -> None:
    params = BridgeLawParams(cfg["bridge_law.beta"], cfg["bridge_law.y_target"])
    strategy = Strategy.parse(cfg["bridge_simulator.strategy"])
    n = cfg["bridge_simulator.n_paths"]
    n = max(1, n // 10) if fast else n
    batch = simulate_batch(params, n, cfg["run.seed"], strategy, member=cfg["bridge_simulator.member"])
    with run.open("paths.jsonl") as fh:
        batch.write_jsonl(fh)
    bad = int(batch.violations().size)
    anchor = "terminal event equals insider type"
    passed = bad == 0 or not strategy.uses_clock
    run.add([TestReport("bridge constraint", anchor, float(bad), None, passed, 0.0, n, cfg["run.seed"],
                        details={"violations": bad, "guard_resolutions": batch.guard_resolutions,
                                 "strategy": strategy.label()})])


def cmd_verify_law(run: Run, cfg: dict, fast: bool) -> None:
    s = _settings(cfg, fast, beta=cfg["bridge_law.beta"], y_target=cfg["bridge_law.y_target"],
                  law_paths=cfg["verify_harness.n_paths"],
                  constraint_paths=cfg["verify_harness.constraint_paths"])
    for fn in (bridge_constraint, law_preservation, component_independence, filter_identity, martingale):
        run.add(fn(s))


def cmd_verify_acceptance(run: Run, cfg: dict, fast: bool) -> None:
    s = _settings(cfg, fast)
    for num, label, fn in CRITERIA:
        reps = fn(s)
        for r in reps:
            r.details["criterion"] = num
        run.add(reps)


def _experiment(cfg: dict) -> ExperimentConfig:
    return ExperimentConfig(delta=cfg["equilibrium_engine.delta"], beta=cfg["equilibrium_engine.beta"],
                            y_target=cfg["equilibrium_engine.y_target"],
                            prior_high=cfg["equilibrium_engine.prior_high"],
                            y_target_mode=cfg["equilibrium_engine.y_target_mode"],
                            y_points=cfg["equilibrium_engine.y_points"],
                            t_grid=cfg["equilibrium_engine.t_grid"], seed=cfg["run.seed"])


def cmd_equilibrium_value(run: Run, cfg: dict, fast: bool) -> None:
    config = _experiment(cfg)
    surface = build_surface(config)
    with run.open("surface.csv") as fh:
        surface.to_csv(fh)
    res = hjb_residuals(surface, config)
    with run.open("residuals.json") as fh:
        json.dump(res, fh, indent=2, sort_keys=True)
        fh.write("\n")
    eq = max(res["equality_H_max"], res["equality_L_max"])
    ratios = res["time_residual_ratios"]
    run.add([
        TestReport("value equality constraint", "value functions solve their linear system", eq, None,
                   eq <= 1e-8, 1e-8, int(surface.H.size), config.seed),
        TestReport("value time equation", "value functions solve their linear system",
                   ratios[-1] if ratios else math.nan, None, bool(ratios) and all(3.5 <= r <= 4.5 for r in ratios),
                   0.0, int(surface.H.size), config.seed, details={"ratios": ratios}),
    ])


def cmd_equilibrium_optimality(run: Run, cfg: dict, fast: bool) -> None:
    s = _settings(cfg, fast, delta=cfg["equilibrium_engine.delta"], beta=cfg["equilibrium_engine.beta"],
                  y_target=cfg["equilibrium_engine.y_target"], profit_paths=cfg["equilibrium_engine.n_paths"],
                  strategies=cfg["equilibrium_engine.strategies"])
    reports = optimality(s)
    with run.open("optimality.json") as fh:
        json.dump(_plain(reports[-1].details), fh, indent=2, sort_keys=True)
        fh.write("\n")
    run.add(reports)


def cmd_limit_depth(run: Run, cfg: dict, fast: bool) -> None:
    prior, deltas = cfg["kyle_limit.prior_high"], cfg["kyle_limit.deltas"]
    ymax, times = cfg["kyle_limit.y_max"], cfg["kyle_limit.times"]
    kp = KyleParams(prior)
    with run.open("depth.csv") as fh:
        fh.write("delta,y,t,depth_lattice,depth_limit\n")
        for d in deltas:
            config = ExperimentConfig(delta=d, prior_high=prior)
            n = int(math.floor(ymax / d))
            for k in range(-n, n + 1):
                for t in times:
                    q = depth_gm(k * d, t, config)
                    fh.write(f"{d!r},{k * d!r},{t!r},{q.ask_bessel!r},{float(depth0(k * d, t, kp))!r}\n")
    s = AcceptanceSettings(seed=cfg["run.seed"], deltas=tuple(deltas), prior=prior)
    reports = depth_convergence(s)
    with run.open("depth_convergence.dat") as fh:
        fh.write("# delta depth_err\n")
        for d, e in zip(deltas, reports[0].details["depth_err"]):
            fh.write(f"{d!r} {e!r}\n")
    run.add(reports)


def cmd_limit_converge(run: Run, cfg: dict, fast: bool) -> None:
    s = _settings(cfg, fast, deltas=tuple(cfg["kyle_limit.deltas"]), prior=cfg["kyle_limit.prior_high"],
                  ks_samples=cfg["kyle_limit.n_samples"])
    reports = price_quantile_convergence(s) + weak_convergence(s)
    for path in write_convergence(reports[-1].details["report"], run.out_dir):
        run.outputs.append(os.path.relpath(path, run.out_dir))
    run.add(reports)


COMMANDS = {
    ("bridge", "simulate"): cmd_bridge_simulate,
    ("verify", "law"): cmd_verify_law,
    ("verify", "acceptance"): cmd_verify_acceptance,
    ("equilibrium", "value"): cmd_equilibrium_value,
    ("equilibrium", "optimality"): cmd_equilibrium_optimality,
    ("limit", "depth"): cmd_limit_depth,
    ("limit", "converge"): cmd_limit_converge,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ppbridge", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=f"ppbridge {__version__}")
    groups = p.add_subparsers(dest="group", required=True)
    by_group: dict = {}
    for group, action in COMMANDS:
        by_group.setdefault(group, []).append(action)
    for group, actions in by_group.items():
        gp = groups.add_parser(group).add_subparsers(dest="action", required=True)
        for action in actions:
            sp = gp.add_parser(action)
            sp.add_argument("--config", help="INI config file")
            sp.add_argument("--seed", type=int, help="override run.seed")
            sp.add_argument("--out-dir", default=os.path.join("runs", f"{group}_{action}"))
            sp.add_argument("--paths", type=int, metavar="N", help="override the path or sample count")
            sp.add_argument("--delta-list", help="override the delta sweep, e.g. 0.2,0.1,0.05")
            tier = sp.add_mutually_exclusive_group()
            tier.add_argument("--fast", dest="fast", action="store_true", help="reduced sample sizes")
            tier.add_argument("--slow", dest="fast", action="store_false", help="full sample sizes (default)")
    return p


_PATH_KEYS = ("bridge_simulator.n_paths", "verify_harness.n_paths", "equilibrium_engine.n_paths",
              "kyle_limit.n_samples")


def apply_overrides(cfg: dict, args) -> dict:
    cfg = dict(cfg)
    if args.seed is not None:
        cfg["run.seed"] = args.seed
    if args.paths is not None:
        keys = [k for k in _PATH_KEYS if k in cfg]
        if not keys:
            raise ConfigInvalid("--paths: this command has no path count")
        for k in keys:
            cfg[k] = args.paths
    if args.delta_list is not None:
        if "kyle_limit.deltas" not in cfg:
            raise ConfigInvalid("--delta-list: this command has no delta sweep")
        try:
            cfg["kyle_limit.deltas"] = _floats(args.delta_list)
        except ValueError as exc:
            raise ConfigInvalid(f"--delta-list: cannot parse {args.delta_list!r}") from exc
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    command = (args.group, args.action)
    try:
        cfg = apply_overrides(load_config(args.config, command), args)
        run = Run(command, cfg, args.out_dir)
        COMMANDS[command](run, cfg, args.fast)
        return run.finish()
    except PPBridgeError as exc:
        print(f"error [{exc.code}]: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
