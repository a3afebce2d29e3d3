"""Command-line entry point: ``dqndesign {train,evaluate,oracle,policy-map,compare}``.

Exit codes: 0 success, 2 user or configuration error, 3 numeric failure.
Output files default to ``$DQNDESIGN_OUT/<command>`` (``runs/<command>``
when the variable is unset).
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

from . import __version__, oracle
from .config import load_config
from .dqn import PolicyArtifact, config_digest, train
from .env import EnvParams
from .exceptions import ConfigError, DivergenceError
from .rng import derive_rng

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3


@dataclass
class RunManifest:
    command: str
    config_digest: str
    seed: int
    config: dict
    artifacts: dict = field(default_factory=dict)
    code_version: str = __version__
    started: str = ""
    finished: str = ""

    def verify(self) -> bool:
        """Recompute the digest from the stored config."""
        blob = json.dumps(self.config, sort_keys=True, separators=(",", ":"))
        return self.config_digest == "sha256:" + hashlib.sha256(blob.encode()).hexdigest()

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.__dict__, indent=1, sort_keys=True) + "\n")
        return path


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _out_dir(args, command) -> Path:
    out = Path(args.out) if args.out else Path(os.environ.get("DQNDESIGN_OUT", "runs")) / command
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_artifact(path) -> PolicyArtifact:
    try:
        return PolicyArtifact.load(path)
    except (OSError, ValueError) as exc:
        raise ConfigError(str(exc), key="checkpoint") from None


def _parse_range(text, name):
    try:
        lo, hi, n = text.split(":")
        return np.linspace(float(lo), float(hi), int(n))
    except ValueError:
        raise ConfigError(f"expected lo:hi:n, got {text!r}", key=name) from None


def _grid(args, params: EnvParams, stage: int):
    """``--grid "plo:phi:n[,dlo:dhi:n]"`` or the central band of the stage marginals."""
    prices, demands = oracle.stage_grid(params, stage)
    if args.grid:
        parts = args.grid.split(",")
        prices = _parse_range(parts[0], "grid")
        if len(parts) > 1:
            if not params.demand_enabled:
                raise ConfigError("demand range given for a price-only policy", key="grid")
            demands = _parse_range(parts[1], "grid")
    return prices, demands


def cmd_train(args) -> int:
    cfg = load_config(args.config).with_overrides(episodes=args.episodes, seed=args.seed)
    out = _out_dir(args, "train")
    digest = config_digest(cfg.env, cfg.training)
    manifest = RunManifest("train", digest, cfg.training.seed,
                           {"env": cfg.env.to_dict(), "training": cfg.training.to_dict()},
                           started=_now())
    try:
        artifact, tlog = train(cfg.env, cfg.training, record_wall_time=args.wall_time,
                               checkpoint_dir=out)
    except DivergenceError as exc:
        print(f"error: training diverged: {exc}; last checkpoint: {exc.checkpoint_path}",
              file=sys.stderr)
        return EXIT_NUMERIC
    ckpt = artifact.save(out / "checkpoint.json")
    log_path = out / "training_log.csv"
    log_path.write_text(tlog.to_csv(digest))
    manifest.artifacts = {"checkpoint": str(ckpt), "training_log": str(log_path)}
    manifest.finished = _now()
    manifest.save(out / "manifest.json")
    print(f"trained {cfg.training.episodes} episodes; "
          f"mean return (last 1000): {artifact.metrics['mean_return_last_1000']}")
    print(f"wrote {ckpt}, {log_path}, {out / 'manifest.json'}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    artifact = _load_artifact(args.checkpoint)
    out = _out_dir(args, "evaluate")
    report = oracle.evaluate_policy(artifact, artifact.params, args.replications, args.seed,
                                    n_jobs=args.jobs)
    text = report.to_text()
    print(text, end="")
    (out / "eval_report.txt").write_text(text)
    (out / "eval_report.csv").write_text(report.to_csv(artifact.config_digest))
    return EXIT_OK


def cmd_oracle(args) -> int:
    cfg = load_config(args.config)
    params = cfg.env
    out = _out_dir(args, "oracle")
    digest = config_digest(params)
    if args.mode == "closed-form":
        if params.demand_enabled:
            raise ConfigError("closed-form threshold needs the price-only variant", key="mode")
        thr = oracle.two_stage_threshold(params)
        print(f"threshold: {thr:.6f}")
        (out / "closed_form.txt").write_text(f"threshold: {thr!r}\n")
    elif args.mode == "stage2-mc":
        if params.demand_enabled or params.horizon != 3:
            raise ConfigError("stage2-mc needs the three-stage price-only variant", key="mode")
        rng = derive_rng(args.seed, "stage2-mc")
        boundary = oracle.stage2_boundary_mc(params, args.replications, rng)
        exact = float(_closed_form_boundary(params))
        print(f"stage2_boundary_mc: {boundary:.6f} (n={args.replications})")
        print(f"stage2_boundary_closed_form: {exact:.6f}")
        (out / "stage2_mc.txt").write_text(
            f"stage2_boundary_mc: {boundary!r}\nn: {args.replications}\n"
            f"stage2_boundary_closed_form: {exact!r}\n")
    else:
        lat = oracle.build_lattice(params, cfg.oracle["price_nodes"], cfg.oracle["demand_nodes"],
                                   cfg.oracle["coverage"])
        sol = oracle.backward_induction(lat)
        (out / "dp_solution.csv").write_text(sol.to_csv(digest))
        lines = [f"dp_value: {sol.value!r}"]
        if not params.demand_enabled:
            lines += [f"stage {t} threshold: {sol.threshold(t)!r}" for t in range(2, params.horizon + 1)]
        text = "\n".join(lines) + "\n"
        print(text, end="")
        (out / "dp_summary.txt").write_text(text)
    return EXIT_OK


def _closed_form_boundary(params):
    k = oracle.two_stage_threshold(params)
    return brentq(lambda p: oracle.stage2_advantage_closed_form(params, p), 0.5 * k, 1.5 * k,
                  xtol=1e-12)


def cmd_policy_map(args) -> int:
    artifact = _load_artifact(args.checkpoint)
    params = artifact.params
    if not 1 <= args.stage <= params.horizon:
        raise ConfigError(f"stage must lie in 1..{params.horizon}", key="stage")
    if not 0 <= args.installed <= params.max_capacity:
        raise ConfigError(f"installed must lie in 0..{params.max_capacity}", key="installed")
    prices, demands = _grid(args, params, args.stage)
    pmap = oracle.extract_policy_map(artifact, args.stage, prices, demands, args.installed)
    out = _out_dir(args, "policy-map")
    path = out / f"policy_map_stage{args.stage}_installed{args.installed}.csv"
    path.write_text(pmap.to_csv(artifact.config_digest))
    print(f"wrote {path}")
    return EXIT_OK


def cmd_compare(args) -> int:
    artifact = _load_artifact(args.checkpoint)
    params = artifact.params
    nodes = {"price_nodes": 400, "demand_nodes": 200, "coverage": 4.0}
    if args.config:
        cfg = load_config(args.config)
        if cfg.env != params:
            raise ConfigError("config environment differs from the checkpoint's", key="config")
        nodes = cfg.oracle
    lat = oracle.build_lattice(params, nodes["price_nodes"], nodes["demand_nodes"], nodes["coverage"])
    sol = oracle.backward_induction(lat)
    report = oracle.compare_to_dp(artifact, sol, args.replications, args.seed)
    out = _out_dir(args, "compare")
    text = report.to_text()
    print(text, end="")
    (out / "comparison.txt").write_text(text)
    (out / "comparison.csv").write_text(report.to_csv(artifact.config_digest))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dqndesign", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed_default=0):
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, default=seed_default)

    p = sub.add_parser("train", help="train a deep Q-network policy")
    p.add_argument("--config", required=True, help="config file or shipped profile name")
    p.add_argument("--episodes", type=int)
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--wall-time", action="store_true", help="fill the wall_ms log column")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="Monte Carlo evaluation of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--replications", "-M", type=int, default=100_000)
    p.add_argument("--jobs", type=int, default=1)
    common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("oracle", help="closed-form, Monte Carlo or lattice-DP reference")
    p.add_argument("--config", required=True)
    p.add_argument("--mode", choices=("closed-form", "dp", "stage2-mc"), default="dp")
    p.add_argument("--replications", type=int, default=1_000_000, help="Monte Carlo samples")
    common(p)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("policy-map", help="decision surface of a checkpoint as CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--stage", type=int, required=True)
    p.add_argument("--installed", type=int, default=0)
    p.add_argument("--grid", help='"plo:phi:n" or "plo:phi:n,dlo:dhi:n"')
    p.add_argument("--out")
    p.set_defaults(func=cmd_policy_map)

    p = sub.add_parser("compare", help="compare a checkpoint with the lattice DP optimum")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config")
    p.add_argument("--replications", type=int, default=100_000)
    common(p)
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FloatingPointError, OverflowError) as exc:
        print(f"error: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
