"""Command-line entry point: ``rqf train | eval | report``.

Exit codes: 0 success, 1 invalid input (config, graph, checkpoint, curves),
2 I/O failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import seeding
from .env import MalfunctionSpec, PlanarAnt, wrap_malfunction
from .funcnet import CheckpointError, load_checkpoint
from .metrics import aggregate_runs, export_traces_csv, table_report, table_rows, write_rows
from .relational import GraphError
from .trainer import ConfigError, TrainConfig, evaluate_greedy, read_curve_csv, train

log = logging.getLogger("rqf")


class UsageError(Exception):
    """Bad user input; maps to exit code 1."""


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path) -> str:
    return sha256_bytes(Path(path).read_bytes())


def load_config(path, overrides: dict | None = None) -> tuple[TrainConfig, bytes]:
    raw = Path(path).read_bytes()
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise UsageError(f"{path}: top level must be an object")
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key.startswith("malfunction."):
            block = dict(data.get("malfunction") or {})
            block[key.split(".", 1)[1]] = value
            data["malfunction"] = block
        else:
            data[key] = value
    try:
        return TrainConfig.from_dict(data), raw
    except ConfigError as exc:
        raise UsageError(f"invalid config key {exc}") from exc


def _check_graphs(config: TrainConfig) -> TrainConfig:
    if config.mode == "iqf":
        if config.graph_pre or config.graph_post:
            log.warning("mode iqf ignores relational graph settings")
        return replace(config, graph_pre=None, graph_post=None)
    for key in ("graph_pre", "graph_post"):
        path = getattr(config, key)
        if path and not Path(path).is_file():
            raise UsageError(f"invalid config key {key}: graph file not found: {path}")
    return config


def cmd_train(config_path, overrides: dict, out_dir) -> int:
    config, raw = load_config(config_path, overrides)
    config = _check_graphs(config)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_bytes(raw)
    manifest = {
        "config_sha256": sha256_bytes(raw),
        "config_snapshot": "config.json",
        "overrides": {k: v for k, v in overrides.items() if v is not None},
        "resolved_config": config.to_dict(),
        "seed": config.seed,
        "streams": {name: seeding.stream_key(config.seed, name) for name in seeding.STREAMS},
        "started": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "finished": None,
        "artifacts": {},
    }
    manifest_path = out / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n")
    try:
        artifacts = train(config, out)
    except GraphError as exc:
        raise UsageError(f"invalid relational graph: {exc}") from exc
    except ConfigError as exc:
        raise UsageError(f"invalid config key {exc}") from exc
    manifest["finished"] = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    manifest["artifacts"] = {
        name: {"path": path.name, "sha256": sha256_file(path)}
        for name, path in sorted(artifacts.files.items())
    }
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n")
    log.info("wrote artifacts to %s", out)
    return 0


def expected_shapes(config: TrainConfig) -> list[tuple[int, int]]:
    dims = [PlanarAnt.obs_dim, *config.hidden, config.spec.num_terms]
    return list(zip(dims[:-1], dims[1:]))


def cmd_eval(checkpoint_path, config_path, episodes: int, out_dir, malfunction_agent=None) -> int:
    config, _ = load_config(config_path)
    try:
        preds = load_checkpoint(checkpoint_path)
    except CheckpointError as exc:
        raise UsageError(f"checkpoint format error in {checkpoint_path}: {exc}") from exc
    want = expected_shapes(config)
    if len(preds) != PlanarAnt.n_agents:
        raise UsageError(f"checkpoint holds {len(preds)} networks, expected {PlanarAnt.n_agents}")
    for j, net in enumerate(preds):
        if net.shapes != want:
            raise UsageError(
                f"checkpoint/config mismatch for agent {j}: expected layer dims {want}, found {net.shapes}"
            )
    env = PlanarAnt(config.env_config)
    if malfunction_agent is not None:
        env = wrap_malfunction(env, MalfunctionSpec(0, malfunction_agent), 0)
    summary = evaluate_greedy(
        preds, env, episodes, seeding.stream(config.seed, "eval"), config.spec, config.exploration
    )
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = {
        "checkpoint": str(checkpoint_path),
        "checkpoint_sha256": sha256_file(checkpoint_path),
        "malfunction_agent": malfunction_agent,
        **summary.to_dict(),
    }
    (out / "eval_report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    export_traces_csv(summary.traces, out / "eval_trajectories.csv")
    print(json.dumps(summary.to_dict()))
    return 0


def cmd_report(run_dirs, out_path) -> int:
    reports, curves = [], []
    for d in run_dirs:
        d = Path(d)
        try:
            reports.append(json.loads((d / "report.json").read_text()))
            curves.append(read_curve_csv(d / "curve.csv"))
        except FileNotFoundError as exc:
            raise UsageError(f"{d}: missing run artifact {Path(exc.filename).name}") from exc
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
    lengths = {len(c) for c in curves}
    if len(lengths) > 1:
        raise UsageError(f"incompatible curve lengths across runs: {sorted(lengths)}")

    curve_out = []
    if curves and curves[0]:
        episodes = [r["episode"] for r in curves[0]]
        ma_mean, ma_ci = aggregate_runs([[r["train_reward_ma"] for r in c] for c in curves])
        eval_rows = [i for i, r in enumerate(curves[0]) if r["eval_mean_reward"] is not None]
        ev = {}
        if eval_rows and all(c[i]["eval_mean_reward"] is not None for c in curves for i in eval_rows):
            for key in ("eval_mean_reward", "eval_stable_frac"):
                mean, ci = aggregate_runs([[c[i][key] for i in eval_rows] for c in curves])
                ev[key] = dict(zip(eval_rows, zip(mean, ci)))
        for i, ep in enumerate(episodes):
            row = {"episode": ep, "train_reward_ma": float(ma_mean[i]), "train_reward_ma_ci95": float(ma_ci[i])}
            for key, vals in ev.items():
                if i in vals:
                    row[key] = float(vals[i][0])
                    row[f"{key}_ci95"] = float(vals[i][1])
            curve_out.append(row)

    out = Path(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    table = table_report(reports)
    out.write_text(
        json.dumps({"runs": [str(d) for d in run_dirs], "table": table, "curve": curve_out}, indent=2) + "\n"
    )
    write_rows(table_rows(table), out.with_suffix(".csv"))
    print(json.dumps(table, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rqf", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train RQF or IQF on the planar ant")
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--mode", choices=["rqf", "iqf"])
    t.add_argument("--episodes", type=int)
    t.add_argument("--malfunction-episode", type=int)
    t.add_argument("--malfunction-agent", type=int)
    t.add_argument("--graph-pre")
    t.add_argument("--graph-post")
    t.add_argument("--eval-every", type=int)

    e = sub.add_parser("eval", help="greedy evaluation of a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--config", required=True)
    e.add_argument("--episodes", type=int, default=10)
    e.add_argument("--out", required=True)
    e.add_argument("--malfunction-agent", type=int, help="freeze this leg during evaluation")

    r = sub.add_parser("report", help="aggregate run directories into a before/after summary table")
    r.add_argument("run_dirs", nargs="+")
    r.add_argument("--out", required=True)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "train":
            overrides = {
                "seed": args.seed,
                "mode": args.mode,
                "episodes": args.episodes,
                "graph_pre": args.graph_pre,
                "graph_post": args.graph_post,
                "eval_every": args.eval_every,
                "malfunction.episode": args.malfunction_episode,
                "malfunction.agent": args.malfunction_agent,
            }
            return cmd_train(args.config, overrides, args.out)
        if args.command == "eval":
            return cmd_eval(args.checkpoint, args.config, args.episodes, args.out, args.malfunction_agent)
        return cmd_report(args.run_dirs, args.out)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
