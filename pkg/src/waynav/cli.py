"""Command-line entry point: simulate, eval-nav, train-toy, eval-waypoints, render.

Exit codes: 0 success, 2 configuration or input error, 3 decision backend
transport failure, 4 training divergence.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import List, Optional

from .backends import ExternalBackend, ExternalConfig, GreedyBackend
from .config import FIELDS, RunConfig, build_config, load_config_file
from .errors import ConfigurationError, LoadError, TrainingError, WaynavError
from .geometry import DepthCamera, occupancy_mask, shortest_distance_profile
from .heatmap import Waypoint, target_heatmap
from .metrics import NAV_FIELDS, WAYPOINT_FIELDS, aggregate_nav, episode_metrics, waypoint_metrics, write_nav_metrics, write_waypoint_metrics
from .navigator import run_episode
from .persistence import load_scene, read_heatmaps, read_trace, write_heatmaps, write_trace
from .predictor import FEATURE_DIM, ToyPredictorParams, load_params, prepare_training_set, save_params, train_toy, write_curve_csv
from .render import encode_ppm, heatmap_image, trajectory_svg
from .scenes import random_rooms
from .sources import OraclePredictor, ToyPredictorSource
from .world import render_depth_panorama

log = logging.getLogger("waynav")

EXIT_OK, EXIT_INPUT, EXIT_TRANSPORT, EXIT_DIVERGED = 0, 2, 3, 4


class CommandError(Exception):
    def __init__(self, message: str, code: int = EXIT_INPUT):
        super().__init__(message)
        self.code = code


def _predictor_source(cfg: RunConfig, path: Optional[str] = None):
    path = path or cfg.predictor
    if path == "oracle":
        return OraclePredictor()
    try:
        params = load_params(path)
    except FileNotFoundError:
        raise CommandError(f"params file not found: {path}") from None
    return ToyPredictorSource(params, seed=cfg.seed)


def _backend(cfg: RunConfig, plan, episode):
    if cfg.backend == "greedy":
        return GreedyBackend(plan, episode.goal, stop_threshold=cfg.threshold, backtrack=cfg.backtrack)
    return ExternalBackend(ExternalConfig(
        endpoint=cfg.endpoint, mode=cfg.mode, model=cfg.model, temperature=cfg.temperature,
        token_env=cfg.token_env, timeout=cfg.timeout))


def _select_episodes(cfg: RunConfig, episodes):
    if cfg.episodes:
        wanted = set(cfg.episodes)
        episodes = [e for e in episodes if e.id in wanted]
    if not episodes:
        raise CommandError("no episodes match the scene and episode filter")
    return episodes


def cmd_simulate(cfg: RunConfig, metrics_only: bool = False) -> int:
    cfg.validate(need_scene=True)
    plan, episodes = load_scene(cfg.scene)
    episodes = _select_episodes(cfg, episodes)
    source = _predictor_source(cfg)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)

    def one(ep):
        backend = _backend(cfg, plan, ep)
        try:
            return run_episode(plan, ep, backend, source, max_steps=cfg.max_steps)
        finally:
            if hasattr(backend, "close"):
                backend.close()

    with ThreadPoolExecutor(max_workers=cfg.worker_count) as pool:
        traces = list(pool.map(one, episodes))

    if not metrics_only:
        (out / "traces").mkdir(exist_ok=True)
        (out / "heatmaps").mkdir(exist_ok=True)
        for tr in traces:
            write_trace(tr, out / "traces" / f"{tr.episode_id}.jsonl")
            write_heatmaps(tr.heatmaps, out / "heatmaps" / f"{tr.episode_id}.phm")

    per_ep, records = [], []
    for ep, tr in zip(episodes, traces):
        m = episode_metrics(tr, (ep.start.x, ep.start.z), ep.goal, plan, cfg.threshold)
        per_ep.append(m)
        records.append({"episode_id": ep.id, **dataclasses.asdict(m), "steps": len(tr.actions),
                        "stopped": tr.stopped, "aborted": tr.aborted})
    agg = aggregate_nav(per_ep, traces)
    write_nav_metrics(records, agg, out / "metrics.jsonl", out / "metrics.csv")
    (out / "metrics.json").write_text(json.dumps(dataclasses.asdict(agg), sort_keys=True, indent=2) + "\n")
    print(" ".join(f"{f}={getattr(agg, f):.4f}" for f in NAV_FIELDS) + f" episodes={len(traces)}")

    aborted = [t for t in traces if t.aborted]
    if aborted:
        for t in aborted:
            print(f"episode {t.episode_id} aborted: {t.abort_reason}", file=sys.stderr)
        return EXIT_TRANSPORT
    return EXIT_OK


def _lam_tag(lam: float) -> str:
    return f"{lam:g}".replace(".", "p")


def cmd_train_toy(cfg: RunConfig) -> int:
    cfg.validate()
    if cfg.train_scenes < 1:
        raise CommandError("train_scenes must be at least 1")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    data = prepare_training_set(random_rooms(cfg.train_scenes, cfg.seed), seed=cfg.seed)
    for lam in cfg.lambda_occ:
        init = ToyPredictorParams.init(FEATURE_DIM, seed=cfg.seed, lr=cfg.lr)
        curve_path = out / f"loss_lambda{_lam_tag(lam)}.csv"
        try:
            params, curve = train_toy(data, lam, cfg.epochs, init)
        except TrainingError as err:
            write_curve_csv(err.curve, curve_path)
            raise CommandError(f"training with lambda_occ={lam:g} diverged: {err}", EXIT_DIVERGED) from None
        write_curve_csv(curve, curve_path)
        path = out / f"params_lambda{_lam_tag(lam)}.twp"
        save_params(params, path)
        print(f"lambda_occ={lam:g} final l_total={curve[-1].l_total:.6g} -> {path}")
    return EXIT_OK


def _eval_poses(cfg: RunConfig):
    """(plan, pose, gt) triples from the scene's episode starts, or synthetic held-out rooms."""
    if cfg.scene:
        plan, episodes = load_scene(cfg.scene)
        oracle = OraclePredictor()
        eps = [e for e in episodes if not cfg.episodes or e.id in set(cfg.episodes)]
        return [(e.id, plan, e.start, oracle.ground_truth(plan, e.start)) for e in eps]
    rooms = random_rooms(cfg.eval_poses, cfg.seed + 1)
    return [(f"pose-{i:03d}", r.plan, r.pose, r.waypoints) for i, r in enumerate(rooms)]


def cmd_eval_waypoints(cfg: RunConfig) -> int:
    cfg.validate()
    poses = _eval_poses(cfg)
    if not poses:
        raise CommandError("no poses to evaluate")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    camera = DepthCamera()
    truth = []
    for _, plan, pose, gt in poses:
        pano = render_depth_panorama(plan, pose, camera)
        truth.append((occupancy_mask(shortest_distance_profile(pano, camera)), target_heatmap(gt)))

    names = [cfg.predictor] + list(cfg.params)
    summary = []
    for n_src, name in enumerate(names):
        source = _predictor_source(cfg, name)
        rows = []
        for i, ((pid, plan, pose, gt), (mask, p_star)) in enumerate(zip(poses, truth)):
            _, predicted = source.predict(plan, pose, i)
            m = waypoint_metrics(predicted, gt, mask, p_star)
            rows.append({"pose_id": pid, **dataclasses.asdict(m)})
        label = "oracle" if name == "oracle" else Path(name).stem
        means = write_waypoint_metrics(rows, out / f"waypoints_{n_src}_{label}.csv")
        summary.append((label, means))
        print(f"{label}: " + " ".join(f"{f}={means[f]:.4f}" for f in WAYPOINT_FIELDS))
    for label, means in summary[1:]:
        print(f"%Open delta ({label} - {summary[0][0]}): {means['pct_open'] - summary[0][1]['pct_open']:+.2f}")
    return EXIT_OK


def cmd_render(cfg: RunConfig) -> int:
    if not cfg.trace:
        raise CommandError("render needs at least one --trace")
    cfg.validate(need_scene=True)
    plan, episodes = load_scene(cfg.scene)
    traces = [read_trace(p) for p in cfg.trace]
    goals = {e.id: e.goal for e in episodes}
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    svg = trajectory_svg(plan, traces, [goals[t.episode_id] for t in traces if t.episode_id in goals])
    (out / "trajectory.svg").write_text(svg)
    for path, tr in zip(cfg.trace, traces):
        hm_path = Path(cfg.heatmaps) if cfg.heatmaps and len(traces) == 1 else \
            Path(path).parent.parent / "heatmaps" / f"{tr.episode_id}.phm"
        if not hm_path.exists():
            log.info("no heatmap stream for %s", tr.episode_id)
            continue
        for step, hm in zip(tr.steps, read_heatmaps(hm_path)):
            offered = [Waypoint(*o["cell"]) for o in step.options if "cell" in o]
            img = heatmap_image(hm, offered)
            (out / f"heatmap_{tr.episode_id}_{step.step:03d}.ppm").write_bytes(encode_ppm(img))
    print(f"wrote {out / 'trajectory.svg'}")
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "eval-nav": lambda cfg: cmd_simulate(cfg, metrics_only=True),
    "train-toy": cmd_train_toy,
    "eval-waypoints": cmd_eval_waypoints,
    "render": cmd_render,
}

_HELP = {
    "scene": "scene JSON file",
    "episodes": "episode ids to run (default all)",
    "backend": "greedy or external",
    "predictor": "'oracle' or a params file from train-toy",
    "params": "extra params files for paired waypoint evaluation",
    "lambda_occ": "occupancy loss weight(s); train-toy trains once per value",
    "threshold": "success radius in metres (3.0 sim, 2.0 strict)",
    "workers": "episodes run in parallel (default 1)",
    "trace": "trace JSONL file(s) to render",
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config file; flags override its values")
    common.add_argument("-v", "--verbose", action="store_true")
    for name, f in FIELDS.items():
        default = f.default_factory() if f.default_factory is not dataclasses.MISSING else f.default
        kw = {"dest": name, "default": None, "help": _HELP.get(name)}
        if isinstance(default, list):
            kw["nargs"] = "+"
        common.add_argument("--" + name.replace("_", "-"), **kw)
    parser = argparse.ArgumentParser(prog="waynav", description="Waypoint navigation simulator and evaluation harness.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    file_values = load_config_file(args.config) if args.config else {}
    cli_values = {k: getattr(args, k) for k in FIELDS if getattr(args, k, None) is not None}
    return build_config(file_values, cli_values)


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
        return COMMANDS[args.command](cfg)
    except CommandError as err:
        print(f"waynav: {err}", file=sys.stderr)
        return err.code
    except (ConfigurationError, LoadError) as err:
        print(f"waynav: {err}", file=sys.stderr)
        return EXIT_INPUT
    except WaynavError as err:
        print(f"waynav: {err}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
