"""Command line entry point: ``npmo <subcommand> [options]``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import bench, gridworld as gw, imitation, mcts, ppo
from .policy_net import NetConfig, init_params, load_params, save_params

log = logging.getLogger("npmo")


def _int_list(text: str) -> List[int]:
    try:
        return [int(v) for v in text.replace(" ", "").split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of integers, got {text!r}")


def _load_config(path: Optional[str]) -> dict:
    if not path:
        return {}
    return json.loads(Path(path).read_text())


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _search_config(cfg: dict, args) -> mcts.SearchConfig:
    d = dict(cfg.get("search", {}))
    if args.iters is not None:
        d["iterations"] = args.iters
    return mcts.SearchConfig(**d)


def _env_config(cfg: dict, args, default_counts) -> imitation.ScenarioConfig:
    env = dict(cfg.get("env", {}))
    counts = args.objects or env.get("object_counts") or list(default_counts)
    return imitation.ScenarioConfig(tuple(counts), args.grid or env.get("M", 10),
                                    env.get("n_immovable", bench.SUITE_IMMOVABLE))


def _eval_suite(cfg: dict, env: imitation.ScenarioConfig, seed: int):
    ev = cfg.get("eval", {})
    n = ev.get("objects", max(env.object_counts))
    return bench.make_suite(n, ev.get("count", 50), seed + 1, env.M, env.n_immovable)


# ---------------------------------------------------------------------------
# subcommands

def cmd_gen_scenarios(args) -> int:
    cfg = _load_config(args.config)
    out = _out_dir(args)
    count = args.count or cfg.get("count", 100)
    immovable = cfg.get("n_immovable", bench.SUITE_IMMOVABLE)
    for n in args.objects or cfg.get("objects", list(bench.DEFAULT_SIZES)):
        suite = bench.make_suite(n, count, args.seed, args.grid or cfg.get("M", 10), immovable)
        path = out / f"scenarios_{n}.json"
        bench.scenario_io(path, "w", suite)
        print(f"{path}  {bench.scenario_checksum(suite)[:16]}")
    return 0


def cmd_train_bc(args) -> int:
    cfg = _load_config(args.config)
    out = _out_dir(args)
    env = _env_config(cfg, args, (3, 5, 8, 10))
    episodes = cfg.get("episodes", 1000)
    net = NetConfig(M=env.M, **cfg.get("net", {}))
    ds = imitation.collect_expert_dataset(episodes, env, seed=args.seed, n_max=net.n_max)
    ds.save(out / "dataset.jsonl")
    log.info("expert dataset: %d episodes, %d records", len(ds.episodes), len(ds))
    params = init_params(args.seed, net) if not args.checkpoint else load_params(args.checkpoint)
    epochs = args.iters if args.iters is not None else cfg.get("epochs", 15)
    params, curve = imitation.bc_train(params, ds, epochs=epochs, batch_size=cfg.get("batch_size", 64),
                                       learning_rate=cfg.get("learning_rate", 1e-3), seed=args.seed,
                                       log=lambda r: log.info("epoch %(epoch)d loss %(train_loss).4f "
                                                              "val_acc %(val_acc).3f", r))
    save_params(params, out / "bc.npz")
    with open(out / "bc_curve.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["epoch", "train_loss", "train_acc", "val_loss", "val_acc"])
        w.writeheader()
        for row in curve:
            w.writerow({k: (f"{v:.6g}" if isinstance(v, float) else v) for k, v in row.items()})
    print(out / "bc.npz")
    return 0


def cmd_train_ppo(args) -> int:
    cfg = _load_config(args.config)
    out = _out_dir(args)
    d = dict(cfg.get("ppo", {}))
    env = _env_config(cfg, args, (3, 5, 8, 10))
    d["env"] = env
    d["seed"] = args.seed
    if args.iters is not None:
        d["iterations"] = args.iters
    pcfg = ppo.PpoConfig.paper_scale(**d) if cfg.get("preset") == "paper" else ppo.PpoConfig(**d)
    if args.checkpoint:
        params = load_params(args.checkpoint)
    else:
        params = init_params(args.seed, NetConfig(M=env.M, **cfg.get("net", {})))
    suite = _eval_suite(cfg, env, args.seed)
    best, curve = ppo.train(params, pcfg, suite, eval_every=cfg.get("eval", {}).get("every", 10),
                            target_success=cfg.get("eval", {}).get("target_success"),
                            log=lambda r: log.info("iter %d reward %.2f sr %.2f eval %.3f", r["iteration"],
                                                   r["mean_reward"], r["success_rate"], r["eval_success"]))
    save_params(best, out / "ppo.npz")
    ppo.write_curve(curve, out / "learning_curve.csv")
    (out / "ppo_config.json").write_text(json.dumps(ppo.config_to_dict(pcfg), indent=1))
    print(out / "ppo.npz")
    return 0


def _pick_scenario(args, cfg):
    if args.scenario:
        suite = bench.scenario_io(args.scenario, "r")
        return suite[args.index]
    n = (args.objects or [5])[0]
    return bench.make_suite(n, args.index + 1, args.seed, args.grid or 10,
                            cfg.get("n_immovable", bench.SUITE_IMMOVABLE))[args.index]


def cmd_plan(args) -> int:
    cfg = _load_config(args.config)
    out = _out_dir(args)
    sc = _pick_scenario(args, cfg)
    params = load_params(args.checkpoint) if args.checkpoint else None
    dump = [] if args.dump else None
    actions, trace, metrics = mcts.plan_episode(sc, params, _search_config(cfg, args),
                                                np.random.default_rng([args.seed, args.index]), dump=dump)
    with open(out / "trace.jsonl", "w") as fh:
        for rec in trace:
            fh.write(json.dumps(rec) + "\n")
    with open(out / "plan_metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n_objects", "total_reward", "steps", "success", "path_length"])
        w.writerow([sc.n_objects, f"{metrics['total_reward']:.2f}", metrics["steps"], int(metrics["success"]),
                    metrics["path_length"]])
    if dump is not None:
        mcts.write_dump(dump, out / "search_dump.json")
    print(json.dumps(metrics))
    return 0


def _method_from_args(args, cfg) -> bench.MethodSpec:
    if "method" in cfg:
        m = bench.MethodSpec.from_dict(cfg["method"])
        if args.iters is not None:
            m.search = _search_config(cfg["method"], args)
        return m
    kind = args.method
    ckpt = args.checkpoint if kind != "mcts+random" else None
    return bench.MethodSpec(args.name or kind, kind, ckpt, _search_config(cfg, args))


def cmd_bench(args) -> int:
    cfg = _load_config(args.config)
    out = _out_dir(args)
    method = _method_from_args(args, cfg)
    rows = [["method", "objects", "mean_reward", "mean_steps", "success_rate", "mean_path_length"]]
    for n in args.objects or cfg.get("objects", list(bench.DEFAULT_SIZES)):
        suite = bench.make_suite(n, args.count or cfg.get("count", 100), args.seed, args.grid or 10,
                                 cfg.get("n_immovable", bench.SUITE_IMMOVABLE))
        res = bench.run_suite(method, suite, args.seed)
        bench.write_records_csv(res, out / f"records_{n}.csv", include_time=args.timing)
        rows.append([method.name, n, f"{res.mean_reward:.2f}", f"{res.mean_steps:.2f}",
                     f"{res.success_rate:.2f}", f"{res.mean_path_length:.2f}"])
    (out / "metrics.csv").write_text(bench.rows_to_csv_text(rows))
    print(bench._align(rows), end="")
    return 0


def cmd_compare(args) -> int:
    cfg = _load_config(args.config)
    out = _out_dir(args)
    if "methods" in cfg:
        methods = [bench.MethodSpec.from_dict(d) for d in cfg["methods"]]
        if args.iters is not None:
            for m in methods:
                m.search = mcts.SearchConfig(**{**m.to_dict()["search"], "iterations": args.iters})
    else:
        search = _search_config(cfg, args)
        methods = [bench.MethodSpec("MCTS+Random", "mcts+random", search=search)]
        if args.checkpoint:
            methods += [bench.MethodSpec("Policy", "policy-greedy", args.checkpoint),
                        bench.MethodSpec("MCTS+Policy", "mcts+policy", args.checkpoint, search)]
    comp = bench.compare_methods(methods, args.objects or cfg.get("objects", list(bench.DEFAULT_SIZES)),
                                 args.count or cfg.get("count", 100), args.seed, args.grid or 10,
                                 cfg.get("n_immovable", bench.SUITE_IMMOVABLE))
    comp.write_csv(out)
    print(comp.render(bench.load_baselines() if args.reference else None), end="")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration file")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--objects", type=_int_list, help="object counts, e.g. 3,5,8,10")
    common.add_argument("--grid", type=int, help="grid side length M")
    common.add_argument("--iters", type=int, help="epochs, PPO iterations or search iterations")
    common.add_argument("--checkpoint", help="policy checkpoint (.npz)")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="npmo", description="Guided tree search for multi-object rearrangement.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen-scenarios", parents=[common], help="write benchmark scenario files")
    s.add_argument("--count", type=int)
    s.set_defaults(func=cmd_gen_scenarios)

    s = sub.add_parser("train-bc", parents=[common], help="collect expert data and run behaviour cloning")
    s.set_defaults(func=cmd_train_bc)

    s = sub.add_parser("train-ppo", parents=[common], help="clipped policy-gradient training")
    s.set_defaults(func=cmd_train_ppo)

    s = sub.add_parser("plan", parents=[common], help="plan one scenario and write its trace")
    s.add_argument("--scenario", help="scenario file (default: generated from --objects/--seed)")
    s.add_argument("--index", type=int, default=0)
    s.add_argument("--dump", action="store_true", help="write the per-decision search dump")
    s.set_defaults(func=cmd_plan)

    s = sub.add_parser("bench", parents=[common], help="run one method over scenario suites")
    s.add_argument("--method", choices=bench.METHOD_KINDS, default="mcts+policy")
    s.add_argument("--name")
    s.add_argument("--count", type=int)
    s.add_argument("--timing", action="store_true", help="add wall-clock seconds to the record CSVs")
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("compare", parents=[common], help="paired comparison of several methods")
    s.add_argument("--count", type=int)
    s.add_argument("--reference", action="store_true", help="print the reference results table too")
    s.set_defaults(func=cmd_compare)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except (bench.ParseError, bench.CheckpointMissing, gw.ScenarioError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
