"""Command line: generate networks, verify the oracle, train, evaluate, inspect.

Every command is deterministic under fixed flags and seeds and reports in
both a human table and a machine-readable JSON line (the last stdout
line).  Exit codes are stable: 0 success, 1 oracle/evaluation failure,
2 configuration or path error, 3 training did not converge, 4 checkpoint
error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

from . import codec, env, neural, trainer
from .netsim import ConfigError, SimConfig, generate_design, inject_faults, state_to_json
from .seeding import seed_pairs, spawn_seed
from .trainer import TrainConfig

CONFIG_SCHEMA = "netop-config-1"
REPORT_SCHEMA = "netop-report-1"

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_NO_CONVERGENCE = 3
EXIT_CHECKPOINT = 4

DEFAULT_SEED = 0
DEFAULT_EVAL_NETWORKS = 200


class ConfigFileError(ValueError):
    """A run-config document is malformed; the message names the field."""


@dataclasses.dataclass
class RunConfig:
    seed: int = DEFAULT_SEED
    sim: SimConfig = SimConfig()
    train: TrainConfig = TrainConfig()
    eval_networks: int = DEFAULT_EVAL_NETWORKS
    eval_seed: int = 1_000_003
    workers: int = 0  # 0 = one per available core


def _build_section(cls, data: dict, section: str):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigFileError(f"unknown field {sorted(unknown)[0]!r} in section {section!r}")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigFileError(f"bad value in section {section!r}: {exc}") from exc


def load_run_config(path: str | None, seed_override: int | None = None) -> RunConfig:
    """Parse a netop-config-1 document; missing sections fall back to defaults.

    Seed precedence: --seed flag, then the config file, then NETOP_SEED,
    then the built-in default.
    """
    doc: dict = {}
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigFileError(f"cannot read config {path!r}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigFileError(f"invalid JSON in {path!r} at byte {exc.pos}: {exc.msg}") from exc
        if not isinstance(doc, dict) or doc.get("schema") != CONFIG_SCHEMA:
            raise ConfigFileError(f"expected a {CONFIG_SCHEMA} document")
    known = {"schema", "seed", "sim", "train", "eval", "paths"}
    unknown = set(doc) - known
    if unknown:
        raise ConfigFileError(f"unknown field {sorted(unknown)[0]!r} in config")

    seed = DEFAULT_SEED
    env_seed = os.environ.get("NETOP_SEED")
    if env_seed is not None:
        try:
            seed = int(env_seed)
        except ValueError:
            raise ConfigFileError(f"NETOP_SEED must be an integer, got {env_seed!r}") from None
    if "seed" in doc:
        if not isinstance(doc["seed"], int):
            raise ConfigFileError("field 'seed' must be an integer")
        seed = doc["seed"]
    if seed_override is not None:
        seed = seed_override

    sim = _build_section(SimConfig, doc.get("sim", {}), "sim")
    train_data = dict(doc.get("train", {}))
    if "hidden_dims" in train_data:
        train_data["hidden_dims"] = tuple(train_data["hidden_dims"])
    train = _build_section(TrainConfig, train_data, "train")
    train = dataclasses.replace(train, sim=sim, seed=seed)

    eval_data = dict(doc.get("eval", {}))
    eval_known = {"networks", "seed", "workers"}
    unknown = set(eval_data) - eval_known
    if unknown:
        raise ConfigFileError(f"unknown field {sorted(unknown)[0]!r} in section 'eval'")
    cfg = RunConfig(
        seed=seed,
        sim=sim,
        train=train,
        eval_networks=eval_data.get("networks", DEFAULT_EVAL_NETWORKS),
        eval_seed=eval_data.get("seed", 1_000_003),
        workers=eval_data.get("workers", 0),
    )
    try:
        sim.validate()
        train.validate()
    except ConfigError as exc:
        raise ConfigFileError(str(exc)) from exc
    return cfg


def _print_json(doc: dict) -> None:
    print(json.dumps(doc, sort_keys=True))


def _seed_with_env_default(flag_value: int | None) -> int:
    if flag_value is not None:
        return flag_value
    env_seed = os.environ.get("NETOP_SEED")
    if env_seed is not None:
        return int(env_seed)
    return DEFAULT_SEED


# --- commands --------------------------------------------------------------


def cmd_generate(args) -> int:
    run_cfg = load_run_config(args.config)
    seed = _seed_with_env_default(args.seed)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"cannot create output directory {out}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    rows = []
    for i in range(args.count):
        design_seed = spawn_seed(seed, i, 0)
        fault_seed = spawn_seed(seed, i, 1)
        design = generate_design(design_seed, run_cfg.sim)
        state, faults = inject_faults(design, fault_seed, run_cfg.sim)
        name = f"net-{seed}-{i}.json"
        try:
            (out / name).write_text(state_to_json(state), encoding="utf-8")
        except OSError as exc:
            print(f"cannot write {out / name}: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        rows.append({"file": name, "devices": len(design.devices), "faults": len(faults),
                     "protocol": design.protocol})
    print(f"{'file':<24} {'devices':>7} {'faults':>6} {'protocol':>8}")
    for row in rows:
        print(f"{row['file']:<24} {row['devices']:>7} {row['faults']:>6} {row['protocol']:>8}")
    _print_json({"schema": REPORT_SCHEMA, "command": "generate", "seed": seed,
                 "count": args.count, "out": str(out), "networks": rows})
    return EXIT_OK


def cmd_oracle_check(args) -> int:
    run_cfg = load_run_config(args.config)
    seed = _seed_with_env_default(args.seed)
    failures = []
    total_reward = 0
    total_steps = 0
    for i, (design_seed, fault_seed) in enumerate(seed_pairs(seed, args.count)):
        state, _ = env.reset(design_seed, fault_seed, run_cfg.sim)
        expected = len(state.items) + 2 * state.initial_fault_count
        reward = 0
        negatives = 0
        while not state.done:
            result = env.step(state, env.oracle_action(state))
            reward += result.reward
            if result.reward < 0:
                negatives += 1
        total_reward += reward
        total_steps += state.steps_taken
        ok = (
            negatives == 0
            and not state.assisted
            and result.network_repaired
            and reward == expected
        )
        if not ok:
            failures.append({"index": i, "design_seed": design_seed, "fault_seed": fault_seed})
    print(f"oracle check: {args.count - len(failures)}/{args.count} networks repaired, "
          f"{total_steps} steps, total reward {total_reward}")
    for failure in failures:
        print(f"  FAILED seeds design={failure['design_seed']} fault={failure['fault_seed']}",
              file=sys.stderr)
    _print_json({"schema": REPORT_SCHEMA, "command": "oracle-check", "count": args.count,
                 "failures": failures, "total_steps": total_steps, "total_reward": total_reward})
    return EXIT_OK if not failures else EXIT_FAILURE


def cmd_train(args) -> int:
    run_cfg = load_run_config(args.config, seed_override=args.seed)
    resume = None
    if args.resume:
        resume = Path(args.resume).read_bytes()
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    metrics_path = args.metrics or f"{args.out}.metrics.jsonl"
    result = trainer.train(run_cfg.train, checkpoint_path=str(out),
                           metrics_path=metrics_path, resume_from=resume)
    steps = result.history[-1].step if result.history else 0
    print(f"training {'converged' if result.converged else 'DID NOT CONVERGE'} "
          f"after {steps} gradient steps; final validation accuracy "
          f"{result.final_val_accuracy:.4f}")
    _print_json({"schema": REPORT_SCHEMA, "command": "train", "converged": result.converged,
                 "final_val_accuracy": result.final_val_accuracy, "gradient_steps": steps,
                 "checkpoint": str(out), "metrics": metrics_path})
    return EXIT_OK if result.converged else EXIT_NO_CONVERGENCE


def _eval_chunk(checkpoint_path: str, sim_fields: dict, pairs: list[tuple[int, int]]):
    model, _, _ = neural.load_checkpoint(Path(checkpoint_path).read_bytes())
    return trainer.evaluate_networks(model, SimConfig(**sim_fields), pairs)


def cmd_evaluate(args) -> int:
    run_cfg = load_run_config(args.config)
    data = Path(args.model).read_bytes()
    model, _, meta = neural.load_checkpoint(data)
    if meta.get("vocab_hash") != codec.vocab_hash():
        raise neural.VocabHashMismatchError(
            "checkpoint vocabulary hash does not match this build's vocabulary"
        )
    n = args.networks if args.networks is not None else run_cfg.eval_networks
    seed = args.seed if args.seed is not None else run_cfg.eval_seed
    workers = args.workers if args.workers is not None else (run_cfg.workers or os.cpu_count() or 1)
    pairs = seed_pairs(seed, n)
    if workers > 1 and n > 1:
        from concurrent.futures import ProcessPoolExecutor

        chunks = [pairs[i::workers] for i in range(workers) if pairs[i::workers]]
        sim_fields = dataclasses.asdict(run_cfg.sim)
        results = []
        with ProcessPoolExecutor(max_workers=len(chunks)) as pool:
            futures = [pool.submit(_eval_chunk, args.model, sim_fields, chunk) for chunk in chunks]
            for future in futures:
                results.extend(future.result())
    else:
        results = trainer.evaluate_networks(model, run_cfg.sim, pairs)
    report = trainer.build_report(results)
    print(f"{'networks':>10} {'steps':>8} {'accuracy':>9} {'repaired':>9} "
          f"{'ops/net':>8} {'ms/net':>8} {'p95 ms':>8}")
    if report.n_networks:
        print(f"{report.n_networks:>10} {report.total_steps:>8} "
              f"{report.sub_action_accuracy:>9.4f} {report.fully_repaired_fraction:>9.4f} "
              f"{report.mean_ops_per_network:>8.1f} {1e3 * report.mean_wall_time_s:>8.2f} "
              f"{1e3 * report.p95_wall_time_s:>8.2f}")
    else:
        print(f"{0:>10} {0:>8} {'-':>9} {'-':>9} {'-':>8} {'-':>8} {'-':>8}")
    doc = {"schema": REPORT_SCHEMA, "command": "evaluate", "model": args.model,
           "seed": seed, **report.to_dict()}
    if args.json:
        Path(args.json).write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    _print_json(doc)
    if args.min_accuracy is not None:
        achieved = report.sub_action_accuracy if report.sub_action_accuracy is not None else 1.0
        if achieved < args.min_accuracy:
            return EXIT_FAILURE
    return EXIT_OK


def cmd_inspect(args) -> int:
    _, _, meta = neural.load_checkpoint(Path(args.model).read_bytes())
    print(json.dumps(meta, sort_keys=True, indent=2))
    return EXIT_OK


# --- entry point -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="netop", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write faulted network-state JSON files")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("oracle-check", help="verify the repair oracle on fresh networks")
    p.add_argument("--config", default=None)
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_oracle_check)

    p = sub.add_parser("train", help="run the two-phase training schedule")
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--metrics", default=None)
    p.add_argument("--resume", default=None, help="phase2-start checkpoint to resume from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="greedy evaluation of a checkpoint")
    p.add_argument("--model", required=True)
    p.add_argument("--networks", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--json", default=None, help="also write the JSON report here")
    p.add_argument("--min-accuracy", type=float, default=None,
                   help="exit 1 if sub-action accuracy falls below this")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("inspect", help="print checkpoint metadata")
    p.add_argument("--model", required=True)
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigFileError, ConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except neural.CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def console_main() -> None:
    raise SystemExit(main())
