"""Command-line entry point: ``twg <verb> ...``.

Every ``EngineConfig`` field is settable as a dotted flag (``--grpo.kl_beta
0.0``, ``--gate.use_hard false``); flags override ``--config`` (JSON or YAML),
which overrides the defaults. Flag values are parsed as YAML scalars, so
``null``, ``true`` and ``[0.25, 0.5]`` work as expected.

The remote policy reads its endpoint from TWG_ENDPOINT_URL, TWG_API_KEY,
TWG_MODEL, TWG_TIMEOUT_S and TWG_MAX_IN_FLIGHT.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import yaml

from ..config import ConfigError, EngineConfig, load_config
from ..data import (
    CurriculumStage,
    DatasetError,
    curriculum_batches,
    dataset_stats,
    dump_samples,
    filter_label_coverage,
    filter_min_duration,
    load_samples,
)
from .logs import read_jsonl, trajectory_record, write_jsonl

log = logging.getLogger("twg")


# ---- config flags -------------------------------------------------------


def _flatten(d: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in d.items():
        if isinstance(v, dict):
            out.update(_flatten(v, f"{prefix}{k}."))
        else:
            out[f"{prefix}{k}"] = v
    return out


CONFIG_KEYS = tuple(_flatten(EngineConfig().to_dict()))


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON or YAML config file")
    g = p.add_argument_group("engine config (dotted keys)")
    for key in CONFIG_KEYS:
        g.add_argument(f"--{key}", dest=f"cfg:{key}", metavar="VALUE", default=None, help=argparse.SUPPRESS)


def config_from_args(args: argparse.Namespace) -> EngineConfig:
    cfg = load_config(args.config) if args.config else EngineConfig()
    overrides = {}
    for key in CONFIG_KEYS:
        raw = getattr(args, f"cfg:{key}")
        if raw is not None:
            overrides[key] = yaml.safe_load(raw)
    return cfg.replace(**overrides) if overrides else cfg


# ---- policies -----------------------------------------------------------


def make_policy(kind: str, path: Path | None):
    if kind == "toy":
        from ..policy.toy import ToyPolicy, ToyPolicyParams

        if path is None:
            return ToyPolicy(ToyPolicyParams.zeros())
        return ToyPolicy(ToyPolicyParams.from_dict(json.loads(path.read_text())))
    if kind == "scripted":
        from ..policy.scripted import ScriptedPolicy

        if path is None:
            raise SystemExit("--policy scripted needs --policy-file with {\"turns\": [...], \"self_confirm\": ...}")
        spec = json.loads(path.read_text())
        return ScriptedPolicy(spec["turns"], spec.get("self_confirm"), name=path.stem)
    if kind == "remote":
        from ..policy.remote import RemotePolicy

        return RemotePolicy()
    raise SystemExit(f"unknown policy {kind!r}")


def _add_policy_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--policy", choices=("toy", "scripted", "remote"), default="toy")
    p.add_argument("--policy-file", type=Path, help="toy parameters (JSON) or scripted turns (JSON)")


def _load(path: Path):
    try:
        return load_samples(path)
    except DatasetError as e:
        for problem in e.problems:
            print(problem, file=sys.stderr)
        raise SystemExit(1) from None


def _dump_json(obj, path: Path | None) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True)
    if path is None:
        print(text)
    else:
        path.write_text(text + "\n")


# ---- verbs --------------------------------------------------------------


def cmd_validate_data(args) -> int:
    samples = _load(args.data)
    kept = filter_label_coverage(filter_min_duration(samples, args.min_duration), args.min_coverage)
    report = {
        "loaded": len(samples),
        "kept": len(kept),
        "dropped": len(samples) - len(kept),
        "stats": dataset_stats(kept).to_dict(),
    }
    _dump_json(report, args.report)
    if args.out:
        dump_samples(kept, args.out)
    return 0


def cmd_build_curriculum(args) -> int:
    cfg = config_from_args(args)
    samples = _load(args.data)
    stream = curriculum_batches(CurriculumStage.of(args.stage), samples, cfg.grpo.batch_size, cfg.seed)
    out = open(args.out, "w") if args.out else sys.stdout
    try:
        for i in range(args.batches):
            batch = next(stream)
            out.write(json.dumps({"batch": i, "sample_ids": [s.sample_id for s in batch]}) + "\n")
    finally:
        if args.out:
            out.close()
    return 0


def cmd_synth_data(args) -> int:
    from ..synthetic import WorldConfig, make_corpus

    world = WorldConfig(
        gist_reliability=args.gist_reliability,
        legible_fraction=args.legible_fraction,
        distractor_fraction=args.distractor_fraction,
    )
    samples = make_corpus(args.n, args.seed, args.labeled_fraction, args.gist_fraction, world)
    dump_samples(samples, args.out)
    print(f"wrote {len(samples)} samples to {args.out}")
    return 0


def cmd_rollout(args) -> int:
    from ..rewards import total_reward
    from ..rollout import run_many

    cfg = config_from_args(args)
    samples = _load(args.data)
    policy = make_policy(args.policy, args.policy_file)
    sampling = cfg.eval_sampling if args.greedy else cfg.train_sampling
    jobs = [(s, cfg.seed * 1_000_003 + i) for i, s in enumerate(samples)]
    trajs = run_many(policy, jobs, cfg, sampling)
    records = []
    for s, t in zip(samples, trajs):
        reward = total_reward(t, s, policy, cfg.gate, cfg.views) if args.score else None
        records.append(trajectory_record(t, reward))
    write_jsonl(records, args.out)
    print(f"wrote {len(records)} trajectories to {args.out}")
    return 0


def cmd_train_toy(args) -> int:
    from ..policy.toy import ToyPolicyParams
    from .train import run_train_toy

    cfg = config_from_args(args)
    samples = _load(args.data)
    params = ToyPolicyParams.from_dict(json.loads(args.init.read_text())) if args.init else None
    res = run_train_toy(samples, cfg, args.steps, params=params, metrics_path=args.metrics)
    args.out.write_text(json.dumps(res.params.to_dict(), indent=2) + "\n")
    last = res.rows[-1]
    print(f"steps={len(res.rows)} mean_r_acc={last.mean_r_acc:.3f} grounded_fraction={last.grounded_fraction:.3f}")
    if res.stopped_early:
        print("stopped early: no learning signal", file=sys.stderr)
        return 2
    return 0


def cmd_eval(args) -> int:
    from .evaluate import run_eval

    cfg = config_from_args(args)
    samples = _load(args.data)
    policy = make_policy(args.policy, args.policy_file)
    report, _ = run_eval(policy, samples, cfg, log_path=args.log, score_pseudo=args.score_pseudo)
    _dump_json(report.to_dict(), args.report)
    return 0


def cmd_replay_rewards(args) -> int:
    from .replay import compare, replay_rewards

    cfg = config_from_args(args)
    samples = {s.sample_id: s for s in _load(args.data)}
    pairs = replay_rewards(read_jsonl(args.log), samples, cfg.gate, cfg.views)
    mismatched = 0
    out = []
    for rec, bd in pairs:
        diff = compare(rec.get("reward"), bd)
        if diff:
            mismatched += 1
            print(f"{rec['sample_id']} seed={rec['seed']}: differs in {', '.join(diff)}", file=sys.stderr)
        out.append({"sample_id": rec["sample_id"], "seed": rec["seed"], "reward": bd.to_dict()})
    if args.out:
        write_jsonl(out, args.out)
    print(f"replayed {len(pairs)} trajectories, {mismatched} mismatched")
    return 1 if mismatched and args.check else 0


# ---- parser -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="twg", description=__doc__.split("\n\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True)

    s = sub.add_parser("validate-data", help="load a dataset, apply the duration and coverage filters, report stats")
    s.add_argument("data", type=Path)
    s.add_argument("--min-duration", type=float, default=20.0)
    s.add_argument("--min-coverage", type=float, default=0.01)
    s.add_argument("--out", type=Path, help="write the filtered dataset here")
    s.add_argument("--report", type=Path)
    s.set_defaults(fn=cmd_validate_data)

    s = sub.add_parser("build-curriculum", help="print the batches a curriculum stage would draw")
    s.add_argument("data", type=Path)
    s.add_argument("--stage", choices=("stage1", "stage2"), default="stage1")
    s.add_argument("--batches", type=int, default=10)
    s.add_argument("--out", type=Path)
    _add_config_flags(s)
    s.set_defaults(fn=cmd_build_curriculum)

    s = sub.add_parser("synth-data", help="write a synthetic needle-in-a-haystack corpus")
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--n", type=int, default=400)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--labeled-fraction", type=float, default=0.5)
    s.add_argument("--gist-fraction", type=float, default=0.0)
    s.add_argument("--gist-reliability", type=float, default=None)
    s.add_argument("--legible-fraction", type=float, default=1.0)
    s.add_argument("--distractor-fraction", type=float, default=0.0)
    s.set_defaults(fn=cmd_synth_data)

    s = sub.add_parser("rollout", help="one trajectory per sample, written as a JSON-lines log")
    s.add_argument("data", type=Path)
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--greedy", action="store_true", help="use eval sampling instead of training sampling")
    s.add_argument("--score", action="store_true", help="attach the reward breakdown to each record")
    _add_policy_flags(s)
    _add_config_flags(s)
    s.set_defaults(fn=cmd_rollout)

    s = sub.add_parser("train-toy", help="GRPO-train the toy policy on a dataset")
    s.add_argument("data", type=Path)
    s.add_argument("--steps", type=int, default=200)
    s.add_argument("--metrics", type=Path, default=Path("metrics.csv"))
    s.add_argument("--out", type=Path, default=Path("toy_params.json"))
    s.add_argument("--init", type=Path, help="starting toy parameters (JSON)")
    _add_config_flags(s)
    s.set_defaults(fn=cmd_train_toy)

    s = sub.add_parser("eval", help="greedy evaluation with retries; prints the report")
    s.add_argument("data", type=Path)
    s.add_argument("--log", type=Path, help="write trajectory records here")
    s.add_argument("--report", type=Path)
    s.add_argument("--score-pseudo", action="store_true", help="also query the self-confirm reward")
    _add_policy_flags(s)
    _add_config_flags(s)
    s.set_defaults(fn=cmd_eval)

    s = sub.add_parser("replay-rewards", help="recompute rewards from a trajectory log")
    s.add_argument("log", type=Path)
    s.add_argument("data", type=Path)
    s.add_argument("--out", type=Path)
    s.add_argument("--check", action="store_true", help="exit 1 if any record differs from its logged reward")
    _add_config_flags(s)
    s.set_defaults(fn=cmd_replay_rewards)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
