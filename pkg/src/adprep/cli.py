"""Command line entry point.

Subcommands:
    synth     generate a demo task suite
    validate  check that bundles rebuild their targets
    run       benchmark a policy over a suite
    solve     run one episode on a single bundle and show the result
    score     re-score logged episodes without a model
    replay    re-drive one episode from a file of canned replies

Everything runs in process; main() takes argv for tests and returns the
exit code instead of calling sys.exit itself.
"""

from __future__ import annotations

import argparse
import json
import random
import shlex
import sys
from pathlib import Path

from .agent import (
    HttpChatPolicy,
    IdentityPolicy,
    PolicyError,
    ScriptedPolicy,
    Task,
    run_episode,
)
from .harness import (
    HarnessError,
    gt_replay_policy,
    replay_suite,
    run_benchmark,
    write_trajectory_log,
)
from .operators import SubprocessScriptBackend
from .reward import RewardWeights, score_trajectory
from .synthesis import SynthesisError, read_bundle, synthesize_demo_task, verify_bundle, write_bundle
from .tables import TableIOError, serialize_table


def _err(message: str) -> int:
    print(message, file=sys.stderr)
    return 2


def _weights(args) -> RewardWeights:
    return RewardWeights(alpha=args.alpha, beta=args.beta, gamma=args.gamma)


def _add_weight_args(p):
    p.add_argument("--alpha", type=float, default=1.0, help="weight of exact-match reward")
    p.add_argument("--beta", type=float, default=0.5, help="weight of partial credit")
    p.add_argument("--gamma", type=float, default=0.2, help="weight of the process judge")


def _add_policy_args(p):
    p.add_argument(
        "--policy",
        choices=("identity", "gt", "scripted", "http"),
        default="identity",
        help="identity answers the closest source; gt replays the bundle's own fix; "
        "scripted reads replies from --scripts; http talks to a chat endpoint",
    )
    p.add_argument("--scripts", help="directory of <task_id>.json reply arrays (policy=scripted)")
    p.add_argument("--endpoint", help="chat completion URL (policy=http)")
    p.add_argument("--model", help="model name sent to the endpoint (policy=http)")
    p.add_argument("--temperature", type=float, default=0.01)
    p.add_argument("--max-turns", type=int, default=5)
    p.add_argument(
        "--script-runner",
        help='interpreter argv for ExeCode, e.g. "python3"; scripts stay disabled without it',
    )


def _policy_factory(args):
    if args.policy == "identity":
        return lambda bundle: IdentityPolicy()
    if args.policy == "gt":
        return gt_replay_policy
    if args.policy == "scripted":
        if not args.scripts:
            raise HarnessError("--policy scripted needs --scripts DIR")
        scripts = Path(args.scripts)
        return lambda bundle: ScriptedPolicy.from_file(scripts / f"{bundle.task_id}.json")
    if not args.endpoint or not args.model:
        raise HarnessError("--policy http needs --endpoint and --model")
    return lambda bundle: HttpChatPolicy(
        args.endpoint, args.model, temperature=args.temperature
    )


def _script_backend(args):
    if not args.script_runner:
        return None
    return SubprocessScriptBackend(shlex.split(args.script_runner))


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _cmd_synth(args) -> int:
    rng = random.Random(args.seed)
    out = Path(args.out_dir)
    for i in range(args.tasks):
        task_id = f"task-{i:03d}"
        bundle = synthesize_demo_task(rng, task_id, max_corruptions=args.max_corruptions)
        write_bundle(bundle, out / task_id)
        print(f"{task_id}: {len(bundle.gt_pipeline)} ops, "
              f"{bundle.provenance['cleaner_count']} cleaning")
    print(f"wrote {args.tasks} tasks to {out}")
    return 0


def _cmd_validate(args) -> int:
    root = Path(args.suite_dir)
    if (root / "target_schema.json").exists():
        dirs = [root]
    else:
        dirs = sorted(p for p in root.iterdir() if p.is_dir() and (p / "target_schema.json").exists())
    if not dirs:
        return _err(f"{root}: no task bundles found")
    failures = 0
    for d in dirs:
        try:
            verify_bundle(read_bundle(d))
        except (SynthesisError, TableIOError) as exc:
            failures += 1
            print(f"FAIL {d.name}: {exc}")
            continue
        print(f"ok   {d.name}")
    print(f"{len(dirs) - failures}/{len(dirs)} bundles verify")
    return 0 if failures == 0 else 1


def _cmd_run(args) -> int:
    try:
        factory = _policy_factory(args)
        report = run_benchmark(
            args.suite_dir,
            factory,
            weights=_weights(args),
            threads=args.threads,
            max_turns=args.max_turns,
            script_backend=_script_backend(args),
            log_dir=args.log_dir,
        )
    except HarnessError as exc:
        return _err(str(exc))
    print(json.dumps(report.to_json(), sort_keys=True, indent=2) if args.json else report.to_text())
    return 0 if report.all_attempted else 1


def _run_single_episode(args, bundle, policy) -> int:
    task = Task(bundle.task_id, bundle.sources, bundle.target_schema)
    traj = run_episode(
        task, policy, max_turns=args.max_turns, script_backend=_script_backend(args)
    )
    breakdown = score_trajectory(traj, bundle.target_table, weights=_weights(args))
    if args.log:
        write_trajectory_log(args.log, traj, breakdown.to_json())
    print(f"status: {traj.status}")
    if traj.answer_path is not None:
        print(f"answer: {traj.answer_path}")
    if traj.final_table is not None:
        print(serialize_table(traj.final_table, args.rows))
    print(
        f"outcome: {breakdown.outcome:.0f}  partial: {breakdown.partial:.3f}  "
        f"process: {breakdown.process:.3f}  total: {breakdown.total:.3f}"
    )
    return 0 if traj.answered else 1


def _cmd_solve(args) -> int:
    try:
        bundle = read_bundle(args.bundle_dir)
    except (SynthesisError, TableIOError) as exc:
        return _err(str(exc))
    try:
        policy = _policy_factory(args)(bundle)
    except (HarnessError, PolicyError) as exc:
        return _err(str(exc))
    return _run_single_episode(args, bundle, policy)


def _cmd_score(args) -> int:
    try:
        report = replay_suite(args.suite_dir, args.log_dir, weights=_weights(args))
    except HarnessError as exc:
        return _err(str(exc))
    print(json.dumps(report.to_json(), sort_keys=True, indent=2) if args.json else report.to_text())
    return 0 if report.all_attempted else 1


def _cmd_replay(args) -> int:
    try:
        bundle = read_bundle(args.bundle_dir)
        policy = ScriptedPolicy.from_file(args.script)
    except (SynthesisError, TableIOError, PolicyError) as exc:
        return _err(str(exc))
    return _run_single_episode(args, bundle, policy)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="adprep", description="table preparation episodes: synthesize, run, score"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a demo task suite")
    p.add_argument("out_dir")
    p.add_argument("--tasks", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-corruptions", type=int, default=2)
    p.set_defaults(fn=_cmd_synth)

    p = sub.add_parser("validate", help="check bundles rebuild their targets")
    p.add_argument("suite_dir")
    p.set_defaults(fn=_cmd_validate)

    p = sub.add_parser("run", help="benchmark a policy over a suite")
    p.add_argument("suite_dir")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--log-dir", help="write one JSONL trajectory log per task")
    p.add_argument("--json", action="store_true", help="print the report as JSON")
    _add_policy_args(p)
    _add_weight_args(p)
    p.set_defaults(fn=_cmd_run)

    p = sub.add_parser("solve", help="run one episode on a single bundle")
    p.add_argument("bundle_dir")
    p.add_argument("--log", help="write the episode's JSONL trajectory log here")
    p.add_argument("--rows", type=int, default=10, help="sample rows to print")
    _add_policy_args(p)
    _add_weight_args(p)
    p.set_defaults(fn=_cmd_solve)

    p = sub.add_parser("score", help="re-score logged episodes against a suite")
    p.add_argument("suite_dir")
    p.add_argument("log_dir")
    p.add_argument("--json", action="store_true")
    _add_weight_args(p)
    p.set_defaults(fn=_cmd_score)

    p = sub.add_parser("replay", help="re-drive one episode from a reply script")
    p.add_argument("bundle_dir")
    p.add_argument("script", help="json file holding the list of canned replies")
    p.add_argument("--log", help="write the episode's JSONL trajectory log here")
    p.add_argument("--rows", type=int, default=10, help="sample rows to print")
    p.add_argument("--max-turns", type=int, default=5)
    p.add_argument(
        "--script-runner",
        help='interpreter argv for ExeCode, e.g. "python3"; scripts stay disabled without it',
    )
    _add_weight_args(p)
    p.set_defaults(fn=_cmd_replay)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
