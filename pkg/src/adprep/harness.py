"""Benchmark harness: run a policy over a task suite and score the results.

A suite is a directory of task bundle directories. Each episode writes an
optional JSONL log holding the task header, every turn, and a terminal
record that embeds the produced table, so a log can be re-scored later
without touching a model. Reports aggregate accuracy (exact-match rate),
completion (answered rate), and a wall-clock cost estimate.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .agent import (
    Task,
    Trajectory,
    run_episode,
    trajectory_from_json,
    trajectory_to_json,
)
from .reward import DEFAULT_WEIGHTS, RewardWeights, RuleJudge, score_trajectory
from .synthesis import SynthesisError, TaskBundle, read_bundle
from .tables import table_to_json

GPU_DOLLARS_PER_HOUR = 0.91


class HarnessError(Exception):
    pass


def compute_cost(wall_seconds: float, dollars_per_hour: float = GPU_DOLLARS_PER_HOUR) -> float:
    """Serving cost of holding the hardware for the given wall time."""
    return dollars_per_hour * wall_seconds / 3600.0


def compute_token_cost(usage: dict | None, prompt_per_1k: float, completion_per_1k: float) -> float:
    if not usage:
        return 0.0
    prompt = usage.get("prompt_tokens", 0)
    completion = usage.get("completion_tokens", 0)
    return prompt * prompt_per_1k / 1000.0 + completion * completion_per_1k / 1000.0


@dataclass
class CaseResult:
    task_id: str
    status: str
    outcome: float = 0.0
    partial: float = 0.0
    process: float = 0.0
    total: float = 0.0
    turns: int = 0
    protocol_errors: int = 0
    wall_time: float = 0.0
    usage: dict | None = None
    error: str | None = None

    def to_row(self) -> dict:
        return {
            "task_id": self.task_id,
            "status": self.status,
            "outcome": self.outcome,
            "partial": self.partial,
            "process": self.process,
            "total": self.total,
            "turns": self.turns,
            "protocol_errors": self.protocol_errors,
            "wall_time": self.wall_time,
            "usage": self.usage,
            "error": self.error,
        }


@dataclass
class Report:
    rows: list[CaseResult] = field(default_factory=list)
    note: str = ""
    dollars_per_hour: float = GPU_DOLLARS_PER_HOUR

    @property
    def n_tasks(self) -> int:
        return len(self.rows)

    @property
    def accuracy(self) -> float:
        """Percent of tasks whose answer matched the target exactly."""
        if not self.rows:
            return 0.0
        return 100.0 * sum(1 for r in self.rows if r.outcome == 1.0) / len(self.rows)

    @property
    def completion(self) -> float:
        """Percent of tasks that ended with an answer at all."""
        if not self.rows:
            return 0.0
        return 100.0 * sum(1 for r in self.rows if r.status == "answered") / len(self.rows)

    @property
    def wall_time_total(self) -> float:
        return sum(r.wall_time for r in self.rows)

    @property
    def cost(self) -> float:
        return compute_cost(self.wall_time_total, self.dollars_per_hour)

    @property
    def mean_cost(self) -> float:
        return self.cost / len(self.rows) if self.rows else 0.0

    @property
    def all_attempted(self) -> bool:
        """True when every row came from a real episode that ran to completion.

        Rows with a synthetic status (the bundle or log never loaded) or a
        recorded transport failure do not count as attempts.
        """
        skipped = ("load_error", "missing_log")
        return all(r.status not in skipped and not r.error for r in self.rows)

    def to_json(self) -> dict:
        rows = []
        for r in self.rows:
            row = r.to_row()
            row["cost"] = compute_cost(r.wall_time, self.dollars_per_hour)
            rows.append(row)
        return {
            "note": self.note,
            "n_tasks": self.n_tasks,
            "accuracy": self.accuracy,
            "completion": self.completion,
            "wall_time_total": self.wall_time_total,
            "cost": self.cost,
            "mean_cost": self.mean_cost,
            "dollars_per_hour": self.dollars_per_hour,
            "rows": rows,
        }

    def to_text(self) -> str:
        if not self.rows:
            return self.note or "no tasks"
        headers = ("task", "status", "out", "part", "proc", "total", "turns")
        lines = []
        for r in self.rows:
            lines.append((
                r.task_id,
                r.status,
                f"{r.outcome:.0f}",
                f"{r.partial:.2f}",
                f"{r.process:.2f}",
                f"{r.total:.2f}",
                str(r.turns),
            ))
        widths = [max(len(h), *(len(row[i]) for row in lines)) for i, h in enumerate(headers)]
        out = ["  ".join(h.ljust(widths[i]) for i, h in enumerate(headers))]
        for row in lines:
            out.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)))
        out.append(
            f"tasks: {self.n_tasks}  accuracy: {self.accuracy:.1f}%  "
            f"completion: {self.completion:.1f}%  wall: {self.wall_time_total:.2f}s  "
            f"cost: ${self.cost:.4f}  mean cost: ${self.mean_cost:.4f}"
        )
        if self.note:
            out.append(self.note)
        return "\n".join(out)


# ---------------------------------------------------------------------------
# episode logs
# ---------------------------------------------------------------------------

def write_trajectory_log(path: str | Path, traj: Trajectory, scores: dict | None = None) -> None:
    """One JSONL file per episode: header, turns, then the terminal record."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    records = [{"record": "task", "task_id": traj.task_id}]
    for turn in traj.turns:
        records.append({"record": "turn", **turn.to_json()})
    terminal = {
        "record": "result",
        "status": traj.status,
        "answer_path": traj.answer_path,
        "answer_plan": traj.answer_plan,
        "final_table": None if traj.final_table is None else table_to_json(traj.final_table),
        "wall_time": traj.wall_time,
        "protocol_error_count": traj.protocol_error_count,
        "usage": traj.usage,
        "error": traj.error,
    }
    if scores is not None:
        terminal["scores"] = scores
    records.append(terminal)
    path.write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in records))


def load_trajectory_log(path: str | Path) -> Trajectory:
    """Rebuild the trajectory (minus the search tree) from a JSONL log."""
    lines = [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
    if not lines or lines[0].get("record") != "task":
        raise HarnessError(f"{path}: not a trajectory log (no task header)")
    terminal = lines[-1]
    if terminal.get("record") != "result":
        raise HarnessError(f"{path}: log is truncated (no result record)")
    turns = [
        {k: v for k, v in line.items() if k != "record"}
        for line in lines[1:-1]
        if line.get("record") == "turn"
    ]
    data = {
        "task_id": lines[0]["task_id"],
        "status": terminal["status"],
        "turns": turns,
        "answer_path": terminal.get("answer_path"),
        "answer_plan": terminal.get("answer_plan"),
        "final_table": terminal.get("final_table"),
        "wall_time": terminal.get("wall_time", 0.0),
        "protocol_error_count": terminal.get("protocol_error_count", 0),
        "usage": terminal.get("usage"),
        "error": terminal.get("error"),
    }
    return trajectory_from_json(data)


# ---------------------------------------------------------------------------
# running and scoring
# ---------------------------------------------------------------------------

def _case_from_scores(bundle_id: str, traj: Trajectory, breakdown, weights) -> CaseResult:
    # a task only counts as solved when the episode actually finished with an
    # answer; this keeps accuracy <= completion even in degenerate cases like
    # an empty target table
    outcome = breakdown.outcome if traj.status == "answered" else 0.0
    total = breakdown.total
    if outcome != breakdown.outcome:
        total = (
            weights.alpha * outcome
            + weights.beta * breakdown.partial
            + weights.gamma * breakdown.process
        )
    return CaseResult(
        task_id=bundle_id,
        status=traj.status,
        outcome=outcome,
        partial=breakdown.partial,
        process=breakdown.process,
        total=total,
        turns=len([t for t in traj.turns if t.action in ("expand", "answer")]),
        protocol_errors=traj.protocol_error_count,
        wall_time=traj.wall_time,
        usage=traj.usage,
        error=traj.error,
    )


def score_case(
    bundle: TaskBundle,
    policy,
    *,
    weights: RewardWeights = DEFAULT_WEIGHTS,
    judge=None,
    max_turns: int = 5,
    sample_rows: int = 5,
    script_backend=None,
    log_path: str | Path | None = None,
) -> CaseResult:
    task = Task(bundle.task_id, bundle.sources, bundle.target_schema)
    traj = run_episode(
        task,
        policy,
        max_turns=max_turns,
        sample_rows=sample_rows,
        script_backend=script_backend,
    )
    breakdown = score_trajectory(traj, bundle.target_table, weights=weights, judge=judge)
    if log_path is not None:
        write_trajectory_log(log_path, traj, breakdown.to_json())
    return _case_from_scores(bundle.task_id, traj, breakdown, weights)


def gt_replay_policy(bundle: TaskBundle):
    """Scripted policy that replays the bundle's own ground-truth pipeline.

    Handy as a harness smoke test: accuracy should be 100% on any suite
    whose bundles verify.
    """
    from .agent import ScriptedPolicy
    from .operators import name_bearing_values, serialize_operator_call

    calls = [serialize_operator_call(op) for op in bundle.gt_pipeline]
    names = sorted({n for op in bundle.gt_pipeline for n in name_bearing_values(op)})
    plan_hint = ", ".join(names)
    expand = (
        f"<plan>replay the known fix touching {plan_hint}</plan>\n<expand>\nparent: root\n"
        + "\n".join(calls)
        + "\n</expand>"
    )
    answer = (
        "<plan>the rebuilt table matches the target schema</plan>\n<answer>\n"
        + " -> ".join(calls)
        + f"\ntarget: {bundle.target_schema.table_name}\n</answer>"
    )
    return ScriptedPolicy([expand, answer])


def discover_tasks(suite_dir: str | Path) -> list[Path]:
    """Task bundle directories under the suite, in name order."""
    root = Path(suite_dir)
    if not root.is_dir():
        raise HarnessError(f"{root}: suite directory does not exist")
    return sorted(
        (p for p in root.iterdir() if p.is_dir() and (p / "target_schema.json").exists()),
        key=lambda p: p.name,
    )


def run_benchmark(
    suite_dir: str | Path,
    policy_factory,
    *,
    weights: RewardWeights = DEFAULT_WEIGHTS,
    judge_factory=None,
    threads: int = 1,
    max_turns: int = 5,
    sample_rows: int = 5,
    script_backend=None,
    log_dir: str | Path | None = None,
) -> Report:
    """Score every task in the suite; thread count never changes the report.

    policy_factory is called once per task, with the loaded bundle, so each
    episode starts fresh. Bundles that fail to load still produce a row
    (status "load_error"). With log_dir set, each episode writes a JSONL
    trajectory log and the finished report lands there as report.json.
    """
    dirs = discover_tasks(suite_dir)
    if not dirs:
        return Report(note="no tasks")

    def run_one(task_dir: Path) -> CaseResult:
        try:
            bundle = read_bundle(task_dir)
        except Exception as exc:
            return CaseResult(
                task_id=task_dir.name,
                status="load_error",
                error=f"{type(exc).__name__}: {exc}",
            )
        try:
            policy = policy_factory(bundle)
        except Exception as exc:
            return CaseResult(
                task_id=bundle.task_id,
                status="load_error",
                error=f"policy: {exc}",
            )
        log_path = None if log_dir is None else Path(log_dir) / f"{bundle.task_id}.jsonl"
        return score_case(
            bundle,
            policy,
            weights=weights,
            judge=judge_factory() if judge_factory else None,
            max_turns=max_turns,
            sample_rows=sample_rows,
            script_backend=script_backend,
            log_path=log_path,
        )

    if threads <= 1:
        rows = [run_one(d) for d in dirs]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(run_one, dirs))
    rows.sort(key=lambda r: r.task_id)
    report = Report(rows=rows)
    if log_dir is not None:
        report_path = Path(log_dir) / "report.json"
        report_path.parent.mkdir(parents=True, exist_ok=True)
        report_path.write_text(json.dumps(report.to_json(), sort_keys=True, indent=2) + "\n")
    return report


def replay_suite(
    suite_dir: str | Path,
    log_dir: str | Path,
    *,
    weights: RewardWeights = DEFAULT_WEIGHTS,
    judge=None,
) -> Report:
    """Re-score logged episodes against the suite's targets, no model needed.

    Process scores are judged from the logged turns alone; the search tree
    is not part of the log, so a backtracking switch can score lower here
    than it did live.
    """
    rows = []
    for task_dir in discover_tasks(Path(suite_dir)):
        try:
            bundle = read_bundle(task_dir)
        except SynthesisError as exc:
            rows.append(CaseResult(task_id=task_dir.name, status="load_error", error=str(exc)))
            continue
        log_path = Path(log_dir) / f"{bundle.task_id}.jsonl"
        if not log_path.exists():
            rows.append(CaseResult(task_id=bundle.task_id, status="missing_log"))
            continue
        traj = load_trajectory_log(log_path)
        breakdown = score_trajectory(traj, bundle.target_table, weights=weights, judge=judge)
        rows.append(_case_from_scores(bundle.task_id, traj, breakdown, weights))
    rows.sort(key=lambda r: r.task_id)
    if not rows:
        return Report(note="no tasks")
    return Report(rows=rows)
