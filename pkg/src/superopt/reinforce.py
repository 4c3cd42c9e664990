"""Learn proposal logits by REINFORCE on the normalized best-cost loss."""
from __future__ import annotations

import csv
import io
import json
import logging
import random
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .cost import TestSuite
from .isa import Program
from .proposal import LogitGrad, ProposalParams, accumulate_grad
from .search import SearchConfig, SearchTrace, episode_loss, run_search

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.05
    batch_size: int = 16
    epochs: int = 30
    baseline_decay: float = 0.9
    eval_every: int = 1
    seed: int = 0
    batches_per_epoch: Optional[int] = None  # None: one pass over the (task, start) pairs
    eval_seeds: int = 5

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0 <= self.baseline_decay < 1:
            raise ValueError("baseline_decay must be in [0, 1)")

    def to_json(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_json(cls, d: dict) -> "TrainConfig":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


@dataclass
class TaskData:
    task_id: int
    name: str
    suite: TestSuite
    starts: list[Program]


@dataclass
class Dataset:
    train_tasks: list[TaskData]
    test_tasks: list[TaskData]

    def __post_init__(self):
        overlap = {t.task_id for t in self.train_tasks} & {t.task_id for t in self.test_tasks}
        if overlap:
            raise ValueError(f"train and test share tasks {sorted(overlap)}")


def sum_score(trace: SearchTrace, params: ProposalParams) -> LogitGrad:
    """Sum over steps of d log q(move_t | state_t) / d logits."""
    g = LogitGrad.zeros(params)
    for state, step in zip(trace.states, trace.steps):
        accumulate_grad(state, step.move, params, g)
    return g


def episode_gradient(
    trace: SearchTrace,
    baseline: float,
    params: ProposalParams,
    program_states: Optional[Sequence[Program]] = None,
) -> LogitGrad:
    """Score-function estimate of d(expected episode loss)/d logits.

    The acceptance coin does not depend on the logits given the move, so
    only move sampling contributes score terms.
    """
    if trace.params_digest != params.digest:
        raise ValueError("trace was not generated under these params (off-policy)")
    if program_states is not None and len(program_states) != len(trace.steps):
        raise ValueError("need one program state per step")
    loss = episode_loss(trace)
    if program_states is not None:
        trace = _with_states(trace, program_states)
    return sum_score(trace, params) * (loss - baseline)


def _with_states(trace: SearchTrace, states) -> SearchTrace:
    from dataclasses import replace

    return replace(trace, states=list(states))


def _episode(args) -> tuple[float, Optional[LogitGrad], bool]:
    suite, start, params, cfg, want_grad = args
    trace = run_search(suite, start, params, cfg)
    if trace.degenerate:
        return 0.0, None, True
    grad = sum_score(trace, params) if want_grad else None
    return trace.episode_loss, grad, False


def _map(fn, items, jobs: int):
    if jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items, chunksize=max(1, len(items) // (4 * jobs))))


def episode_seed(seed: int, task_id: int, start_idx: int) -> int:
    return (seed * 1_000_003 + task_id) * 1_009 + start_idx


@dataclass
class EvalResult:
    mean: float
    per_task: dict[int, float]
    degenerate: int = 0
    losses: list[tuple[int, int, int, float]] = field(default_factory=list)  # task, start, seed, loss


def evaluate(
    tasks: Sequence[TaskData],
    params: ProposalParams,
    scfg: SearchConfig,
    seeds: Sequence[int],
    jobs: int = 1,
) -> EvalResult:
    """Mean episode loss over tasks x starts x seeds; params are only read."""
    keys, items = [], []
    for task in tasks:
        for si, start in enumerate(task.starts):
            for s in seeds:
                keys.append((task.task_id, si, s))
                items.append((task.suite, start, params, scfg.with_seed(episode_seed(s, task.task_id, si)), False))
    results = _map(_episode, items, jobs)
    per_task: dict[int, list[float]] = {}
    losses = []
    degenerate = 0
    for (tid, si, s), (loss, _, deg) in zip(keys, results):
        degenerate += deg
        per_task.setdefault(tid, []).append(loss)
        losses.append((tid, si, s, loss))
    task_means = {tid: float(np.mean(v)) for tid, v in per_task.items()}
    mean = float(np.mean([l for *_, l in losses])) if losses else float("nan")
    return EvalResult(mean, task_means, degenerate, losses)


@dataclass
class TrainState:
    epoch: int
    params: ProposalParams
    baseline: Optional[float]
    rng_state: tuple

    def to_json(self) -> dict:
        version, internal, gauss = self.rng_state
        return {
            "format_version": 1,
            "epoch": self.epoch,
            "params": self.params.to_json(),
            "baseline": self.baseline,
            "rng_state": [version, list(internal), gauss],
        }

    @classmethod
    def from_json(cls, doc: dict, table) -> "TrainState":
        version, internal, gauss = doc["rng_state"]
        return cls(
            int(doc["epoch"]),
            ProposalParams.from_json(doc["params"], table),
            doc["baseline"],
            (version, tuple(internal), gauss),
        )


@dataclass
class TrainReport:
    history: list[tuple[int, str, float]] = field(default_factory=list)  # epoch, split, mean loss
    episodes: list[dict] = field(default_factory=list)
    params: Optional[ProposalParams] = None
    seeds: dict = field(default_factory=dict)

    def history_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# seeds: {json.dumps(self.seeds, sort_keys=True)}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "split", "mean_loss"])
        for epoch, split, loss in self.history:
            w.writerow([epoch, split, repr(loss)])
        return buf.getvalue()

    def episodes_csv(self) -> str:
        cols = ["epoch", "batch", "task_id", "start", "seed", "loss", "baseline"]
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for row in self.episodes:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
        return buf.getvalue()

    def write_history_csv(self, path: str | Path) -> None:
        Path(path).write_text(self.history_csv())

    def write_episodes_csv(self, path: str | Path) -> None:
        Path(path).write_text(self.episodes_csv())


def train(
    dataset: Dataset,
    init: ProposalParams,
    tcfg: TrainConfig,
    scfg: SearchConfig,
    jobs: int = 1,
    resume: Optional[TrainState] = None,
    on_epoch: Optional[Callable[[TrainState, TrainReport], None]] = None,
    stop_after: Optional[int] = None,
) -> TrainReport:
    """Plain SGD on the logits with a moving-average baseline.

    Fresh traces are drawn after every update.  Evaluation on both splits
    uses fixed seeds ``range(tcfg.eval_seeds)`` and never touches params.
    ``stop_after`` ends the run after that many epochs (resumable from the
    state handed to ``on_epoch``).
    """
    if not dataset.train_tasks or not any(t.starts for t in dataset.train_tasks):
        raise ValueError("dataset has no training starts")
    if resume is None:
        rng = random.Random(tcfg.seed)
        params, baseline, first_epoch = init, None, 0
    else:
        rng = random.Random()
        rng.setstate(resume.rng_state)
        params, baseline, first_epoch = resume.params, resume.baseline, resume.epoch

    tasks = [t for t in dataset.train_tasks if t.starts]
    n_pairs = sum(len(t.starts) for t in tasks)
    per_epoch = tcfg.batches_per_epoch or max(1, -(-n_pairs // tcfg.batch_size))
    eval_seeds = list(range(tcfg.eval_seeds))
    report = TrainReport(seeds={"train_seed": tcfg.seed, "eval_seeds": eval_seeds, "search_budget": scfg.budget_T})

    def run_eval(epoch: int):
        for split, split_tasks in (("train", dataset.train_tasks), ("test", dataset.test_tasks)):
            if split_tasks:
                res = evaluate(split_tasks, params, scfg, eval_seeds, jobs)
                report.history.append((epoch, split, res.mean))
                log.info("epoch %d %s mean loss %.4f", epoch, split, res.mean)

    if tcfg.eval_every and first_epoch == 0:
        run_eval(0)

    last = tcfg.epochs if stop_after is None else min(tcfg.epochs, first_epoch + stop_after)
    for epoch in range(first_epoch, last):
        for b in range(per_epoch):
            picks = []
            for _ in range(tcfg.batch_size):
                task = tasks[rng.randrange(len(tasks))]
                si = rng.randrange(len(task.starts))
                picks.append((task, si, rng.getrandbits(63)))
            items = [(t.suite, t.starts[si], params, scfg.with_seed(seed), True) for t, si, seed in picks]
            results = _map(_episode, items, jobs)

            acc = LogitGrad.zeros(params)
            used = 0
            for (task, si, seed), (loss, score, deg) in zip(picks, results):
                if deg:
                    continue
                if baseline is None:
                    baseline = loss
                acc = acc + score * (loss - baseline)
                report.episodes.append(
                    {"epoch": epoch + 1, "batch": b, "task_id": task.task_id, "start": si,
                     "seed": seed, "loss": loss, "baseline": baseline}
                )
                baseline = tcfg.baseline_decay * baseline + (1 - tcfg.baseline_decay) * loss
                used += 1
            if used == 0:
                log.warning("epoch %d batch %d: every episode degenerate, skipping update", epoch + 1, b)
                continue
            step = tcfg.learning_rate / used
            params = params.replace(
                params.move_logits - step * acc.move,
                params.opcode_logits - step * acc.opcode,
            )
        if tcfg.eval_every and (epoch + 1) % tcfg.eval_every == 0:
            run_eval(epoch + 1)
        if on_epoch is not None:
            on_epoch(TrainState(epoch + 1, params, baseline, rng.getstate()), report)

    report.params = params
    return report
