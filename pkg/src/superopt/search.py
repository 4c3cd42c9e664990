"""Metropolis search over rewrites, recording the full stochastic trace."""
from __future__ import annotations

import csv
import io
import json
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .cost import DEFAULT_WEIGHTS, CostValue, CostWeights, TestSuite, acceptance_ratio, total_cost
from .isa import Program
from .proposal import Applied, Move, ProposalParams, apply_move, sample_move

DEFAULT_BUDGET = 400


@dataclass(frozen=True)
class SearchConfig:
    budget_T: int = DEFAULT_BUDGET
    weights: CostWeights = DEFAULT_WEIGHTS
    seed: int = 0

    def __post_init__(self):
        if self.budget_T < 1:
            raise ValueError("budget_T must be >= 1")

    def with_seed(self, seed: int) -> "SearchConfig":
        return SearchConfig(self.budget_T, self.weights, seed)

    def to_json(self) -> dict:
        return {"budget_T": self.budget_T, "weights": self.weights.to_json(), "seed": self.seed}

    @classmethod
    def from_json(cls, d: dict) -> "SearchConfig":
        return cls(
            int(d.get("budget_T", DEFAULT_BUDGET)),
            CostWeights.from_json(d.get("weights", {})),
            int(d.get("seed", 0)),
        )


@dataclass(frozen=True)
class StepRecord:
    move: Move
    log_prob: float
    proposed_cost: Optional[CostValue]
    alpha: float
    accepted: bool
    feasible: bool
    best_total: float


@dataclass
class SearchTrace:
    initial_program: Program
    initial_cost: CostValue
    steps: list[StepRecord]
    states: list[Program]  # chain state each move was sampled from
    best_program: Program
    best_cost: CostValue
    final_program: Program
    params_digest: str
    seed: int

    @property
    def degenerate(self) -> bool:
        return self.initial_cost.total <= 0.0

    @property
    def episode_loss(self) -> float:
        """Best/initial cost ratio; 0.0 for a degenerate (zero-cost) start."""
        if self.degenerate:
            return 0.0
        return self.best_cost.total / self.initial_cost.total

    def to_json(self) -> dict:
        return {
            "format_version": 1,
            "seed": self.seed,
            "params_digest": self.params_digest,
            "initial_program": self.initial_program.to_json(),
            "initial_cost": self.initial_cost.to_json(),
            "best_program": self.best_program.to_json(),
            "best_cost": self.best_cost.to_json(),
            "episode_loss": self.episode_loss,
            "degenerate": self.degenerate,
            "steps": [
                {
                    "t": t,
                    "move": s.move.to_json(),
                    "alpha": s.alpha,
                    "accepted": s.accepted,
                    "feasible": s.feasible,
                    "proposed_cost": None if s.proposed_cost is None else s.proposed_cost.to_json(),
                    "best_total": s.best_total,
                }
                for t, s in enumerate(self.steps, start=1)
            ],
        }


CSV_COLUMNS = ("t", "kind", "alpha", "accepted", "proposed_total", "best_total")


def format_trace_csv(trace: SearchTrace) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for t, s in enumerate(trace.steps, start=1):
        proposed = "" if s.proposed_cost is None else repr(s.proposed_cost.total)
        w.writerow([t, s.move.kind.label, repr(s.alpha), int(s.accepted), proposed, repr(s.best_total)])
    return buf.getvalue()


def format_trace_json(trace: SearchTrace) -> str:
    return json.dumps(trace.to_json(), indent=1, sort_keys=True) + "\n"


def write_trace_csv(trace: SearchTrace, path: str | Path) -> None:
    Path(path).write_text(format_trace_csv(trace))


def write_trace_json(trace: SearchTrace, path: str | Path) -> None:
    Path(path).write_text(format_trace_json(trace))


def run_search(
    reference_suite: TestSuite,
    start: Program,
    params: ProposalParams,
    cfg: SearchConfig = SearchConfig(),
) -> SearchTrace:
    """Run ``cfg.budget_T`` Metropolis steps from ``start``.

    Infeasible proposals consume a step and are recorded as rejected with
    alpha 0.  The best program is tracked over chain states only (accepted
    proposals plus the start).
    """
    rng = random.Random(cfg.seed)
    w = cfg.weights
    max_len = reference_suite.max_len
    memo: dict[bytes, CostValue] = {}

    def cost_of(p: Program) -> CostValue:
        key = p.code.tobytes()
        c = memo.get(key)
        if c is None:
            c = memo[key] = total_cost(p, reference_suite, w)
        return c

    current = start
    cur_cost = cost_of(start)
    best, best_cost = start, cur_cost
    steps: list[StepRecord] = []
    states: list[Program] = []

    for _ in range(cfg.budget_T):
        states.append(current)
        move = sample_move(current, params, rng)
        outcome = apply_move(current, move, max_len)
        if not isinstance(outcome, Applied):
            steps.append(StepRecord(move, move.log_prob, None, 0.0, False, False, best_cost.total))
            continue
        proposal = outcome.program
        prop_cost = cost_of(proposal)
        alpha = acceptance_ratio(cur_cost, prop_cost, w)
        accepted = alpha >= 1.0 or rng.random() < alpha
        if accepted:
            current, cur_cost = proposal, prop_cost
            if prop_cost.total < best_cost.total:
                best, best_cost = proposal, prop_cost
        steps.append(StepRecord(move, move.log_prob, prop_cost, alpha, accepted, True, best_cost.total))

    return SearchTrace(start, cost_of(start), steps, states, best, best_cost, current, params.digest, cfg.seed)


def episode_loss(trace: SearchTrace) -> float:
    if trace.degenerate:
        raise ValueError("degenerate episode: initial cost is zero")
    return trace.best_cost.total / trace.initial_cost.total
