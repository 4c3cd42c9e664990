"""Cost of a rewrite: correctness on test cases plus summed latency."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

from . import kernels
from .isa import MAX_LEN, MAX_LEN_LONG, NUM_REGS, MachineState, Program, TestCase, latency_of


@dataclass(frozen=True)
class CostWeights:
    omega_e: float = 1.0
    omega_p: float = 0.04
    beta: float = 25.0

    def __post_init__(self):
        if self.omega_e < 0 or self.omega_p < 0:
            raise ValueError("cost weights must be nonnegative")
        if self.beta <= 0:
            raise ValueError("beta must be positive")

    def to_json(self) -> dict:
        return {"omega_e": self.omega_e, "omega_p": self.omega_p, "beta": self.beta}

    @classmethod
    def from_json(cls, d: dict) -> "CostWeights":
        return cls(**{k: float(d[k]) for k in ("omega_e", "omega_p", "beta") if k in d})


DEFAULT_WEIGHTS = CostWeights()


class TestSuite:
    """Input states and expected r0 values, stored as kernel-ready arrays.

    ``max_len`` is the program-length limit searches on this suite respect.
    """

    __test__ = False

    def __init__(self, inputs, expected, max_len: int = MAX_LEN):
        self.inputs = np.ascontiguousarray(inputs, dtype=np.uint64).reshape(-1, NUM_REGS)
        self.expected = np.ascontiguousarray(expected, dtype=np.uint64).reshape(-1)
        if len(self.inputs) == 0:
            raise ValueError("test suite must be non-empty")
        if len(self.inputs) != len(self.expected):
            raise ValueError("inputs and expected outputs differ in length")
        if not 0 < max_len <= MAX_LEN_LONG:
            raise ValueError(f"max_len must be in 1..{MAX_LEN_LONG}")
        self.max_len = max_len
        self.inputs.setflags(write=False)
        self.expected.setflags(write=False)

    @classmethod
    def from_cases(cls, cases: Sequence[TestCase], max_len: int = MAX_LEN) -> "TestSuite":
        return cls([c.input.regs for c in cases], [c.expected_out for c in cases], max_len)

    def __len__(self):
        return len(self.expected)

    @cached_property
    def cases(self) -> list[TestCase]:
        return [
            TestCase(MachineState(tuple(row)), int(exp))
            for row, exp in zip(self.inputs.tolist(), self.expected.tolist())
        ]

    def __eq__(self, other):
        return (
            isinstance(other, TestSuite)
            and self.max_len == other.max_len
            and np.array_equal(self.inputs, other.inputs)
            and np.array_equal(self.expected, other.expected)
        )

    def to_json(self) -> dict:
        return {
            "format_version": 1,
            "output_register": 0,
            "max_len": self.max_len,
            "cases": [
                {"regs": row, "expected": exp}
                for row, exp in zip(self.inputs.tolist(), self.expected.tolist())
            ],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "TestSuite":
        cases = doc["cases"]
        return cls(
            [c["regs"] for c in cases],
            [c["expected"] for c in cases],
            int(doc.get("max_len", MAX_LEN)),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path: str | Path) -> "TestSuite":
        return cls.from_json(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class CostValue:
    eq_term: float
    perf_term: float
    total: float

    def to_json(self) -> dict:
        return {"eq": self.eq_term, "perf": self.perf_term, "total": self.total}


def hamming_total(rewrite: Program, suite: TestSuite) -> int:
    return int(kernels.suite_hamming(rewrite.code, suite.inputs, suite.expected))


def eq_cost(rewrite: Program, suite: TestSuite) -> float:
    """Mean Hamming distance (in bits) between r0 and the expected output."""
    return hamming_total(rewrite, suite) / len(suite)


def perf_cost(rewrite: Program) -> float:
    return float(latency_of(rewrite))


def total_cost(rewrite: Program, suite: TestSuite, w: CostWeights = DEFAULT_WEIGHTS) -> CostValue:
    eq = eq_cost(rewrite, suite)
    perf = perf_cost(rewrite)
    return CostValue(eq, perf, w.omega_e * eq + w.omega_p * perf)


def acceptance_ratio(cost_current: CostValue, cost_proposed: CostValue, w: CostWeights = DEFAULT_WEIGHTS) -> float:
    # Metropolis: the normalizer of exp(-cost) cancels in the ratio.
    delta = cost_current.total - cost_proposed.total
    if delta >= 0:
        return 1.0
    return math.exp(w.beta * delta)
