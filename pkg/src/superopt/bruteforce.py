"""Exhaustive search over all programs of at most two instructions."""
from __future__ import annotations

import itertools

import numpy as np

from . import kernels
from .cost import DEFAULT_WEIGHTS, CostValue, CostWeights, TestSuite, total_cost
from .isa import DEFAULT_TABLE, OUTPUT_REG, Instruction, OpcodeTable, Program, valid_operands


def all_instructions(table: OpcodeTable = DEFAULT_TABLE, include_nop: bool = False) -> list[Instruction]:
    out = []
    for op in table:
        if op is table.nop and not include_nop:
            continue
        slots = [valid_operands(op, s) for s in range(op.arity)]
        out.extend(Instruction(op, combo) for combo in itertools.product(*slots))
    return out


def brute_force_optimum(
    suite: TestSuite,
    weights: CostWeights = DEFAULT_WEIGHTS,
    table: OpcodeTable = DEFAULT_TABLE,
) -> tuple[CostValue, Program]:
    """Cheapest program of length <= 2 on ``suite``.

    Exact despite pruning: first instructions leaving identical machine
    states on every case are interchangeable, so only the cheapest of each
    class is extended, and a second instruction that does not write r0 can
    only add latency.  Nops are skipped for the same reason.
    """
    singles = all_instructions(table)
    n = len(suite)

    best_prog = Program()
    best = total_cost(best_prog, suite, weights)

    classes: dict[bytes, tuple[int, Instruction, np.ndarray]] = {}
    for ins in singles:
        p = Program((ins,))
        c = total_cost(p, suite, weights)
        if c.total < best.total:
            best, best_prog = c, p
        states = kernels.suite_states(p.code, suite.inputs)
        key = states.tobytes()
        lat = ins.opcode.latency
        if key not in classes or lat < classes[key][0]:
            classes[key] = (lat, ins, states)

    writers = [i for i in singles if i.opcode.arity and i.operands[0].index == OUTPUT_REG]
    for lat1, first, states in classes.values():
        for second in writers:
            perf = lat1 + second.opcode.latency
            # eq term cannot be negative: skip pairs whose latency alone loses
            if weights.omega_p * perf >= best.total:
                continue
            ham = kernels.suite_hamming(np.asarray([second.code], dtype=np.int64), states, suite.expected)
            eq = ham / n
            total = weights.omega_e * eq + weights.omega_p * perf
            if total < best.total:
                best_prog = Program((first, second))
                best = total_cost(best_prog, suite, weights)
    return best, best_prog
