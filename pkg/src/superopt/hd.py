"""The 25 Hacker's Delight tasks: oracles, reference programs, suites, starts.

Oracles are plain Python integer functions, written independently of the
ISA programs they check.  Inputs follow the register convention of
:mod:`superopt.isa`: r0 = r1 = x, r2 = y (0 for one-input tasks) and r3 the
task's extra constant (0 unless the task needs one).
"""
from __future__ import annotations

import random
from dataclasses import dataclass, replace
from typing import Callable

from .cost import TestSuite, eq_cost
from .isa import MASK64, MAX_LEN, MAX_LEN_LONG, MachineState, Program, parse_program
from .proposal import ProposalParams
from .search import SearchConfig, run_search

M = MASK64
SIGN = 1 << 63


def _signed(v: int) -> int:
    return v - (1 << 64) if v & SIGN else v


def _tz(x: int) -> int:
    return (x & -x).bit_length() - 1


def _lowest_zero(x: int) -> int:
    k = 0
    while (x >> k) & 1:
        k += 1
    return k


def _nlz(x: int) -> int:
    return 64 - x.bit_length()


FIELD_MASK = 0x00000F0F000000F3
FIELD_SHIFT = 16
CYCLE_A, CYCLE_B, CYCLE_C = 7, 63, 0x00000000DEADBEEF


def _swap_fields(x, y, z):
    m, k = z, FIELD_SHIFT
    hi_field = (x >> k) & m
    lo_field = ((x & m) << k) & M
    return (x & ~(m | (m << k)) & M) | hi_field | lo_field


def _snoob(x, y, z):
    # word-arithmetic formula with a true division
    s = x & (-x & M)
    r = (x + s) & M
    ones = x ^ r
    ones = (ones >> 2) // s if s else 0
    return r | ones


def _cycle(x, y, z):
    a, b, c = CYCLE_A, CYCLE_B, z
    mask_c = M if x == c else 0
    mask_a = M if x == a else 0
    return (mask_c & (a ^ c)) ^ (mask_a & (b ^ c)) ^ c


def _round_up_pow2(x, y, z):
    if x == 0 or x > SIGN:
        return 0
    return 1 << (x - 1).bit_length()


@dataclass(frozen=True)
class TaskSpec:
    id: int
    name: str
    fn: Callable[[int, int, int], int]
    reference_text: str
    input_arity: int = 1
    max_len: int = MAX_LEN
    extra: int = 0
    special_inputs: tuple[int, ...] = ()

    def oracle(self, state: MachineState) -> int:
        return self.fn(state[1], state[2], state[3]) & M

    @property
    def reference_program(self) -> Program:
        return parse_program(self.reference_text)

    def make_input(self, x: int, y: int = 0) -> tuple[int, int, int, int]:
        x &= M
        y = (y & M) if self.input_arity == 2 else 0
        return (x, x, y, self.extra)


_ROUND = "; ".join("mov64 r2, r0; shr64 r2, {k}; or64 r0, r2".format(k=k) for k in (1, 2))
_ROUND4 = "mov64 r2, r0; shr64 r2, 2; shr64 r2, 2; or64 r0, r2"
_ROUND_HI = "; ".join("mov64 r2, r0; shr64 r2, {k}; or64 r0, r2".format(k=k) for k in (8, 16, 32))
_PAR = "; ".join("mov64 r2, r1; shr64 r2, {k}; xor64 r1, r2".format(k=k) for k in (32, 16, 8))
_PAR_LO = "; ".join("mov64 r2, r1; shr64 r2, {k}; xor64 r1, r2".format(k=k) for k in (2, 1))

TASKS: tuple[TaskSpec, ...] = (
    TaskSpec(1, "Turn off right-most one bit", lambda x, y, z: x & (x - 1),
             "sub64 r1, 1; and64 r0, r1"),
    TaskSpec(2, "Test whether an unsigned integer is of the form 2^(n-1)",
             lambda x, y, z: int(x + 1 == 1 << (x + 1).bit_length() - 1),
             "add64 r0, 1; and64 r0, r1; mov64 r2, r0; not64 r2; sub64 r0, 1; and64 r0, r2; shr64 r0, 63"),
    TaskSpec(3, "Isolate the right-most one bit", lambda x, y, z: 0 if x == 0 else 1 << _tz(x),
             "neg64 r1; and64 r0, r1"),
    TaskSpec(4, "Form a mask that identifies right-most one bit and trailing zeros",
             lambda x, y, z: M if x == 0 else (1 << (_tz(x) + 1)) - 1,
             "sub64 r1, 1; xor64 r0, r1"),
    TaskSpec(5, "Right propagate right-most one bit",
             lambda x, y, z: M if x == 0 else x | ((1 << _tz(x)) - 1),
             "sub64 r1, 1; or64 r0, r1"),
    TaskSpec(6, "Turn on the right-most zero bit in a word",
             lambda x, y, z: x | ((1 << _lowest_zero(x)) & M),
             "add64 r1, 1; or64 r0, r1"),
    TaskSpec(7, "Isolate the right-most zero bit",
             lambda x, y, z: (1 << _lowest_zero(x)) & M,
             "not64 r0; add64 r1, 1; and64 r0, r1"),
    TaskSpec(8, "Form a mask that identifies trailing zeros",
             lambda x, y, z: M if x == 0 else (1 << _tz(x)) - 1,
             "not64 r0; sub64 r1, 1; and64 r0, r1"),
    TaskSpec(9, "Absolute value function", lambda x, y, z: abs(_signed(x)),
             "mov64 r3, r1; sar64 r3, 63; xor64 r0, r3; sub64 r0, r3"),
    TaskSpec(10, "Test if the number of leading zeros of two words are the same",
             lambda x, y, z: int(_nlz(x) == _nlz(y)),
             "mov64 r3, r1; and64 r3, r2; xor64 r1, r2; "
             "mov64 r0, r3; sub64 r0, r1; mov64 r2, r3; xor64 r2, r1; not64 r2; and64 r0, r2; "
             "mov64 r2, r3; not64 r2; and64 r2, r1; or64 r0, r2; shr64 r0, 63; xor64 r0, 1",
             input_arity=2),
    TaskSpec(11, "Test if the number of leading zeros of a word is strictly less than of another work",
             lambda x, y, z: int(_nlz(x) < _nlz(y)),
             "mov64 r3, r2; not64 r3; and64 r3, r1; "
             "mov64 r0, r2; sub64 r0, r3; mov64 r1, r2; xor64 r1, r3; not64 r1; and64 r0, r1; "
             "mov64 r1, r2; not64 r1; and64 r1, r3; or64 r0, r1; shr64 r0, 63",
             input_arity=2),
    TaskSpec(12, "Test if the number of leading zeros of a word is less than of another work",
             lambda x, y, z: int(_nlz(x) <= _nlz(y)),
             "mov64 r3, r1; not64 r3; and64 r3, r2; "
             "mov64 r0, r1; sub64 r0, r3; mov64 r2, r1; xor64 r2, r3; not64 r2; and64 r0, r2; "
             "mov64 r2, r1; not64 r2; and64 r2, r3; or64 r0, r2; shr64 r0, 63; xor64 r0, 1",
             input_arity=2),
    TaskSpec(13, "Sign Function", lambda x, y, z: (_signed(x) > 0) - (_signed(x) < 0),
             "mov64 r3, r1; sar64 r3, 63; neg64 r0; shr64 r0, 63; or64 r0, r3"),
    TaskSpec(14, "Floor of average of two integers without overflowing", lambda x, y, z: (x + y) >> 1,
             "and64 r0, r2; xor64 r1, r2; shr64 r1, 1; add64 r0, r1", input_arity=2),
    TaskSpec(15, "Ceil of average of two integers without overflowing", lambda x, y, z: (x + y + 1) >> 1,
             "or64 r0, r2; xor64 r1, r2; shr64 r1, 1; sub64 r0, r1", input_arity=2),
    TaskSpec(16, "Compute max of two integers", lambda x, y, z: max(_signed(x), _signed(y)),
             "mov64 r3, r1; sub64 r3, r2; mov64 r0, r3; xor64 r0, r1; xor64 r1, r2; and64 r0, r1; "
             "xor64 r3, r0; shr64 r3, 63; xor64 r1, r2; mov64 r0, r1; cmovnz64 r0, r2",
             input_arity=2),
    TaskSpec(17, "Turn off the right-most contiguous string of one bits",
             lambda x, y, z: 0 if x == 0 else x & ~(((1 << _lowest_zero(x >> _tz(x))) - 1) << _tz(x)),
             "mov64 r3, r1; sub64 r3, 1; or64 r3, r1; add64 r3, 1; and64 r0, r3"),
    TaskSpec(18, "Determine if an integer is a power of two", lambda x, y, z: int(x.bit_count() == 1),
             "mov64 r3, r1; sub64 r3, 1; and64 r0, r3; mov64 r2, r0; not64 r2; sub64 r0, 1; and64 r0, r2; "
             "shr64 r0, 63; mov64 r2, r1; not64 r2; and64 r2, r3; shr64 r2, 63; xor64 r2, 1; and64 r0, r2"),
    TaskSpec(19, "Exchanging two fields of the same integer according to some input", _swap_fields,
             "mov64 r2, r1; shr64 r2, 16; xor64 r2, r1; and64 r2, r3; xor64 r0, r2; shl64 r2, 16; xor64 r0, r2",
             extra=FIELD_MASK),
    TaskSpec(20, "Next higher unsigned number with same number of one bits", _snoob,
             "mov64 r3, r1; neg64 r3; and64 r3, r1; add64 r0, r3; mov64 r2, r0; xor64 r2, r1; shr64 r2, 2; "
             "tzcnt64 r3, r1; shr64 r2, r3; or64 r0, r2"),
    TaskSpec(21, "Cycling through 3 values", _cycle,
             "mov64 r0, r3; mov64 r2, r3; mov64 r3, r1; xor64 r3, 7; cmovz64 r0, 63; "
             "mov64 r3, r1; xor64 r3, r2; cmovz64 r0, 7",
             extra=CYCLE_C, special_inputs=(CYCLE_A, CYCLE_B, CYCLE_C)),
    TaskSpec(22, "Compute parity", lambda x, y, z: x.bit_count() & 1,
             _PAR + "; mov64 r2, r1; shr64 r2, 2; shr64 r2, 2; xor64 r1, r2; " + _PAR_LO
             + "; and64 r1, 1; mov64 r0, r1",
             max_len=MAX_LEN_LONG),
    TaskSpec(23, "Counting number of bits", lambda x, y, z: x.bit_count(),
             "popcnt32 r0, r1; mov64 r2, r1; shr64 r2, 32; popcnt32 r2, r2; add64 r0, r2",
             max_len=MAX_LEN_LONG),
    TaskSpec(24, "Round up to next highest power of two", _round_up_pow2,
             "sub64 r0, 1; " + _ROUND + "; " + _ROUND4 + "; " + _ROUND_HI + "; add64 r0, 1",
             max_len=MAX_LEN_LONG),
    TaskSpec(25, "Compute higher order half of product of x and y", lambda x, y, z: (x * y) >> 64,
             "mulhu64 r0, r2", input_arity=2, max_len=MAX_LEN_LONG),
)
TASKS_BY_ID = {t.id: t for t in TASKS}
DEFAULT_TRAIN_IDS = tuple(range(1, 18))
DEFAULT_TEST_IDS = tuple(range(18, 26))

STRUCTURED_X = (
    0, 1, 2, 3, 7, 12, 1 << 7, 1 << 32, SIGN, M, SIGN - 1,
    0x5555555555555555, 0xAAAAAAAAAAAAAAAA, 0x00000000FFFFFFFF,
    0x0F0F0F0F0F0F0F0F, 0x0123456789ABCDEF,
)
N_STRUCTURED = len(STRUCTURED_X)


# Task 1 padded with redundant work; a short search should shrink it back to
# two instructions.
TASK1_UNOPTIMIZED = parse_program(
    "mov64 r2, r1; sub64 r1, 1; nop; and64 r0, r1; xor64 r3, r3; or64 r0, r0"
)

UNOPTIMIZED_STARTS: dict[int, Program] = {1: TASK1_UNOPTIMIZED}


def default_start(task: TaskSpec) -> Program:
    return UNOPTIMIZED_STARTS.get(task.id, task.reference_program)


def get_task(task_id: int) -> TaskSpec:
    return TASKS_BY_ID[task_id]


def _structured_pairs(task: TaskSpec) -> list[tuple[int, int]]:
    xs = list(task.special_inputs) + [x for x in STRUCTURED_X if x not in task.special_inputs]
    xs = xs[:N_STRUCTURED]
    pairs = []
    for i, x in enumerate(xs):
        y = x if i % 5 == 4 else STRUCTURED_X[(3 * i + 1) % N_STRUCTURED]
        pairs.append((x, y))
    return pairs


def _random_word(rng: random.Random) -> int:
    w = rng.getrandbits(64)
    if rng.random() < 0.5:
        w >>= rng.randrange(64)
    return w


def random_inputs(task: TaskSpec, n: int, rng: random.Random) -> list[tuple[int, int, int, int]]:
    rows = []
    for _ in range(n):
        if task.special_inputs and rng.random() < 0.75:
            x = rng.choice(task.special_inputs)
        else:
            x = _random_word(rng)
        rows.append(task.make_input(x, _random_word(rng)))
    return rows


def make_suite(task: TaskSpec, n_random: int = 16, seed: int = 0) -> TestSuite:
    """16 structured cases followed by ``n_random`` seeded random cases."""
    if n_random < 0:
        raise ValueError("n_random must be >= 0")
    rows = [task.make_input(x, y) for x, y in _structured_pairs(task)]
    rng = random.Random(seed * 1_000_003 + task.id)
    rows += random_inputs(task, n_random, rng)
    expected = [task.fn(r[1], r[2], r[3]) & M for r in rows]
    return TestSuite(rows, expected, task.max_len)


def reference_mismatches(task: TaskSpec, n: int = 10_000, seed: int = 12345) -> int:
    from . import kernels

    suite = make_suite(task, n, seed)
    out = kernels.suite_outputs(task.reference_program.code, suite.inputs)
    return int((out != suite.expected).sum())


@dataclass
class StartSet:
    task_id: int
    starts: list[Program]
    shortfall: bool = False


def generate_starts(
    task: TaskSpec,
    params: ProposalParams,
    count: int,
    scfg: SearchConfig = SearchConfig(budget_T=200),
    max_runs: int = 40,
    verify_cases: int = 1000,
) -> StartSet:
    """Diversify starting points by searching with the performance term off.

    Every accepted chain state that is correct on the task suite and on a
    fresh verification suite is harvested; nop-stripped duplicates are
    dropped.  The reference program is always the first start.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    ref = task.reference_program
    suite = make_suite(task, 16, scfg.seed)
    check = make_suite(task, verify_cases, scfg.seed + 7919)
    weights = replace(scfg.weights, omega_p=0.0)
    seen = {ref.strip_nops()}
    pool: list[Program] = []
    target = 4 * (count - 1)
    runs = 0
    while count > 1 and len(pool) < target and runs < max_runs:
        cfg = SearchConfig(scfg.budget_T, weights, scfg.seed * 10_007 + task.id * 101 + runs)
        trace = run_search(suite, ref, params, cfg)
        runs += 1
        visited = trace.states[1:] + [trace.final_program]
        for step, prog in zip(trace.steps, visited):
            if not (step.accepted and step.proposed_cost.eq_term == 0.0):
                continue
            key = prog.strip_nops()
            if key in seen:
                continue
            seen.add(key)
            if eq_cost(prog, check) == 0.0:
                pool.append(prog)
    rng = random.Random(scfg.seed * 31 + task.id)
    picked = sorted(rng.sample(range(len(pool)), min(count - 1, len(pool))))
    starts = [ref] + [pool[i] for i in picked]
    return StartSet(task.id, starts, shortfall=len(starts) < count)
