"""Hierarchical proposal distribution over program transformations.

A move is drawn by first picking one of nine move kinds, then drawing the
kind's sub-choices (positions, opcode, operands).  Only the move-kind and
opcode categoricals are learnable; everything else is uniform.  Every move
carries the exact log-probability of the choices that produced it, so the
same number can be recomputed later (:func:`move_log_prob`) and
differentiated (:func:`grad_log_prob`).

Structurally impossible draws (deleting from an empty program, swapping in
a one-instruction program) are still returned as moves with
``impossible=True``; their probability mass is not redistributed.
"""
from __future__ import annotations

import bisect
import enum
import hashlib
import itertools
import json
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np

from .isa import (
    DEFAULT_TABLE,
    MAX_LEN,
    Instruction,
    OpcodeSpec,
    OpcodeTable,
    Operand,
    Program,
    valid_operands,
)

PARAMS_FORMAT_VERSION = 1
LOCAL_BLOCK = 4


class MoveKind(enum.IntEnum):
    ADD_NOP = 0
    DELETE = 1
    INSTRUCTION = 2
    OPCODE = 3
    OPCODE_WIDTH = 4
    OPERAND = 5
    LOCAL_SWAP = 6
    GLOBAL_SWAP = 7
    ROTATE = 8

    @property
    def label(self) -> str:
        return _LABELS[self]


_LABELS = {
    MoveKind.ADD_NOP: "AddNop",
    MoveKind.DELETE: "Delete",
    MoveKind.INSTRUCTION: "InstructionTransform",
    MoveKind.OPCODE: "OpcodeTransform",
    MoveKind.OPCODE_WIDTH: "OpcodeWidthTransform",
    MoveKind.OPERAND: "OperandTransform",
    MoveKind.LOCAL_SWAP: "LocalSwap",
    MoveKind.GLOBAL_SWAP: "GlobalSwap",
    MoveKind.ROTATE: "Rotate",
}
N_KINDS = len(MoveKind)


@dataclass(frozen=True)
class Move:
    """One sampled transformation.

    ``pos``/``pos_b`` are the kind's positions (``lo``/``hi`` for Rotate,
    the two swapped lines for the swaps).  ``instruction`` is the new line
    for InstructionTransform, ``opcode`` the new opcode for the two opcode
    moves, ``slot``/``operand`` the replaced operand.
    """

    kind: MoveKind
    log_prob: float
    pos: Optional[int] = None
    pos_b: Optional[int] = None
    slot: Optional[int] = None
    opcode: Optional[OpcodeSpec] = None
    operand: Optional[Operand] = None
    instruction: Optional[Instruction] = None
    impossible: bool = False

    @property
    def lo(self):
        return self.pos

    @property
    def hi(self):
        return self.pos_b

    def describe(self) -> str:
        parts = [self.kind.label]
        for name in ("pos", "pos_b", "slot"):
            v = getattr(self, name)
            if v is not None:
                parts.append(f"{name}={v}")
        if self.instruction is not None:
            parts.append(f"instr='{self.instruction}'")
        elif self.opcode is not None:
            parts.append(f"op={self.opcode.name}")
        if self.operand is not None:
            parts.append(f"operand={self.operand}")
        if self.impossible:
            parts.append("impossible")
        return " ".join(parts)

    def to_json(self) -> dict:
        d = {"kind": self.kind.label, "log_prob": self.log_prob}
        for name in ("pos", "pos_b", "slot"):
            if getattr(self, name) is not None:
                d[name] = getattr(self, name)
        if self.opcode is not None:
            d["opcode"] = self.opcode.name
        if self.operand is not None:
            d["operand"] = str(self.operand)
        if self.instruction is not None:
            d["instruction"] = self.instruction.to_json()
        if self.impossible:
            d["impossible"] = True
        return d


def probs_from_logits(logits: Sequence[float]) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 1 or z.size == 0:
        raise ValueError("logits must be a non-empty vector")
    if not np.all(np.isfinite(z)):
        raise ValueError("logits must be finite")
    e = np.exp(z - z.max())
    return e / e.sum()


def _log_softmax(z: np.ndarray) -> np.ndarray:
    m = z.max()
    return z - (m + math.log(float(np.exp(z - m).sum())))


class _Categorical:
    """Fixed categorical over ``items`` with cached cdf and log-probs."""

    __slots__ = ("items", "table_idx", "probs", "logp", "cdf", "where")

    def __init__(self, items, table_idx, logits):
        z = np.asarray(logits, dtype=np.float64)
        self.items = tuple(items)
        self.table_idx = np.asarray(table_idx, dtype=np.int64)
        self.probs = probs_from_logits(z)
        self.logp = _log_softmax(z).tolist()
        cdf = np.cumsum(self.probs).tolist()
        cdf[-1] = 1.0
        self.cdf = cdf
        self.where = {item: i for i, item in enumerate(self.items)}

    def sample(self, rng) -> int:
        return bisect.bisect_right(self.cdf, rng.random())


@dataclass(frozen=True, eq=False)
class ProposalParams:
    """Learnable logits over move kinds and opcodes (indexed like ``table``)."""

    move_logits: np.ndarray
    opcode_logits: np.ndarray
    table: OpcodeTable = DEFAULT_TABLE

    def __post_init__(self):
        ml = np.array(self.move_logits, dtype=np.float64)
        ol = np.array(self.opcode_logits, dtype=np.float64)
        if ml.shape != (N_KINDS,):
            raise ValueError(f"move_logits must have {N_KINDS} entries")
        if ol.shape != (len(self.table),):
            raise ValueError(f"opcode_logits must have {len(self.table)} entries")
        if not (np.all(np.isfinite(ml)) and np.all(np.isfinite(ol))):
            raise ValueError("logits must be finite")
        ml.setflags(write=False)
        ol.setflags(write=False)
        object.__setattr__(self, "move_logits", ml)
        object.__setattr__(self, "opcode_logits", ol)

    @classmethod
    def uniform(cls, table: OpcodeTable = DEFAULT_TABLE) -> "ProposalParams":
        return cls(np.zeros(N_KINDS), np.zeros(len(table)), table)

    def replace(self, move_logits=None, opcode_logits=None) -> "ProposalParams":
        return ProposalParams(
            self.move_logits if move_logits is None else move_logits,
            self.opcode_logits if opcode_logits is None else opcode_logits,
            self.table,
        )

    @cached_property
    def digest(self) -> str:
        h = hashlib.sha1(self.move_logits.tobytes())
        h.update(self.opcode_logits.tobytes())
        h.update(",".join(self.table.names()).encode())
        return h.hexdigest()

    @cached_property
    def kinds(self) -> _Categorical:
        return _Categorical(list(MoveKind), range(N_KINDS), self.move_logits)

    @property
    def move_probs(self) -> np.ndarray:
        return self.kinds.probs

    @cached_property
    def opcode_probs(self) -> np.ndarray:
        return probs_from_logits(self.opcode_logits)

    @cached_property
    def new_opcode(self) -> _Categorical:
        """Opcode draw for InstructionTransform (nop excluded)."""
        idx = [self.table.index[op.name] for op in self.table.non_nop]
        return _Categorical(self.table.non_nop, idx, self.opcode_logits[idx])

    def compatible(self, op: OpcodeSpec) -> _Categorical:
        cache = self.__dict__.setdefault("_compat_cache", {})
        sig = op.signature
        cat = cache.get(sig)
        if cat is None:
            members = self.table.compatible_with(op)
            idx = [self.table.index[m.name] for m in members]
            cat = cache[sig] = _Categorical(members, idx, self.opcode_logits[idx])
        return cat

    def to_json(self) -> dict:
        return {
            "format_version": PARAMS_FORMAT_VERSION,
            "move_kinds": [k.label for k in MoveKind],
            "move_logits": self.move_logits.tolist(),
            "opcode_names": self.table.names(),
            "opcode_logits": self.opcode_logits.tolist(),
        }

    @classmethod
    def from_json(cls, doc: dict, table: OpcodeTable = DEFAULT_TABLE) -> "ProposalParams":
        if doc.get("format_version") != PARAMS_FORMAT_VERSION:
            raise ValueError(f"unsupported params format {doc.get('format_version')!r}")
        if list(doc["opcode_names"]) != table.names():
            raise ValueError("params were saved for a different opcode table")
        return cls(doc["move_logits"], doc["opcode_logits"], table)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1))

    @classmethod
    def load(cls, path: str | Path, table: OpcodeTable = DEFAULT_TABLE) -> "ProposalParams":
        return cls.from_json(json.loads(Path(path).read_text()), table)


def _window(pos: int, n: int) -> list[int]:
    start = (pos // LOCAL_BLOCK) * LOCAL_BLOCK
    return [p for p in range(start, min(n, start + LOCAL_BLOCK)) if p != pos]


def _pair(rng, n: int) -> tuple[int, int]:
    a = rng.randrange(n)
    b = rng.randrange(n - 1)
    if b >= a:
        b += 1
    return (a, b) if a < b else (b, a)


def _log_pairs(n: int) -> float:
    return -math.log(n * (n - 1) // 2)


def sample_move(program: Program, params: ProposalParams, rng) -> Move:
    """Draw one move; ``rng`` is a ``random.Random``-like source."""
    kinds = params.kinds
    kind = MoveKind(kinds.sample(rng))
    lp = kinds.logp[kind]
    n = len(program)

    if kind is MoveKind.ADD_NOP:
        pos = rng.randrange(n + 1)
        return Move(kind, lp - math.log(n + 1), pos=pos, opcode=params.table.nop)

    if kind in (MoveKind.GLOBAL_SWAP, MoveKind.ROTATE):
        if n < 2:
            return Move(kind, lp, impossible=True)
        a, b = _pair(rng, n)
        return Move(kind, lp + _log_pairs(n), pos=a, pos_b=b)

    if n == 0:
        return Move(kind, lp, impossible=True)
    pos = rng.randrange(n)
    lp -= math.log(n)

    if kind is MoveKind.DELETE:
        return Move(kind, lp, pos=pos)

    if kind is MoveKind.LOCAL_SWAP:
        others = _window(pos, n)
        if not others:
            return Move(kind, lp, pos=pos, impossible=True)
        b = others[rng.randrange(len(others))]
        return Move(kind, lp - math.log(len(others)), pos=pos, pos_b=b)

    current = program[pos].opcode
    if kind is MoveKind.INSTRUCTION:
        cat = params.new_opcode
        k = cat.sample(rng)
        op = cat.items[k]
        lp += cat.logp[k]
        operands = []
        for slot in range(op.arity):
            choices = valid_operands(op, slot)
            operands.append(choices[rng.randrange(len(choices))])
            lp -= math.log(len(choices))
        return Move(kind, lp, pos=pos, instruction=Instruction(op, tuple(operands)))

    if kind is MoveKind.OPCODE:
        cat = params.compatible(current)
        k = cat.sample(rng)
        return Move(kind, lp + cat.logp[k], pos=pos, opcode=cat.items[k])

    if kind is MoveKind.OPCODE_WIDTH:
        variants = params.table.width_variants_of(current)
        op = variants[rng.randrange(len(variants))]
        return Move(kind, lp - math.log(len(variants)), pos=pos, opcode=op)

    # OPERAND
    if current.arity == 0:
        return Move(kind, lp, pos=pos, impossible=True)
    slot = rng.randrange(current.arity)
    lp -= math.log(current.arity)
    choices = valid_operands(current, slot)
    operand = choices[rng.randrange(len(choices))]
    return Move(kind, lp - math.log(len(choices)), pos=pos, slot=slot, operand=operand)


def _check(cond: bool, move: Move, why: str):
    if not cond:
        raise ValueError(f"move inconsistent with program ({why}): {move.describe()}")


def move_log_prob(program: Program, move: Move, params: ProposalParams) -> float:
    """Recompute the log-probability :func:`sample_move` assigns to ``move``."""
    kind = MoveKind(move.kind)
    lp = params.kinds.logp[kind]
    n = len(program)

    if kind is MoveKind.ADD_NOP:
        _check(move.pos is not None and 0 <= move.pos <= n, move, "insertion point")
        return lp - math.log(n + 1)

    if kind in (MoveKind.GLOBAL_SWAP, MoveKind.ROTATE):
        if n < 2:
            _check(move.impossible, move, "needs two instructions")
            return lp
        _check(not move.impossible and 0 <= move.pos < move.pos_b < n, move, "pair")
        return lp + _log_pairs(n)

    if n == 0:
        _check(move.impossible, move, "empty program")
        return lp
    _check(move.pos is not None and 0 <= move.pos < n, move, "position")
    lp -= math.log(n)

    if kind is MoveKind.DELETE:
        return lp

    if kind is MoveKind.LOCAL_SWAP:
        others = _window(move.pos, n)
        if not others:
            _check(move.impossible, move, "lone block member")
            return lp
        _check(move.pos_b in others, move, "block partner")
        return lp - math.log(len(others))

    current = program[move.pos].opcode
    if kind is MoveKind.INSTRUCTION:
        cat = params.new_opcode
        op = move.instruction.opcode
        _check(op in cat.where, move, "opcode")
        lp += cat.logp[cat.where[op]]
        for slot in range(op.arity):
            lp -= math.log(len(valid_operands(op, slot)))
        return lp

    if kind is MoveKind.OPCODE:
        cat = params.compatible(current)
        _check(move.opcode in cat.where, move, "compatible opcode")
        return lp + cat.logp[cat.where[move.opcode]]

    if kind is MoveKind.OPCODE_WIDTH:
        variants = params.table.width_variants_of(current)
        _check(move.opcode in variants, move, "width variant")
        return lp - math.log(len(variants))

    if current.arity == 0:
        _check(move.impossible, move, "no operand slot")
        return lp
    _check(move.slot is not None and 0 <= move.slot < current.arity, move, "slot")
    lp -= math.log(current.arity)
    choices = valid_operands(current, move.slot)
    _check(move.operand in choices, move, "operand")
    return lp - math.log(len(choices))


@dataclass(frozen=True)
class LogitGrad:
    move: np.ndarray
    opcode: np.ndarray

    def __add__(self, other: "LogitGrad") -> "LogitGrad":
        return LogitGrad(self.move + other.move, self.opcode + other.opcode)

    def __mul__(self, c: float) -> "LogitGrad":
        return LogitGrad(self.move * c, self.opcode * c)

    __rmul__ = __mul__

    def flat(self) -> np.ndarray:
        return np.concatenate([self.move, self.opcode])

    @classmethod
    def zeros(cls, params: ProposalParams) -> "LogitGrad":
        return cls(np.zeros(N_KINDS), np.zeros(len(params.table)))


def accumulate_grad(program: Program, move: Move, params: ProposalParams, out: LogitGrad, scale: float = 1.0) -> None:
    """Add ``scale * d log q(move) / d logits`` into ``out`` in place."""
    kind = MoveKind(move.kind)
    out.move[kind] += scale
    out.move[:] -= scale * params.kinds.probs
    if move.impossible or not program:
        return
    if kind is MoveKind.INSTRUCTION:
        cat = params.new_opcode
        op = move.instruction.opcode
    elif kind is MoveKind.OPCODE:
        cat = params.compatible(program[move.pos].opcode)
        op = move.opcode
    else:
        return
    out.opcode[cat.table_idx[cat.where[op]]] += scale
    np.subtract.at(out.opcode, cat.table_idx, scale * cat.probs)


def grad_log_prob(program: Program, move: Move, params: ProposalParams) -> LogitGrad:
    move_log_prob(program, move, params)  # validates consistency
    g = LogitGrad.zeros(params)
    accumulate_grad(program, move, params, g)
    return g


@dataclass(frozen=True)
class Applied:
    program: Program


@dataclass(frozen=True)
class Infeasible:
    reason: str


MoveOutcome = Applied | Infeasible


def apply_move(program: Program, move: Move, max_len: int = MAX_LEN) -> MoveOutcome:
    if move.impossible:
        return Infeasible(f"{move.kind.label} not possible on a {len(program)}-line program")
    ins = list(program.instructions)
    n = len(ins)
    kind = move.kind
    pos = move.pos
    if kind is MoveKind.ADD_NOP:
        if n >= max_len:
            return Infeasible("program at maximum length")
        if not 0 <= pos <= n:
            return Infeasible("insertion point out of range")
        ins.insert(pos, Instruction(move.opcode or DEFAULT_TABLE.nop))
        return Applied(Program(tuple(ins)))
    if pos is None or not 0 <= pos < n:
        return Infeasible("position out of range")
    if kind is MoveKind.DELETE:
        del ins[pos]
    elif kind is MoveKind.INSTRUCTION:
        ins[pos] = move.instruction
    elif kind in (MoveKind.OPCODE, MoveKind.OPCODE_WIDTH):
        if move.opcode.signature != ins[pos].opcode.signature:
            return Infeasible("opcode signature mismatch")
        ins[pos] = ins[pos].with_opcode(move.opcode)
    elif kind is MoveKind.OPERAND:
        if move.slot >= ins[pos].opcode.arity:
            return Infeasible("operand slot out of range")
        ins[pos] = ins[pos].with_operand(move.slot, move.operand)
    else:
        b = move.pos_b
        if b is None or not 0 <= b < n or b == pos:
            return Infeasible("second position out of range")
        if kind is MoveKind.ROTATE:
            lo, hi = pos, b
            if lo > hi:
                return Infeasible("rotate needs lo < hi")
            ins[lo:hi + 1] = [ins[hi]] + ins[lo:hi]
        else:
            ins[pos], ins[b] = ins[b], ins[pos]
    return Applied(Program(tuple(ins)))


def enumerate_moves(program: Program, params: ProposalParams) -> Iterator[Move]:
    """Every move :func:`sample_move` can return for ``program``, with log-probs.

    Built from the structure of each move kind rather than by sampling, so it
    serves as an independent check on the sampler's probability accounting.
    """
    table = params.table
    n = len(program)
    for kind in MoveKind:
        lk = params.kinds.logp[kind]
        if kind is MoveKind.ADD_NOP:
            for p in range(n + 1):
                yield Move(kind, lk - math.log(n + 1), pos=p, opcode=table.nop)
            continue
        if kind in (MoveKind.GLOBAL_SWAP, MoveKind.ROTATE):
            if n < 2:
                yield Move(kind, lk, impossible=True)
                continue
            for a in range(n):
                for b in range(a + 1, n):
                    yield Move(kind, lk - math.log(n * (n - 1) / 2), pos=a, pos_b=b)
            continue
        if n == 0:
            yield Move(kind, lk, impossible=True)
            continue
        for p in range(n):
            lp = lk - math.log(n)
            current = program[p].opcode
            if kind is MoveKind.DELETE:
                yield Move(kind, lp, pos=p)
            elif kind is MoveKind.LOCAL_SWAP:
                others = _window(p, n)
                if not others:
                    yield Move(kind, lp, pos=p, impossible=True)
                for b in others:
                    yield Move(kind, lp - math.log(len(others)), pos=p, pos_b=b)
            elif kind is MoveKind.INSTRUCTION:
                lz = params.opcode_logits
                non_nop = [table.index[o.name] for o in table.non_nop]
                norm = np.log(np.exp(lz[non_nop]).sum())
                for op in table.non_nop:
                    lop = lz[table.index[op.name]] - norm
                    slots = [valid_operands(op, s) for s in range(op.arity)]
                    for combo in itertools.product(*slots):
                        lo = -sum(math.log(len(s)) for s in slots)
                        yield Move(kind, lp + lop + lo, pos=p, instruction=Instruction(op, combo))
            elif kind is MoveKind.OPCODE:
                members = table.compatible_with(current)
                z = np.array([params.opcode_logits[table.index[m.name]] for m in members])
                norm = np.log(np.exp(z).sum())
                for m, zm in zip(members, z):
                    yield Move(kind, lp + zm - norm, pos=p, opcode=m)
            elif kind is MoveKind.OPCODE_WIDTH:
                variants = table.width_variants_of(current)
                for m in variants:
                    yield Move(kind, lp - math.log(len(variants)), pos=p, opcode=m)
            else:
                if current.arity == 0:
                    yield Move(kind, lp, pos=p, impossible=True)
                    continue
                for s in range(current.arity):
                    choices = valid_operands(current, s)
                    for c in choices:
                        yield Move(kind, lp - math.log(current.arity) - math.log(len(choices)), pos=p, slot=s, operand=c)

