"""Toy straight-line register ISA: opcode table, programs, interpreter.

Four 64-bit registers r0..r3.  r0 is the observed output, r1 holds the
primary input ``x``, r2 the secondary input ``y`` and r3 doubles as the
flag register tested by the conditional-move opcodes.  32-bit opcodes read
the low halves of their operands and zero the high half of the destination.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Iterable, Iterator, Sequence, Union

import numpy as np

from . import kernels

NUM_REGS = 4
MAX_LEN = 16
# hard ceiling; long-form tasks raise their own limit up to this
MAX_LEN_LONG = 24
FLAG_REG = 3
OUTPUT_REG = 0
MASK64 = (1 << 64) - 1
IMM_POOL = (-1, 0, 1, 2, 3, 7, 8, 15, 16, 31, 32, 63, 64)

REG_ONLY = "RegOnly"
REG_OR_IMM = "RegOrImm"
OPERAND_KINDS = (REG_ONLY, REG_OR_IMM)

# Order fixes the integer semantics codes understood by the kernels.
SEMANTICS = (
    "nop", "mov", "add", "sub", "and", "or", "xor", "mul", "mulhu",
    "shl", "shr", "sar", "not", "neg", "popcnt", "lzcnt", "tzcnt",
    "cmovz", "cmovnz",
)
SEM_CODE = {name: i for i, name in enumerate(SEMANTICS)}
UNARY_SEMANTICS = frozenset({"not", "neg"})

SRC_NONE, SRC_REG, SRC_IMM = 0, 1, 2


@dataclass(frozen=True)
class Reg:
    index: int

    def __post_init__(self):
        if not 0 <= self.index < NUM_REGS:
            raise ValueError(f"register index out of range: {self.index}")

    def __str__(self):
        return f"r{self.index}"


@dataclass(frozen=True)
class Imm:
    value: int

    def __post_init__(self):
        if self.value not in IMM_POOL:
            raise ValueError(f"immediate {self.value} not in the immediate pool")

    def __str__(self):
        return str(self.value)


Operand = Union[Reg, Imm]

REGISTERS = tuple(Reg(i) for i in range(NUM_REGS))
IMMEDIATES = tuple(Imm(v) for v in IMM_POOL)


@dataclass(frozen=True)
class OpcodeSpec:
    name: str
    semantics_id: str
    arity: int
    operand_kinds: tuple[str, ...]
    width_group: str
    width_bits: int
    latency: int

    def __post_init__(self):
        if self.semantics_id not in SEM_CODE:
            raise ValueError(f"unknown semantics {self.semantics_id!r}")
        if len(self.operand_kinds) != self.arity or not 0 <= self.arity <= 2:
            raise ValueError(f"{self.name}: arity/operand_kinds mismatch")
        if any(k not in OPERAND_KINDS for k in self.operand_kinds):
            raise ValueError(f"{self.name}: bad operand kind")
        if self.arity and self.operand_kinds[0] != REG_ONLY:
            raise ValueError(f"{self.name}: destination slot must be RegOnly")
        if self.width_bits not in (32, 64):
            raise ValueError(f"{self.name}: width must be 32 or 64")
        if self.latency < 1:
            raise ValueError(f"{self.name}: latency must be >= 1")

    # Tables are keyed by name; hashing the name keeps program hashing cheap.
    def __hash__(self):
        return hash(self.name)

    @property
    def signature(self) -> tuple[int, tuple[str, ...]]:
        return (self.arity, self.operand_kinds)

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "semantics_id": self.semantics_id,
            "arity": self.arity,
            "operand_kinds": list(self.operand_kinds),
            "width_group": self.width_group,
            "width_bits": self.width_bits,
            "latency": self.latency,
        }

    @classmethod
    def from_json(cls, d: dict) -> "OpcodeSpec":
        return cls(
            name=d["name"],
            semantics_id=d["semantics_id"],
            arity=int(d["arity"]),
            operand_kinds=tuple(d["operand_kinds"]),
            width_group=d["width_group"],
            width_bits=int(d["width_bits"]),
            latency=int(d["latency"]),
        )


class OpcodeTable:
    """An ordered, validated collection of opcodes.

    The order matters: proposal parameters index opcode logits by position
    in the table.
    """

    def __init__(self, opcodes: Iterable[OpcodeSpec]):
        self.opcodes: tuple[OpcodeSpec, ...] = tuple(opcodes)
        self.by_name = {op.name: op for op in self.opcodes}
        if len(self.by_name) != len(self.opcodes):
            raise ValueError("duplicate opcode names")
        self.index = {op.name: i for i, op in enumerate(self.opcodes)}
        nops = [op for op in self.opcodes if op.name == "nop"]
        if len(nops) != 1 or nops[0].arity != 0 or nops[0].latency != 1:
            raise ValueError("table needs exactly one nop with arity 0 and latency 1")
        self.nop = nops[0]

        groups: dict[str, list[OpcodeSpec]] = {}
        sigs: dict[tuple, list[OpcodeSpec]] = {}
        for op in self.opcodes:
            groups.setdefault(op.width_group, []).append(op)
            sigs.setdefault(op.signature, []).append(op)
        for name, members in groups.items():
            if len({m.signature for m in members}) != 1:
                raise ValueError(f"width group {name!r} mixes signatures")
        self._groups = {k: tuple(v) for k, v in groups.items()}
        self._sigs = {k: tuple(v) for k, v in sigs.items()}
        self.non_nop = tuple(op for op in self.opcodes if op is not self.nop)

    def __len__(self):
        return len(self.opcodes)

    def __iter__(self) -> Iterator[OpcodeSpec]:
        return iter(self.opcodes)

    def __getitem__(self, name: str) -> OpcodeSpec:
        return self.by_name[name]

    def __contains__(self, op) -> bool:
        return self.by_name.get(getattr(op, "name", None)) == op

    def names(self) -> list[str]:
        return [op.name for op in self.opcodes]

    def compatible_with(self, op: OpcodeSpec) -> tuple[OpcodeSpec, ...]:
        return self._sigs[op.signature]

    def width_variants_of(self, op: OpcodeSpec) -> tuple[OpcodeSpec, ...]:
        return self._groups[op.width_group]

    def subset(self, names: Sequence[str]) -> "OpcodeTable":
        return OpcodeTable(self.by_name[n] for n in names)

    def to_json(self) -> dict:
        return {
            "format_version": 1,
            "flag_register": FLAG_REG,
            "opcodes": [op.to_json() for op in self.opcodes],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "OpcodeTable":
        return cls(OpcodeSpec.from_json(d) for d in doc["opcodes"])

    @classmethod
    def load(cls, path: str | Path | None = None) -> "OpcodeTable":
        if path is None:
            text = resources.files(__package__).joinpath("opcodes.json").read_text()
        else:
            text = Path(path).read_text()
        return cls.from_json(json.loads(text))


DEFAULT_TABLE = OpcodeTable.load()


def valid_operands(op: OpcodeSpec, slot: int) -> tuple[Operand, ...]:
    if not 0 <= slot < op.arity:
        raise IndexError(f"{op.name} has no operand slot {slot}")
    if op.operand_kinds[slot] == REG_ONLY:
        return REGISTERS
    return REGISTERS + IMMEDIATES


def opcodes_compatible_with(op: OpcodeSpec, table: OpcodeTable = DEFAULT_TABLE):
    return list(table.compatible_with(op))


def width_variants_of(op: OpcodeSpec, table: OpcodeTable = DEFAULT_TABLE):
    return list(table.width_variants_of(op))


@dataclass(frozen=True)
class Instruction:
    opcode: OpcodeSpec
    operands: tuple[Operand, ...] = ()

    def __post_init__(self):
        if not isinstance(self.operands, tuple):
            object.__setattr__(self, "operands", tuple(self.operands))
        if len(self.operands) != self.opcode.arity:
            raise ValueError(f"{self.opcode.name} takes {self.opcode.arity} operands")
        for kind, operand in zip(self.opcode.operand_kinds, self.operands):
            if isinstance(operand, Reg):
                continue
            if not (isinstance(operand, Imm) and kind == REG_OR_IMM):
                raise ValueError(f"{self.opcode.name}: operand {operand!r} not allowed in a {kind} slot")

    @cached_property
    def code(self) -> tuple[int, int, int, int, int]:
        """Kernel encoding: (semantics, is32, dst, src kind, src value)."""
        op = self.opcode
        dst = self.operands[0].index if op.arity else 0
        if op.arity == 2:
            src = self.operands[1]
            kind, val = (SRC_REG, src.index) if isinstance(src, Reg) else (SRC_IMM, src.value)
        else:
            kind, val = SRC_NONE, 0
        return (SEM_CODE[op.semantics_id], int(op.width_bits == 32), dst, kind, val)

    def with_opcode(self, op: OpcodeSpec) -> "Instruction":
        return Instruction(op, self.operands)

    def with_operand(self, slot: int, operand: Operand) -> "Instruction":
        ops = list(self.operands)
        ops[slot] = operand
        return Instruction(self.opcode, tuple(ops))

    def __str__(self):
        if not self.operands:
            return self.opcode.name
        return f"{self.opcode.name} " + ", ".join(str(o) for o in self.operands)

    def to_json(self) -> dict:
        args = [{"reg": o.index} if isinstance(o, Reg) else {"imm": o.value} for o in self.operands]
        return {"op": self.opcode.name, "args": args}


@dataclass(frozen=True)
class Program:
    instructions: tuple[Instruction, ...] = ()

    def __post_init__(self):
        if not isinstance(self.instructions, tuple):
            object.__setattr__(self, "instructions", tuple(self.instructions))
        if len(self.instructions) > MAX_LEN_LONG:
            raise ValueError(f"program longer than {MAX_LEN_LONG} instructions")

    def __len__(self):
        return len(self.instructions)

    def __iter__(self):
        return iter(self.instructions)

    def __getitem__(self, i):
        return self.instructions[i]

    def __str__(self):
        return "; ".join(str(i) for i in self.instructions)

    @cached_property
    def code(self) -> np.ndarray:
        if not self.instructions:
            return np.zeros((0, 5), dtype=np.int64)
        return np.array([ins.code for ins in self.instructions], dtype=np.int64)

    def strip_nops(self) -> "Program":
        return Program(tuple(i for i in self.instructions if i.opcode.semantics_id != "nop"))

    def to_json(self) -> list:
        return [ins.to_json() for ins in self.instructions]

    @classmethod
    def from_json(cls, doc: list, table: OpcodeTable = DEFAULT_TABLE) -> "Program":
        out = []
        for item in doc:
            args = []
            for a in item["args"]:
                args.append(Reg(int(a["reg"])) if "reg" in a else Imm(int(a["imm"])))
            out.append(Instruction(table[item["op"]], tuple(args)))
        return cls(tuple(out))


@dataclass(frozen=True)
class MachineState:
    regs: tuple[int, ...] = (0,) * NUM_REGS

    def __post_init__(self):
        regs = tuple(int(r) & MASK64 for r in self.regs)
        if len(regs) != NUM_REGS:
            raise ValueError(f"machine state needs {NUM_REGS} registers")
        object.__setattr__(self, "regs", regs)

    def __getitem__(self, i: int) -> int:
        return self.regs[i]


@dataclass(frozen=True)
class TestCase:
    input: MachineState
    expected_out: int

    __test__ = False  # keep pytest from collecting this


_OPERAND_RE = re.compile(r"^r(\d)$")


def parse_program(text: str, table: OpcodeTable = DEFAULT_TABLE) -> Program:
    """Parse ``"sub64 r1, 1; and64 r0, r1"`` (``;`` or newlines separate)."""
    instrs = []
    for line in re.split(r"[;\n]", text):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        name, _, rest = line.partition(" ")
        args: list[Operand] = []
        for tok in filter(None, (t.strip() for t in rest.split(","))):
            m = _OPERAND_RE.match(tok)
            args.append(Reg(int(m.group(1))) if m else Imm(int(tok, 0)))
        instrs.append(Instruction(table[name], tuple(args)))
    return Program(tuple(instrs))


def execute(program: Program, state: MachineState) -> MachineState:
    return MachineState(tuple(kernels.run_program(program.code, state.regs)))


def latency_of(program: Program) -> int:
    return sum(ins.opcode.latency for ins in program.instructions)
