"""Pure-Python interpreter kernels (fallback when the extension is absent).

Instruction encoding is ``(semantics, is32, dst, src_kind, src_value)``;
see :mod:`superopt.isa` for the semantics codes.
"""
import numpy as np

M64 = (1 << 64) - 1
M32 = (1 << 32) - 1
FLAG_REG = 3


def _sar(a, c, bits):
    if a >> (bits - 1):
        a -= 1 << bits
    return (a >> c) & ((1 << bits) - 1)


def _lz(a, bits):
    return bits - a.bit_length()


def _tz(a, bits):
    return bits if a == 0 else (a & -a).bit_length() - 1


def _make_table():
    ops = {}
    for is32, bits, mask in ((0, 64, M64), (1, 32, M32)):
        sh = bits - 1
        ops[0, is32] = None  # nop
        ops[1, is32] = lambda d, s, f, m=mask: s & m
        ops[2, is32] = lambda d, s, f, m=mask: (d + s) & m
        ops[3, is32] = lambda d, s, f, m=mask: (d - s) & m
        ops[4, is32] = lambda d, s, f: d & s
        ops[5, is32] = lambda d, s, f, m=mask: (d | s) & m
        ops[6, is32] = lambda d, s, f, m=mask: (d ^ s) & m
        ops[7, is32] = lambda d, s, f, m=mask: (d * s) & m
        ops[8, is32] = lambda d, s, f, b=bits: (d * s) >> b
        ops[9, is32] = lambda d, s, f, m=mask, k=sh: (d << (s & k)) & m
        ops[10, is32] = lambda d, s, f, k=sh: d >> (s & k)
        ops[11, is32] = lambda d, s, f, k=sh, b=bits: _sar(d, s & k, b)
        ops[12, is32] = lambda d, s, f, m=mask: ~d & m
        ops[13, is32] = lambda d, s, f, m=mask: -d & m
        ops[14, is32] = lambda d, s, f: s.bit_count()
        ops[15, is32] = lambda d, s, f, b=bits: _lz(s, b)
        ops[16, is32] = lambda d, s, f, b=bits: _tz(s, b)
        ops[17, is32] = lambda d, s, f: s if f == 0 else d
        ops[18, is32] = lambda d, s, f: s if f != 0 else d
    return ops


_OPS = _make_table()


def _compile(code):
    out = []
    for sem, is32, dst, kind, val in code.tolist() if hasattr(code, "tolist") else code:
        if sem == 0:
            continue
        out.append((_OPS[sem, is32], is32, dst, kind, val & M64 if kind == 2 else val))
    return out


def _run(prog, regs):
    for fn, is32, dst, kind, val in prog:
        if kind == 1:
            s = regs[val]
        elif kind == 2:
            s = val
        else:
            s = 0
        d = regs[dst]
        f = regs[FLAG_REG]
        if is32:
            d &= M32
            s &= M32
            f &= M32
        regs[dst] = fn(d, s, f)
    return regs


def run_program(code, regs):
    return _run(_compile(code), [int(r) & M64 for r in regs])


def suite_states(code, inputs):
    prog = _compile(code)
    rows = [_run(prog, row) for row in np.asarray(inputs, dtype=np.uint64).tolist()]
    return np.array(rows, dtype=np.uint64).reshape(-1, 4)


def suite_outputs(code, inputs):
    prog = _compile(code)
    outs = [_run(prog, row)[0] for row in np.asarray(inputs, dtype=np.uint64).tolist()]
    return np.array(outs, dtype=np.uint64)


def suite_hamming(code, inputs, expected):
    prog = _compile(code)
    total = 0
    for row, exp in zip(np.asarray(inputs, dtype=np.uint64).tolist(), np.asarray(expected, dtype=np.uint64).tolist()):
        total += (_run(prog, row)[0] ^ exp).bit_count()
    return total
