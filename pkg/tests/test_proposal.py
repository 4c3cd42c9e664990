import math
import random

import numpy as np
import pytest

from superopt.bruteforce import all_instructions
from superopt.isa import DEFAULT_TABLE, MAX_LEN, Imm, Instruction, Program, Reg, parse_program
from superopt.proposal import (
    Applied,
    Infeasible,
    Move,
    MoveKind,
    ProposalParams,
    apply_move,
    enumerate_moves,
    grad_log_prob,
    move_log_prob,
    probs_from_logits,
    sample_move,
)

T = DEFAULT_TABLE
UNIFORM = ProposalParams.uniform()
POOL = all_instructions(include_nop=True)
FIVE = parse_program("sub64 r1, 1; and64 r0, r1; not64 r2; mul32 r3, r0; or64 r0, 7")
TWENTY = [
    "nop", "mov64", "add64", "sub64", "and64", "or64", "xor64", "mul64", "shl64", "shr64",
    "sar64", "not64", "neg64", "mov32", "add32", "sub32", "and32", "or32", "xor32", "not32", "neg32",
]


def random_params(seed, table=T, scale=1.0):
    rng = np.random.default_rng(seed)
    return ProposalParams(rng.normal(0, scale, 9), rng.normal(0, scale, len(table)), table)


def test_probs_from_logits():
    np.testing.assert_allclose(probs_from_logits(np.zeros(9)), np.full(9, 1 / 9), rtol=0, atol=1e-15)
    np.testing.assert_allclose(probs_from_logits([math.log(2), 0]), [2 / 3, 1 / 3], rtol=0, atol=1e-15)
    with pytest.raises(ValueError):
        probs_from_logits([])


def test_every_categorical_normalized():
    p = random_params(0, scale=3.0)
    assert abs(p.move_probs.sum() - 1) < 1e-9
    assert abs(p.new_opcode.probs.sum() - 1) < 1e-9
    for op in T:
        assert abs(p.compatible(op).probs.sum() - 1) < 1e-9


def test_addnop_on_empty_program():
    rng = random.Random(0)
    for _ in range(200):
        m = sample_move(Program(), UNIFORM, rng)
        if m.kind is MoveKind.ADD_NOP:
            assert m.pos == 0
            assert m.log_prob == pytest.approx(math.log(1 / 9), abs=1e-15)


def test_kind_frequencies_match_categorical():
    rng = random.Random(11)
    n = 10**6
    counts = np.zeros(9)
    prog = parse_program("add64 r0, 1; and64 r0, r1")
    for _ in range(n):
        counts[sample_move(prog, UNIFORM, rng).kind] += 1
    sigma = math.sqrt(n * (1 / 9) * (8 / 9))
    assert np.all(np.abs(counts - n / 9) < 3 * sigma), counts


def test_instruction_transform_probability_twenty_opcodes():
    table = T.subset(TWENTY)
    params = ProposalParams.uniform(table)
    assert len(table.non_nop) == 20
    move = Move(MoveKind.INSTRUCTION, 0.0, pos=2, instruction=Instruction(table["add64"], (Reg(0), Imm(7))))
    # destination slots are register-only (4 choices); the source slot has 17
    expected = math.log((1 / 9) * (1 / 5) * (1 / 20) * (1 / 4) * (1 / 17))
    assert move_log_prob(FIVE, move, params) == pytest.approx(expected, abs=1e-12)


def test_instruction_transform_probability_shipped_table():
    move = Move(MoveKind.INSTRUCTION, 0.0, pos=0, instruction=Instruction(T["xor64"], (Reg(1), Reg(2))))
    n_ops = len(T.non_nop)
    assert n_ops == 36
    expected = math.log((1 / 9) * (1 / 5) * (1 / n_ops) * (1 / 4) * (1 / 17))
    assert move_log_prob(FIVE, move, UNIFORM) == pytest.approx(expected, abs=1e-12)


def test_rotate_probability():
    prog = parse_program("add64 r0, 1; and64 r0, r1; not64 r2; nop")
    move = Move(MoveKind.ROTATE, 0.0, pos=1, pos_b=3)
    assert move_log_prob(prog, move, UNIFORM) == pytest.approx(math.log(1 / 9 / 6), abs=1e-15)


def test_sampled_moves_replay():
    rng = random.Random(2)
    for i in range(3000):
        params = random_params(i % 7, scale=2.0)
        n = rng.randrange(0, 9)
        prog = Program(tuple(sample_instruction(rng) for _ in range(n)))
        m = sample_move(prog, params, rng)
        assert abs(move_log_prob(prog, m, params) - m.log_prob) <= 1e-12


def sample_instruction(rng):
    return POOL[rng.randrange(len(POOL))]


def test_inconsistent_move_rejected():
    with pytest.raises(ValueError):
        move_log_prob(Program(), Move(MoveKind.DELETE, 0.0, pos=0), UNIFORM)
    with pytest.raises(ValueError):
        move_log_prob(FIVE, Move(MoveKind.OPCODE, 0.0, pos=2, opcode=T["add64"]), UNIFORM)
    with pytest.raises(ValueError):
        move_log_prob(FIVE, Move(MoveKind.LOCAL_SWAP, 0.0, pos=0, pos_b=4), UNIFORM)


def test_impossible_moves_keep_their_mass():
    rng = random.Random(4)
    seen = set()
    for _ in range(500):
        m = sample_move(Program(), UNIFORM, rng)
        if m.kind is not MoveKind.ADD_NOP:
            assert m.impossible
            assert m.log_prob == pytest.approx(math.log(1 / 9))
            assert isinstance(apply_move(Program(), m), Infeasible)
            seen.add(m.kind)
    assert len(seen) == 8


def test_apply_examples():
    a, b, c = parse_program("add64 r0, 1; and64 r0, r1; not64 r2").instructions
    ab = Program((a, b))
    swap = Move(MoveKind.GLOBAL_SWAP, 0.0, pos=0, pos_b=1)
    ba = apply_move(ab, swap).program
    assert ba == Program((b, a))
    assert apply_move(ba, swap).program == ab
    rot = Move(MoveKind.ROTATE, 0.0, pos=0, pos_b=2)
    assert apply_move(Program((a, b, c)), rot).program == Program((c, a, b))
    assert isinstance(apply_move(Program(), Move(MoveKind.DELETE, 0.0, pos=0)), Infeasible)


def test_addnop_at_max_length_infeasible():
    full = Program((Instruction(T.nop),) * MAX_LEN)
    m = Move(MoveKind.ADD_NOP, 0.0, pos=0, opcode=T.nop)
    assert isinstance(apply_move(full, m), Infeasible)
    assert isinstance(apply_move(full, m, max_len=MAX_LEN + 1), Applied)


def test_involutions():
    prog = parse_program("add64 r0, 1; and64 r0, r1; not64 r2; mul32 r3, r0; or64 r0, 7; nop; xor64 r1, r1")
    n = len(prog)
    for a in range(n):
        for b in range(a + 1, n):
            g = Move(MoveKind.GLOBAL_SWAP, 0.0, pos=a, pos_b=b)
            assert apply_move(apply_move(prog, g).program, g).program == prog
            if a // 4 == b // 4:
                loc = Move(MoveKind.LOCAL_SWAP, 0.0, pos=a, pos_b=b)
                assert apply_move(apply_move(prog, loc).program, loc).program == prog
            rot = Move(MoveKind.ROTATE, 0.0, pos=a, pos_b=b)
            p = prog
            for k in range(b - a + 1):
                p = apply_move(p, rot).program
                assert (p == prog) == (k == b - a)


def test_local_swap_stays_in_window():
    prog = Program((Instruction(T.nop),) * 10)
    rng = random.Random(9)
    for _ in range(2000):
        m = sample_move(prog, UNIFORM, rng)
        if m.kind is MoveKind.LOCAL_SWAP:
            assert m.pos // 4 == m.pos_b // 4 and m.pos != m.pos_b


def test_mass_conservation_shipped_table():
    params = random_params(5)
    for prog in (Program(), parse_program("not64 r0"), parse_program("add64 r0, 1; popcnt32 r0, r1"),
                 parse_program("nop; nop; shl64 r1, 3; not64 r0; or32 r0, r1")):
        mass = np.zeros(9)
        for m in enumerate_moves(prog, params):
            mass[m.kind] += math.exp(move_log_prob(prog, m, params))
        np.testing.assert_allclose(mass, params.move_probs, rtol=0, atol=1e-9)


def test_grad_addnop_uniform():
    g = grad_log_prob(FIVE, Move(MoveKind.ADD_NOP, 0.0, pos=3, opcode=T.nop), UNIFORM)
    expect = -np.full(9, 1 / 9)
    expect[MoveKind.ADD_NOP] += 1
    np.testing.assert_allclose(g.move, expect, atol=1e-15)
    assert not g.opcode.any()


def fd_grad(prog, move, params, eps=1e-4):
    theta = np.concatenate([params.move_logits, params.opcode_logits])
    out = np.zeros_like(theta)
    for i in range(theta.size):
        hi, lo = theta.copy(), theta.copy()
        hi[i] += eps
        lo[i] -= eps
        f = lambda t: move_log_prob(prog, move, params.replace(t[:9], t[9:]))
        out[i] = (f(hi) - f(lo)) / (2 * eps)
    return out


def test_grad_matches_finite_differences():
    rng = random.Random(6)
    params = random_params(1)
    checked = set()
    while len(checked) < 9:
        m = sample_move(FIVE, params, rng)
        if m.kind in checked:
            continue
        checked.add(m.kind)
        g = grad_log_prob(FIVE, m, params)
        np.testing.assert_allclose(g.flat(), fd_grad(FIVE, m, params), rtol=0, atol=1e-6)
        assert abs(g.move.sum()) < 1e-12
        assert abs(g.opcode.sum()) < 1e-12


def test_opcode_transform_grad_confined_to_compatible_set():
    params = random_params(2)
    m = Move(MoveKind.OPCODE, 0.0, pos=2, opcode=T["neg32"])
    g = grad_log_prob(FIVE, m, params)
    members = {T.index[o.name] for o in T.compatible_with(T["not64"])}
    for i, v in enumerate(g.opcode):
        if i not in members:
            assert v == 0.0


def test_score_has_zero_mean():
    params = random_params(3)
    rng = random.Random(13)
    n = 10**5
    total = np.zeros(9 + len(T))
    sq = np.zeros_like(total)
    for _ in range(n):
        g = grad_log_prob(FIVE, sample_move(FIVE, params, rng), params).flat()
        total += g
        sq += g * g
    mean = total / n
    se = np.sqrt(np.maximum(sq / n - mean**2, 0) / n)
    live = se > 0
    assert np.all(np.abs(mean[live]) <= 3 * se[live])
    assert np.all(mean[~live] == 0)


def test_params_json(tmp_path):
    p = random_params(4)
    path = tmp_path / "p.json"
    p.save(path)
    q = ProposalParams.load(path)
    assert q.digest == p.digest
    with pytest.raises(ValueError):
        ProposalParams.from_json(p.to_json(), T.subset(TWENTY))
    with pytest.raises(ValueError):
        ProposalParams(np.zeros(8), np.zeros(len(T)))
