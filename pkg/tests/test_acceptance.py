"""Acceptance suite: one PASS/FAIL line per criterion (see the summary section).

Tolerances are pinned constants below; slow criteria carry the ``slow``
marker so ``pytest -m "not slow"`` gives a quick run.
"""
import json
import math
import random
import time
from pathlib import Path

import numpy as np
import onestep
import pytest

from superopt.bruteforce import all_instructions, brute_force_optimum
from superopt.cli import main
from superopt.cost import CostWeights, TestSuite, total_cost
from superopt.hd import (
    DEFAULT_TEST_IDS,
    DEFAULT_TRAIN_IDS,
    TASK1_UNOPTIMIZED,
    TASKS,
    generate_starts,
    get_task,
    make_suite,
    reference_mismatches,
)
from superopt.isa import DEFAULT_TABLE, Instruction, Program, Reg, parse_program, valid_operands
from superopt.proposal import (
    Move,
    MoveKind,
    ProposalParams,
    apply_move,
    enumerate_moves,
    move_log_prob,
    sample_move,
)
from superopt.reinforce import Dataset, TaskData, TrainConfig, episode_gradient, evaluate, train
from superopt.search import SearchConfig, run_search

ORACLE_INPUTS = 10_000
ORACLE_SECONDS = 30.0
MASS_TOL = 1e-9
ROUND_TRIPS = 100_000
ROUND_TRIP_TOL = 1e-12
GRAD_TOL = 1e-6
GRAD_EPS = 1e-4
MC_EPISODES = 100_000
MC_SIGMAS = 3.0
GRAD_SECONDS = 120.0
METROPOLIS_STEPS = 100_000
METROPOLIS_REL_TOL = 0.02
SEARCH_SEEDS = 100
SEARCH_MIN_HITS = 80
SEARCH_BUDGET = 400
SEARCH_SECONDS = 300.0
TRAIN_STARTS = 5
TRAIN_BUDGET = 200
TRAIN_EPOCHS = 30
EVAL_SEEDS = 20
TEST_MIN_GAIN = 0.05
TRAIN_MIN_GAIN = 0.10
TRAIN_SECONDS = 7200.0


def random_params(seed, table):
    rng = np.random.default_rng(seed)
    return ProposalParams(rng.normal(0, 1, 9), rng.normal(0, 1, len(table)), table)


def tree(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_criterion_1_references_match_oracles(criterion):
    t0 = time.perf_counter()
    bad = {t.id: reference_mismatches(t, ORACLE_INPUTS, seed=20_000 + t.id) for t in TASKS}
    elapsed = time.perf_counter() - t0
    wrong = {k: v for k, v in bad.items() if v}
    criterion(1, not wrong and elapsed < ORACLE_SECONDS,
              f"{len(TASKS)} tasks x {ORACLE_INPUTS} inputs, mismatches {wrong or 0}, {elapsed:.1f}s")


@pytest.mark.slow
def test_criterion_2_mass_conservation(criterion):
    table = DEFAULT_TABLE.subset(["nop", "add64", "add32"])
    params = random_params(2, table)
    ins = all_instructions(table, include_nop=True)
    programs = [Program()] + [Program((a,)) for a in ins] + [Program((a, b)) for a in ins for b in ins]
    worst = 0.0
    for prog in programs:
        mass = [0.0] * 9
        for m in enumerate_moves(prog, params):
            mass[m.kind] += math.exp(move_log_prob(prog, m, params))
        worst = max(worst, float(np.max(np.abs(np.array(mass) - params.move_probs))))
    criterion(2, worst <= MASS_TOL,
              f"{len(programs)} programs of length <= 2, worst per-kind mass error {worst:.2e} (tol {MASS_TOL:g})")


def test_criterion_3_log_prob_round_trip(criterion):
    rng_np = np.random.default_rng(3)
    rng = random.Random(3)
    pool = all_instructions(include_nop=True)
    param_sets = [random_params(s, DEFAULT_TABLE) for s in range(10)] + [ProposalParams.uniform()]
    worst = 0.0
    for i in range(ROUND_TRIPS):
        params = param_sets[i % len(param_sets)]
        n = int(rng_np.integers(0, 17))
        prog = Program(tuple(pool[rng.randrange(len(pool))] for _ in range(n)))
        m = sample_move(prog, params, rng)
        worst = max(worst, abs(move_log_prob(prog, m, params) - m.log_prob))
    criterion(3, worst <= ROUND_TRIP_TOL, f"{ROUND_TRIPS} moves, worst |delta log q| {worst:.1e}")


def test_criterion_4_non_symmetry_witness(criterion):
    t = DEFAULT_TABLE
    u = ProposalParams.uniform()
    r = parse_program("not64 r0")
    r_star = parse_program("add64 r0, r1")
    fwd = Instruction(t["add64"], (Reg(0), Reg(1)))
    rev = Instruction(t["not64"], (Reg(0),))
    m_fwd = Move(MoveKind.INSTRUCTION, 0.0, pos=0, instruction=fwd)
    m_rev = Move(MoveKind.INSTRUCTION, 0.0, pos=0, instruction=rev)
    assert apply_move(r, m_fwd).program == r_star and apply_move(r_star, m_rev).program == r
    q_fwd = math.exp(move_log_prob(r, m_fwd, u))
    q_rev = math.exp(move_log_prob(r_star, m_rev, u))
    n_ops = len(t.non_nop)
    n_operands = len(valid_operands(t["add64"], 1))
    analytic = (
        abs(q_fwd - (1 / 9) * (1 / n_ops) * (1 / 4) * (1 / n_operands)) < 1e-15
        and abs(q_rev - (1 / 9) * (1 / n_ops) * (1 / 4)) < 1e-15
    )
    ratio = q_rev / q_fwd
    criterion(4, analytic and abs(ratio - n_operands) < 1e-9 * n_operands,
              f"q(R*->R)/q(R->R*) = {ratio:.12f}, n_operands = {n_operands}")


@pytest.mark.slow
def test_criterion_5_reinforce_gradient(criterion):
    t0 = time.perf_counter()
    params = onestep.params(5)
    baseline = 0.9
    exact, moves, losses = onestep.exact_gradient(params, baseline)
    fd = onestep.fd_gradient(params, moves, losses, GRAD_EPS)
    fd_err = float(np.max(np.abs(exact - fd)))

    cfg = SearchConfig(1)
    gs = np.empty((MC_EPISODES, exact.size))
    for s in range(MC_EPISODES):
        tr = run_search(onestep.SUITE, onestep.START, params, cfg.with_seed(s))
        gs[s] = episode_gradient(tr, baseline, params).flat()
    mean = gs.mean(axis=0)
    se = gs.std(axis=0, ddof=1) / math.sqrt(MC_EPISODES)
    live = se > 0
    z = np.abs(mean[live] - exact[live]) / se[live]
    frozen_ok = bool(np.all(np.abs(mean[~live] - exact[~live]) <= 1e-12))
    elapsed = time.perf_counter() - t0
    ok = fd_err <= GRAD_TOL and np.all(z <= MC_SIGMAS) and frozen_ok and elapsed < GRAD_SECONDS
    criterion(5, ok, f"|E[g] - FD| = {fd_err:.1e} (tol {GRAD_TOL:g}); MC max z = {z.max():.2f} over "
                     f"{MC_EPISODES} episodes; {len(moves)} enumerated moves; {elapsed:.0f}s")


def test_criterion_6_metropolis_two_state(criterion):
    rows = [(x, x, 0, 0) for x in (0xFFFF_FFFF, 5, 1 << 40, 3)]
    suite = TestSuite(rows, [(r[0] + r[1]) & (2**64 - 1) for r in rows])
    a, b = parse_program("add64 r0, r1"), parse_program("add32 r0, r1")
    ca, cb = total_cost(a, suite).total, total_cost(b, suite).total
    beta = 1.0 / (cb - ca)  # beta * delta = 1
    z = np.full(9, -1000.0)
    z[MoveKind.OPCODE_WIDTH] = 0.0
    params = ProposalParams.uniform().replace(move_logits=z)
    tr = run_search(suite, a, params, SearchConfig(METROPOLIS_STEPS, CostWeights(beta=beta), seed=6))
    states = tr.states[1:] + [tr.final_program]
    f_a = sum(s == a for s in states) / len(states)
    pa = 1 / (1 + math.exp(-beta * (cb - ca)))
    rel = max(abs(f_a - pa) / pa, abs((1 - f_a) - (1 - pa)) / (1 - pa))
    criterion(6, rel <= METROPOLIS_REL_TOL,
              f"visit freq {f_a:.4f}/{1 - f_a:.4f} vs Boltzmann {pa:.4f}/{1 - pa:.4f}, worst rel err {rel:.2%}")


@pytest.mark.slow
def test_criterion_7_search_effectiveness(criterion):
    t0 = time.perf_counter()
    suite = make_suite(get_task(1))
    opt, opt_prog = brute_force_optimum(suite)
    u = ProposalParams.uniform()
    hits = 0
    for seed in range(SEARCH_SEEDS):
        tr = run_search(suite, TASK1_UNOPTIMIZED, u, SearchConfig(SEARCH_BUDGET, seed=seed))
        hits += abs(tr.best_cost.total - opt.total) <= 1e-12
    elapsed = time.perf_counter() - t0
    criterion(7, hits >= SEARCH_MIN_HITS and elapsed < SEARCH_SECONDS,
              f"{hits}/{SEARCH_SEEDS} seeds reach the brute-force optimum {opt.total:g} ({opt_prog}); {elapsed:.0f}s")


@pytest.mark.slow
def test_criterion_8_learned_proposal_beats_uniform(criterion):
    t0 = time.perf_counter()
    u = ProposalParams.uniform()
    scfg = SearchConfig(TRAIN_BUDGET)
    data = {}
    for task in TASKS:
        ss = generate_starts(task, u, TRAIN_STARTS, SearchConfig(TRAIN_BUDGET, seed=0))
        data[task.id] = TaskData(task.id, task.name, make_suite(task), ss.starts)
    short = [t for t in DEFAULT_TRAIN_IDS if len(data[t].starts) < TRAIN_STARTS]
    ds = Dataset([data[i] for i in DEFAULT_TRAIN_IDS], [data[i] for i in DEFAULT_TEST_IDS])
    rep = train(ds, u, TrainConfig(epochs=TRAIN_EPOCHS, eval_every=5), scfg)
    seeds = list(range(EVAL_SEEDS))
    res = {}
    for split, tasks in (("train", ds.train_tasks), ("test", ds.test_tasks)):
        res[split] = (evaluate(tasks, u, scfg, seeds).mean, evaluate(tasks, rep.params, scfg, seeds).mean)
    gain = {k: 1 - learned / uni for k, (uni, learned) in res.items()}
    elapsed = time.perf_counter() - t0
    ok = not short and gain["test"] >= TEST_MIN_GAIN and gain["train"] >= TRAIN_MIN_GAIN and elapsed < TRAIN_SECONDS
    criterion(8, ok, "train {:.2f}% -> {:.2f}% ({:+.1%}), test {:.2f}% -> {:.2f}% ({:+.1%}); {:.0f}s".format(
        100 * res["train"][0], 100 * res["train"][1], -gain["train"],
        100 * res["test"][0], 100 * res["test"][1], -gain["test"], elapsed))


def test_criterion_9_cli_reruns_identical(criterion, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({
        "search": {"budget_T": 40},
        "train": {"epochs": 2, "batch_size": 4, "eval_seeds": 1, "batches_per_epoch": 2},
        "dataset": {"starts_per_task": 2, "gen_budget": 60},
    }))
    data = tmp_path / "data"
    runs = {
        "dataset": ["dataset", "--config", str(cfg), "--out", str(data)],
        "optimize": ["optimize", "--task", "1", "--uniform", "--budget", "400", "--seed", "42",
                     "--out", str(tmp_path / "optimize")],
        "train": ["train", "--config", str(cfg), "--dataset", str(data), "--out", str(tmp_path / "train")],
        "eval": ["eval", "--params", str(tmp_path / "train" / "params.json"), "--dataset", str(data),
                 "--split", "both", "--seeds", "2", "--config", str(cfg), "--out", str(tmp_path / "eval")],
    }
    identical = {}
    for name, argv in runs.items():
        assert main(argv) == 0
        out = Path(argv[argv.index("--out") + 1])
        again = tmp_path / f"{name}-rerun"
        assert main(["rerun", str(out / "manifest.json"), "--out", str(again)]) == 0
        identical[name] = tree(out) == tree(again)
    criterion(9, all(identical.values()), f"byte-identical reruns: {identical}")
