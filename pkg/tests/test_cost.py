import math

import numpy as np
import pytest

from superopt.cost import (
    DEFAULT_WEIGHTS,
    CostValue,
    CostWeights,
    TestSuite,
    acceptance_ratio,
    eq_cost,
    perf_cost,
    total_cost,
)
from superopt.hd import get_task, make_suite
from superopt.isa import MASK64, Program, parse_program


@pytest.fixture
def suite():
    return make_suite(get_task(1), 16, seed=3)


def test_eq_zero_for_reference(suite):
    assert eq_cost(get_task(1).reference_program, suite) == 0.0


def test_eq_one_for_single_bit_error(suite):
    flipped = TestSuite(suite.inputs, suite.expected ^ np.uint64(1))
    assert eq_cost(get_task(1).reference_program, flipped) == 1.0


def test_empty_program_on_identity_suite():
    rows = [(x, x, 0, 0) for x in (0, 1, 77, MASK64)]
    assert eq_cost(Program(), TestSuite(rows, [r[0] for r in rows])) == 0.0


def test_eq_is_mean_hamming_distance():
    rows = [(0, 0, 0, 0), (0, 0, 0, 0)]
    # 64 bits wrong on one case, 2 on the other
    assert eq_cost(Program(), TestSuite(rows, [MASK64, 3])) == 33.0


def test_perf():
    assert perf_cost(Program()) == 0
    assert perf_cost(parse_program("add64 r0, 1; and64 r0, r1; or64 r0, r2")) == 3
    ref = get_task(1).reference_program
    assert perf_cost(ref) == len(ref) == 2


def test_total_cost_weights(suite):
    four = parse_program("sub64 r1, 1; and64 r0, r1; nop; nop")
    c = total_cost(four, suite, CostWeights(1.0, 0.04))
    assert c.eq_term == 0 and c.perf_term == 4
    assert c.total == pytest.approx(0.16, abs=1e-15)
    c0 = total_cost(four, suite, CostWeights(1.0, 0.0))
    assert c0.total == c0.eq_term


def test_empty_program_total_is_eq():
    rows = [(0, 0, 0, 0)]
    c = total_cost(Program(), TestSuite(rows, [3]), CostWeights(1.0, 0.04))
    assert c == CostValue(2.0, 0.0, 2.0)


def test_acceptance_ratio():
    w = CostWeights(beta=1.0)
    a, b = CostValue(0, 0, 2.0), CostValue(0, 0, 4.0)
    assert acceptance_ratio(a, a, w) == 1.0
    assert acceptance_ratio(b, a, w) == 1.0
    assert acceptance_ratio(a, b, w) == pytest.approx(math.exp(-2), rel=1e-15)
    assert round(acceptance_ratio(a, b, w), 4) == 0.1353


def test_acceptance_scales_with_beta():
    a, b = CostValue(0, 0, 1.0), CostValue(0, 0, 1.1)
    assert acceptance_ratio(a, b, CostWeights(beta=25.0)) == pytest.approx(math.exp(-2.5))
    assert acceptance_ratio(a, b) == acceptance_ratio(a, b, DEFAULT_WEIGHTS)


def test_weights_validation():
    with pytest.raises(ValueError):
        CostWeights(omega_e=-1)
    with pytest.raises(ValueError):
        CostWeights(beta=0)
    w = CostWeights(2.0, 0.5, 3.0)
    assert CostWeights.from_json(w.to_json()) == w


def test_suite_round_trip(tmp_path, suite):
    path = tmp_path / "s.json"
    suite.save(path)
    assert TestSuite.load(path) == suite
    assert TestSuite.from_cases(suite.cases) == suite


def test_suite_validation():
    with pytest.raises(ValueError):
        TestSuite(np.zeros((0, 4)), [])
    with pytest.raises(ValueError):
        TestSuite([(0, 0, 0, 0)], [1, 2])
