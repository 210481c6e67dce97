import itertools
import math

import numpy as np
import pytest

from oracles import chain3, directed, enum_log_evidence, figure1a
from structvi.cg import posterior_chain_graph
from structvi.exact import (ENUMERATION_CAP, eliminate, exact_kl, joint_table,
                            kl_tables, log_evidence, log_partition, marginal,
                            min_fill_order)
from structvi.generators import random_markov
from structvi.model import (FactorizedModel, StructuralError, TableFactor,
                            Variable)


def test_eliminate_empty_order_is_identity():
    f = TableFactor([0, 1], [2, 2], [1, 2, 3, 4])
    out = eliminate([f], [])
    np.testing.assert_array_equal(out.values, f.values)


def test_eliminate_to_scalar():
    fs = [TableFactor([0], [2], [0.4, 0.6]), TableFactor([0, 1], [2, 2], [0.5, 0.5, 0.2, 0.8])]
    assert eliminate(fs, [0, 1]).values[0] == pytest.approx(1.0, abs=1e-15)


def test_eliminate_to_single_marginal_matches_enumeration():
    p, _ = figure1a(4)
    out = eliminate(p.factors, [0, 1, 2, 3, 5])
    joint = joint_table(p.factors, list(range(6)), [2] * 6)
    np.testing.assert_allclose(out.values, joint.sum(axis=(0, 1, 2, 3, 5)), atol=1e-14)


def test_eliminate_order_invariant():
    p, _ = random_markov(1, 7, 8)
    a = eliminate(p.factors, list(range(7))).values[0]
    for perm in itertools.islice(itertools.permutations(range(7)), 0, 5040, 97):
        b = eliminate(p.factors, list(perm)).values[0]
        assert abs(a - b) <= 1e-10 * abs(a)


def test_min_fill_is_deterministic():
    scopes = [(0, 1), (1, 2), (2, 3), (3, 0)]
    assert min_fill_order(scopes, range(4)) == min_fill_order(scopes, range(4))
    assert sorted(min_fill_order(scopes, [1, 3])) == [1, 3]


def test_log_evidence_examples():
    p, _ = figure1a(0)
    assert log_evidence(p, {}) == pytest.approx(0.0, abs=1e-12)
    single = FactorizedModel([Variable(0, "x", 2)], [TableFactor([0], [2], [0.25, 0.75])], [0])
    assert log_evidence(single, {0: 0}) == pytest.approx(math.log(0.25), abs=1e-15)
    c = chain3(2)
    total = 0.0
    a, b, cc = (f.table for f in c.factors)
    for x, y in itertools.product(range(2), repeat=2):
        total += a[x] * b[x, y] * cc[y, 0]
    assert log_evidence(c, {2: 0}) == pytest.approx(math.log(total), abs=1e-12)


def test_log_evidence_zero_probability():
    single = FactorizedModel([Variable(0, "x", 2)], [TableFactor([0], [2], [1.0, 0.0])], [0])
    assert log_evidence(single, {0: 1}) == -math.inf


def test_log_evidence_undirected_matches_enumeration():
    for seed in range(5):
        p, ev = random_markov(seed, 6, 6, n_observed=2)
        assert log_evidence(p, ev) == pytest.approx(enum_log_evidence(p, ev), abs=1e-10)


def test_log_partition():
    p, _ = figure1a(0)
    assert log_partition(p) == pytest.approx(0.0, abs=1e-12)
    one = FactorizedModel([Variable(0, "x", 2)], [TableFactor([0], [2], [1, 3])])
    assert log_partition(one) == pytest.approx(math.log(4))


def test_log_partition_chain_graph():
    p, ev = figure1a(7)
    q = posterior_chain_graph(p, ev)
    variables = [Variable(k, f"T{k}", 2) for k in range(5)]
    model = FactorizedModel(variables, q.factors)
    joint = joint_table(q.factors, list(range(5)), [2] * 5)
    assert log_partition(model) == pytest.approx(math.log(joint.sum()), abs=1e-12)
    assert q.log_zq == pytest.approx(math.log(joint.sum()), abs=1e-12)


def test_marginal_normalized():
    p, ev = figure1a(1)
    m = marginal(p, [4, 0], ev)
    assert m.vars == (4, 0)
    assert m.values.sum() == pytest.approx(1.0)
    joint = joint_table(p.factors, list(range(6)), [2] * 6)[..., 0]
    ref = joint.sum(axis=(1, 2, 3)).T
    np.testing.assert_allclose(m.table, ref / ref.sum(), atol=1e-14)


class _Q:
    def __init__(self, factors):
        self.factors = factors


def test_kl_identity_and_two_point():
    p, ev = figure1a(3)
    post = posterior_chain_graph(p, ev)
    assert exact_kl(post, p, ev) == pytest.approx(0.0, abs=1e-12)
    x = FactorizedModel([Variable(0, "x", 2), Variable(1, "o", 2)],
                        [TableFactor([0], [2], [0.5, 0.5]), TableFactor([0, 1], [2, 2], [0.9, 0.1, 0.1, 0.9])],
                        [0, 1])
    # P(x | o=0) = [0.9, 0.1]
    q = _Q([TableFactor([0], [2], [0.5, 0.5])])
    want = 0.5 * math.log(0.5 / 0.9) + 0.5 * math.log(0.5 / 0.1)
    assert exact_kl(q, x, {1: 0}) == pytest.approx(want, abs=1e-15)


def test_kl_infinite_off_support():
    assert kl_tables(np.array([0.5, 0.5]), np.array([1.0, 0.0])) == math.inf
    assert kl_tables(np.array([1.0, 0.0]), np.array([0.5, 0.5])) == pytest.approx(math.log(2))


def test_enumeration_cap():
    with pytest.raises(StructuralError):
        joint_table([], list(range(21)), [2] * 21)
    assert ENUMERATION_CAP == 2 ** 20


def test_posterior_probability_zero_raises():
    p = directed(0, ["a", "b"], {1: (0,)})
    zero = FactorizedModel(p.variables, [TableFactor([0], [2], [1, 0]),
                                         TableFactor([0, 1], [2, 2], [1, 0, 0.5, 0.5])], [0, 1])
    with pytest.raises(StructuralError):
        exact_kl(_Q([TableFactor([0], [2], [1, 0])]), zero, {1: 1})
