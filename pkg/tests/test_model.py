import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import cond_independent, directed, figure1a
from structvi.exact import joint_table
from structvi.model import (DirectedFamily, FactorizedModel, StructuralError,
                            TableFactor, Variable, d_separated,
                            d_separated_dag, factor_marginalize,
                            factor_product, factor_restrict,
                            topological_order)
from structvi.seeding import stream


def test_product_with_unit_is_identity():
    f = TableFactor([0, 1], [2, 3], np.arange(6.0))
    g = factor_product(f, TableFactor.unit())
    assert g.vars == f.vars
    np.testing.assert_array_equal(g.values, f.values)


def test_product_symmetric_case():
    f = TableFactor([0], [2], [0.5, 0.5])
    np.testing.assert_allclose(factor_product(f, f).values, [0.25, 0.25])


def test_product_enumeration():
    f = TableFactor([0], [2], [2, 3])
    g = TableFactor([0, 1], [2, 2], [1, 2, 3, 4])
    h = factor_product(f, g)
    assert h.vars == (0, 1)
    np.testing.assert_allclose(h.values, [2, 4, 9, 12])


def test_product_scope_order_and_card_mismatch():
    f = TableFactor([2, 0], [2, 3], np.ones(6))
    g = TableFactor([1, 0], [2, 3], np.ones(6))
    assert factor_product(f, g).vars == (2, 0, 1)
    with pytest.raises(StructuralError):
        factor_product(f, TableFactor([0], [2], [1, 1]))


def test_marginalize():
    f = TableFactor([0, 1], [2, 2], [1, 2, 3, 4])
    np.testing.assert_array_equal(factor_marginalize(f, [0, 1]).values, f.values)
    np.testing.assert_allclose(factor_marginalize(f, [0]).values, [3, 7])
    total = factor_marginalize(f, [])
    assert total.vars == () and total.values[0] == 10
    with pytest.raises(StructuralError):
        factor_marginalize(f, [5])


def test_marginalize_keeps_scope_order():
    f = TableFactor([0, 1, 2], [2, 3, 2], np.arange(12.0))
    m = factor_marginalize(f, [2, 0])
    assert m.vars == (0, 2)
    np.testing.assert_allclose(m.table, f.table.sum(axis=1))


def test_restrict():
    f = TableFactor([0], [2], [0.3, 0.7])
    np.testing.assert_array_equal(factor_restrict(f, {}).values, f.values)
    np.testing.assert_allclose(factor_restrict(f, {0: 0}).values, [0.3, 0])
    g = TableFactor([0, 1], [2, 2], [1, 2, 3, 4])
    np.testing.assert_allclose(factor_restrict(g, {1: 1}).values, [0, 2, 0, 4])
    np.testing.assert_allclose(factor_restrict(g, {7: 1}).values, g.values)


def test_restrict_idempotent():
    g = TableFactor([0, 1, 2], [2, 3, 2], np.arange(12.0))
    once = factor_restrict(g, {1: 2, 2: 0})
    twice = factor_restrict(once, {1: 2, 2: 0})
    np.testing.assert_array_equal(once.values, twice.values)


def test_strides_last_fastest():
    f = TableFactor([4, 1, 7], [2, 3, 5], np.arange(30.0))
    assert f.strides == (15, 5, 1)
    assert f.values[1 * 15 + 2 * 5 + 3] == f.table[1, 2, 3]


def test_table_validation():
    with pytest.raises(StructuralError):
        TableFactor([0, 0], [2, 2], np.ones(4))
    with pytest.raises(StructuralError):
        TableFactor([0], [2], [1, 2, 3])
    with pytest.raises(StructuralError):
        TableFactor([0], [2], [1, -1])
    with pytest.raises(StructuralError):
        Variable(0, "x", 1)


def test_family_columns_normalized():
    cpt = TableFactor([0, 1], [2, 2], [0.2, 0.8, 0.5, 0.5])
    fam = DirectedFamily(1, (0,), cpt)
    np.testing.assert_allclose(fam.theta.sum(axis=-1), 1.0, atol=1e-12)
    with pytest.raises(StructuralError):
        DirectedFamily(1, (0,), TableFactor([0, 1], [2, 2], [0.2, 0.7, 0.5, 0.5]))
    with pytest.raises(StructuralError):
        DirectedFamily(1, (0,), TableFactor([1, 0], [2, 2], [0.2, 0.8, 0.5, 0.5]))


def test_model_validation():
    a, b = Variable(0, "a", 2), Variable(1, "b", 2)
    with pytest.raises(StructuralError):
        FactorizedModel([a, Variable(2, "c", 2)], [])
    with pytest.raises(StructuralError):
        FactorizedModel([a, Variable(1, "a", 2)], [])
    with pytest.raises(StructuralError):
        FactorizedModel([a, b], [TableFactor([0, 5], [2, 2], np.ones(4))])
    with pytest.raises(StructuralError):
        FactorizedModel([a, b], [TableFactor([0, 1], [2, 3], np.ones(6))])
    cyclic = [TableFactor([1, 0], [2, 2], [0.5] * 4), TableFactor([0, 1], [2, 2], [0.5] * 4)]
    with pytest.raises(StructuralError):
        FactorizedModel([a, b], cyclic, [0, 1])


def test_directed_flag_and_log_z():
    p, _ = figure1a(0)
    assert p.directed and p.log_z == 0.0
    u = FactorizedModel([Variable(0, "x", 2)], [TableFactor([0], [2], [1, 3])])
    assert not u.directed
    assert u.log_z == pytest.approx(np.log(4))
    with pytest.raises(StructuralError):
        d_separated(u, 0, [0], [])


def test_topological_order_lowest_id_first():
    assert topological_order({3: (), 1: (3,), 2: (), 0: (2,)}) == [2, 0, 3, 1]


def test_dsep_examples():
    # collider 0 -> 2 <- 1
    assert d_separated_dag({0: (), 1: (), 2: (0, 1)}, 0, [1], [])
    assert not d_separated_dag({0: (), 1: (), 2: (0, 1)}, 0, [1], [2])
    # chain 0 -> 1 -> 2
    chain = {0: (), 1: (0,), 2: (1,)}
    assert d_separated_dag(chain, 0, [2], [1])
    assert not d_separated_dag(chain, 0, [2], [])


def test_dsep_observation_couples_parents():
    p, _ = figure1a(0)
    assert not d_separated(p, 0, [1], [5])
    assert d_separated(p, 0, [1], [])
    assert d_separated(p, 0, [3], [4])  # T5 is not a descendant of T1
    assert not d_separated(p, 2, [3], [4])


def test_dsep_descendant_of_collider_opens():
    g = {0: (), 1: (), 2: (0, 1), 3: (2,)}
    assert not d_separated_dag(g, 0, [1], [3])
    with pytest.raises(StructuralError):
        d_separated_dag(g, 0, [1], [0])


def _random_dag(seed):
    rng = stream(seed, "dsep-dag")
    parents = {}
    for i in range(5):
        cand = [j for j in range(i) if rng.random() < 0.5]
        parents[i] = tuple(cand)
    return parents


def test_dsep_agrees_with_brute_force_independence():
    separated_ok = 0
    dependent, detected = 0, 0
    for seed in range(30):
        parents = _random_dag(seed)
        # flat Dirichlet CPTs: strictly positive and generic
        rng = stream(seed, "dsep-cpt")
        fams = []
        for c in range(5):
            vars = parents[c] + (c,)
            table = rng.dirichlet(np.ones(2), size=2 ** len(parents[c])).reshape([2] * len(vars))
            fams.append(DirectedFamily(c, parents[c], TableFactor(vars, [2] * len(vars), table)))
        joint = joint_table([f.cpt for f in fams], list(range(5)), [2] * 5)
        for x in range(5):
            for y in range(5):
                if y == x:
                    continue
                rest = [v for v in range(5) if v not in (x, y)]
                for mask in range(8):
                    z = [rest[k] for k in range(3) if mask >> k & 1]
                    sep = d_separated_dag(parents, x, [y], z)
                    ci = cond_independent(joint, x, [y], z)
                    if sep:
                        assert ci, (seed, x, y, z)
                        separated_ok += 1
                    else:
                        dependent += 1
                        detected += not ci
    assert separated_ok > 0 and dependent > 0
    assert detected / dependent >= 0.95


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.0, 10.0), min_size=6, max_size=6),
       st.lists(st.floats(0.01, 1.0), min_size=2, max_size=2))
def test_marginalize_product_round_trip(fvals, gvals):
    f = TableFactor([0, 1], [2, 3], fvals)
    g = np.array(gvals) / sum(gvals)
    prod = factor_product(f, TableFactor([2], [2], g))
    back = factor_marginalize(prod, f.vars)
    np.testing.assert_allclose(back.values, f.values, rtol=0, atol=1e-12)


def test_fixture_builder_is_deterministic():
    a = directed(3, ["A", "B"], {1: (0,)})
    b = directed(3, ["A", "B"], {1: (0,)})
    for f, g in zip(a.factors, b.factors):
        np.testing.assert_array_equal(f.values, g.values)
