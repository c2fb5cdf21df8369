"""Multi-index arithmetic and enumeration."""

import math

import pytest
from hypothesis import given, strategies as st

from gevreylab.multiindex import (
    MultiIndex,
    compositions,
    iter_multiindices,
    sub_multiindices,
)

small_index = st.lists(st.integers(0, 5), min_size=1, max_size=4).map(MultiIndex)


def test_order_and_factorial():
    a = MultiIndex((2, 0, 3))
    assert a.order == 5
    assert a.factorial() == 2 * 6


def test_negative_entries_rejected():
    with pytest.raises(ValueError):
        MultiIndex((1, -1))


def test_add_sub_roundtrip():
    a = MultiIndex((2, 1))
    b = MultiIndex((1, 1))
    assert a + b == MultiIndex((3, 2))
    assert (a + b) - b == a


def test_partial_order():
    assert MultiIndex((1, 0)) <= MultiIndex((2, 0))
    assert not (MultiIndex((1, 2)) <= MultiIndex((2, 1)))
    assert MultiIndex((1, 0)) < MultiIndex((1, 1))


def test_binomial_values():
    a = MultiIndex((3, 2))
    assert a.binomial(MultiIndex((1, 1))) == 3 * 2
    assert a.binomial(MultiIndex((4, 0))) == 0  # not componentwise below


def test_zero_and_unit():
    assert MultiIndex.zero(3) == MultiIndex((0, 0, 0))
    assert MultiIndex.unit(3, 1) == MultiIndex((0, 1, 0))


def test_compositions_count():
    # stars and bars: C(total + parts - 1, parts - 1)
    for total, parts in [(4, 2), (3, 3), (6, 4)]:
        assert len(compositions(total, parts)) == math.comb(
            total + parts - 1, parts - 1
        )
    for c in compositions(5, 3):
        assert sum(c) == 5


def test_iter_multiindices_complete():
    got = list(iter_multiindices(2, 3))
    assert len(got) == len(set(got))
    assert all(a.order <= 3 for a in got)
    assert len(got) == sum(math.comb(k + 1, 1) for k in range(4))
    # order-ascending enumeration
    orders = [a.order for a in got]
    assert orders == sorted(orders)


def test_sub_multiindices():
    a = MultiIndex((2, 1))
    subs = list(sub_multiindices(a))
    assert len(subs) == 3 * 2
    assert all(b <= a for b in subs)


@given(small_index, small_index)
def test_binomial_symmetry_identity(a, b):
    if len(a) != len(b):
        return
    # vandermonde-free sanity: binomial(a, b) nonzero iff b <= a
    assert (a.binomial(b) > 0) == (b <= a)


@given(small_index)
def test_sum_of_binomials(a):
    # sum over subs of binomial = prod (a_i + 1 choose ...) = 2^{|a|}
    total = sum(a.binomial(b) for b in sub_multiindices(a))
    assert total == 2 ** a.order


def test_hashable_dict_key():
    d = {MultiIndex((1, 2)): "v"}
    assert d[MultiIndex((1, 2))] == "v"
