"""Outcome enumeration, degeneracy weighting and rectangle construction."""
import dataclasses
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gmams import (Boundaries, ParameterError, build_rectangle,
                   cardinality_xi, cardinality_xi_prime, enumerate_xi,
                   enumerate_xi_prime, interchangeable_blocks,
                   reduced_or_full)

from reference_designs import tailor_params


def test_single_arm_single_stage():
    outcomes = enumerate_xi(1, 1, 1)
    assert {(o.psi, o.omega) for o in outcomes} == {((0,), (1,)), ((1,), (1,))}


def test_outcome_counts_small_cases():
    assert cardinality_xi(1, 2, 1) == 4
    assert cardinality_xi(1, 2, 3) == 34
    assert cardinality_xi_prime(1, 2, 3, (3,)) == 13


djk = st.integers(1, 3).flatmap(
    lambda K: st.tuples(st.integers(1, K), st.integers(1, 3), st.just(K)))


@given(djk)
@settings(max_examples=40, deadline=None)
def test_enumeration_matches_closed_form(t):
    d, J, K = t
    outcomes = enumerate_xi(d, J, K)
    assert len(outcomes) == cardinality_xi(d, J, K)
    assert len({(o.psi, o.omega) for o in outcomes}) == len(outcomes)


@given(djk)
@settings(max_examples=40, deadline=None)
def test_outcome_structure(t):
    d, J, K = t
    for o in enumerate_xi(d, J, K):
        assert all(p in (0, 1) for p in o.psi)
        assert all(1 <= w <= J for w in o.omega)
        assert o.stop_stage == max(o.omega)
        # at most d-1 rejections can happen before the trial stops;
        # ties at the stop analysis can push the total past d
        early = sum(p for p, w in zip(o.psi, o.omega) if w < o.stop_stage)
        assert early <= d - 1


@st.composite
def blocks_case(draw):
    K = draw(st.integers(1, 4))
    d = draw(st.integers(1, K))
    J = draw(st.integers(1, 2))
    # random ordered partition of the K arms into contiguous blocks
    sizes = []
    left = K
    while left:
        s = draw(st.integers(1, left))
        sizes.append(s)
        left -= s
    return d, J, K, tuple(sizes)


@given(blocks_case())
@settings(max_examples=40, deadline=None)
def test_degeneracies_cover_the_full_space(case):
    d, J, K, sizes = case
    start = 1
    blocks = []
    for s in sizes:
        blocks.append(tuple(range(start, start + s)))
        start += s
    reduced = enumerate_xi_prime(d, J, K, tuple(blocks))
    assert sum(wo.degeneracy for wo in reduced) == cardinality_xi(d, J, K)
    assert len(reduced) == cardinality_xi_prime(d, J, K, sizes)
    assert len({(wo.outcome.psi, wo.outcome.omega) for wo in reduced}) == len(reduced)


def test_trivial_blocks_give_no_reduction():
    full = enumerate_xi(2, 2, 3)
    singleton = enumerate_xi_prime(2, 2, 3, ((1,), (2,), (3,)))
    assert len(singleton) == len(full)
    assert all(wo.degeneracy == 1 for wo in singleton)


def test_interchangeable_blocks_follow_tau_and_variances():
    p = tailor_params(1, 1, 2, 1)
    assert interchangeable_blocks(p, (0.545, 0.545, 0.138)) == (((1, 2), (3,)), True)
    assert interchangeable_blocks(p, (0.0, 0.0, 0.0)) == (((1, 2, 3),), True)
    # a deviating experimental variance blocks the reduction
    q = dataclasses.replace(p, sigma_sq=(1.0, 1.0, 2.0, 1.0))
    blocks, ok = interchangeable_blocks(q, (0.0, 0.0, 0.0))
    assert not ok


def test_reduced_or_full_falls_back_when_not_interchangeable():
    p = tailor_params(1, 1, 1, 1)
    q = dataclasses.replace(p, sigma_sq=(1.0, 1.0, 2.0, 1.0))
    with pytest.warns(UserWarning, match="without reduction"):
        wos = reduced_or_full(q, (0.0, 0.0, 0.0))
    assert all(wo.degeneracy == 1 for wo in wos)
    assert len(wos) == cardinality_xi(p.d, p.J, p.K)


def test_reduced_or_full_weights_sum_to_full_count():
    p = tailor_params(2, 1, 2, 2)
    wos = reduced_or_full(p, (0.545, 0.545, 0.138))
    assert sum(wo.degeneracy for wo in wos) == cardinality_xi(p.d, p.J, p.K)
    assert len(wos) < cardinality_xi(p.d, p.J, p.K)


def test_rectangle_single_arm():
    b = Boundaries((0.1, 1.5), (2.0, 1.5))
    outcomes = {(o.psi, o.omega): o for o in enumerate_xi(1, 2, 1)}

    rect, active = build_rectangle(outcomes[((1,), (2,))], b, 1)
    assert active == ((1, 1), (1, 2))
    assert rect.lower == (0.1, 1.5)
    assert rect.upper == (2.0, math.inf)

    rect, active = build_rectangle(outcomes[((0,), (1,))], b, 1)
    assert active == ((1, 1),)
    assert rect.lower == (-math.inf,)
    assert rect.upper == (0.1,)


def test_rectangle_merges_accept_and_pending_at_the_stop_stage():
    """With d=1, a rejection at stage 1 ends the trial.  The other arm's
    single outcome (psi=0, omega=1) covers both accepting at stage 1 and
    being cut short mid-flight, so its cell is the whole non-rejection
    region below the efficacy boundary."""
    b = Boundaries((0.0, 1.5), (2.0, 1.5))
    stopped = [o for o in enumerate_xi(1, 2, 2)
               if o.psi == (0, 1) and o.omega == (1, 1)]
    assert len(stopped) == 1
    rect, active = build_rectangle(stopped[0], b, 1)
    assert set(active) == {(1, 1), (2, 1)}
    i1 = active.index((1, 1))
    i2 = active.index((2, 1))
    assert (rect.lower[i1], rect.upper[i1]) == (-math.inf, 2.0)
    assert (rect.lower[i2], rect.upper[i2]) == (2.0, math.inf)


def test_rectangle_interim_accept_is_strict():
    """An arm concluding before the trial stops really accepted: its
    cell sits below the futility boundary, not merely below efficacy."""
    b = Boundaries((0.0, 1.5), (2.0, 1.5))
    picked = [o for o in enumerate_xi(2, 2, 2)
              if o.psi == (0, 1) and o.omega == (1, 2)]
    assert len(picked) == 1
    rect, active = build_rectangle(picked[0], b, 2)
    i1 = active.index((1, 1))
    assert (rect.lower[i1], rect.upper[i1]) == (-math.inf, 0.0)


def test_infinite_futility_prunes_interim_accepts():
    """f1 = -inf switches stage-1 futility stops off, so an arm can only
    conclude at stage 1 by rejection or by the trial stopping."""
    b = Boundaries((-math.inf, 1.5), (2.0, 1.5))
    outcomes = enumerate_xi(1, 2, 2, b)
    keyed = {(o.psi, o.omega) for o in outcomes}
    assert ((0, 0), (1, 1)) not in keyed       # nothing can stop the trial
    assert ((0, 1), (1, 1)) in keyed           # arm 2 rejected, arm 1 pending
    assert len(outcomes) < cardinality_xi(1, 2, 2)


def test_argument_validation():
    with pytest.raises(ParameterError):
        enumerate_xi(0, 2, 2)
    with pytest.raises(ParameterError):
        enumerate_xi(3, 2, 2)
    with pytest.raises(ParameterError):
        cardinality_xi_prime(1, 2, 3, (2,))
