from fractions import Fraction

import pytest

from drift_camouflage.discrete import (
    HALF,
    BiasedBitLaw,
    EnumerationBudgetError,
    IndexFamily,
    build_index_family,
    check_diffuse,
    check_family,
    exact_joint_law,
    extract_fair_bit,
    parse_fraction,
    referenced_indices,
    sample_scrambled,
    scramble,
    straddler,
)
from drift_camouflage.models import SeededRng


@pytest.mark.parametrize("value", ["7/10", "0.7", 0.7, Fraction(7, 10), " 7/10 "])
def test_parse_fraction(value):
    assert parse_fraction(value) == Fraction(7, 10)


@pytest.mark.parametrize("value", ["abc", "1/0", True, None, [1]])
def test_parse_fraction_rejects(value):
    with pytest.raises(ValueError):
        parse_fraction(value)


def test_laws_address_non_positive_indices():
    assert BiasedBitLaw.constant("7/10").prob(-5) == Fraction(7, 10)
    periodic = BiasedBitLaw.periodic(["1/3", "1/2"])
    assert [periodic.prob(-k) for k in range(3)] == [Fraction(1, 3), HALF, Fraction(1, 3)]
    geometric = BiasedBitLaw.geometric("1/4", "1/2")
    assert geometric.prob(-3) == Fraction(1, 32)
    table = BiasedBitLaw.from_table({0: "3/5"}, default="1/2")
    assert table.prob(0) == Fraction(3, 5)
    assert table.prob(-9) == HALF
    with pytest.raises(ValueError):
        table.prob(1)
    with pytest.raises(ValueError):
        BiasedBitLaw.from_table({0: "3/5"}).prob(-1)


@pytest.mark.parametrize(
    "build",
    [
        lambda: BiasedBitLaw.constant(1),
        lambda: BiasedBitLaw.constant("0"),
        lambda: BiasedBitLaw.periodic([]),
        lambda: BiasedBitLaw.periodic(["1/2", "3/2"]),
        lambda: BiasedBitLaw.geometric("1/4", 0),
        lambda: BiasedBitLaw.from_table({-1: "1/2"}),
        lambda: BiasedBitLaw.from_config({"kind": "bernoulli", "p": "1/2"}),
    ],
)
def test_laws_reject_bad_parameters(build):
    with pytest.raises(ValueError):
        build()


def test_law_from_config_round_trips_through_dict():
    config = {"kind": "table", "p": {"0": "3/5", "2": "1/3"}, "default": "1/2"}
    law = BiasedBitLaw.from_config(config)
    assert law.to_dict() == config
    assert BiasedBitLaw.from_config({"kind": "constant", "p": "7/10"}).to_dict() == {"kind": "constant", "p": "7/10"}


def test_constant_law_partial_sum():
    report = check_diffuse(BiasedBitLaw.constant("7/10"), 100)
    assert report.partial_sum == Fraction(303, 10)
    assert len(report.terms) == 101
    assert not report.flagged_non_diffuse


def test_summable_law_is_flagged():
    report = check_diffuse(BiasedBitLaw.geometric("1/4", "1/2"), 100)
    assert report.partial_sum < HALF
    assert report.flagged_non_diffuse


def test_fair_law_grows_linearly():
    for horizon in (1, 10, 50):
        assert check_diffuse(BiasedBitLaw.constant("1/2"), horizon).partial_sum == Fraction(horizon + 1, 2)


def test_heaviest_atom():
    assert check_diffuse(BiasedBitLaw.constant("7/10"), 1).heaviest_atom == Fraction(49, 100)


def test_check_diffuse_needs_horizon():
    with pytest.raises(ValueError):
        check_diffuse(BiasedBitLaw.constant("1/2"), 0)


def test_fair_bit_passes_through():
    state = extract_fair_bit([1], ["1/2"])
    assert (state.low, state.high, state.decision, state.bits_consumed) == (0, HALF, 1, 1)
    assert extract_fair_bit([-1], ["1/2"]).decision == -1


def test_biased_bits_are_split_exactly():
    p = ["7/10", "7/10"]
    state = extract_fair_bit([-1, 1], p)
    assert (state.low, state.high, state.decision, state.bits_consumed) == (Fraction(7, 10), 1, -1, 1)
    state = extract_fair_bit([1, 1], p)
    assert (state.low, state.high, state.decision, state.bits_consumed) == (0, Fraction(49, 100), 1, 2)
    state = extract_fair_bit([1, -1], p)
    assert (state.low, state.high, state.decided, state.bits_consumed) == (Fraction(49, 100), Fraction(7, 10), False, 2)
    assert state.width == Fraction(21, 100)


def test_extractor_rejects_bad_input():
    with pytest.raises(ValueError):
        extract_fair_bit([1, 1], ["1/2"])
    with pytest.raises(ValueError):
        extract_fair_bit([0], ["1/2"])
    with pytest.raises(ValueError):
        extract_fair_bit([1], ["1"])


def test_straddler():
    assert straddler(["7/10", "7/10"]) == (Fraction(49, 100), Fraction(7, 10))
    assert straddler(["1/2", "7/10"]) == (HALF, HALF)
    low, high = straddler(["9/10"] * 64)
    assert high - low <= Fraction(9, 10) ** 64
    assert float(high - low) < 1.2e-3


def test_greedy_family():
    family = build_index_family(3, 2)
    assert family.assignment == {0: (-1, -2, -4, -7), -1: (-3, -5, -8), -2: (-6, -9)}
    assert family.window == (0, -1, -2)
    assert family.horizon == -9
    assert family.members(-1, 2) == (-3, -5)
    assert family.levels() == [frozenset({-1, -2, -4, -7}), frozenset({-3, -5, -6, -8, -9})]
    assert family.residual() == frozenset()


def test_family_members_errors():
    family = build_index_family(2, 1)
    with pytest.raises(ValueError):
        family.members(-5)
    with pytest.raises(ValueError):
        family.members(-1, 3)
    with pytest.raises(ValueError):
        build_index_family(0, 1)


def test_large_family_properties():
    family = build_index_family(64, 8)
    report = check_family(family, depth=4)
    assert report.passed, report.to_dict()
    assert all(len(family.members(n)) >= 8 for n in family.window)


def test_from_assignment_strict_and_lenient():
    with pytest.raises(ValueError):
        IndexFamily.from_assignment({0: [-1], -1: [-1]})
    with pytest.raises(ValueError):
        IndexFamily.from_assignment({-1: [-1]})
    with pytest.raises(ValueError):
        IndexFamily.from_assignment({0: [-2, -1]})
    lenient = IndexFamily.from_assignment({0: [-1], -1: [-1]}, strict=False)
    report = check_family(lenient)
    assert not report.disjoint
    assert not report.passed


def test_scramble_is_predictable():
    law = BiasedBitLaw.constant("7/10")
    family = build_index_family(4, 3)
    indices = referenced_indices(family, 4, 3)
    base = scramble(law, family, 4, 3, rng=SeededRng(12))
    for n in base.window:
        members = set(family.members(n, 3))
        for j in indices:
            if j in members:
                continue
            flipped = dict(base.eps)
            flipped[j] = -flipped[j]
            assert scramble(law, family, 4, 3, eps=flipped).h[n] == base.h[n]


def test_scramble_needs_signs_or_rng():
    family = build_index_family(1, 1)
    law = BiasedBitLaw.constant("1/2")
    with pytest.raises(ValueError):
        scramble(law, family, 1, 1)
    with pytest.raises(ValueError):
        scramble(law, family, 1, 1, eps={0: 1})


def test_fair_law_decides_after_one_bit():
    law = BiasedBitLaw.constant("1/2")
    family = build_index_family(3, 4)
    record = scramble(law, family, 3, 4, rng=SeededRng(1))
    assert all(record.decided.values())
    assert set(record.bits_consumed.values()) == {1}
    summary = sample_scrambled(law, family, 3, 4, n_samples=4000, seed=2)
    assert summary.undecided_fraction == 0.0
    assert summary.plus_frequency == pytest.approx(0.5, abs=0.03)


def test_exact_law_with_biased_sign_and_fair_extraction_bit():
    law = BiasedBitLaw.from_table({0: "3/5", 1: "1/2"})
    exact = exact_joint_law(law, build_index_family(1, 1), 1, 1)
    assert exact.bit_count == 2
    assert exact.undecided_mass == 0
    assert exact.product_law(0) == {1: HALF, -1: HALF, None: 0}
    assert exact.signs_law_preserved()


def test_exact_law_with_two_biased_extraction_bits():
    law = BiasedBitLaw.from_table({0: "1/2"}, default="7/10")
    exact = exact_joint_law(law, build_index_family(1, 2), 1, 2)
    assert exact.bit_count == 3
    assert exact.undecided_mass == Fraction(21, 100)
    assert exact.product_law(0)[1] == exact.decided_mass / 2
    assert exact.factorizes()
    # extraction from biased bits is only fair up to the undecided mass
    h = exact.h_law(0)
    assert h == {1: Fraction(49, 100), -1: Fraction(3, 10), None: Fraction(21, 100)}
    assert 0 <= HALF - h[1] <= exact.undecided_mass
    assert 0 <= HALF - h[-1] <= exact.undecided_mass
    assert exact.fairness_defect(0) == Fraction(19, 200)
    data = exact.to_dict()
    assert data["undecided_mass"] == "21/100"
    assert data["products"] == {"+1": "79/200", "-1": "79/200"}


def test_exact_law_two_window_product_is_uniform():
    exact = exact_joint_law(BiasedBitLaw.constant("1/2"), build_index_family(2, 1), 2, 1)
    assert exact.products() == {x: Fraction(1, 4) for x in [(1, 1), (1, -1), (-1, 1), (-1, -1)]}
    assert exact.factorizes()
    assert set(exact.conditional_fairness().values()) == {HALF}
    assert all(exact.fairness_defect(n) == 0 for n in exact.window)


def test_biased_window_signs_stay_hidden_behind_fair_extraction():
    # eps_0 biased; every extraction bit fair
    law = BiasedBitLaw.from_table({0: "7/10", 1: "1/2", 3: "1/2"})
    exact = exact_joint_law(law, build_index_family(2, 1), 2, 1)
    assert exact.undecided_mass == 0
    assert exact.factorizes()
    assert set(exact.conditional_fairness().values()) == {HALF}
    # eps_-1 is a window sign and feeds h_0, so the products do reveal something about the signs
    assert not exact.signs_law_preserved()
    for n in exact.window:
        h = exact.h_law(n)
        assert h[1] == h[-1] == (1 - h[None]) / 2


def test_enumeration_budget():
    family = build_index_family(8, 3)
    with pytest.raises(EnumerationBudgetError) as info:
        exact_joint_law(BiasedBitLaw.constant("1/2"), family, 8, 3)
    assert info.value.bit_count == len(referenced_indices(family, 8, 3))
    assert info.value.bit_count > 24
