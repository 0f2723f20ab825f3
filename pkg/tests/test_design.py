"""Parameter and boundary containers: validation, ratios, serialization."""
import math
from fractions import Fraction

import pytest

from gmams import (Boundaries, DesignParams, ParameterError,
                   equal_cumulative_ratios, make_delta_config, null_config,
                   validate)

from reference_designs import TAILOR, tailor_params


def make_params(**overrides):
    base = dict(K=3, J=2, a=1, b=1, c=1, d=1, alpha=0.05, beta=0.1,
                delta=0.545, delta0=0.138, sigma_sq=(1.0,) * 4,
                ratios=equal_cumulative_ratios(3, 2))
    base.update(overrides)
    return DesignParams(**base)


def test_equal_cumulative_ratios():
    assert equal_cumulative_ratios(2, 3) == (
        (1, 2, 3), (1, 2, 3), (1, 2, 3))


def test_ratio_matrix_and_totals():
    p = make_params()
    m = p.ratio_matrix()
    assert m.shape == (4, 2)
    assert m.tolist() == [[1, 2]] * 4
    assert p.total_ratio(1) == 4
    assert p.total_ratio(2) == 8


def test_n_step_with_fractional_ratios():
    p = make_params(K=1, sigma_sq=(1.0, 1.0),
                    ratios=((1, 2), ("3/2", 3)))
    assert p.ratios[1][0] == Fraction(3, 2)
    assert p.n_step() == 2


@pytest.mark.parametrize("field, value", [
    ("alpha", 1.5),
    ("alpha", 0.0),
    ("beta", -0.2),
    ("delta", -1.0),
    ("delta0", 0.7),       # above delta
    ("a", 4),              # > K
    ("b", 2),              # > c
    ("d", 0),
    ("sigma_sq", (1.0, 1.0)),
    ("K", 0),
])
def test_invalid_parameters_raise(field, value):
    with pytest.raises(ParameterError):
        make_params(**{field: value})


def test_ratios_must_increase():
    with pytest.raises(ParameterError, match="increase strictly"):
        make_params(ratios=((1, 1), (1, 2), (1, 2), (1, 2)))


def test_control_stage_one_ratio_normalised():
    with pytest.raises(ParameterError, match="control"):
        make_params(ratios=((2, 4), (1, 2), (1, 2), (1, 2)))


def test_from_dict_round_trip():
    p = tailor_params(2, 1, 1, 1)
    q = DesignParams.from_dict(p.to_dict())
    assert q == p


def test_from_dict_equal_cumulative_shorthand():
    d = tailor_params(1, 1, 1, 1).to_dict()
    d["ratios"] = "equal-cumulative"
    p = DesignParams.from_dict(d)
    assert p.ratios == equal_cumulative_ratios(3, 2)


def test_from_dict_rejects_missing_and_unknown_fields():
    d = tailor_params(1, 1, 1, 1).to_dict()
    del d["alpha"]
    with pytest.raises(ParameterError, match="missing"):
        DesignParams.from_dict(d)
    d = tailor_params(1, 1, 1, 1).to_dict()
    d["gamma"] = 1
    with pytest.raises(ParameterError, match="unknown"):
        DesignParams.from_dict(d)


def test_boundaries_round_trip_and_stages():
    b = Boundaries((0.08, 1.31), (1.70, 1.31))
    assert b.stages == 2
    assert Boundaries.from_dict(b.to_dict()) == b
    with pytest.raises(ParameterError):
        Boundaries.from_dict({"futility": [0.0, 1.0]})


def test_validate_accepts_reference_row():
    p = tailor_params(2, 1, 1, 1)
    report = validate(p, Boundaries((0.08, 1.31), (1.70, 1.31)))
    assert report.valid
    assert report.valid_prime


def test_validate_flags_defects():
    p = make_params()
    report = validate(p, Boundaries((2.0, 1.5), (1.0, 1.4)))
    # interim f >= e and final f != e
    assert len(report.problems) == 2
    assert not report.valid


def test_validate_infinite_interim_is_valid_but_not_prime():
    p = make_params()
    report = validate(p, Boundaries((-math.inf, 1.5), (math.inf, 1.5)))
    assert report.valid
    assert not report.valid_prime
    assert len(report.prime_problems) == 2


def test_effect_configs():
    p = make_params(c=2)
    assert null_config(p).tau == (0.0, 0.0, 0.0)
    cfg = make_delta_config(p, 2)
    assert cfg.tau == (0.545, 0.545, 0.138)
    assert cfg.label == "delta_2"
    with pytest.raises(ParameterError):
        make_delta_config(p, 4)


def test_tailor_scenario_matches_reference_constants():
    p = tailor_params(3, 2, 3, 1)
    assert (p.K, p.J) == (3, 2)
    assert (p.a, p.b, p.c, p.d) == (3, 2, 3, 1)
    assert (p.alpha, p.beta) == (TAILOR["alpha"], TAILOR["beta"])
    assert p.delta == TAILOR["delta"]
    assert p.delta0 == TAILOR["delta0"]
