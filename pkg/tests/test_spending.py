"""Spending-function shapes, the step variants and their validation."""

import numpy as np
import pytest
from scipy.stats import norm

from duosurv.errors import ConfigError
from duosurv.spending import SPENDING_KINDS, SpendingFunction


def obf_reference(s, level):
    return 2.0 * norm.sf(norm.ppf(1.0 - 0.5 * level) / np.sqrt(s))


def test_full_at_one_releases_only_at_full_information():
    f = SpendingFunction("full_at_one")
    assert f.spend(0.0, 0.025) == 0.0
    assert f.spend(-1.0, 0.025) == 0.0
    assert f.spend(0.999, 0.025) == 0.0
    assert f.spend(1.0, 0.025) == 0.025
    # overshoot past the target clamps to fraction one
    assert f.spend(1.4, 0.025) == 0.025


def test_obf_shape_matches_reference_formula():
    f = SpendingFunction("obf_lan_demets")
    for s in (0.1, 0.3, 0.644, 0.9, 1.0):
        for level in (0.005, 0.02, 0.025):
            assert f.spend(s, level) == pytest.approx(
                obf_reference(s, level), abs=1e-14)
    # spends everything at fraction one
    assert f.spend(1.0, 0.02) == pytest.approx(0.02, abs=1e-12)
    assert f.spend(2.5, 0.02) == pytest.approx(0.02, abs=1e-12)
    # conservative early: the familiar steep O'Brien-Fleming start
    assert f.spend(0.644, 0.02) == pytest.approx(0.003718, abs=5e-5)
    assert f.spend(0.25, 0.025) < 1e-4


def test_spending_is_monotone_and_bounded():
    taus = np.linspace(0.01, 1.3, 40)
    for kind, kwargs in (("full_at_one", {}), ("obf_lan_demets", {}),
                         ("full_at_one_plus_step",
                          dict(step_time=0.5, step_level=0.004)),
                         ("obf_plus_step",
                          dict(step_time=0.5, step_level=0.004))):
        f = SpendingFunction(kind, **kwargs)
        values = [f.spend(t, 0.025) for t in taus]
        assert all(b >= a - 1e-15 for a, b in zip(values, values[1:]))
        assert all(0.0 <= v <= 0.025 + 1e-12 for v in values)
        assert values[-1] == pytest.approx(0.025, abs=1e-12)


def test_step_variants_add_the_chunk_from_step_time_on():
    f = SpendingFunction("full_at_one_plus_step", step_time=0.0,
                         step_level=0.005)
    # tau <= 0 short-circuits even with a step at time zero
    assert f.spend(0.0, 0.025) == 0.0
    assert f.spend(0.3, 0.025) == 0.005
    assert f.spend(1.0, 0.025) == pytest.approx(0.025, abs=1e-15)

    late = SpendingFunction("full_at_one_plus_step", step_time=1.0,
                            step_level=0.005)
    assert late.spend(0.3, 0.025) == 0.0
    assert late.spend(1.0, 0.025) == pytest.approx(0.025, abs=1e-15)

    g = SpendingFunction("obf_plus_step", step_time=0.0, step_level=0.005)
    assert g.spend(0.6, 0.025) == pytest.approx(
        0.005 + obf_reference(0.6, 0.02), abs=1e-14)
    g_late = SpendingFunction("obf_plus_step", step_time=1.0,
                              step_level=0.005)
    assert g_late.spend(0.6, 0.025) == pytest.approx(
        obf_reference(0.6, 0.02), abs=1e-14)
    assert g_late.spend(1.0, 0.025) == pytest.approx(0.025, abs=1e-12)


def test_zero_step_level_reduces_to_base_shape():
    base = SpendingFunction("obf_lan_demets")
    stepped = SpendingFunction("obf_plus_step", step_time=0.0, step_level=0.0)
    for tau in (0.2, 0.644, 1.0):
        assert stepped.spend(tau, 0.02) == base.spend(tau, 0.02)


def test_construction_validation():
    assert set(SPENDING_KINDS) == {"full_at_one", "obf_lan_demets",
                                   "full_at_one_plus_step", "obf_plus_step"}
    with pytest.raises(ConfigError, match="unknown spending kind"):
        SpendingFunction("pocock")
    with pytest.raises(ConfigError, match="requires step_time"):
        SpendingFunction("obf_plus_step")
    with pytest.raises(ConfigError, match="requires step_time"):
        SpendingFunction("obf_plus_step", step_time=0.5)
    with pytest.raises(ConfigError, match="takes no step parameters"):
        SpendingFunction("obf_lan_demets", step_time=0.5, step_level=0.001)
    with pytest.raises(ConfigError, match="non-negative"):
        SpendingFunction("obf_plus_step", step_time=-0.1, step_level=0.001)
    with pytest.raises(ConfigError, match="non-negative"):
        SpendingFunction("obf_plus_step", step_time=0.1, step_level=-0.001)


def test_spend_validation():
    f = SpendingFunction("obf_plus_step", step_time=0.0, step_level=0.01)
    with pytest.raises(ConfigError, match="exceeds total level"):
        f.spend(0.5, 0.005)
    with pytest.raises(ConfigError, match="must be non-negative"):
        SpendingFunction("obf_lan_demets").spend(0.5, -0.01)
