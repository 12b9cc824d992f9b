from __future__ import annotations

import pytest
from hypothesis import given, settings, strategies as st

from smneuro.devices import (
    HtronParams, Level, Phase, SmParams, SmState, SnwParams, SnwState, htron_channel_enabled,
    sm_resistance, snw_transition,
)

SNW = SnwParams()


def test_sm_resistance_levels():
    assert sm_resistance(SmState(Level.LRS), SmParams()) == pytest.approx(14.4e-3)
    assert sm_resistance(SmState(Level.HRS), SmParams()) == pytest.approx(98e-3)


def test_sm_resistance_pure():
    s, p = SmState(Level.HRS), SmParams()
    assert sm_resistance(s, p) == sm_resistance(s, p)


def test_snw_switches_above_critical():
    assert snw_transition(SnwState(Phase.SUPERCONDUCTING), 31e-6, SNW).phase is Phase.NORMAL


def test_snw_retraps_below_retrapping():
    assert snw_transition(SnwState(Phase.NORMAL), 19e-6, SNW).phase is Phase.SUPERCONDUCTING


def test_snw_hysteresis_band_keeps_phase():
    assert snw_transition(SnwState(Phase.SUPERCONDUCTING), 25e-6, SNW).phase is Phase.SUPERCONDUCTING
    assert snw_transition(SnwState(Phase.NORMAL), 25e-6, SNW).phase is Phase.NORMAL


def test_snw_resistance_by_phase():
    assert SnwState(Phase.SUPERCONDUCTING).resistance(SNW) == 0.0
    assert SnwState(Phase.NORMAL).resistance(SNW) == SNW.r_nw


def test_htron_gate():
    h = HtronParams()
    assert htron_channel_enabled(0.0, h)
    assert not htron_channel_enabled(h.i_heater_th, h)
    assert not htron_channel_enabled(2 * h.i_heater_th, h)


@pytest.mark.parametrize("kw", [dict(i_c=20e-6, i_r=20e-6), dict(r_nw=0.0), dict(l_nw=-1e-9)])
def test_snw_params_invariants(kw):
    with pytest.raises(ValueError):
        SnwParams(**kw)


def test_sm_params_invariants():
    with pytest.raises(ValueError):
        SmParams(r_lrs=0.0)
    with pytest.raises(ValueError):
        SmParams(r_lrs=0.1, r_hrs=0.05)


def test_level_coerce():
    assert Level.coerce("hrs") is Level.HRS
    assert Level.coerce(0) is Level.LRS
    assert Level.LRS.flipped() is Level.HRS


# ---------------------------------------------------------------------------
# properties

band = st.floats(min_value=SNW.i_r, max_value=SNW.i_c, exclude_min=True, exclude_max=True)


@settings(max_examples=1000, deadline=None)
@given(st.sampled_from(list(Phase)), st.lists(st.tuples(band, st.booleans()), min_size=1, max_size=30))
def test_hysteresis_never_changes_phase_inside_band(phase, seq):
    s = SnwState(phase)
    for mag, neg in seq:
        s = snw_transition(s, -mag if neg else mag, SNW)
        assert s.phase is phase


@settings(max_examples=1000, deadline=None)
@given(st.sampled_from(list(Level)), st.integers(1, 50),
       st.floats(1e-4, 1.0), st.floats(1.0, 100.0))
def test_sm_queries_are_non_volatile(level, n, r_lrs, ratio):
    p = SmParams(r_lrs=r_lrs, r_hrs=r_lrs * ratio)
    s = SmState(level)
    values = {sm_resistance(s, p) for _ in range(n)}
    assert s.level is level
    assert len(values) == 1


@settings(max_examples=1000, deadline=None)
@given(st.floats(1e-6, 10.0), st.floats(1.0001, 1e3))
def test_lrs_below_hrs(r_lrs, ratio):
    p = SmParams(r_lrs=r_lrs, r_hrs=r_lrs * ratio)
    assert sm_resistance(SmState(Level.LRS), p) < sm_resistance(SmState(Level.HRS), p)
