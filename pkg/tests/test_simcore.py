import math
from importlib import resources

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from granusense.simcore import (MOTOR_PROFILES, ClearingAction, ForceTrace, InteractionMode,
                                MediumSpec, ProbeSpec, VibrationProfile, builtin_medium,
                                dimensionless_acceleration, load_calibration, occlusion_fraction,
                                onset_depth, resistance_force, simulate_penetration,
                                stall_depth_model, vibration_profile)

SAND = builtin_medium("sand")
RICE = builtin_medium("rice")
PROBE = load_calibration().probe
OFF = vibration_profile(0)


def test_builtin_media_densities_and_modes():
    assert SAND.bulk_density == 1578.56
    assert RICE.bulk_density == 941.48
    assert SAND.interaction_mode is InteractionMode.STICKS
    assert RICE.interaction_mode is InteractionMode.BLOCKS


def test_probe_area_from_22mm_diameter():
    assert PROBE.tip_area == pytest.approx(math.pi * 0.011 ** 2)
    assert PROBE.descent_speed == 0.002


@pytest.mark.parametrize("accel, gamma", [(9.6, 0.979), (0.0, 0.0), (23.6, 2.406)])
def test_dimensionless_acceleration(accel, gamma):
    freq = 0.0 if accel == 0 else 100.0
    vib = VibrationProfile(voltage=1.0 if accel else 0.0, frequency=freq, accel_amplitude=accel)
    assert dimensionless_acceleration(vib) == pytest.approx(gamma, abs=1e-3)


def test_vibration_profile_validation():
    with pytest.raises(ValueError):
        VibrationProfile(6.0, 400.0, 5.0)
    with pytest.raises(ValueError):
        VibrationProfile(6.0, -1.0, 5.0)
    with pytest.raises(ValueError):
        VibrationProfile(0.0, 100.0, 5.0)
    with pytest.raises(ValueError, match="known"):
        vibration_profile(7)
    assert vibration_profile(12).frequency == 172


def test_medium_validation():
    with pytest.raises(ValueError):
        MediumSpec(name="x", bulk_density=-1, grain_diameter=1e-3, k=1, z0=0, dz0=0,
                   interaction_mode=InteractionMode.SLIPS)


def test_force_zero_above_onset_and_negative_depth_rejected():
    assert resistance_force(0.0, SAND, PROBE, OFF) == 0.0
    assert resistance_force(SAND.z0, SAND, PROBE, OFF) == 0.0
    with pytest.raises(ValueError):
        resistance_force(-0.01, SAND, PROBE, OFF)


def test_force_formula_direct():
    z = 0.05
    expected = (SAND.k * SAND.bulk_density * 9.81 * PROBE.tip_area * (z - SAND.z0) ** 1.5)
    assert resistance_force(z, SAND, PROBE, OFF) == pytest.approx(expected, rel=1e-12)


def test_vibration_reduces_force_at_10cm():
    assert resistance_force(0.10, SAND, PROBE, vibration_profile(10)) < \
        resistance_force(0.10, SAND, PROBE, OFF)


def test_onset_ordering_for_every_profile():
    for medium in (SAND, RICE):
        for vib in MOTOR_PROFILES.values():
            assert onset_depth(medium, vib) >= onset_depth(medium, OFF)


@settings(max_examples=60, deadline=None)
@given(st.floats(0.0, 0.15), st.floats(0.0, 3.0), st.floats(0.0, 3.0))
def test_force_non_increasing_in_gamma(depth, g1, g2):
    lo, hi = sorted((g1, g2))
    v_lo = VibrationProfile(1.0, 150.0, lo * 9.81) if lo > 0 else OFF
    v_hi = VibrationProfile(1.0, 150.0, hi * 9.81) if hi > 0 else OFF
    for medium in (SAND, RICE):
        # the onset saturates at gamma = 1, so compare above it or both off
        if lo == 0 and hi > 0:
            continue
        assert resistance_force(depth, medium, PROBE, v_hi) <= \
            resistance_force(depth, medium, PROBE, v_lo) + 1e-12


def test_stall_depth_model_matches_force_limit():
    for medium in (SAND, RICE):
        for vib in MOTOR_PROFILES.values():
            z = stall_depth_model(medium, PROBE, vib)
            assert resistance_force(z, medium, PROBE, vib) == pytest.approx(PROBE.force_limit)


def test_simulation_stalls_and_is_deterministic():
    a = simulate_penetration(RICE, PROBE, OFF, noise_seed=3)
    b = simulate_penetration(RICE, PROBE, OFF, noise_seed=3)
    assert a.stalled and a.stall_depth is not None
    assert a.to_csv() == b.to_csv()
    assert np.all(np.diff(a.depth) >= 0)
    assert np.all(a.force >= 0)
    assert a.force[-1] >= PROBE.force_limit
    assert np.all(a.force[:-1] < PROBE.force_limit)


def test_infinite_force_limit_never_stalls():
    probe = ProbeSpec(PROBE.tip_area, PROBE.descent_speed, math.inf)
    tr = simulate_penetration(SAND, probe, OFF, max_depth=0.1524)
    assert not tr.stalled and tr.stall_depth is None
    assert tr.depth[-1] == pytest.approx(0.1524)


def test_simulation_rejects_bad_parameters():
    with pytest.raises(ValueError):
        simulate_penetration(SAND, PROBE, OFF, max_depth=0)
    with pytest.raises(ValueError):
        simulate_penetration(SAND, PROBE, OFF, sample_rate=-1)


def test_ripple_only_when_vibrating():
    quiet = simulate_penetration(SAND, PROBE, OFF, noise_sigma=0.0)
    exact = resistance_force(quiet.depth, SAND, PROBE, OFF)
    np.testing.assert_array_equal(quiet.force, exact)
    vib = vibration_profile(10)
    noisy = simulate_penetration(SAND, PROBE, vib, noise_sigma=0.0)
    exact = resistance_force(noisy.depth, SAND, PROBE, vib)
    resid = (noisy.force - exact)[noisy.depth < onset_depth(SAND, vib) - 0.01]
    # ripple is clipped at zero force above onset, so only the positive half shows
    assert resid.max() > 0.1 * SAND.ripple_gain


def test_force_trace_csv_round_trip(tmp_path):
    tr = simulate_penetration(SAND, PROBE, vibration_profile(8), noise_seed=5)
    path = tmp_path / "trace.csv"
    tr.write_csv(path)
    back = ForceTrace.read_csv(path, force_limit=PROBE.force_limit)
    np.testing.assert_array_equal(back.force, tr.force)
    np.testing.assert_array_equal(back.depth, tr.depth)
    assert back.stalled == tr.stalled
    assert back.stall_depth == tr.stall_depth


def test_stall_depth_iff_stalled():
    with pytest.raises(ValueError):
        ForceTrace(np.zeros(1), np.zeros(1), np.zeros(1), True, None)


def test_occlusion_slips_zero():
    slips = MediumSpec(name="glass", bulk_density=1500, grain_diameter=1e-3, k=1, z0=0, dz0=0,
                       interaction_mode=InteractionMode.SLIPS)
    for action in ClearingAction:
        assert occlusion_fraction(slips, action, 7) == 0.0


def test_occlusion_sand_unaffected_by_action():
    for seed in range(20):
        vals = {occlusion_fraction(SAND, a, seed) for a in ClearingAction}
        assert len(vals) == 1
        assert 0 < vals.pop() < 0.2


def test_occlusion_in_unit_interval():
    for seed in range(50):
        for a in ClearingAction:
            assert 0.0 <= occlusion_fraction(RICE, a, seed) <= 1.0


def test_calibration_file_round_trip(tmp_path):
    text = resources.files("granusense").joinpath("data/calibration.json").read_text()
    path = tmp_path / "calib.json"
    path.write_text(text)
    assert load_calibration(path).medium("rice") == RICE
    with pytest.raises(ValueError, match="unknown medium"):
        load_calibration(path).medium("gravel")
