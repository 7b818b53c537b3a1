import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mtsvalid import CouplingSpec, SensorMeta, SimulationResult, TimeSeriesFrame, crosscheck, reference_simulator, residuals
from mtsvalid.core import couple, fit_normalization, gen_coupled_process
from mtsvalid.errors import AlignmentError, InvalidArgumentError, SchemaError
from mtsvalid.simcheck import coverage_summary, simulation_from_csv, simulation_to_csv
from mtsvalid.verdicts import Kind, Level


def bounded_frame(values, lo=0.0, hi=10.0):
    values = np.asarray(values, dtype=float)
    S = values.shape[1]
    return TimeSeriesFrame.from_values(values, sensors=tuple(SensorMeta(s, f"s{s}", min_bound=lo, max_bound=hi) for s in range(S)))


def test_exact_prediction_gives_nothing():
    x = np.random.default_rng(0).uniform(2, 8, (200, 2))
    f = bounded_frame(x)
    assert crosscheck(f, SimulationResult((0, 1), x, np.ones(200, bool))) == []


def test_offset_over_fifty_samples():
    x = np.full((300, 1), 5.0)
    pred = x.copy()
    pred[100:150] += 2 * 0.05 * 10.0  # twice the tolerance, bound span 10
    (v,) = crosscheck(bounded_frame(x), SimulationResult((0,), pred, np.ones(300, bool)), 0.05, 10)
    assert (v.start_index, v.end_index, v.kind, v.level) == (100, 149, Kind.SIMULATION_MISMATCH, Level.L5)
    assert v.score == pytest.approx(0.1)


def test_offset_outside_valid_mode_is_only_counted():
    x = np.full((300, 1), 5.0)
    pred = x.copy()
    pred[100:150] += 1.0
    sim = SimulationResult((0,), pred, np.zeros(300, bool))
    f = bounded_frame(x)
    assert crosscheck(f, sim, 0.05, 10) == []
    cov = coverage_summary(f, sim, 0.05)
    assert cov["checked_fraction"] == 0.0
    assert cov["sensors"]["s0"] == {"checked": 0, "unchecked": 300, "deviating_unchecked": 50}


def test_alignment_and_schema_errors():
    f = bounded_frame(np.ones((10, 2)))
    with pytest.raises(AlignmentError):
        crosscheck(f, SimulationResult((0,), np.ones(9), np.ones(9, bool)))
    with pytest.raises(AlignmentError):
        crosscheck(f, SimulationResult((0,), np.ones(10), np.ones(10, bool), timestamps=np.arange(10.0)))
    with pytest.raises(SchemaError):
        crosscheck(f, SimulationResult((5,), np.ones(10), np.ones(10, bool)))
    with pytest.raises(AlignmentError):
        SimulationResult((0, 1), np.ones((10, 3)), np.ones(10, bool))


def test_unbounded_sensor_needs_stats():
    f = TimeSeriesFrame.from_values(np.random.default_rng(0).random((20, 1)))
    sim = SimulationResult((0,), f.values[:, 0], np.ones(20, bool))
    with pytest.raises(InvalidArgumentError):
        residuals(f, sim)
    r = residuals(f, sim, stats=fit_normalization(f))
    assert not r.any()


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 100_000))
def test_never_flags_invalid_mode_and_reverses_in_time(seed):
    r = np.random.default_rng(seed)
    T = int(r.integers(20, 200))
    x = r.uniform(3, 7, (T, 2))
    pred = x + r.choice([0.0, 1.0], size=(T, 2), p=[0.6, 0.4])
    mask = np.repeat(r.random(T // 10 + 1) < 0.7, 10)[:T]
    f = bounded_frame(x)
    vs = crosscheck(f, SimulationResult((0, 1), pred, mask), 0.05, 3)
    for v in vs:
        assert mask[v.start_index : v.end_index + 1].all()
    back = crosscheck(bounded_frame(x[::-1]), SimulationResult((0, 1), pred[::-1], mask[::-1]), 0.05, 3)
    fwd = sorted((v.sensor_ids, v.start_index, v.end_index) for v in vs)
    rev = sorted((v.sensor_ids, T - 1 - v.end_index, T - 1 - v.start_index) for v in back)
    assert fwd == rev


# --- reference simulator --------------------------------------------------------------


def _with_bounds(frame, lo, hi):
    return frame.with_sensors(tuple(SensorMeta(s, f"s{s}", min_bound=lo[s], max_bound=hi[s]) for s in range(frame.S)))


def test_noiseless_reference_has_zero_residual():
    spec = CouplingSpec.default(5, 0.0)
    f, d = gen_coupled_process(3, 500, 5, spec)
    f = _with_bounds(f, f.values.min(0) - 1, f.values.max(0) + 1)
    sim = reference_simulator(f, [0, 2, 4], spec, d)
    assert sim.validity_mask.all()
    assert not residuals(f, sim).any()


def test_mean_residual_matches_half_normal_mean():
    sigma = 0.2
    spec = CouplingSpec.default(4, sigma)
    f, d = gen_coupled_process(8, 20_000, 4, spec)
    lo, hi = f.values.min(0) - 1, f.values.max(0) + 1
    f = _with_bounds(f, lo, hi)
    r = residuals(f, reference_simulator(f, range(4), spec, d))
    expected = sigma * np.sqrt(2 / np.pi) / (hi - lo)
    np.testing.assert_allclose(r.mean(axis=0), expected, rtol=0.03)


def test_validity_band_from_driver():
    spec = CouplingSpec.default(3, 0.0)
    d = np.zeros(400 + spec.lead)
    d[spec.lead + 100 : spec.lead + 151] = 5.0
    f = bounded_frame(couple(d, spec), -50, 50)
    sim = reference_simulator(f, [1], spec, d, band=(-1.0, 1.0))
    assert list(np.flatnonzero(~sim.validity_mask)) == list(range(100, 151))


def test_reference_simulator_errors():
    spec = CouplingSpec.default(3, 0.0)
    f, d = gen_coupled_process(0, 300, 3, spec)
    with pytest.raises(SchemaError):
        reference_simulator(f, [3], spec, d)
    with pytest.raises(AlignmentError):
        reference_simulator(f, [0], spec, d[1:])


def test_simulation_csv_round_trip():
    r = np.random.default_rng(1)
    sim = SimulationResult((2, 0), r.normal(size=(30, 2)), r.random(30) < 0.5, np.arange(30) * 60.0)
    back = simulation_from_csv(simulation_to_csv(sim, ["a", "b", "c"]), ["a", "b", "c"])
    assert back.sensor_ids == (2, 0)
    assert back.predicted.tobytes() == sim.predicted.tobytes()
    assert back.validity_mask.tobytes() == sim.validity_mask.tobytes()
    assert back.timestamps.tobytes() == sim.timestamps.tobytes()
