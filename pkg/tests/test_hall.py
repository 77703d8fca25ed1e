import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from msmcalib.exceptions import (
    FrequencyEstimationFailed,
    InsufficientData,
    NoOverlap,
    OutOfRange,
    RankDeficientRegressors,
    ValidationError,
)
from msmcalib.hall import (
    HallModel,
    HallPoseRegressor,
    HallSeries,
    dominant_frequency,
    evaluate,
    fit_sinusoid,
    foreground,
    interpolate,
    partition_readings,
    rmse,
)

F = np.array([30.0, 5.0, 10.0])
PHI = np.array([0.3, -1.1, 2.0])
A_TRUE = np.array([[2.0, 0.0, 0.0, 0.1], [0.0, 8.0, 0.0, -0.2], [0.0, 0.0, 0.5, 0.0]])
DT = 0.0037


def _signals(rng, n_poses=120, dt=DT, noise=0.01):
    t = np.arange(0.0, 1.2, 1e-3)
    clean = np.sin(2 * np.pi * F * t[:, None] + PHI)
    bg = 0.3 * np.sin(2 * np.pi * np.array([50.0, 50.0, 50.0]) * t[:, None])
    actual = HallSeries(t, clean + bg + noise * rng.normal(size=clean.shape))
    background = HallSeries(t, bg)
    tp = np.sort(rng.uniform(0.1, 1.1, n_poses))
    B = np.sin(2 * np.pi * F * (tp + dt)[:, None] + PHI)
    Y = np.column_stack([B, np.ones(n_poses)]) @ A_TRUE.T
    return tp, Y, actual, background


def test_series_validation(tmp_path):
    with pytest.raises(InsufficientData):
        HallSeries([0.0], np.zeros((1, 3)))
    with pytest.raises(InsufficientData):
        HallSeries([0.0, 0.0], np.zeros((2, 3)))
    with pytest.raises(InsufficientData):
        HallSeries([0.0, 1.0], [[0, 0, np.nan], [0, 0, 0]])
    s = HallSeries([0.0, 1.0, 2.0], np.arange(9.0).reshape(3, 3))
    s.to_csv(tmp_path / "h.csv")
    back = HallSeries.from_csv(tmp_path / "h.csv")
    np.testing.assert_allclose(back.B, s.B)
    (tmp_path / "bad.csv").write_text("t,x\n1,2\n")
    with pytest.raises(ValidationError, match="bad.csv"):
        HallSeries.from_csv(tmp_path / "bad.csv")
    with pytest.raises(ValidationError, match="missing.csv"):
        HallSeries.from_csv(tmp_path / "missing.csv")


def test_interpolate_and_foreground():
    a = HallSeries([0.0, 1.0, 2.0], [[0, 0, 0], [2, 2, 2], [4, 4, 4.0]])
    b = HallSeries([0.5, 1.5, 2.5], np.ones((3, 3)))
    np.testing.assert_allclose(interpolate(a, 0.5), [1, 1, 1])
    with pytest.raises(OutOfRange):
        interpolate(a, 2.5)
    fg = foreground(a, b)
    assert fg.span == (0.5, 2.0)
    np.testing.assert_allclose(fg(1.0), [1, 1, 1])
    with pytest.raises(NoOverlap):
        foreground(a, HallSeries([3.0, 4.0], np.zeros((2, 3))))


def test_dominant_frequency_and_fit(rng):
    t = np.arange(0.0, 2.0, 1e-3)
    x = 0.7 * np.sin(2 * np.pi * 30.0 * t + 0.4) + 0.2 + 0.01 * rng.normal(size=len(t))
    f0 = dominant_frequency(t, x)
    assert abs(f0 - 30.0) < 0.2
    f, a, phi, c = fit_sinusoid(t, x, f0)
    assert abs(f - 30.0) < 1e-3 and abs(a - 0.7) < 1e-3 and abs(phi - 0.4) < 1e-2 and abs(c - 0.2) < 1e-3
    with pytest.raises(FrequencyEstimationFailed):
        dominant_frequency(t, np.zeros_like(t))
    with pytest.raises(FrequencyEstimationFailed):
        dominant_frequency(t, rng.normal(size=len(t)), min_peak_db=30)


def test_sine_model_recovers_offset(rng):
    tp, Y, ha, hb = _signals(rng)
    reg = HallPoseRegressor(model="sine").fit(tp, Y, foreground=foreground(ha, hb))
    assert abs(reg.model_.dt_s - DT) < 5e-4
    np.testing.assert_allclose(reg.model_.f_hz, F, atol=0.05)
    assert np.all(rmse(Y, reg.predict(tp)) < 0.05)


def test_linear_model(rng):
    tp, Y, ha, hb = _signals(rng, noise=0.0)
    fg = foreground(ha, hb)
    reg = HallPoseRegressor(model="linear").fit(tp, Y, foreground=fg)
    assert abs(reg.model_.dt_s - DT) < 2e-4
    np.testing.assert_allclose(reg.model_.A, A_TRUE, rtol=1e-2, atol=5e-3)
    with pytest.raises(InsufficientData):
        reg.predict(tp)
    assert reg.score(tp, Y, fg) > -0.01


def test_regressor_validation(rng):
    tp, Y, ha, hb = _signals(rng, n_poses=20)
    fg = foreground(ha, hb)
    with pytest.raises(InsufficientData):
        HallPoseRegressor().fit(tp, Y)
    with pytest.raises(InsufficientData):
        HallPoseRegressor().fit(tp[:5], Y[:5], foreground=fg)
    with pytest.raises(InsufficientData):
        HallPoseRegressor().fit(tp, Y[:, :2], foreground=fg)
    with pytest.raises(ValueError):
        HallPoseRegressor(model="cubic").fit(tp, Y, foreground=fg)
    with pytest.raises(OutOfRange):
        HallPoseRegressor().fit(tp + 5.0, Y, foreground=fg)
    with pytest.raises(NotFittedError):
        HallPoseRegressor().predict(tp)
    flat = HallSeries(ha.t, np.zeros_like(ha.B))
    with pytest.raises(RankDeficientRegressors):
        HallPoseRegressor(model="linear").fit(tp, Y, foreground=foreground(flat, flat))


def test_regressor_params():
    reg = HallPoseRegressor(model="linear", max_offset=0.01)
    assert clone(reg).get_params()["max_offset"] == 0.01


def test_model_round_trip(rng):
    tp, Y, ha, hb = _signals(rng)
    m = HallPoseRegressor().fit(tp, Y, foreground=foreground(ha, hb)).model_
    back = HallModel.from_dict(m.to_dict())
    np.testing.assert_allclose(back.predict(tp), m.predict(tp))


def test_partition_by_nearest_pose():
    s = HallSeries(np.arange(10.0), np.zeros((10, 3)))
    part = partition_readings(s, np.array([1.0, 8.0]), np.array([True, False]))
    np.testing.assert_allclose(part.t, [0, 1, 2, 3, 4])


def test_evaluate_and_baseline_shift(rng):
    tp, Y, ha, hb = _signals(rng)
    kw = dict(repeats=5, random_state=0)
    lin = evaluate(tp, Y, ha, hb, "linear", **kw)
    sine = evaluate(tp, Y, ha, hb, "sine", **kw)
    assert lin["test_rmse"].shape == (5, 3)
    shift = [0.05, 0.05, 0.05]
    lin2 = evaluate(tp, Y, ha, hb, "linear", baseline_shift=shift, **kw)
    sine2 = evaluate(tp, Y, ha, hb, "sine", baseline_shift=shift, **kw)
    np.testing.assert_allclose(sine2["test_mean"], sine["test_mean"])
    assert np.all(lin2["test_mean"] > lin["test_mean"])
    # same seed, same splits
    np.testing.assert_allclose(evaluate(tp, Y, ha, hb, "linear", **kw)["test_rmse"], lin["test_rmse"])
    with pytest.raises(InsufficientData):
        evaluate(tp, Y, ha, hb, split=1.0)
