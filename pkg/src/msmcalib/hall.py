"""Hall-sensor to mirror-pose models with joint time-offset estimation.

The foreground field ``B(t) = B_actual(t) - B_background(t)`` is mapped to
the {0}-frame pose ``(alpha_deg, beta_deg, d_mm)`` either linearly,
``pose = A [B(t + dt); 1]``, or through per-axis sinusoids,
``pose = A [sin(2 pi f (t + dt) + phi); 1]``, where ``f`` and ``phi`` are fitted
to the foreground signal itself.  ``A`` is solved in closed form for every
candidate offset ``dt`` on a grid; the best grid point is polished by a
golden-section search.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.optimize
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils import check_random_state
from sklearn.utils.validation import check_is_fitted

from .exceptions import (
    FrequencyEstimationFailed,
    InsufficientData,
    NoOverlap,
    OutOfRange,
    RankDeficientRegressors,
)

logger = logging.getLogger(__name__)

COMPONENTS = ("alpha_deg", "beta_deg", "d_mm")
MIN_POSES = 8


@dataclass
class HallSeries:
    """Timestamped triaxial readings ``t (N,)`` in s and ``B (N, 3)``."""

    t: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float).ravel()
        self.B = np.asarray(self.B, dtype=float).reshape(-1, 3)
        if len(self.t) != len(self.B):
            raise InsufficientData("timestamps and readings differ in length")
        if len(self.t) < 2:
            raise InsufficientData("a Hall series needs at least two samples")
        if not (np.all(np.isfinite(self.t)) and np.all(np.isfinite(self.B))):
            raise InsufficientData("Hall series contains NaN or inf")
        if np.any(np.diff(self.t) <= 0):
            raise InsufficientData("Hall timestamps must be strictly increasing")

    @property
    def span(self):
        return float(self.t[0]), float(self.t[-1])

    def __len__(self):
        return len(self.t)

    def __call__(self, t):
        return interpolate(self, t)

    def subset(self, mask):
        return HallSeries(self.t[mask], self.B[mask])

    def shifted(self, offset):
        """Copy with a constant vector added to every reading."""
        return HallSeries(self.t, self.B + np.asarray(offset, dtype=float))

    def to_csv(self, path):
        data = np.column_stack([self.t, self.B])
        np.savetxt(path, data, delimiter=",", header="t,bx,by,bz", comments="", fmt="%.9g")

    @classmethod
    def from_csv(cls, path):
        from .exceptions import ValidationError

        try:
            with open(path) as fh:
                header = fh.readline().strip().replace(" ", "")
                if header != "t,bx,by,bz":
                    raise ValidationError(f"{path}: header must be 't,bx,by,bz', got {header!r}")
                data = np.loadtxt(fh, delimiter=",", ndmin=2)
        except FileNotFoundError:
            raise ValidationError(f"{path}: file not found") from None
        except ValueError as exc:
            raise ValidationError(f"{path}: {exc}") from None
        if data.shape[1] != 4:
            raise ValidationError(f"{path}: expected 4 columns, got {data.shape[1]}")
        try:
            return cls(data[:, 0], data[:, 1:])
        except InsufficientData as exc:
            raise ValidationError(f"{path}: {exc}") from None


def interpolate(series, t):
    """Piecewise-linear reading at time(s) ``t``.

    Raises
    ------
    OutOfRange
        If any ``t`` is outside the series span.
    """
    t = np.asarray(t, dtype=float)
    t0, t1 = series.span
    if np.any(t < t0) or np.any(t > t1):
        raise OutOfRange(f"query outside the Hall series span [{t0:.6f}, {t1:.6f}] s")
    return np.stack([np.interp(t, series.t, series.B[:, k]) for k in range(3)], axis=-1)


@dataclass
class Foreground:
    """``B(t) = actual(t) - background(t)`` on the overlap of both series.

    With ``clamp`` set, queries outside the overlap take the nearest end
    value instead of raising.
    """

    actual: HallSeries
    background: HallSeries
    clamp: bool = False

    @property
    def span(self):
        return max(self.actual.t[0], self.background.t[0]), min(self.actual.t[-1], self.background.t[-1])

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        t0, t1 = self.span
        if self.clamp:
            t = np.clip(t, t0, t1)
        elif np.any(t < t0) or np.any(t > t1):
            raise OutOfRange(f"query outside the foreground span [{t0:.6f}, {t1:.6f}] s")
        return interpolate(self.actual, t) - interpolate(self.background, t)

    def samples(self):
        """Foreground at the actual-series timestamps inside the overlap."""
        t0, t1 = self.span
        keep = (self.actual.t >= t0) & (self.actual.t <= t1)
        t = self.actual.t[keep]
        return t, self(t)


def foreground(actual, background):
    """Background-subtracted foreground signal.

    Raises
    ------
    NoOverlap
        If the two series do not overlap in time.
    """
    fg = Foreground(actual, background)
    t0, t1 = fg.span
    if not t1 > t0:
        raise NoOverlap("actual and background Hall series do not overlap in time")
    return fg


# --------------------------------------------------------------------------
# Sinusoid estimation
# --------------------------------------------------------------------------


def dominant_frequency(t, x, min_peak_db=6.0, fmin=0.5):
    """Frequency (Hz) of the strongest spectral line of ``x(t)``.

    Samples are placed on a uniform grid at the median sample spacing with
    gaps zero-filled; the peak bin is refined by parabolic interpolation of
    the log-magnitude.

    Raises
    ------
    FrequencyEstimationFailed
        If the peak is less than ``min_peak_db`` above the median power.
    """
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float) - np.mean(x)
    dt = np.median(np.diff(t))
    idx = np.round((t - t[0]) / dt).astype(int)
    n = idx[-1] + 1
    grid = np.zeros(n)
    grid[idx] = x
    n_fft = 1 << int(np.ceil(np.log2(max(n, 16)))) + 2
    power = np.abs(np.fft.rfft(grid * np.hanning(n), n_fft)) ** 2
    freqs = np.fft.rfftfreq(n_fft, dt)
    band = freqs >= fmin
    if not band.any() or not np.any(power[band] > 0):
        raise FrequencyEstimationFailed("signal has no spectral content")
    k = int(np.flatnonzero(band)[np.argmax(power[band])])
    med = np.median(power[band])
    if not power[k] >= med * 10 ** (min_peak_db / 10):
        raise FrequencyEstimationFailed(
            f"no dominant spectral peak ({10 * np.log10(power[k] / max(med, 1e-300)):.1f} dB above median)"
        )
    if 0 < k < len(power) - 1:
        a, b, c = np.log(power[k - 1 : k + 2] + 1e-300)
        den = a - 2 * b + c
        shift = 0.5 * (a - c) / den if den < 0 else 0.0
        return float(freqs[k] + shift * (freqs[1] - freqs[0]))
    return float(freqs[k])


def fit_sinusoid(t, x, f0):
    """Least-squares ``c + a sin(2 pi f t + phi)`` starting from frequency ``f0``.

    Returns ``(f, a, phi, c)`` with ``a >= 0`` and ``phi`` in ``(-pi, pi]``.
    """
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    tc = t - t.mean()

    def linear(f):
        M = np.column_stack([np.sin(2 * np.pi * f * tc), np.cos(2 * np.pi * f * tc), np.ones_like(tc)])
        coef = np.linalg.lstsq(M, x, rcond=None)[0]
        return coef

    s, c, off = linear(f0)
    p0 = [f0, np.hypot(s, c), np.arctan2(c, s), off]

    def res(p):
        return p[3] + p[1] * np.sin(2 * np.pi * p[0] * tc + p[2]) - x

    def jac(p):
        arg = 2 * np.pi * p[0] * tc + p[2]
        co = p[1] * np.cos(arg)
        return np.column_stack([2 * np.pi * tc * co, np.sin(arg), co, np.ones_like(tc)])

    sol = scipy.optimize.least_squares(res, p0, jac=jac, method="lm", xtol=1e-12, ftol=1e-12)
    f, a, phi, off = sol.x
    if a < 0:
        a, phi = -a, phi + np.pi
    # phase referenced to t = 0 instead of the mean time
    phi = phi - 2 * np.pi * f * t.mean()
    phi = float(np.angle(np.exp(1j * phi)))
    return float(f), float(a), phi, float(off)


# --------------------------------------------------------------------------
# Models
# --------------------------------------------------------------------------


@dataclass
class HallModel:
    """Fitted Hall-to-pose model.

    ``A`` is 3x4, rows are ``(alpha_deg, beta_deg, d_mm)``.  ``f_hz`` and
    ``phi_rad`` are only used by the sine kind.
    """

    kind: str
    A: np.ndarray
    dt_s: float
    f_hz: np.ndarray = field(default_factory=lambda: np.zeros(3))
    phi_rad: np.ndarray = field(default_factory=lambda: np.zeros(3))
    train_rmse: np.ndarray | None = None
    test_rmse: np.ndarray | None = None

    def regressors(self, t, fg=None):
        t = np.asarray(t, dtype=float)
        return _regressors(self.kind, t + self.dt_s, fg, self.f_hz, self.phi_rad)

    def predict(self, t, fg=None):
        return self.regressors(t, fg) @ self.A.T

    def to_dict(self):
        d = {
            "kind": self.kind,
            "A": np.asarray(self.A, float).tolist(),
            "dt_s": float(self.dt_s),
            "f_hz": np.asarray(self.f_hz, float).tolist(),
        }
        if self.kind == "sine":
            d["phi_rad"] = np.asarray(self.phi_rad, float).tolist()
        d["train_rmse"] = None if self.train_rmse is None else np.asarray(self.train_rmse, float).tolist()
        d["test_rmse"] = None if self.test_rmse is None else np.asarray(self.test_rmse, float).tolist()
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(
            d["kind"],
            np.asarray(d["A"], float).reshape(3, 4),
            float(d["dt_s"]),
            np.asarray(d.get("f_hz", [0, 0, 0]), float),
            np.asarray(d.get("phi_rad", [0, 0, 0]), float),
            None if d.get("train_rmse") is None else np.asarray(d["train_rmse"], float),
            None if d.get("test_rmse") is None else np.asarray(d["test_rmse"], float),
        )


def _regressors(kind, tq, fg, f, phi):
    if kind == "linear":
        if fg is None:
            raise InsufficientData("the linear model needs Hall readings")
        B = fg(tq)
    else:
        B = np.sin(2 * np.pi * np.asarray(f)[None, :] * tq[:, None] + np.asarray(phi)[None, :])
    return np.column_stack([B, np.ones(len(tq))])


def _solve_A(Phi, Y):
    s = np.linalg.svd(Phi, compute_uv=False)
    if s[-1] < 1e-10 * s[0]:
        raise RankDeficientRegressors("regressors are rank deficient (constant or collinear readings)")
    return np.linalg.lstsq(Phi, Y, rcond=None)[0].T


def _golden(fun, a, b, tol):
    g = (np.sqrt(5.0) - 1.0) / 2.0
    c, d = b - g * (b - a), a + g * (b - a)
    fc, fd = fun(c), fun(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - g * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + g * (b - a)
            fd = fun(d)
    return (c, fc) if fc < fd else (d, fd)


class HallPoseRegressor(BaseEstimator, RegressorMixin):
    """Map Hall foreground readings to {0}-frame mirror poses.

    Parameters
    ----------
    model : {"linear", "sine"}
    max_offset : float
        Half-width (s) of the time-offset search window.  Shifting every
        axis by a multiple of half its period only flips regressor signs,
        which ``A`` absorbs; for 30/5/10 Hz this repeats every 0.1 s, so the
        default window stays below half of that.
    grid_step : float
        Offset grid spacing (s).
    refine_phase : bool
        Sine model only: after the closed-form fit, refine the per-axis
        phases jointly with ``A`` on the pose data.  Off by default, since the
        phases then trade off against the time offset.
    drive_frequencies : array_like of 3 floats, optional
        Fallback frequencies (Hz) when no dominant spectral peak is found.
    min_peak_db : float
        Required peak height above the median power for frequency estimation.

    Attributes
    ----------
    model_ : HallModel
    objective_ : float
        Sum of squared pose residuals at the optimum.
    grid_ : ndarray (G, 2)
        Candidate offsets and their objective values.
    """

    def __init__(
        self,
        model="sine",
        max_offset=0.045,
        grid_step=5e-4,
        refine_phase=False,
        drive_frequencies=None,
        min_peak_db=6.0,
    ):
        self.model = model
        self.max_offset = max_offset
        self.grid_step = grid_step
        self.refine_phase = refine_phase
        self.drive_frequencies = drive_frequencies
        self.min_peak_db = min_peak_db

    def _check(self, X, y=None):
        t = np.asarray(X, dtype=float)
        if t.ndim == 2:
            if t.shape[1] != 1:
                raise InsufficientData("X must hold one timestamp per pose")
            t = t[:, 0]
        if not np.all(np.isfinite(t)):
            raise InsufficientData("pose timestamps must be finite")
        if y is None:
            return t
        Y = np.asarray(y, dtype=float)
        if Y.ndim != 2 or Y.shape[1] != 3 or len(Y) != len(t):
            raise InsufficientData("y must be an (n_poses, 3) array matching X")
        if not np.all(np.isfinite(Y)):
            raise InsufficientData("poses contain NaN or inf")
        return t, Y

    def _sine_parameters(self, fg):
        ts, Bs = fg.samples()
        f = np.zeros(3)
        phi = np.zeros(3)
        for k in range(3):
            try:
                f0 = dominant_frequency(ts, Bs[:, k], self.min_peak_db)
            except FrequencyEstimationFailed:
                if self.drive_frequencies is None:
                    raise
                f0 = float(np.asarray(self.drive_frequencies, float)[k])
                logger.warning("axis %d: no spectral peak, using configured %.3f Hz", k, f0)
            f[k], _, phi[k], _ = fit_sinusoid(ts, Bs[:, k], f0)
        return f, phi

    def fit(self, X, y, foreground=None):
        """Fit ``A`` and the time offset.

        Parameters
        ----------
        X : array_like (P,) or (P, 1)
            Pose timestamps (s).
        y : array_like (P, 3)
            Poses ``(alpha_deg, beta_deg, d_mm)``.
        foreground : Foreground or HallSeries
            Background-subtracted Hall signal.
        """
        if self.model not in ("linear", "sine"):
            raise ValueError(f"unknown model {self.model!r}")
        if foreground is None:
            raise InsufficientData("fit needs the Hall foreground signal")
        t, Y = self._check(X, y)
        if len(t) < MIN_POSES:
            raise InsufficientData(f"need at least {MIN_POSES} poses, got {len(t)}")
        fg = foreground
        t0, t1 = fg.span

        if self.model == "sine":
            f, phi = self._sine_parameters(fg)
        else:
            f, phi = np.zeros(3), np.zeros(3)

        def objective(dt, phase=phi):
            tq = t + dt
            if np.any(tq < t0) or np.any(tq > t1):
                return np.inf, None
            Phi = _regressors(self.model, tq, fg, f, phase)
            A = _solve_A(Phi, Y)
            r = Y - Phi @ A.T
            return float(np.sum(r * r)), A

        n = int(np.floor(self.max_offset / self.grid_step + 1e-9))
        grid = np.arange(-n, n + 1) * self.grid_step
        values = np.empty(len(grid))
        for g, dt in enumerate(grid):
            values[g] = objective(dt)[0]
        if not np.any(np.isfinite(values)):
            raise OutOfRange("no offset candidate keeps the poses inside the Hall record")
        best = np.flatnonzero(values == values.min())
        g = int(best[np.argmin(np.abs(grid[best]))])
        dt_best, v_best = grid[g], values[g]
        dt_ref, v_ref = _golden(lambda s: objective(s)[0], dt_best - self.grid_step, dt_best + self.grid_step, 1e-7)
        if v_ref < v_best:
            dt_best, v_best = dt_ref, v_ref
        _, A = objective(dt_best)

        if self.model == "sine" and self.refine_phase:
            def res(p):
                Phi = _regressors("sine", t + p[0], fg, f, p[1:])
                return (Y - Phi @ _solve_A(Phi, Y).T).ravel()

            sol = scipy.optimize.least_squares(res, np.r_[dt_best, phi], method="lm")
            if np.sum(sol.fun**2) < v_best and abs(sol.x[0]) <= self.max_offset:
                dt_best, phi = sol.x[0], sol.x[1:]
                v_best, A = objective(dt_best, phi)

        self.model_ = HallModel(self.model, A, float(dt_best), f, np.asarray(phi, float))
        self.model_.train_rmse = np.sqrt(np.mean((Y - self.model_.predict(t, fg)) ** 2, axis=0))
        self.objective_ = v_best
        self.grid_ = np.column_stack([grid, values])
        return self

    def predict(self, X, foreground=None):
        """Poses at timestamps ``X`` (the sine model ignores ``foreground``)."""
        check_is_fitted(self, "model_")
        t = self._check(X)
        return self.model_.predict(t, foreground)

    def score(self, X, y, foreground=None):
        """Negative mean RMSE over the three pose components."""
        t, Y = self._check(X, y)
        return -float(np.mean(rmse(Y, self.predict(t, foreground))))


def rmse(y_true, y_pred):
    """Per-component root-mean-square error."""
    return np.sqrt(np.mean((np.asarray(y_true) - np.asarray(y_pred)) ** 2, axis=0))


def partition_readings(series, pose_times, selected):
    """Readings whose nearest pose is in ``selected`` (boolean mask over poses)."""
    order = np.argsort(pose_times)
    pt = np.asarray(pose_times)[order]
    mids = 0.5 * (pt[1:] + pt[:-1])
    nearest = order[np.searchsorted(mids, series.t)]
    return series.subset(np.asarray(selected)[nearest])


def evaluate(
    pose_times,
    poses,
    actual,
    background,
    model="sine",
    repeats=50,
    split=0.8,
    random_state=None,
    baseline_shift=None,
    estimator_params=None,
):
    """Repeated random train/test evaluation of a Hall model.

    Poses are split ``split : 1 - split``; each Hall reading goes to the set
    of its nearest pose and the two foregrounds are interpolated separately.
    ``baseline_shift`` (3-vector) is added to the test readings only.
    Test queries beyond the ends of the test readings use the end values.

    Returns
    -------
    dict
        ``test_rmse`` and ``train_rmse`` arrays (repeats, 3), their mean and
        SD, and the fitted offsets.
    """
    t = np.asarray(pose_times, dtype=float)
    Y = np.asarray(poses, dtype=float)
    P = len(t)
    n_train = int(round(split * P))
    if n_train >= P or n_train < MIN_POSES:
        raise InsufficientData(f"split {split} leaves {P - n_train} test and {n_train} training poses")
    rng = check_random_state(random_state)
    params = dict(estimator_params or {})
    test, train, offsets, models = [], [], [], []
    for _ in range(repeats):
        perm = rng.permutation(P)
        is_train = np.zeros(P, dtype=bool)
        is_train[perm[:n_train]] = True
        fg_tr = foreground(partition_readings(actual, t, is_train), partition_readings(background, t, is_train))
        act_te = partition_readings(actual, t, ~is_train)
        if baseline_shift is not None:
            act_te = act_te.shifted(baseline_shift)
        fg_te = foreground(act_te, partition_readings(background, t, ~is_train))
        # an extreme test pose shifted by dt can leave its own readings
        fg_te.clamp = True
        reg = HallPoseRegressor(model=model, **params).fit(t[is_train], Y[is_train], foreground=fg_tr)
        train.append(reg.model_.train_rmse)
        test.append(rmse(Y[~is_train], reg.predict(t[~is_train], fg_te)))
        offsets.append(reg.model_.dt_s)
        models.append(reg.model_)
    test, train = np.array(test), np.array(train)
    return {
        "model": model,
        "test_rmse": test,
        "train_rmse": train,
        "test_mean": test.mean(axis=0),
        "test_sd": test.std(axis=0, ddof=1) if repeats > 1 else np.zeros(3),
        "train_mean": train.mean(axis=0),
        "dt_s": np.array(offsets),
        "models": models,
    }
