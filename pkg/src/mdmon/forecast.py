"""Autoregressive biomarker forecasting: AR(p) with differencing, no MA term.

Coefficients come from the Yule-Walker equations on the differenced,
mean-removed series. Near-constant series fall back to a mean model,
which for a d=1 fit extends the series linearly at its mean step -- the
right behavior for steady trends.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import ThresholdSet


class SeriesTooShort(ValueError):
    code = "SERIES_TOO_SHORT"


class NonstationaryModel(ValueError):
    code = "NONSTATIONARY_MODEL"


class LengthMismatch(ValueError):
    code = "LENGTH_MISMATCH"


# below this variance the differenced series counts as constant
_CONSTANT_VAR = 1e-12
# horizons longer than this require the stationarity check to pass
LONG_HORIZON_STEPS = 10


@dataclass(frozen=True)
class ArModel:
    """Fitted AR(p) over the d-times differenced series.

    p == 0 marks the mean-model fallback for near-constant input
    (`mean_fallback` is then set); genuine AR fits always have p >= 1.
    """

    p: int
    d: int
    coefficients: tuple[float, ...]
    intercept: float
    noise_variance: float
    fitted_on: str
    n_obs: int
    stationary: bool
    mean_fallback: bool = False

    def to_record(self) -> dict:
        return {
            "p": self.p, "d": self.d, "coefficients": list(self.coefficients),
            "intercept": self.intercept, "noise_variance": self.noise_variance,
            "fitted_on": self.fitted_on, "n_obs": self.n_obs,
            "stationary": self.stationary, "mean_fallback": self.mean_fallback,
        }

    @staticmethod
    def from_record(d: dict) -> "ArModel":
        return ArModel(
            p=int(d["p"]), d=int(d["d"]),
            coefficients=tuple(float(c) for c in d["coefficients"]),
            intercept=float(d["intercept"]), noise_variance=float(d["noise_variance"]),
            fitted_on=str(d["fitted_on"]), n_obs=int(d["n_obs"]),
            stationary=bool(d["stationary"]), mean_fallback=bool(d.get("mean_fallback", False)),
        )


@dataclass(frozen=True)
class Breach:
    metric: str
    threshold: float
    first_breach_step: int


@dataclass(frozen=True)
class ForecastResult:
    horizon: int
    values: tuple[float, ...]
    step_seconds: float
    breach: Breach | None = None

    def to_record(self) -> dict:
        breach = None
        if self.breach is not None:
            breach = {
                "metric": self.breach.metric,
                "threshold": self.breach.threshold,
                "first_breach_step": self.breach.first_breach_step,
            }
        return {
            "horizon": self.horizon, "values": list(self.values),
            "step_seconds": self.step_seconds, "breach": breach,
        }


def difference(series, d: int) -> tuple[np.ndarray, list[float]]:
    """d-fold first differencing.

    Returns the differenced series plus the anchors (the leading value
    dropped at each level) needed for exact reconstruction.
    """
    x = np.asarray(series, dtype=np.float64)
    if x.size <= d:
        raise SeriesTooShort(f"need more than d={d} points, got {x.size}")
    anchors = []
    for _ in range(d):
        anchors.append(float(x[0]))
        x = np.diff(x)
    return x, anchors


def undifference(diffed, anchors: list[float]) -> np.ndarray:
    """Exact inverse of difference() given its anchors."""
    x = np.asarray(diffed, dtype=np.float64)
    for a in reversed(anchors):
        x = np.concatenate(([a], a + np.cumsum(x)))
    return x


def fit_ar(series, p: int, d: int = 0, name: str = "", floor_mult: int = 10) -> ArModel:
    """Yule-Walker AR(p) fit on the d-times differenced series.

    Requires length >= floor_mult * p after differencing; a near-constant
    differenced series short-circuits to the mean-model fallback instead
    of attempting a singular solve.
    """
    if p < 1:
        raise ValueError("p must be >= 1")
    if d not in (0, 1, 2):
        raise ValueError("d must be 0, 1, or 2")
    x, _ = difference(series, d)
    n = x.size
    mean = float(np.mean(x))
    centered = x - mean
    var = float(np.mean(centered * centered))
    if var < _CONSTANT_VAR:
        return ArModel(
            p=0, d=d, coefficients=(), intercept=mean, noise_variance=0.0,
            fitted_on=name, n_obs=n, stationary=True, mean_fallback=True,
        )
    if n < max(p + 2, floor_mult * p):
        raise SeriesTooShort(
            f"need >= {max(p + 2, floor_mult * p)} points after differencing, got {n}"
        )
    # biased autocovariances gamma_0..gamma_p keep the Toeplitz system PD
    gamma = np.array(
        [float(np.dot(centered[: n - k], centered[k:])) / n for k in range(p + 1)]
    )
    toeplitz = np.array([[gamma[abs(i - j)] for j in range(p)] for i in range(p)])
    try:
        phi = np.linalg.solve(toeplitz, gamma[1:])
    except np.linalg.LinAlgError:
        return ArModel(
            p=0, d=d, coefficients=(), intercept=mean, noise_variance=var,
            fitted_on=name, n_obs=n, stationary=True, mean_fallback=True,
        )
    noise_var = float(gamma[0] - np.dot(phi, gamma[1:]))
    intercept = mean * (1.0 - float(np.sum(phi)))
    return ArModel(
        p=p, d=d, coefficients=tuple(float(c) for c in phi),
        intercept=intercept, noise_variance=max(0.0, noise_var),
        fitted_on=name, n_obs=n, stationary=_is_stationary(phi),
    )


def _is_stationary(phi: np.ndarray) -> bool:
    p = len(phi)
    if p == 0:
        return True
    companion = np.zeros((p, p))
    companion[0, :] = phi
    if p > 1:
        companion[1:, :-1] = np.eye(p - 1)
    return bool(np.max(np.abs(np.linalg.eigvals(companion))) < 1.0)


def forecast(
    model: ArModel,
    history,
    horizon: int,
    thresholds: ThresholdSet | None = None,
    metric: str | None = None,
    step_seconds: float = 86_400.0,
) -> ForecastResult:
    """Recursive h-step forecast, undifferenced back to levels.

    When forecasting CPK with a threshold set, `breach` reports the first
    step whose predicted level exceeds cpk_sustained.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    hist = np.asarray(history, dtype=np.float64)
    if hist.size < model.p + model.d:
        raise SeriesTooShort(f"history must be >= p + d = {model.p + model.d}")
    if not model.stationary and horizon > LONG_HORIZON_STEPS:
        raise NonstationaryModel(
            f"horizon {horizon} exceeds {LONG_HORIZON_STEPS} steps on a "
            "nonstationary fit"
        )
    diffed, _ = difference(hist, model.d) if model.d else (hist.copy(), [])
    # forecast on the differenced scale
    buf = list(diffed[-model.p:]) if model.p else []
    preds = []
    for _ in range(horizon):
        nxt = model.intercept
        for i, phi in enumerate(model.coefficients):
            nxt += phi * buf[-1 - i]
        preds.append(nxt)
        if model.p:
            buf.append(nxt)
    # integrate back to levels using the tail of each differencing level
    levels = np.array(preds)
    tails = _level_tails(hist, model.d)
    for tail in reversed(tails):
        levels = tail + np.cumsum(levels)
    breach = None
    if thresholds is not None and metric == "CPK":
        over = np.nonzero(levels > thresholds.cpk_sustained)[0]
        if over.size:
            breach = Breach(
                metric="CPK",
                threshold=thresholds.cpk_sustained,
                first_breach_step=int(over[0]) + 1,
            )
    return ForecastResult(
        horizon=horizon,
        values=tuple(float(v) for v in levels),
        step_seconds=step_seconds,
        breach=breach,
    )


def _level_tails(series: np.ndarray, d: int) -> list[float]:
    """Last value at each differencing level 0..d-1, for forecast integration."""
    x = series.astype(np.float64)
    tails = []
    for _ in range(d):
        tails.append(float(x[-1]))
        x = np.diff(x)
    return tails


def evaluate_forecast(predicted, actual) -> dict[str, float]:
    p = np.asarray(predicted, dtype=np.float64)
    a = np.asarray(actual, dtype=np.float64)
    if p.shape != a.shape:
        raise LengthMismatch(f"shapes differ: {p.shape} vs {a.shape}")
    err = p - a
    return {
        "mae": float(np.mean(np.abs(err))),
        "rmse": float(np.sqrt(np.mean(err * err))),
    }
