"""Trajectory alignment and ATE, per-frame depth metrics, CV, depth scaling, drift analysis."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .dataset_io import Trajectory
from .exceptions import DataError, DegenerateInputError, UndefinedCVError

ALIGN_MODES = ("se3", "sim3")
SCALING_STRATEGIES = ("per-frame", "clip", "global", "raw")
DRIFT_MODELS = ("iid", "ar1")
CLIP_D_MIN = 0.3


def _mode(mode: str) -> str:
    m = str(mode).lower()
    if m not in ALIGN_MODES:
        raise ValueError(f"unknown alignment mode {mode!r}; expected se3 or sim3")
    return m


@dataclass
class AlignmentResult:
    rotation: np.ndarray
    translation: np.ndarray
    scale: float
    mode: str

    def apply(self, points: np.ndarray) -> np.ndarray:
        return self.scale * np.asarray(points, dtype=float) @ self.rotation.T + self.translation


def umeyama_align(est, gt, mode: str = "se3") -> AlignmentResult:
    """Closed-form minimizer of sum ||gt_i - (s R est_i + t)||^2, reflections excluded."""
    mode = _mode(mode)
    X = np.asarray(est, dtype=float).reshape(-1, 3)
    Y = np.asarray(gt, dtype=float).reshape(-1, 3)
    if len(X) != len(Y):
        raise DegenerateInputError(f"point sets differ in length ({len(X)} vs {len(Y)})")
    if len(X) < 3:
        raise DegenerateInputError(f"alignment needs >= 3 points, got {len(X)}")
    mx, my = X.mean(axis=0), Y.mean(axis=0)
    Xc, Yc = X - mx, Y - my
    n = len(X)
    cov = Yc.T @ Xc / n
    U, D, Vt = np.linalg.svd(cov)
    # second singular value vanishes for collinear or coincident points
    if D[1] <= 1e-12 * max(D[0], 1e-300) or D[0] == 0:
        raise DegenerateInputError("point configuration is collinear or degenerate")
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1.0
    R = U @ S @ Vt
    if mode == "sim3":
        var_x = np.sum(Xc * Xc) / n
        s = float(np.sum(D * np.diag(S)) / var_x)
    else:
        s = 1.0
    t = my - s * R @ mx
    return AlignmentResult(R, t, s, mode)


def associate(t_est, t_gt, max_dt: float = 0.02):
    """One-to-one nearest-timestamp pairs within ``max_dt``; returns index arrays.

    Candidate pairs are taken closest-first, so each timestamp is used once.
    """
    t_est = np.asarray(t_est, dtype=float)
    t_gt = np.asarray(t_gt, dtype=float)
    if len(t_est) == 0 or len(t_gt) == 0:
        return np.zeros(0, np.intp), np.zeros(0, np.intp)
    order = np.argsort(t_gt, kind="stable")
    sorted_gt = t_gt[order]
    pos = np.searchsorted(sorted_gt, t_est)
    cands = []
    for off in (-1, 0):
        j = np.clip(pos + off, 0, len(sorted_gt) - 1)
        cands.append(j)
    cand = np.stack(cands, axis=1)
    dt = np.abs(sorted_gt[cand] - t_est[:, None])
    pick = np.argmin(dt, axis=1)
    j = cand[np.arange(len(t_est)), pick]
    d = dt[np.arange(len(t_est)), pick]
    ok = np.flatnonzero(d <= max_dt)
    ok = ok[np.lexsort((ok, d[ok]))]
    used = set()
    ei, gi = [], []
    for i in ok:
        g = int(order[j[i]])
        if g in used:
            continue
        used.add(g)
        ei.append(i)
        gi.append(g)
    ei = np.asarray(ei, dtype=np.intp)
    gi = np.asarray(gi, dtype=np.intp)
    srt = np.argsort(ei)
    return ei[srt], gi[srt]


@dataclass
class ATEResult:
    rmse: float
    median: float
    max: float
    pairs: int
    alignment: AlignmentResult
    errors: np.ndarray = field(repr=False)


def ate_rmse(est: Trajectory, gt: Trajectory, mode: str = "se3", max_dt: float = 0.02) -> ATEResult:
    """Translational RMSE after aligning associated estimate positions onto ground truth."""
    ei, gi = associate(est.timestamps, gt.timestamps, max_dt)
    if len(ei) < 3:
        raise DataError(f"only {len(ei)} associated pose pairs (need >= 3)")
    P, Q = est.positions[ei], gt.positions[gi]
    al = umeyama_align(P, Q, mode)
    e = np.linalg.norm(al.apply(P) - Q, axis=1)
    return ATEResult(float(np.sqrt(np.mean(e * e))), float(np.median(e)), float(e.max()),
                     len(ei), al, e)


class TrajectoryAligner(BaseEstimator, TransformerMixin):
    """Fit an alignment of estimated positions onto ground truth; transform applies it."""

    def __init__(self, mode="se3"):
        self.mode = mode

    def fit(self, X, y):
        self.alignment_ = umeyama_align(X, y, self.mode)
        return self

    def transform(self, X):
        return self.alignment_.apply(X)


# ---- depth metrics ---------------------------------------------------------

def _valid(a: np.ndarray) -> np.ndarray:
    return np.isfinite(a) & (a > 0)


@dataclass
class DepthFrameMetrics:
    rmse: float
    mae: float
    absrel: float
    scale: float
    valid_count: int


def depth_frame_metrics(pred, gt) -> DepthFrameMetrics:
    pred = np.asarray(pred, dtype=float)
    gt = np.asarray(gt, dtype=float)
    if pred.shape != gt.shape:
        raise DataError(f"depth shapes differ: {pred.shape} vs {gt.shape}")
    m = _valid(pred) & _valid(gt)
    n = int(m.sum())
    if n == 0:
        raise DataError("no jointly valid depth pixels")
    p, g = pred[m], gt[m]
    d = p - g
    return DepthFrameMetrics(float(np.sqrt(np.mean(d * d))), float(np.mean(np.abs(d))),
                             float(np.mean(np.abs(d) / g)), float(np.median(g / p)), n)


def cv(series) -> float:
    """Coefficient of variation with the population standard deviation."""
    x = np.asarray(series, dtype=float).reshape(-1)
    if len(x) < 2:
        raise ValueError("cv needs at least two values")
    mu = float(np.mean(x))
    if mu == 0:
        raise UndefinedCVError("mean is zero; CV undefined")
    return float(np.std(x) / abs(mu))


@dataclass
class ConsistencyReport:
    series: dict
    means: dict
    sigmas: dict
    cvs: dict

    def rows(self):
        return [(name, self.means[name], self.sigmas[name], self.cvs[name]) for name in self.series]


CONSISTENCY_METRICS = ("rmse", "mae", "absrel", "scale")


def _cv_or_nan(x) -> float:
    try:
        return cv(x)
    except UndefinedCVError:
        return float("nan")


def consistency_report(preds, gts) -> ConsistencyReport:
    """Per-frame metric series with mean, population sigma and CV (NaN where the mean is 0)."""
    frames = [depth_frame_metrics(p, g) for p, g in zip(preds, gts)]
    if len(frames) < 2:
        raise DataError("consistency needs at least two frames")
    series = {name: np.array([getattr(f, name) for f in frames]) for name in CONSISTENCY_METRICS}
    return ConsistencyReport(series, {k: float(np.mean(v)) for k, v in series.items()},
                             {k: float(np.std(v)) for k, v in series.items()},
                             {k: _cv_or_nan(v) for k, v in series.items()})


def _scale_of(pred, gt) -> float:
    return depth_frame_metrics(pred, gt).scale


def apply_scaling_strategy(preds, gts, strategy: str, d_max: float | None = None,
                           global_fraction: float = 0.1) -> list:
    """Correct a predicted depth sequence with one of the four scaling strategies.

    ``clip`` marks values above ``d_max`` (or below 0.3 m) invalid (0.0).
    ``global`` estimates one median(gt/pred) over the leading fraction of frames.
    """
    if strategy == "raw":
        return [np.array(p, copy=True) for p in preds]
    preds = [np.asarray(p, dtype=float) for p in preds]
    if strategy == "clip":
        if d_max is None or not d_max > CLIP_D_MIN:
            raise ValueError(f"clip needs d_max > {CLIP_D_MIN}")
        out = []
        for p in preds:
            q = p.copy()
            q[~(_valid(q) & (q >= CLIP_D_MIN) & (q <= d_max))] = 0.0
            out.append(q)
        return out
    gts = [np.asarray(g, dtype=float) for g in gts]
    if len(gts) != len(preds):
        raise DataError("prediction and ground-truth sequences differ in length")
    if strategy == "per-frame":
        out = []
        for p, g in zip(preds, gts):
            s = _scale_of(p, g)
            out.append(np.where(_valid(p), p * s, p))
        return out
    if strategy == "global":
        n = max(1, int(math.ceil(global_fraction * len(preds))))
        ratios = []
        for p, g in zip(preds[:n], gts[:n]):
            m = _valid(p) & _valid(g)
            if not m.any():
                raise DataError("calibration frame has no jointly valid pixels")
            ratios.append(g[m] / p[m])
        s = float(np.median(np.concatenate(ratios)))
        return [np.where(_valid(p), p * s, p) for p in preds]
    raise ValueError(f"unknown scaling strategy {strategy!r}")


class DepthScaler(BaseEstimator, TransformerMixin):
    """Scaling strategy as an estimator: ``fit`` sees ground truth, ``transform`` corrects."""

    def __init__(self, strategy="raw", d_max=None, global_fraction=0.1):
        self.strategy = strategy
        self.d_max = d_max
        self.global_fraction = global_fraction

    def fit(self, X, y=None):
        if self.strategy not in SCALING_STRATEGIES:
            raise ValueError(f"unknown scaling strategy {self.strategy!r}")
        self.gt_ = None if y is None else list(y)
        return self

    def transform(self, X):
        return apply_scaling_strategy(X, self.gt_, self.strategy, self.d_max, self.global_fraction)


# ---- drift -----------------------------------------------------------------

@dataclass(frozen=True)
class DriftConfig:
    frames: int = 1024
    trials: int = 10000
    model: str = "iid"
    phi: float = 0.0
    sigma: float = 1.0

    def __post_init__(self):
        if self.frames < 2:
            raise ValueError("frames must be >= 2")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.model not in DRIFT_MODELS:
            raise ValueError(f"unknown drift model {self.model!r}")
        if not 0 <= self.phi <= 1:
            raise ValueError("phi must lie in [0, 1]")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")


@dataclass
class DriftResult:
    n: np.ndarray
    std: np.ndarray
    slope: float  # NaN when the curve is identically zero


def drift_errors(cfg: DriftConfig, rng) -> np.ndarray:
    """Per-step errors, shape (trials, frames); stationary AR(1) with unit-free std ``sigma``."""
    w = rng.standard_normal((cfg.trials, cfg.frames))
    phi = 0.0 if cfg.model == "iid" else cfg.phi
    if phi == 0.0:
        return cfg.sigma * w
    eps = np.empty_like(w)
    eps[:, 0] = w[:, 0]
    a = math.sqrt(max(0.0, 1.0 - phi * phi))
    for i in range(1, cfg.frames):
        eps[:, i] = phi * eps[:, i - 1] + a * w[:, i]
    return cfg.sigma * eps


def drift_variance_theory(n: int, phi: float, sigma: float = 1.0) -> float:
    """Var of the sum of n stationary AR(1) terms: sum of all pairwise covariances."""
    lags = np.arange(1, n)
    return float(sigma ** 2 * (n + 2.0 * np.sum((n - lags) * phi ** lags)))


def fit_loglog_slope(n: np.ndarray, std: np.ndarray) -> float:
    half = len(n) // 2
    x, y = n[half:], std[half:]
    if np.any(y <= 0):
        return float("nan")
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def drift_variance_mc(cfg: DriftConfig, rng=None) -> DriftResult:
    rng = rng if rng is not None else np.random.default_rng(0)
    eps = drift_errors(cfg, rng)
    cum = np.cumsum(eps, axis=1)
    std = cum.std(axis=0)
    n = np.arange(1, cfg.frames + 1)
    return DriftResult(n, std, fit_loglog_slope(n, std))


# ---- CSV -------------------------------------------------------------------

ATE_HEADER = ("sequence", "mode", "rmse", "median", "max", "pairs")
CONSISTENCY_HEADER = ("metric", "mean", "sigma", "cv")
DRIFT_HEADER = ("N", "std", "slope")


def write_csv(path, header, rows) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in r])


def read_csv(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))
