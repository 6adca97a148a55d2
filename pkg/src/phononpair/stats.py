"""Second-order correlation estimators, classical bounds and exponential fits."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Mapping, Optional, Sequence, Union

import numpy as np
from scipy.optimize import least_squares

from .detection import ClickRecords

DEFAULT_BOOTSTRAP = 1000


class UndefinedEstimateError(ValueError):
    pass


class UnderdeterminedFitError(ValueError):
    pass


class FitError(RuntimeError):
    def __init__(self, message: str, diagnostics: Optional[dict] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass(frozen=True)
class G2Estimate:
    value: float
    sigma: float
    delta_N: int = 0
    window: Optional[float] = None
    pulse: Optional[int] = None
    coincidences: int = 0
    singles_A: int = 0
    singles_B: int = 0
    trials: int = 0
    sigma_poisson: float = float("nan")

    @property
    def counts(self) -> tuple[int, int, int, int]:
        return self.coincidences, self.singles_A, self.singles_B, self.trials

    def as_row(self) -> dict:
        return asdict(self)


def _pair_counts(records: ClickRecords, pulse: int, delta_N: int, window: Optional[float]):
    a = records.counts(pulse, 0, window).astype(np.int64)
    b = records.counts(pulse, 1, window).astype(np.int64)
    if delta_N >= 0:
        return a[: a.size - delta_N], b[delta_N:]
    return a[-delta_N:], b[: b.size + delta_N]


def g2_from_counts(a: np.ndarray, b: np.ndarray, n_boot: int = DEFAULT_BOOTSTRAP, seed=0):
    """``N * sum(a*b) / (sum(a) * sum(b))`` with a trial-level bootstrap sigma.

    Returns ``(value, sigma, coincidences, singles_A, singles_B)``.
    """
    n = a.size
    c = a * b
    C, SA, SB = int(c.sum()), int(a.sum()), int(b.sum())
    if SA == 0 or SB == 0:
        raise UndefinedEstimateError(f"zero singles (A={SA}, B={SB}); g2 undefined")
    value = n * C / (SA * SB)
    if n_boot <= 0:
        return value, float("nan"), C, SA, SB

    # Only trials with a click matter for the sums, so a multinomial resample
    # of all n trials is drawn as Binomial(n, K/n) hits spread over the K
    # active trials.
    active = np.flatnonzero((a > 0) | (b > 0))
    K = active.size
    av, bv, cv = a[active], b[active], c[active]
    boots = np.empty(n_boot)
    entropy = [int(x) for x in seed] if isinstance(seed, (tuple, list)) else [int(seed)]
    ss = np.random.SeedSequence(entropy + [0x62007])
    for r, child in enumerate(ss.spawn(n_boot)):
        rng = np.random.default_rng(child)
        hits = rng.binomial(n, K / n)
        w = np.bincount(rng.integers(0, K, hits), minlength=K)
        sa, sb = w @ av, w @ bv
        boots[r] = n * (w @ cv) / (sa * sb) if sa and sb else np.nan
    boots = boots[np.isfinite(boots)]
    sigma = float(np.std(boots, ddof=1)) if boots.size > 1 else float("nan")
    return value, sigma, C, SA, SB


def g2_cross_trials(
    records: ClickRecords,
    pulse: int,
    delta_N: int = 0,
    window: Optional[float] = None,
    n_boot: int = DEFAULT_BOOTSTRAP,
    seed=0,
) -> G2Estimate:
    """Cross-detector g2 between trial ``i`` (detector A) and trial ``i + delta_N`` (detector B)."""
    if records.n_trials < 2:
        raise ValueError("need at least two trials")
    dur = records.durations.get(pulse)
    if window is not None and dur is not None and window > dur * (1 + 1e-12):
        raise ValueError(f"window {window:.3e} s exceeds pulse {pulse} window {dur:.3e} s")
    a, b = _pair_counts(records, pulse, delta_N, window)
    value, sigma, C, SA, SB = g2_from_counts(a, b, n_boot, seed)
    sp = value * math.sqrt(1 / C + 1 / SA + 1 / SB) if C else float("inf")
    return G2Estimate(value, sigma, delta_N, window, pulse, C, SA, SB, int(a.size), sp)


# -- Cauchy-Schwarz bound ----------------------------------------------------

Number = Union[float, G2Estimate]


def _val(x: Number) -> tuple[float, float]:
    if isinstance(x, G2Estimate):
        return x.value, x.sigma
    if isinstance(x, tuple):
        return float(x[0]), float(x[1])
    return float(x), 0.0


def cs_rhs(g2_r: float, g2_b: float, eta: float) -> float:
    """Classical bound ``(eta^2 g_r + g_b + 4 eta sqrt(g_r g_b)) / (1 + eta)^2``."""
    if g2_r < 0 or g2_b < 0 or eta < 0:
        raise ValueError("g2 values and eta must be nonnegative")
    if math.isinf(eta):
        return g2_r
    return (eta**2 * g2_r + g2_b + 4 * eta * math.sqrt(g2_r * g2_b)) / (1 + eta) ** 2


def optimal_eta(g2_r: float, g2_b: float) -> float:
    """Ratio parameter maximizing :func:`cs_rhs`; ``inf`` when the supremum is ``g_r``."""
    if g2_r == 0 and g2_b == 0:
        return 1.0
    if g2_b == 0:
        return math.inf
    r = math.sqrt(g2_r / g2_b)
    if 0.5 < r < 2.0:
        return (2 * r - 1) / (r * (2 - r))
    return 0.0 if r <= 0.5 else math.inf


def max_bound(g2_r: float, g2_b: float) -> float:
    return cs_rhs(g2_r, g2_b, optimal_eta(g2_r, g2_b))


@dataclass(frozen=True)
class CSBound:
    bound: float
    sigma: float
    eta: float


def cs_bound(g2_r: Number, g2_b: Number, eta: Optional[float] = None) -> CSBound:
    """Bound at ``eta``, or maximized over ``eta`` when none is given.

    The sigma is first-order propagation of the reference uncertainties.
    """
    (r, sr), (b, sb) = _val(g2_r), _val(g2_b)
    fn = (lambda x, y: max_bound(x, y)) if eta is None else (lambda x, y: cs_rhs(x, y, eta))
    hr, hb = 1e-6 * max(r, 1e-3), 1e-6 * max(b, 1e-3)
    dr = (fn(r + hr, b) - fn(max(r - hr, 0.0), b)) / (r + hr - max(r - hr, 0.0))
    db = (fn(r, b + hb) - fn(r, max(b - hb, 0.0))) / (b + hb - max(b - hb, 0.0))
    sigma = math.hypot(dr * sr, db * sb)
    return CSBound(fn(r, b), sigma, optimal_eta(r, b) if eta is None else eta)


def violation_sigmas(g2: Number, bound: float, bound_sigma: float = 0.0) -> float:
    v, s = _val(g2)
    den = math.hypot(s, bound_sigma)
    if den == 0:
        return math.copysign(math.inf, v - bound) if v != bound else 0.0
    return (v - bound) / den


@dataclass(frozen=True)
class CSBoundReport:
    """``sigmas`` divides by the g2 uncertainty alone; ``sigmas_propagated`` also includes the bound's."""

    g2: G2Estimate
    g2_r: G2Estimate
    g2_b: G2Estimate
    eta: float
    bound: float
    bound_sigma: float
    violated: bool
    sigmas: float
    sigmas_propagated: float

    def lines(self, label: str = "g2") -> list[str]:
        verdict = "VIOLATED" if self.violated else "not violated"
        return [
            f"{label} = {self.g2.value:.4f} +/- {self.g2.sigma:.4f}",
            f"{label}_bound (eta={self.eta:.4g}) = {self.bound:.4f} +/- {self.bound_sigma:.4f}",
            f"{label}_cauchy_schwarz = {verdict} by {self.sigmas:.2f} sigma "
            f"({self.sigmas_propagated:.2f} sigma incl. bound error)",
        ]


def _as_estimate(x: Number) -> G2Estimate:
    if isinstance(x, G2Estimate):
        return x
    v, s = _val(x)
    return G2Estimate(v, s)


def cs_report(g2: Number, g2_r: Number, g2_b: Number, eta: Optional[float] = None) -> CSBoundReport:
    g, r, b = _as_estimate(g2), _as_estimate(g2_r), _as_estimate(g2_b)
    cb = cs_bound(r, b, eta)
    return CSBoundReport(
        g, r, b, cb.eta, cb.bound, cb.sigma,
        violated=g.value > cb.bound,
        sigmas=violation_sigmas(g, cb.bound, 0.0),
        sigmas_propagated=violation_sigmas(g, cb.bound, cb.sigma),
    )


# -- exponential fits --------------------------------------------------------


@dataclass
class FitResult:
    model: str
    amplitude: float
    decay_constant: float
    offset: float
    covariance: np.ndarray
    residual_norm: float
    rise_constant: Optional[float] = None
    n_points: int = 0
    flags: tuple[str, ...] = ()
    nfev: int = 0

    @property
    def decay_sigma(self) -> float:
        return float(math.sqrt(max(self.covariance[1, 1], 0.0)))

    def predict(self, x) -> np.ndarray:
        x = np.asarray(x, float)
        if self.model == "single":
            return self.offset + self.amplitude * np.exp(-x / self.decay_constant)
        return self.offset + self.amplitude * (1 - np.exp(-x / self.rise_constant)) * np.exp(-x / self.decay_constant)

    def as_row(self) -> dict:
        return {
            "model": self.model,
            "amplitude": self.amplitude,
            "decay_constant": self.decay_constant,
            "decay_sigma": self.decay_sigma,
            "rise_constant": self.rise_constant if self.rise_constant is not None else "",
            "offset": self.offset,
            "residual_norm": self.residual_norm,
            "n_points": self.n_points,
            "flags": "|".join(self.flags),
        }


def _loglinear_guess(x, y, offset):
    """Amplitude and decay constant from a line through ``log|y - offset|``."""
    d = y - offset
    s = 1.0 if np.sum(d) >= 0 else -1.0
    ok = s * d > 0
    if ok.sum() < 2:
        return s * max(np.abs(d).max(), 1e-300), max(np.ptp(x), 1e-300) / 2
    slope, icpt = np.polyfit(x[ok], np.log(s * d[ok]), 1)
    tau = -1.0 / slope if slope < 0 else max(np.ptp(x), 1e-300)
    return s * math.exp(icpt), tau


def fit_exponential(
    x: Sequence[float],
    y: Sequence[float],
    model: str = "single",
    sigma: Optional[Sequence[float]] = None,
    offset: Optional[float] = None,
    max_nfev: int = 5000,
) -> FitResult:
    """Levenberg-Marquardt fit of ``offset + A exp(-x/tau)`` or ``offset + A (1 - exp(-x/t_s)) exp(-x/t_l)``.

    ``offset`` fixes the baseline instead of fitting it. Time constants are
    fitted in log space so they stay positive.
    """
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    if model not in ("single", "rise-fall"):
        raise ValueError(f"unknown model {model!r}")
    n_par = (3 if model == "single" else 4) - (offset is not None)
    if x.size < n_par + 1:
        raise UnderdeterminedFitError(f"{x.size} points cannot constrain {n_par} parameters")
    w = np.ones_like(y) if sigma is None else 1.0 / np.asarray(sigma, float)
    if not np.all(np.isfinite(w)):
        raise ValueError("sigma must be positive and finite")
    order = np.argsort(x)
    x, y, w = x[order], y[order], w[order]
    scale = float(np.max(np.abs(x))) or 1.0
    xs = x / scale
    fixed = offset is not None

    if model == "single":
        off0 = offset if fixed else float(y[-1] - 0.05 * (y[0] - y[-1]))
        A0, tau0 = _loglinear_guess(xs, y, off0)
        p0 = [A0, math.log(tau0)] + ([] if fixed else [off0])

        def f(p):
            off = offset if fixed else p[2]
            return off + p[0] * np.exp(-xs / math.exp(p[1]))
    else:
        tail = xs >= np.median(xs)
        off0 = offset if fixed else float(y[-1] - 0.05 * abs(y.max() - y[-1]))
        A0, tl0 = _loglinear_guess(xs[tail], y[tail], off0)
        ts0 = max(xs[np.argmax(np.abs(y - off0))] / 2.0, xs[1] if xs.size > 1 else 1e-3)
        p0 = [A0, math.log(tl0), math.log(ts0)] + ([] if fixed else [off0])

        def f(p):
            off = offset if fixed else p[3]
            return off + p[0] * (1 - np.exp(-xs / math.exp(p[2]))) * np.exp(-xs / math.exp(p[1]))

    def resid(p):
        with np.errstate(over="ignore", invalid="ignore"):
            r = w * (f(p) - y)
        return np.where(np.isfinite(r), r, 1e150)

    method = "lm" if x.size >= len(p0) else "trf"
    sol = least_squares(resid, p0, method=method, max_nfev=max_nfev, x_scale="jac")
    diag = {"status": sol.status, "message": sol.message, "nfev": sol.nfev, "x": sol.x.tolist()}
    if sol.status <= 0:
        raise FitError(f"exponential fit did not converge: {sol.message}", diag)

    J = sol.jac
    dof = max(x.size - len(p0), 1)
    s2 = float(sol.fun @ sol.fun) / dof if sigma is None else 1.0
    try:
        cov_p = np.linalg.pinv(J.T @ J) * s2
    except np.linalg.LinAlgError:
        cov_p = np.full((len(p0), len(p0)), np.nan)

    p = sol.x
    tau = math.exp(p[1]) * scale
    # map (A, log tau, [log t_s], [offset]) -> (A, tau, offset[, t_s])
    jac = np.zeros((4, len(p)))
    jac[0, 0] = 1.0
    jac[1, 1] = tau
    if model == "rise-fall":
        jac[3, 2] = math.exp(p[2]) * scale
    if not fixed:
        jac[2, len(p) - 1] = 1.0
    cov = jac @ cov_p @ jac.T
    flags = []
    amp = float(p[0])
    sA = math.sqrt(max(cov[0, 0], 0.0))
    if abs(amp) <= 1e-9 * max(np.abs(y).max(), 1e-300) or (np.isfinite(sA) and abs(amp) < 2 * sA and sA > 0):
        flags.append("degenerate")
    elif not (np.min(np.diff(x), initial=np.inf) / 10 < tau < 10 * np.ptp(x)):
        # decay constant not resolved by the sampled range
        flags.append("degenerate")
    off =float(offset if fixed else p[-1])
    return FitResult(
        model=model,
        amplitude=amp,
        decay_constant=tau,
        offset=off,
        covariance=cov,
        residual_norm=float(np.linalg.norm(f(p) - y)),
        rise_constant=math.exp(p[2]) * scale if model == "rise-fall" else None,
        n_points=int(x.size),
        flags=tuple(flags),
        nfev=int(sol.nfev),
    )


def fit_decay_curve(x, values, sigmas=None, offset: Optional[float] = None) -> FitResult:
    if len(x) < 3:
        raise UnderdeterminedFitError("need at least 3 points for a decay fit")
    return fit_exponential(x, values, "single", sigma=sigmas, offset=offset)


def _sigmas_or_none(ests: Sequence[G2Estimate]):
    s = np.array([e.sigma for e in ests])
    return s if np.all(np.isfinite(s) & (s > 0)) else None


def g2_windowed_decay(
    records: ClickRecords,
    windows: Sequence[float],
    pulse: int = 2,
    delta_N: int = 0,
    n_boot: int = DEFAULT_BOOTSTRAP,
    seed: int = 0,
) -> tuple[list[G2Estimate], FitResult]:
    """g2 inside growing analysis windows and its fit to ``offset + A exp(-tau_f / t_d1)``."""
    windows = list(windows)
    if len(windows) < 3:
        raise UnderdeterminedFitError("need at least 3 windows")
    if any(b <= a for a, b in zip(windows, windows[1:])):
        raise ValueError("windows must be increasing")
    ests = [g2_cross_trials(records, pulse, delta_N, w, n_boot, seed) for w in windows]
    fit = fit_decay_curve(windows, [e.value for e in ests], _sigmas_or_none(ests))
    return ests, fit


def g2_vs_delay(
    delays: Sequence[float],
    estimates: Union[Sequence[G2Estimate], Mapping[float, ClickRecords]],
    window: Optional[float] = None,
    thermal_floor: Optional[float] = 2.0,
    pulse: int = 2,
    n_boot: int = DEFAULT_BOOTSTRAP,
    seed: int = 0,
) -> tuple[list[G2Estimate], FitResult]:
    """Fit ``floor + A exp(-delta_T / t_d2)`` to the windowed pulse-2 g2 at each delay."""
    delays = list(delays)
    if len(set(delays)) < 3:
        raise UnderdeterminedFitError("need at least 3 distinct delays")
    if isinstance(estimates, Mapping):
        ests = [g2_cross_trials(estimates[d], pulse, 0, window, n_boot, seed) for d in delays]
    else:
        ests = list(estimates)
    fit = fit_decay_curve(delays, [e.value for e in ests], _sigmas_or_none(ests), offset=thermal_floor)
    return ests, fit


@dataclass(frozen=True)
class FourfoldTable:
    """Trials classified by a twofold (A and B) click in pulse 1 and in pulse 2."""

    n_22: int
    n_20: int
    n_02: int
    n_00: int
    n_trials: int
    n_2_zero: int = 0
    n_zero_2: int = 0

    @property
    def expected_independent_22(self) -> float:
        """``n_22`` expected if the pulse-1 and pulse-2 pair events were independent."""
        if self.n_trials == 0:
            return 0.0
        return (self.n_22 + self.n_20) * (self.n_22 + self.n_02) / self.n_trials

    def as_rows(self) -> list[dict]:
        return [
            {"pattern": "22", "count": self.n_22},
            {"pattern": "20", "count": self.n_20},
            {"pattern": "02", "count": self.n_02},
            {"pattern": "00", "count": self.n_00},
            {"pattern": "2_zero", "count": self.n_2_zero},
            {"pattern": "zero_2", "count": self.n_zero_2},
            {"pattern": "N", "count": self.n_trials},
        ]


def fourfold_coincidences(records: ClickRecords) -> FourfoldTable:
    """``2`` marks a twofold click; ``zero`` marks a pulse without any click."""
    if records.n_trials == 0:
        return FourfoldTable(0, 0, 0, 0, 0)
    two = {}
    none = {}
    for p in (1, 2):
        a, b = records.counts(p, 0), records.counts(p, 1)
        two[p] = (a > 0) & (b > 0)
        none[p] = (a + b) == 0
    return FourfoldTable(
        n_22=int(np.sum(two[1] & two[2])),
        n_20=int(np.sum(two[1] & ~two[2])),
        n_02=int(np.sum(~two[1] & two[2])),
        n_00=int(np.sum(~two[1] & ~two[2])),
        n_trials=records.n_trials,
        n_2_zero=int(np.sum(two[1] & none[2])),
        n_zero_2=int(np.sum(none[1] & two[2])),
    )


def pump_probe_constants(
    delays: Sequence[float],
    response: Sequence[float],
    baseline: float,
    tail_start: float = 1e-6,
    sigma: Optional[Sequence[float]] = None,
) -> tuple[FitResult, FitResult]:
    """Slow and fast constants of a pump-probe curve.

    The tail (``delay >= tail_start``) is fitted to ``baseline + A exp(-t/t_l)``.
    The early points, with the ``t_l`` factor divided out, give
    ``A - (y - baseline) exp(t/t_l) = B exp(-t/t_s)``.
    """
    t = np.asarray(delays, float)
    y = np.asarray(response, float) - baseline
    s = None if sigma is None else np.asarray(sigma, float)
    tail = t >= tail_start
    if tail.sum() < 3 or (~tail).sum() < 3:
        raise UnderdeterminedFitError("need at least 3 delays on each side of tail_start")
    slow = fit_exponential(t[tail], y[tail], "single", None if s is None else s[tail], offset=0.0)
    slow = FitResult(
        slow.model, slow.amplitude, slow.decay_constant, baseline, slow.covariance,
        slow.residual_norm, None, slow.n_points, slow.flags, slow.nfev,
    )
    early = ~tail
    z = slow.amplitude - y[early] * np.exp(t[early] / slow.decay_constant)
    sz = None if s is None else s[early] * np.exp(t[early] / slow.decay_constant)
    fast = fit_exponential(t[early], z, "single", sz, offset=0.0)
    return slow, fast
