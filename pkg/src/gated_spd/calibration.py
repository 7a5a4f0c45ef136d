"""
Least-squares fitting of afterpulse decay curves and bias slopes, and the
inverse problem from anchored observables back to detector parameters.

Everything runs on one Levenberg-Marquardt (damped Gauss-Newton) engine.
Positive quantities are optimized as logarithms.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import nnls

from .detector import (
    DetectorParams,
    dark_prob,
    detection_efficiency,
    overbias_for_efficiency,
    trigger_probs,
)

MAX_ITER = 200
XTOL = 1e-10
N_STARTS = 8
LOG_FLOOR = -700.0
LOG_CEIL = 700.0


class FitError(RuntimeError):
    """Raised when a fit cannot be trusted; ``best`` holds the best attempt."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class CalibrationError(FitError):
    pass


@dataclass
class LMResult:
    x: np.ndarray
    cost: float  # 0.5 * sum(r**2)
    residuals: np.ndarray
    jac: np.ndarray
    n_iter: int
    converged: bool


def _cost(r: np.ndarray) -> float:
    with np.errstate(over="ignore", invalid="ignore"):
        c = 0.5 * float(r @ r)
    return c if np.isfinite(c) else math.inf


def numeric_jacobian(fun, x, r0=None, rel_step=1e-7):
    r0 = fun(x) if r0 is None else r0
    J = np.empty((r0.size, x.size))
    for j in range(x.size):
        h = rel_step * max(1.0, abs(x[j]))
        xp = x.copy()
        xp[j] += h
        J[:, j] = (fun(xp) - r0) / h
    return J


def levenberg_marquardt(
    fun: Callable[[np.ndarray], np.ndarray],
    x0,
    jac: Callable[[np.ndarray], np.ndarray] | None = None,
    max_iter: int = MAX_ITER,
    xtol: float = XTOL,
    lower: float = LOG_FLOOR,
    upper: float = LOG_CEIL,
) -> LMResult:
    """Minimize 0.5*|fun(x)|^2.

    Stops when the accepted step is below ``xtol`` relative to |x| (converged)
    or after ``max_iter`` iterations (not converged).
    """
    x = np.asarray(x0, dtype=float).copy()
    r = fun(x)
    cost = _cost(r)
    jac = jac or (lambda z: numeric_jacobian(fun, z))
    lam = 1e-3
    J = jac(x)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        g = J.T @ r
        A = J.T @ J
        diag = np.diag(A).copy()
        diag[diag == 0] = 1.0
        while True:
            try:
                step = np.linalg.solve(A + lam * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                if lam > 1e16:
                    step = np.zeros_like(x)
                    break
                continue
            x_new = np.clip(x + step, lower, upper)
            r_new = fun(x_new)
            cost_new = _cost(r_new)
            if np.isfinite(cost_new) and cost_new <= cost:
                break
            lam *= 10.0
            if lam > 1e16:
                step = np.zeros_like(x)
                break
        if not np.any(step):
            converged = True
            break
        small = np.linalg.norm(x_new - x) <= xtol * (np.linalg.norm(x) + xtol)
        x, r, cost = x_new, r_new, cost_new
        lam = max(lam / 10.0, 1e-12)
        J = jac(x)
        if small or cost == 0.0:
            converged = True
            break
    return LMResult(x, cost, r, J, it, converged)


# --------------------------------------------------------------------- decays


@dataclass(frozen=True)
class DecayDataset:
    blank_time: np.ndarray  # s
    p_ap: np.ndarray
    sigma: np.ndarray | None = None

    def __post_init__(self):
        t = np.asarray(self.blank_time, dtype=float)
        y = np.asarray(self.p_ap, dtype=float)
        object.__setattr__(self, "blank_time", t)
        object.__setattr__(self, "p_ap", y)
        if t.shape != y.shape:
            raise ValueError("blank_time and p_ap must have the same length")
        if np.any(t < 0):
            raise ValueError("blank times must be >= 0")
        if self.sigma is not None:
            s = np.asarray(self.sigma, dtype=float)
            if s.shape != t.shape:
                raise ValueError("sigma must match the data length")
            if np.any(~(s > 0)):
                raise ValueError("sigma must be > 0")
            object.__setattr__(self, "sigma", s)

    def __len__(self):
        return self.blank_time.size

    @property
    def weights(self) -> np.ndarray:
        return np.ones_like(self.p_ap) if self.sigma is None else 1.0 / self.sigma

    @classmethod
    def from_csv(cls, path) -> "DecayDataset":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise ValueError(f"{path}: no data rows")
        missing = {"t_seconds", "p_ap"} - set(rows[0])
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        t = [float(r["t_seconds"]) for r in rows]
        y = [float(r["p_ap"]) for r in rows]
        sig = None
        if "sigma" in rows[0] and all(r["sigma"] not in ("", None) for r in rows):
            sig = [float(r["sigma"]) for r in rows]
        return cls(t, y, sig)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["t_seconds", "p_ap", "sigma"])
            for i in range(len(self)):
                s = "" if self.sigma is None else repr(float(self.sigma[i]))
                out.writerow([repr(float(self.blank_time[i])), repr(float(self.p_ap[i])), s])


def decay_model(t, amplitudes, lifetimes, constant):
    t = np.asarray(t, dtype=float)
    out = np.full(t.shape, float(constant))
    for a, tau in zip(amplitudes, lifetimes):
        out += a * np.exp(-t / tau)
    return out


@dataclass(frozen=True)
class DecayFit:
    amplitudes: np.ndarray
    lifetimes: np.ndarray
    constant: float
    chi2: float
    residual_norm: float
    covariance: np.ndarray  # over (A_1..A_k, tau_1..tau_k, C)
    n_points: int
    n_iter: int
    converged: bool

    @property
    def k(self) -> int:
        return self.amplitudes.size

    @property
    def n_params(self) -> int:
        return 2 * self.k + 1

    @property
    def stderr(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))

    def __call__(self, t):
        return decay_model(t, self.amplitudes, self.lifetimes, self.constant)

    def decayed_fraction(self, t: float) -> float:
        """Share of the zero-blanking value gone after blanking for ``t``."""
        y0 = float(self(0.0))
        return 1.0 - float(self(t)) / y0 if y0 > 0 else math.nan

    def penalized_chi2(self) -> float:
        """chi^2 plus 2 per free parameter, for comparing species counts."""
        return self.chi2 + 2.0 * self.n_params


def _unpack(theta, k):
    return np.exp(theta[:k]), np.exp(theta[k : 2 * k]), float(np.exp(theta[2 * k]))


def _start_lifetimes(t: np.ndarray, k: int, n_starts: int = N_STARTS) -> list[np.ndarray]:
    positive = t[t > 0]
    span_lo = positive.min() if positive.size else 1.0
    span_hi = t.max() if t.max() > 0 else 1.0
    if span_hi <= span_lo:
        span_hi = span_lo * 10.0
    seeds = np.geomspace(span_lo / 2.0, span_hi * 2.0, n_starts)
    spread = (span_hi * 2.0 / (span_lo / 2.0)) ** (1.0 / max(k, 1))
    starts = []
    for s in seeds:
        starts.append(np.array([s * spread**m for m in range(k)]) / spread ** ((k - 1) / 2.0))
    return starts


def _linear_amplitudes(t, y, w, taus):
    X = np.column_stack([np.exp(-t[:, None] / taus[None, :]), np.ones_like(t)])
    coef, _ = nnls(X * w[:, None], y * w)
    return coef[:-1], coef[-1]


def fit_decay(data: DecayDataset, k: int, n_starts: int = N_STARTS) -> DecayFit:
    """Weighted least-squares fit of sum_i A_i exp(-t/tau_i) + C.

    Each of ``n_starts`` log-spaced lifetime seeds gets non-negative linear
    amplitudes and is then refined by Levenberg-Marquardt on log parameters.
    The lowest chi^2 wins; ties go to the earliest start.
    """
    if k not in (1, 2, 3):
        raise ValueError(f"k must be 1, 2 or 3, got {k}")
    if len(data) < 2 * k + 2:
        raise ValueError(f"need at least {2 * k + 2} points for k={k}, got {len(data)}")
    t, y, w = data.blank_time, data.p_ap, data.weights
    scale = max(float(np.max(np.abs(y))), 1e-300)
    floor = scale * 1e-12

    def resid(theta):
        with np.errstate(over="ignore", invalid="ignore", under="ignore"):
            a, tau, c = _unpack(theta, k)
            r = (decay_model(t, a, tau, c) - y) * w
        return r if np.all(np.isfinite(r)) else np.full_like(r, np.inf)

    def jac(theta):
        a, tau, c = _unpack(theta, k)
        J = np.empty((t.size, 2 * k + 1))
        for i in range(k):
            e = np.exp(-t / tau[i])
            J[:, i] = a[i] * e
            J[:, k + i] = a[i] * e * t / tau[i]
        J[:, 2 * k] = c
        return J * w[:, None]

    best = None
    for taus in _start_lifetimes(t, k, n_starts):
        amps, const = _linear_amplitudes(t, y, w, taus)
        theta0 = np.log(np.concatenate([np.maximum(amps, floor), taus, [max(const, floor)]]))
        res = levenberg_marquardt(resid, theta0, jac)
        if not np.isfinite(res.cost):
            continue
        if best is None or res.cost < best.cost:
            best = res
    if best is None:
        raise FitError("no start produced a finite objective")

    a, tau, c = _unpack(best.x, k)
    order = np.argsort(tau)
    a, tau = a[order], tau[order]
    perm = np.concatenate([order, k + order, [2 * k]])
    J = best.jac[:, perm]
    chi2 = 2.0 * best.cost
    natural = np.concatenate([a, tau, [c]])
    # d(model)/d(p) = d(model)/d(log p) / p; judged in natural units so a
    # constant pinned near zero does not look degenerate
    J_nat = J / natural[None, :]
    col = np.linalg.norm(J_nat, axis=0)
    col[col == 0] = 1.0
    Js = J_nat / col
    sv = np.linalg.svd(Js, compute_uv=False)
    rank_ok = sv[-1] > 1e-10 * sv[0]
    fit_cov = None
    if rank_ok:
        inv = np.linalg.inv(Js.T @ Js)
        fit_cov = inv / np.outer(col, col)
        if data.sigma is None:
            dof = max(t.size - natural.size, 1)
            fit_cov = fit_cov * chi2 / dof
    fit = DecayFit(
        amplitudes=a,
        lifetimes=tau,
        constant=c,
        chi2=chi2,
        residual_norm=math.sqrt(chi2),
        covariance=fit_cov if fit_cov is not None else np.full((natural.size,) * 2, np.nan),
        n_points=t.size,
        n_iter=best.n_iter,
        converged=best.converged,
    )
    if not rank_ok:
        raise FitError(f"k={k} fit is rank deficient", best=fit)
    if not best.converged:
        raise FitError(f"k={k} fit did not converge in {MAX_ITER} iterations", best=fit)
    return fit


def compare_species(data: DecayDataset, ks: Sequence[int] = (1, 2, 3)) -> list[dict]:
    """Penalized chi^2 for each species count; reported, never auto-selected."""
    out = []
    for k in ks:
        try:
            f = fit_decay(data, k)
        except (FitError, ValueError) as exc:
            out.append({"k": k, "chi2": math.nan, "penalized_chi2": math.nan, "error": str(exc)})
            continue
        out.append({"k": k, "chi2": f.chi2, "penalized_chi2": f.penalized_chi2(), "error": ""})
    return out


def write_fit_report(fit: DecayFit, csv_path, text_path=None) -> None:
    names = [f"amplitude_{i + 1}" for i in range(fit.k)]
    names += [f"lifetime_{i + 1}_s" for i in range(fit.k)]
    names += ["constant"]
    values = np.concatenate([fit.amplitudes, fit.lifetimes, [fit.constant]])
    err = fit.stderr
    from .io import atomic_write

    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    out.writerow(["parameter", "value", "stderr"])
    for n, v, e in zip(names, values, err):
        out.writerow([n, repr(float(v)), repr(float(e))])
    out.writerow(["chi2", repr(float(fit.chi2)), ""])
    out.writerow(["decayed_fraction_12us", repr(float(fit.decayed_fraction(12e-6))), ""])
    atomic_write(csv_path, buf.getvalue())
    if text_path is not None:
        lines = [f"{fit.k}-exponential + constant fit, {fit.n_points} points, {fit.n_iter} iterations"]
        for n, v, e in zip(names, values, err):
            lines.append(f"  {n:<16s} {v: .6e}  +/- {e:.2e}")
        lines.append(f"  chi2             {fit.chi2:.6g}")
        lines.append(f"  decayed by 12 us {100 * fit.decayed_fraction(12e-6):.1f} %")
        atomic_write(text_path, "\n".join(lines) + "\n")


# ----------------------------------------------------------------- bias slope


@dataclass(frozen=True)
class BiasSlope:
    slope: float  # decades per volt
    intercept: float  # log10 at v = 0
    slope_err: float


def fit_bias_slope(points) -> BiasSlope:
    """Ordinary least squares of log10(p_apl) against bias voltage."""
    pts = [(float(v), float(p)) for v, p in points]
    if len(pts) < 3:
        raise ValueError(f"need at least 3 points, got {len(pts)}")
    for v, p in pts:
        if not p > 0:
            raise ValueError(f"p_apl must be > 0, got {p} at {v} V")
    v = np.array([q[0] for q in pts])
    y = np.log10([q[1] for q in pts])
    X = np.column_stack([v, np.ones_like(v)])
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    dof = v.size - 2
    s2 = float(resid @ resid) / dof if dof > 0 else 0.0
    cov = s2 * np.linalg.inv(X.T @ X)
    return BiasSlope(float(coef[0]), float(coef[1]), math.sqrt(max(cov[0, 0], 0.0)))


def fit_temperature_halving(temperatures, p_d) -> float:
    """Cooling step that halves the dark probability, from a log2-linear fit."""
    t = np.asarray(temperatures, dtype=float)
    y = np.log2(np.asarray(p_d, dtype=float))
    if t.size < 2:
        raise ValueError("need at least 2 temperatures")
    slope = np.polyfit(t, y, 1)[0]
    return 1.0 / slope


# ---------------------------------------------------------------- calibration


@dataclass(frozen=True)
class Target:
    """An anchored observable and the conditions it was quoted at.

    ``observable`` is one of ``p_d`` (dark probability per gate), ``de``
    (detection efficiency at ``v_ov``) or ``ap_short_fraction`` (share of the
    afterpulse probability that falls within ``blank_time`` at ``gate_rate``).
    The operating bias is ``v_ov`` if given, else the bias reaching ``de``.
    """

    observable: str
    value: float
    temperature: float = 220.0
    de: float | None = None
    v_ov: float | None = None
    gate_width: float = 1.2e-9
    blank_time: float = 12e-6
    gate_rate: float = 500e3

    def __post_init__(self):
        if self.observable not in OBSERVABLES:
            raise ValueError(f"unknown observable {self.observable!r}; expected one of {sorted(OBSERVABLES)}")
        if not self.value > 0:
            raise ValueError("target values must be > 0")


def _bias(params: DetectorParams, target: Target) -> float:
    if target.v_ov is not None:
        return target.v_ov
    if target.de is not None:
        return overbias_for_efficiency(params, target.de)
    return params.v_ov_ref


def _obs_p_d(params, tg):
    return dark_prob(params, tg.temperature, _bias(params, tg), tg.gate_width)


def _obs_de(params, tg):
    return detection_efficiency(params, _bias(params, tg))


def _obs_short_fraction(params, tg):
    v = _bias(params, tg)
    trig = trigger_probs(params, v)
    period = 1.0 / tg.gate_rate
    n = tg.blank_time * tg.gate_rate
    total = early = 0.0
    for s, tr in zip(params.traps, trig):
        q = math.exp(-period / s.lifetime)
        weight = s.capture_mean * tr * q / (1.0 - q)  # sum over all later gates
        total += weight
        early += weight * (1.0 - q**n)
    return early / total if total > 0 else 0.0


OBSERVABLES = {"p_d": _obs_p_d, "de": _obs_de, "ap_short_fraction": _obs_short_fraction}


def observe(params: DetectorParams, target: Target) -> float:
    return OBSERVABLES[target.observable](params, target)


def _get(params: DetectorParams, name: str) -> float:
    if name.startswith("traps["):
        idx = int(name[6 : name.index("]")])
        return getattr(params.traps[idx], name.split(".", 1)[1])
    return getattr(params, name)


def _set(params: DetectorParams, name: str, value: float) -> DetectorParams:
    if name.startswith("traps["):
        idx = int(name[6 : name.index("]")])
        traps = list(params.traps)
        traps[idx] = replace(traps[idx], **{name.split(".", 1)[1]: value})
        return params.replace(traps=tuple(traps))
    return params.replace(**{name: value})


@dataclass
class CalibrationResult:
    params: DetectorParams
    table: list[dict] = field(default_factory=list)
    converged: bool = True

    @property
    def max_rel_residual(self) -> float:
        return max((abs(r["rel_residual"]) for r in self.table), default=0.0)


def _table(params, targets):
    rows = []
    for tg in targets:
        m = observe(params, tg)
        rows.append({
            "observable": tg.observable,
            "temperature_K": tg.temperature,
            "target": tg.value,
            "model": m,
            "rel_residual": m / tg.value - 1.0,
        })
    return rows


def calibrate(
    targets: Sequence[Target],
    initial: DetectorParams,
    free: Sequence[str] = ("p_dark_ref",),
    tol: float = 1e-2,
) -> CalibrationResult:
    """Adjust ``free`` parameters so the model meets every target.

    Minimizes the squared log-residuals ln(model/target) over log parameters.
    Raises :class:`CalibrationError` (result attached as ``best``) when any
    target is still off by more than ``tol`` relative.
    """
    targets = list(targets)
    if not targets:
        raise ValueError("no calibration targets")
    free = list(free)
    for name in free:
        if not _get(initial, name) > 0:
            raise ValueError(f"free parameter {name} must start positive")

    def build(theta):
        p = initial
        for name, v in zip(free, np.exp(theta)):
            p = _set(p, name, float(v))
        return p

    def resid(theta):
        try:
            p = build(theta)
        except ValueError:
            return np.full(len(targets), 1e6)
        return np.array([math.log(max(observe(p, tg), 1e-300) / tg.value) for tg in targets])

    theta0 = np.log([_get(initial, n) for n in free])
    r0 = resid(theta0)
    if np.max(np.abs(r0)) < 1e-12:
        return CalibrationResult(initial, _table(initial, targets), True)
    res = levenberg_marquardt(resid, theta0)
    params = build(res.x)
    out = CalibrationResult(params, _table(params, targets), res.converged)
    if out.max_rel_residual > tol:
        out.converged = False
        raise CalibrationError(
            "targets not met:\n" + "\n".join(
                f"  {r['observable']} @ {r['temperature_K']} K: target {r['target']:.4g}, "
                f"model {r['model']:.4g} ({100 * r['rel_residual']:+.1f} %)" for r in out.table
            ),
            best=out,
        )
    return out
