"""Deterministic nonlinear least squares for the curve families used here.

:func:`nlls_fit` is a Levenberg-Marquardt iteration with Marquardt diagonal
scaling, so results do not depend on the units of x or of the parameters.
Every accepted step lowers the residual; bounds are enforced by clipping the
trial point.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, FitError, SingularJacobianError

XTOL = 1e-8
MAX_ITER = 500
#: Column-scaled condition number of J^T J above which the problem counts as singular.
SINGULAR_COND = 1e12
#: Column-scaled condition number above which the covariance is flagged ill-conditioned.
ILL_CONDITIONED_COND = 1e4


def _stretched(x, p):
    amp, t2, k = p
    ratio = np.abs(x) / t2
    u = ratio ** k
    e = np.exp(-u)
    with np.errstate(divide="ignore", invalid="ignore"):
        logr = np.where(ratio > 0, np.log(np.where(ratio > 0, ratio, 1.0)), 0.0)
    jac = np.stack([e, amp * e * u * k / t2, -amp * e * u * logr], axis=1)
    return amp * e, jac


def _recovery(x, p):
    t1, amp, offset = p
    e = np.exp(-x / t1)
    jac = np.stack([-amp * e * x / t1 ** 2, 1 - e, np.ones_like(x)], axis=1)
    return offset + amp * (1 - e), jac


def _lorentzian(x, p):
    center, fwhm, height, baseline = p
    q = 2 * (x - center) / fwhm
    lor = 1 / (1 + q * q)
    jac = np.stack([4 * height * q * lor ** 2 / fwhm, 2 * height * q * q * lor ** 2 / fwhm,
                    lor, np.ones_like(x)], axis=1)
    return baseline + height * lor, jac


def _damped_cosine(x, p):
    amp, freq, decay, phase, offset = p
    env = np.exp(-x / decay)
    arg = 2 * np.pi * freq * x + phase
    c, s = np.cos(arg), np.sin(arg)
    jac = np.stack([env * c, -amp * env * s * 2 * np.pi * x, amp * env * c * x / decay ** 2,
                    -amp * env * s, np.ones_like(x)], axis=1)
    return offset + amp * env * c, jac


#: model id -> (evaluator returning (values, jacobian), parameter names)
MODELS = {
    "stretched_exponential": (_stretched, ("amplitude", "t2", "k")),
    "exponential_recovery": (_recovery, ("t1", "amplitude", "offset")),
    "lorentzian": (_lorentzian, ("center", "fwhm", "height", "baseline")),
    "damped_cosine": (_damped_cosine, ("amplitude", "frequency", "decay", "phase", "offset")),
}


def evaluate_model(model: str, x, params) -> np.ndarray:
    return MODELS[model][0](np.asarray(x, dtype=float), np.asarray(params, dtype=float))[0]


@dataclass
class FitResult:
    model: str
    names: tuple
    params: np.ndarray
    residual_norm: float
    converged: bool
    iterations: int
    covariance: np.ndarray | None = None
    condition_number: float = 1.0
    ill_conditioned: bool = False
    extra: dict = field(default_factory=dict)

    @property
    def values(self) -> dict:
        out = dict(zip(self.names, (float(v) for v in self.params)))
        out.update(self.extra)
        return out

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "parameters": self.values,
            "residual_norm": self.residual_norm,
            "converged": self.converged,
            "iterations": self.iterations,
            "condition_number": self.condition_number,
            "ill_conditioned": self.ill_conditioned,
            "covariance": None if self.covariance is None else self.covariance.tolist(),
        }


def _scaled_condition(jac):
    norms = np.linalg.norm(jac, axis=0)
    if np.any(norms <= 1e-14 * max(norms.max(), 1e-300)):
        return np.inf
    s = np.linalg.svd(jac / norms, compute_uv=False)
    return float((s[0] / s[-1]) ** 2) if s[-1] > 0 else np.inf


def nlls_fit(model: str, x, y, p0, bounds=None, xtol: float = XTOL, max_iter: int = MAX_ITER) -> FitResult:
    """Levenberg-Marquardt fit of a registered model.

    Raises :class:`SingularJacobianError` on degenerate data and
    :class:`ConvergenceError` when the iteration budget runs out.
    """
    if model not in MODELS:
        raise FitError(f"unknown model {model!r}; expected one of {sorted(MODELS)}")
    func, names = MODELS[model]
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    p = np.asarray(p0, dtype=float).copy()
    if len(p) != len(names):
        raise FitError(f"{model} takes {len(names)} parameters")
    if x.shape != y.shape or len(x) < len(p) + 1:
        raise FitError(f"need at least {len(p) + 1} matching (x, y) points")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y)) and np.all(np.isfinite(p))):
        raise FitError("non-finite input")
    lo, hi = (np.full(len(p), -np.inf), np.full(len(p), np.inf)) if bounds is None else \
        (np.asarray(bounds[0], dtype=float), np.asarray(bounds[1], dtype=float))
    p = np.clip(p, lo, hi)

    model_y, jac = func(x, p)
    r = model_y - y
    cost = 0.5 * float(r @ r)
    iterations = 0
    converged = cost == 0.0
    lam = None
    while not converged:
        cond = _scaled_condition(jac)
        if cond > SINGULAR_COND:
            raise SingularJacobianError(f"{model}: singular Jacobian (scaled condition {cond:.3g})")
        a = jac.T @ jac
        g = jac.T @ r
        diag = np.diag(a).copy()
        if lam is None:
            lam = 1e-3
        accepted = False
        while not accepted:
            try:
                step = np.linalg.solve(a + lam * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                step = None
            if step is not None:
                trial = np.clip(p + step, lo, hi)
                with np.errstate(all="ignore"):
                    t_y, t_jac = func(x, trial)
                t_r = t_y - y
                t_cost = 0.5 * float(t_r @ t_r)
                if np.isfinite(t_cost) and t_cost < cost:
                    accepted = True
                    break
            lam *= 4
            if lam > 1e20:
                break
        if not accepted:
            # no descent direction left: at a minimum to working precision
            converged = True
            break
        delta = trial - p
        p, r, jac, cost = trial, t_r, t_jac, t_cost
        iterations += 1
        lam = max(lam / 5, 1e-12)
        if np.all(np.abs(delta) <= xtol * (np.abs(p) + xtol)) or cost == 0.0:
            converged = True
        elif iterations >= max_iter:
            raise ConvergenceError(f"{model}: no convergence after {max_iter} iterations")

    cond = _scaled_condition(jac)
    if cond > SINGULAR_COND:
        raise SingularJacobianError(f"{model}: singular Jacobian at the solution (scaled condition {cond:.3g})")
    dof = len(x) - len(p)
    cov = np.linalg.inv(jac.T @ jac) * (2 * cost / dof)
    return FitResult(model, names, p, float(np.sqrt(2 * cost)), True, iterations, cov, cond,
                     cond > ILL_CONDITIONED_COND)


def _xy(curve_or_x, y=None):
    if y is None:
        x, y = curve_or_x.times, curve_or_x.values
    else:
        x = curve_or_x
    y = np.asarray(y)
    y = np.abs(y) if np.iscomplexobj(y) else y.astype(float)
    return np.asarray(x, dtype=float), y


def _first_crossing(x, y, level):
    below = np.flatnonzero(y <= level)
    if not below.size:
        return None
    k = below[0]
    if k == 0:
        return x[0]
    x0, x1, y0, y1 = x[k - 1], x[k], y[k - 1], y[k]
    return x0 + (level - y0) * (x1 - x0) / (y1 - y0)


def fit_stretched_exponential(curve_or_x, y=None, p0=None) -> FitResult:
    """Fit ``A exp(-(t/T2)^k)``; T2 is the 1/e point of the fitted form."""
    x, y = _xy(curve_or_x, y)
    if p0 is None:
        amp = float(y[np.argmin(x)]) if y[np.argmin(x)] > 0 else float(np.max(y))
        t2 = _first_crossing(x, y / amp, np.exp(-1))
        if t2 is None:
            raise FitError("curve does not decay below 1/e of its amplitude")
        frac = y / amp
        sel = (frac > 0.05) & (frac < 0.95) & (x > 0)
        k = 2.0
        if sel.sum() >= 2:
            k = float(np.polyfit(np.log(x[sel]), np.log(-np.log(frac[sel])), 1)[0])
            k = min(max(k, 0.3), 20.0)
        p0 = (amp, t2, k)
    return nlls_fit("stretched_exponential", x, y, p0, bounds=([0, 1e-300, 1e-3], [np.inf, np.inf, 100.0]))


def fit_exponential_recovery(curve_or_x, y=None, p0=None) -> FitResult:
    """Fit ``offset + amplitude (1 - exp(-t/T1))``."""
    x, y = _xy(curve_or_x, y)
    if p0 is None:
        order = np.argsort(x)
        xs, ys = x[order], y[order]
        span = ys[-1] - ys[0]
        if span == 0:
            raise SingularJacobianError("flat data carry no recovery time")
        frac = (ys - ys[0]) / span
        t1 = _first_crossing(xs, -frac, -(1 - np.exp(-1))) or (xs[-1] - xs[0])
        p0 = (max(t1, 1e-300), span, ys[0])
    return nlls_fit("exponential_recovery", x, y, p0, bounds=([1e-300, -np.inf, -np.inf], [np.inf] * 3))


def fit_lorentzian(curve_or_x, y=None, p0=None) -> FitResult:
    """Fit ``baseline + height / (1 + (2 (x - center) / fwhm)^2)``."""
    x, y = _xy(curve_or_x, y)
    if len(x) < 5:
        raise FitError("need at least 5 points spanning the peak")
    if p0 is None:
        order = np.argsort(x)
        xs, ys = x[order], y[order]
        baseline = float(min(ys[0], ys[-1]))
        k = int(np.argmax(ys))
        height = float(ys[k] - baseline)
        above = xs[ys >= baseline + height / 2]
        fwhm = float(above[-1] - above[0]) if len(above) > 1 else float(np.min(np.diff(xs)))
        # centroid of the upper half is a better start than the sampled maximum
        top = ys >= baseline + height / 2
        center = float(np.sum(xs[top] * (ys[top] - baseline)) / np.sum(ys[top] - baseline)) \
            if height > 0 else float(xs[k])
        p0 = (center, max(fwhm, 1e-12), height, baseline)
    return nlls_fit("lorentzian", x, y, p0, bounds=([-np.inf, 1e-300, -np.inf, -np.inf], [np.inf] * 4))


def fit_damped_cosine(curve_or_x, y=None, p0=None) -> FitResult:
    """Fit ``offset + amplitude exp(-t/decay) cos(2 pi f t + phase)``; frequency seeded by FFT."""
    x, y = _xy(curve_or_x, y)
    if p0 is None:
        offset = float(np.mean(y))
        amp = float((np.max(y) - np.min(y)) / 2)
        dx = np.diff(x)
        if not np.allclose(dx, dx[0], rtol=1e-6):
            raise FitError("damped-cosine seeding needs a uniform time grid")
        pad = 16 * len(x)
        spec = np.abs(np.fft.rfft(y - offset, pad))
        freqs = np.fft.rfftfreq(pad, dx[0])
        freq = float(freqs[1 + np.argmax(spec[1:])])
        phase = float(np.angle(np.sum((y - offset) * np.exp(-2j * np.pi * freq * (x - x[0])))))
        phase -= 2 * np.pi * freq * x[0]
        p0 = (amp, freq, float(x[-1] - x[0]) * 2, phase, offset)
    return nlls_fit("damped_cosine", x, y, p0,
                    bounds=([0, 0, 1e-300, -np.inf, -np.inf], [np.inf] * 5))


def fit_power_law(x, y) -> FitResult:
    """Least-squares line through (log x, log y): ``y = prefactor * x^alpha``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) < 2 or x.shape != y.shape:
        raise FitError("need at least two matching points")
    if np.any(x <= 0) or np.any(y <= 0):
        raise FitError("power-law fit needs positive values")
    lx, ly = np.log(x), np.log(y)
    (alpha, logc), *_ = np.linalg.lstsq(np.stack([lx, np.ones_like(lx)], axis=1), ly, rcond=None)
    resid = ly - (alpha * lx + logc)
    return FitResult("power_law", ("alpha", "prefactor"), np.array([alpha, np.exp(logc)]),
                     float(np.linalg.norm(resid)), True, 0, extra={"log_residuals": resid.tolist()})
