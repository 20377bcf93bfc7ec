"""Single-segment estimators: quantile (check loss), least squares, sparsity."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import optimize

from . import _kernels
from .core import Dataset, RegressionModel, as_tau, check_loss, resolve_segment


class EstimationError(RuntimeError):
    """The optimizer found no finite solution; ``best`` holds what it had."""

    def __init__(self, message: str, best: Optional["SegmentFit"] = None):
        super().__init__(message)
        self.best = best


@dataclass(frozen=True)
class FitConfig:
    n_multistart: int = 8
    max_iters: int = 500
    smooth_h: Optional[float] = None
    seed: int = 0
    convergence_tol: float = 1e-8
    param_tol: float = 1e-8
    max_restarts: int = 3
    refine: bool = True

    def __post_init__(self):
        if self.n_multistart < 1:
            raise ValueError("n_multistart must be at least 1")
        if self.max_iters < 1:
            raise ValueError("max_iters must be positive")
        if self.smooth_h is not None and not self.smooth_h > 0:
            raise ValueError("smooth_h must be positive")
        if self.convergence_tol <= 0 or self.param_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.seed < 0:
            raise ValueError("seed must be unsigned")


@dataclass(frozen=True, eq=False)
class SegmentFit:
    phi_hat: np.ndarray
    loss: float
    n_evals: int
    converged: bool

    def __eq__(self, other):
        if not isinstance(other, SegmentFit):
            return NotImplemented
        return (np.array_equal(self.phi_hat, other.phi_hat) and self.loss == other.loss
                and self.n_evals == other.n_evals and self.converged == other.converged)


@dataclass(frozen=True)
class SparsityEstimate:
    f0_hat: float
    bandwidth: float


def _segment_rng(seed: int, start: int, stop: int) -> np.random.Generator:
    # keyed by the segment so every cell of a segmentation is reproducible alone
    return np.random.default_rng([seed, start, stop])


def _box_points(model: RegressionModel, rng: np.random.Generator, k: int) -> list[np.ndarray]:
    return [rng.uniform(model.lower, model.upper) for _ in range(k)]


def _check_length(model: RegressionModel, start: int, stop: int):
    if stop - start < model.dim_phi + 1:
        raise ValueError(
            f"underdetermined segment: {stop - start} observations for {model.dim_phi} parameters")


# --------------------------------------------------------------------------
# least squares

def _ls_search(model, x, y, config, rng, first=None) -> SegmentFit:
    lo, hi = model.lower, model.upper
    if first is None:
        first = model.start(x, y, None)
    if model.compiled:
        def run(start):
            phi, sse, nfev, conv = _kernels.levenberg_marquardt(
                model.kernel, x, y, np.asarray(start, float), lo, hi,
                config.max_iters, config.convergence_tol)
            return phi, sse, nfev, conv
    else:
        def run(start):
            try:
                res = optimize.least_squares(
                    lambda ph: y - model.eval(x, ph), model.clip(start),
                    jac=lambda ph: -model.grad(x, ph), bounds=(lo, hi),
                    max_nfev=config.max_iters, ftol=config.convergence_tol)
            except (ValueError, FloatingPointError):
                return np.asarray(start, float), np.inf, 1, False
            sse = float(res.fun @ res.fun)
            return res.x, sse if np.isfinite(sse) else np.inf, res.nfev, res.status > 0

    phi, sse, nfev, conv = run(first)
    total = nfev
    if not (conv and np.isfinite(sse)):
        for start in _box_points(model, rng, config.n_multistart):
            phi2, sse2, nfev2, conv2 = run(start)
            total += nfev2
            if sse2 < sse or (sse2 == sse and tuple(phi2) < tuple(phi)):
                phi, sse, conv = phi2, sse2, conv2
    return SegmentFit(np.asarray(phi, float), float(sse), int(total), bool(conv))


def fit_ls(model: RegressionModel, data: Dataset, seg=None, config: Optional[FitConfig] = None) -> SegmentFit:
    """Least-squares fit on one segment: Levenberg-Marquardt from the model's
    starting value, with random box restarts if that run fails."""
    config = config or FitConfig()
    start, stop = resolve_segment(seg, data.n)
    _check_length(model, start, stop)
    x, y = data.x[start:stop], data.y[start:stop]
    fit = _ls_search(model, x, y, config, _segment_rng(config.seed, start, stop))
    if not np.isfinite(fit.loss):
        raise EstimationError("optimizer failed", best=fit)
    return fit


# --------------------------------------------------------------------------
# smoothed check loss (quartic ramp over [-h, h])

def _ramp(t):
    return 0.5 + (15.0 / 16.0) * (t - 2.0 * t**3 / 3.0 + t**5 / 5.0)


def smoothed_check_loss(u, tau, h: float):
    """Check loss with the kink replaced on [-h, h] by the integrated biweight
    kernel; identical to the check loss outside that band and C^2 overall."""
    tau = as_tau(tau)
    u = np.asarray(u, dtype=float)
    t = np.clip(u / h, -1.0, 1.0)
    return u * (tau - 1.0 + _ramp(t))


def smoothed_check_deriv(u, tau, h: float):
    tau = as_tau(tau)
    u = np.asarray(u, dtype=float)
    t = np.clip(u / h, -1.0, 1.0)
    kern = (15.0 / 16.0) * (1.0 - t * t) ** 2
    return tau - 1.0 + _ramp(t) + t * kern


def smoothed_loss(model: RegressionModel, data: Dataset, phi, tau, h: float, seg=None) -> float:
    x, y = data.segment(seg)
    u = y - model.eval(x, np.asarray(phi, float))
    return float(np.sum(smoothed_check_loss(u, tau, h)))


def smoothed_loss_grad(model: RegressionModel, data: Dataset, phi, tau, h: float, seg=None) -> np.ndarray:
    x, y = data.segment(seg)
    phi = np.asarray(phi, float)
    u = y - model.eval(x, phi)
    return -(smoothed_check_deriv(u, tau, h) @ model.grad(x, phi))


# --------------------------------------------------------------------------
# quantile fit

def _exact_loss(model, x, y, phi, tau) -> float:
    if model.compiled:
        return _kernels.loss_sum(model.kernel, x, y, np.asarray(phi, float), tau, _kernels.CHECK)
    with np.errstate(over="ignore", invalid="ignore"):
        val = float(np.sum(check_loss(y - model.eval(x, np.asarray(phi, float)), tau)))
    return val if np.isfinite(val) else np.inf


def _nm_search(model, x, y, tau, starts, config):
    if model.compiled:
        return _kernels.multistart_nelder_mead(
            model.kernel, x, y, tau, _kernels.CHECK, np.asarray(starts, float),
            model.lower, model.upper, config.max_iters, config.convergence_tol,
            config.param_tol, config.max_restarts)
    bounds = list(zip(model.lower, model.upper))
    best_phi, best_f, total, any_conv = np.full(model.dim_phi, np.nan), np.inf, 0, False
    for s in starts:
        phi, f = model.clip(s), np.inf
        for _ in range(config.max_restarts + 1):
            res = optimize.minimize(lambda ph: _exact_loss(model, x, y, ph, tau), phi,
                                    method="Nelder-Mead", bounds=bounds,
                                    options=dict(maxiter=config.max_iters,
                                                 xatol=config.param_tol,
                                                 fatol=config.convergence_tol))
            total += res.nfev
            improved = res.fun < f - config.convergence_tol
            if res.fun <= f:
                phi, f, conv = res.x, float(res.fun), bool(res.success)
            if not improved:
                break
        if not np.isfinite(f):
            continue
        any_conv = any_conv or conv
        if f < best_f or (f == best_f and tuple(phi) < tuple(best_phi)):
            best_phi, best_f = np.asarray(phi, float), f
    return best_phi, best_f, total, any_conv


def _refine(model, x, y, tau, phi, loss, h, config):
    data = Dataset(x, y)
    try:
        res = optimize.minimize(
            lambda ph: (smoothed_loss(model, data, ph, tau, h),
                        smoothed_loss_grad(model, data, ph, tau, h)),
            phi, method="L-BFGS-B", jac=True,
            bounds=list(zip(model.lower, model.upper)),
            options=dict(maxiter=config.max_iters))
    except (ValueError, FloatingPointError):
        return phi, loss, 0
    cand = model.clip(res.x)
    cand_loss = _exact_loss(model, x, y, cand, tau)
    if cand_loss < loss:
        return cand, cand_loss, res.nfev
    return phi, loss, res.nfev


def fit_quantile(model: RegressionModel, data: Dataset, seg=None, tau=0.5,
                 config: Optional[FitConfig] = None,
                 extra_starts: Sequence = ()) -> SegmentFit:
    """Minimise the summed check loss over phi on one segment.

    Local Nelder-Mead searches on the exact loss start from a warm start (the
    least-squares fit, or the model's own starting value when that is
    better), any ``extra_starts`` and ``n_multistart - 1`` uniform points of
    the parameter box. The winner is
    optionally polished by L-BFGS-B on the smoothed loss, kept only if the
    exact loss goes down.
    """
    config = config or FitConfig()
    tau = as_tau(tau)
    start, stop = resolve_segment(seg, data.n)
    _check_length(model, start, stop)
    x, y = data.x[start:stop], data.y[start:stop]
    rng = _segment_rng(config.seed, start, stop)

    # warm start: the better, in exact loss, of the least-squares fit and the
    # model's own quantile starting value (which also seeds the LS run)
    guess = model.start(x, y, tau) if model.initial_guess is not None else None
    warm = model.clip(_ls_search(model, x, y, config, rng, first=guess).phi_hat)
    if guess is not None:
        lw, lg = _exact_loss(model, x, y, warm, tau), _exact_loss(model, x, y, guess, tau)
        if lg < lw or (lg == lw and tuple(guess) < tuple(warm)):
            warm = guess
    starts = [warm]
    starts.extend(model.clip(s) for s in extra_starts)
    starts.extend(_box_points(model, rng, config.n_multistart - 1))
    starts = [s for s in starts if np.all(np.isfinite(s))]

    phi, loss, nfev, conv = _nm_search(model, x, y, tau, starts, config)
    if not np.isfinite(loss):
        raise EstimationError("optimizer failed",
                              best=SegmentFit(np.asarray(phi, float), float(loss), int(nfev), False))

    if config.refine and loss > 0:
        h = config.smooth_h
        if h is None:
            r = y - model.eval(x, phi)
            scale = 1.4826 * float(np.median(np.abs(r - np.median(r))))
            h = 0.5 * scale / np.sqrt(len(y))
        if h > 0:
            phi, loss, extra = _refine(model, x, y, tau, phi, loss, h, config)
            nfev += extra
    return SegmentFit(np.asarray(phi, float), float(loss), int(nfev), bool(conv))


# --------------------------------------------------------------------------
# sparsity and covariance

def silverman_bandwidth(values) -> float:
    values = np.asarray(values, float)
    sd = float(np.std(values, ddof=1))
    q75, q25 = np.percentile(values, [75, 25])
    spread = min(sd, (q75 - q25) / 1.34)
    if not spread > 0:
        spread = sd if sd > 0 else 1e-6
    return 0.9 * spread * len(values) ** (-0.2)


def estimate_f0(residuals, tau=0.5) -> SparsityEstimate:
    """Gaussian kernel density of the residuals at zero, Silverman bandwidth."""
    as_tau(tau)
    r = np.asarray(residuals, float).reshape(-1)
    if r.shape[0] < 20:
        raise ValueError("insufficient data for sparsity: need at least 20 residuals")
    h = silverman_bandwidth(r)
    dens = float(np.mean(np.exp(-0.5 * (r / h) ** 2)) / (h * np.sqrt(2.0 * np.pi)))
    return SparsityEstimate(f0_hat=max(dens, 1e-6), bandwidth=h)


def gradient_gram(model: RegressionModel, data: Dataset, seg, phi) -> np.ndarray:
    """Average outer product of the model gradient over a segment."""
    x, _ = data.segment(seg)
    gd = model.grad(x, np.asarray(phi, float))
    return gd.T @ gd / x.shape[0]


def asymptotic_cov(model: RegressionModel, data: Dataset, seg, phi_hat, f0, tau) -> np.ndarray:
    """tau(1 - tau) / f0^2 * Sigma^{-1} / m for a segment of length m."""
    tau = as_tau(tau)
    f0 = f0.f0_hat if isinstance(f0, SparsityEstimate) else float(f0)
    start, stop = resolve_segment(seg, data.n)
    sigma = gradient_gram(model, data, (start, stop), phi_hat)
    if not np.all(np.isfinite(sigma)) or np.linalg.cond(sigma) >= 1e12:
        raise np.linalg.LinAlgError("degenerate design: gradient Gram matrix is singular")
    return tau * (1.0 - tau) / f0**2 * np.linalg.inv(sigma) / (stop - start)
