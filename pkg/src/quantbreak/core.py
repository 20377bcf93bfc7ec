"""Regression families, the check loss and Knight's decomposition."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np
from numba import njit

from . import _kernels


@dataclass(frozen=True)
class QuantileLevel:
    """Quantile index tau in the open interval (0, 1)."""

    tau: float

    def __post_init__(self):
        tau = float(self.tau)
        if not (0.0 < tau < 1.0):
            raise ValueError(f"quantile level must lie in (0, 1), got {self.tau!r}")
        object.__setattr__(self, "tau", tau)

    def __float__(self):
        return self.tau


def as_tau(tau) -> float:
    if isinstance(tau, QuantileLevel):
        return tau.tau
    return QuantileLevel(tau).tau


@dataclass(frozen=True, eq=False)
class RegressionModel:
    """A parametric regression family g(x, phi) on a box of parameters.

    ``eval`` maps an ``(n, dim_x)`` design and a ``dim_phi`` vector to the
    ``n`` fitted values; ``grad`` returns the ``(n, dim_phi)`` Jacobian in
    phi. ``kernel`` names the built-in compiled twin of a registered family
    (see ``_kernels``); models without one are fitted through scipy.

    ``initial_guess(x, y, tau)`` is an optional cheap starting value; ``tau``
    is ``None`` for least squares.
    """

    name: str
    dim_x: int
    dim_phi: int
    eval: Callable[[np.ndarray, np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray, np.ndarray], np.ndarray]
    lower: np.ndarray
    upper: np.ndarray
    hess: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    initial_guess: Optional[Callable] = None
    kernel: Optional[int] = None

    def __post_init__(self):
        lower = np.asarray(self.lower, dtype=float).reshape(-1)
        upper = np.asarray(self.upper, dtype=float).reshape(-1)
        if lower.shape != (self.dim_phi,) or upper.shape != (self.dim_phi,):
            raise ValueError("bounds must have one entry per parameter")
        if not np.all(lower <= upper):
            raise ValueError("empty parameter box: lower bound exceeds upper bound")
        lower.setflags(write=False)
        upper.setflags(write=False)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def compiled(self) -> bool:
        return self.kernel is not None

    def with_bounds(self, lower, upper) -> "RegressionModel":
        return replace(self, lower=np.asarray(lower, float), upper=np.asarray(upper, float))

    def clip(self, phi) -> np.ndarray:
        return np.clip(np.asarray(phi, dtype=float), self.lower, self.upper)

    def start(self, x, y, tau=None) -> np.ndarray:
        if self.initial_guess is not None:
            return self.clip(self.initial_guess(x, y, tau))
        return 0.5 * (self.lower + self.upper)

    def __call__(self, x, phi):
        return self.eval(_design(x, self.dim_x), np.asarray(phi, dtype=float))


def _design(x, dim_x: int) -> np.ndarray:
    x = np.ascontiguousarray(x, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, dim_x) if dim_x > 1 else x.reshape(-1, 1)
    return x


@dataclass(frozen=True, eq=False)
class Dataset:
    """Observations in time order; row ``i`` is observation ``i + 1``."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        y = np.ascontiguousarray(self.y, dtype=float).reshape(-1)
        x = np.ascontiguousarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        if x.shape[0] != y.shape[0]:
            raise ValueError(f"x has {x.shape[0]} rows but y has {y.shape[0]} entries")
        if y.shape[0] < 1:
            raise ValueError("dataset must contain at least one observation")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValueError("dataset entries must be finite")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def dim_x(self) -> int:
        return self.x.shape[1]

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return np.array_equal(self.x, other.x) and np.array_equal(self.y, other.y)

    def segment(self, seg) -> tuple[np.ndarray, np.ndarray]:
        start, stop = resolve_segment(seg, self.n)
        return self.x[start:stop], self.y[start:stop]


def resolve_segment(seg, n: int) -> tuple[int, int]:
    """Normalise ``None``, a slice or a ``(start, stop)`` pair to a 0-based
    half-open interval. Raises on an empty or out-of-range interval."""
    if seg is None:
        start, stop = 0, n
    elif isinstance(seg, slice):
        start, stop, step = seg.indices(n)
        if step != 1:
            raise ValueError("segments must be contiguous")
    else:
        start, stop = (int(v) for v in seg)
    if not (0 <= start <= stop <= n):
        raise ValueError(f"segment [{start}, {stop}) outside 0..{n}")
    if stop == start:
        raise ValueError("empty segment")
    return start, stop


@dataclass(frozen=True)
class KnightTerms:
    w: float
    z: float
    g_total: float


def check_loss(u, tau):
    """rho_tau(u) = u * (tau - 1{u <= 0}); works elementwise on arrays."""
    tau = as_tau(tau)
    u = np.asarray(u, dtype=float)
    out = u * (tau - (u <= 0.0))
    return float(out) if out.ndim == 0 else out


def residuals(model: RegressionModel, data: Dataset, phi, seg=None) -> np.ndarray:
    x, y = data.segment(seg)
    return y - model.eval(x, np.asarray(phi, dtype=float))


def total_loss(model: RegressionModel, data: Dataset, phi, tau, seg=None) -> float:
    """Sum of check losses of the residuals over ``seg`` (default: all rows)."""
    return float(np.sum(check_loss(residuals(model, data, phi, seg), tau)))


def squared_loss(model: RegressionModel, data: Dataset, phi, seg=None) -> float:
    r = residuals(model, data, phi, seg)
    return float(r @ r)


def knight_terms(model: RegressionModel, data: Dataset, phi, phi0, tau, epsilons) -> KnightTerms:
    """Evaluate W_n, Z_n and the loss difference sum_i [rho(eps_i - h_i) - rho(eps_i)]
    with h_i = g(X_i, phi) - g(X_i, phi0).

    Needs the true errors, so it is only meaningful on simulated data.
    """
    tau = as_tau(tau)
    eps = np.asarray(epsilons, dtype=float).reshape(-1)
    if eps.shape[0] != data.n:
        raise ValueError(f"got {eps.shape[0]} errors for {data.n} observations")
    h = model.eval(data.x, np.asarray(phi, float)) - model.eval(data.x, np.asarray(phi0, float))
    d = tau - (eps <= 0.0)
    w = -float(np.sum(d * h))
    pos = h >= 0.0
    z_terms = np.where(
        pos,
        np.where((eps >= 0.0) & (eps <= h), h - eps, 0.0),
        np.where((eps >= h) & (eps <= 0.0), eps - h, 0.0),
    )
    z = float(np.sum(z_terms))
    g_total = float(np.sum(check_loss(eps - h, tau) - check_loss(eps, tau)))
    return KnightTerms(w=w, z=z, g_total=g_total)


# ---------------------------------------------------------------------------
# registered families

def _mono_hess(x, phi):
    x0 = np.asarray(x, float)[:, 0]
    out = np.zeros((x0.shape[0], 2, 2))
    out[:, 1, 1] = -x0 * x0 * np.exp(-phi[1] * x0)
    return out


_RATE_GRID = np.linspace(-10.0, 10.0, 81)


@njit(cache=True, nogil=True)
def _mono_profile(x0, y, tau, use_quantile, grid):
    # b1 enters additively, so for each rate the best b1 is a location
    # statistic of y + exp(-b2 x); scan a rate grid and keep the best.
    best_loss = np.inf
    best = np.array([np.median(y) + 1.0, 0.0])
    for k in range(grid.shape[0]):
        shifted = y + np.exp(-grid[k] * x0)
        if use_quantile:
            b1 = np.quantile(shifted, tau)
        else:
            b1 = np.mean(shifted)
        loss = 0.0
        for i in range(shifted.shape[0]):
            u = shifted[i] - b1
            if use_quantile:
                loss += u * (tau - 1.0) if u <= 0.0 else u * tau
            else:
                loss += u * u
        if np.isfinite(loss) and loss < best_loss:
            best_loss = loss
            best = np.array([b1, grid[k]])
    return best


def _mono_guess(x, y, tau=None):
    x0 = np.ascontiguousarray(np.asarray(x, float)[:, 0])
    return _mono_profile(x0, np.asarray(y, float), 0.5 if tau is None else float(tau),
                         tau is not None, _RATE_GRID)


def mono_molecular(bound: float = 50.0) -> RegressionModel:
    """Growth curve g(x, (b1, b2)) = b1 - exp(-b2 x)."""
    return RegressionModel(
        name="mono_molecular",
        dim_x=1,
        dim_phi=2,
        eval=_kernels.mono_eval,
        grad=_kernels.mono_grad,
        hess=_mono_hess,
        lower=np.full(2, -bound),
        upper=np.full(2, bound),
        initial_guess=_mono_guess,
        kernel=_kernels.MONO_MOLECULAR,
    )


def _linear_hess(x, phi):
    x = np.asarray(x, float)
    p = x.shape[1] + 1
    return np.zeros((x.shape[0], p, p))


def _linear_guess(x, y, tau=None):
    design = np.column_stack([np.ones(len(y)), x])
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    return coef


def linear(dim_x: int = 1, bound: float = 1e3) -> RegressionModel:
    """Affine model g(x, phi) = phi_0 + sum_j phi_j x_j."""
    return RegressionModel(
        name="linear",
        dim_x=dim_x,
        dim_phi=dim_x + 1,
        eval=_kernels.linear_eval,
        grad=_kernels.linear_grad,
        hess=_linear_hess,
        lower=np.full(dim_x + 1, -bound),
        upper=np.full(dim_x + 1, bound),
        initial_guess=_linear_guess,
        kernel=_kernels.LINEAR,
    )


MODELS: dict[str, Callable[[], RegressionModel]] = {
    "mono_molecular": mono_molecular,
    "linear": linear,
}


def get_model(name: str) -> RegressionModel:
    try:
        return MODELS[name]()
    except KeyError:
        raise KeyError(f"unknown model {name!r}; known: {sorted(MODELS)}") from None
