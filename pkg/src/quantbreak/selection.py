"""Penalised choice of the number of change-points."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .changepoint import (InfeasibleSegmentation, SegmentationConstraints, SegmentCostCache,
                          SegmentedFit, fit_k_changepoints)
from .core import Dataset, RegressionModel
from .estimator import FitConfig

LOSS_FLOOR = 1e-12


def linear_penalty(k: int, p: int) -> float:
    return float(k * p)


@dataclass(frozen=True)
class SelectionConfig:
    """Criterion n log(S_n / n) + scale * P(K, p) * n**b_n_exponent.

    The consistency argument wants n^{1/2} << B_n << n^a with ``a`` the
    minimum-segment exponent; the default B_n = n^{5/8} together with the
    default a = 0.51 does not satisfy the upper condition, only
    1/2 < b_n_exponent < 1 is enforced here.
    """

    k_max: int = 4
    penalty: Callable[[int, int], float] = linear_penalty
    b_n_exponent: float = 5.0 / 8.0
    penalty_scale: float = 1.0

    def __post_init__(self):
        if self.k_max < 0:
            raise ValueError("k_max must be nonnegative")
        if not (0.5 < self.b_n_exponent < 1.0):
            raise ValueError("b_n_exponent must lie in (1/2, 1)")
        if not self.penalty_scale > 0:
            raise ValueError("penalty_scale must be positive")

    def penalty_term(self, k: int, p: int, n: int) -> float:
        return self.penalty_scale * self.penalty(k, p) * n ** self.b_n_exponent


@dataclass(eq=False)
class SelectionResult:
    criterion: dict[int, float]
    k_hat: int
    fits: dict[int, SegmentedFit] = field(default_factory=dict)
    losses: dict[int, float] = field(default_factory=dict)
    zero_loss: bool = False
    method: str = "quantile"

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "k_hat": self.k_hat,
            "zero_loss": self.zero_loss,
            "criterion": {str(k): _num(v) for k, v in sorted(self.criterion.items())},
            "losses": {str(k): _num(v) for k, v in sorted(self.losses.items())},
            "fits": {str(k): f.to_dict() for k, f in sorted(self.fits.items())},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SelectionResult":
        return cls(
            criterion={int(k): _unnum(v) for k, v in d["criterion"].items()},
            k_hat=int(d["k_hat"]),
            fits={int(k): SegmentedFit.from_dict(v) for k, v in d.get("fits", {}).items()},
            losses={int(k): _unnum(v) for k, v in d.get("losses", {}).items()},
            zero_loss=bool(d.get("zero_loss", False)),
            method=d.get("method", "quantile"),
        )

    def __eq__(self, other):
        if not isinstance(other, SelectionResult):
            return NotImplemented
        return self.to_dict() == other.to_dict()


def _num(v: float):
    return v if math.isfinite(v) else ("inf" if v > 0 else "-inf")


def _unnum(v) -> float:
    return float(v)


def _select(model, data, tau, sel, constraints, config, method, threads) -> SelectionResult:
    sel = sel or SelectionConfig()
    constraints = constraints or SegmentationConstraints()
    cache = SegmentCostCache(model, data, tau, config, method)
    n, p = data.n, model.dim_phi
    criterion, fits, losses = {}, {}, {}
    zero = False
    for k in range(sel.k_max + 1):
        try:
            fit = fit_k_changepoints(model, data, k, tau, constraints, config, method,
                                     cache=cache, threads=threads)
        except InfeasibleSegmentation:
            criterion[k] = math.inf
            losses[k] = math.inf
            continue
        fits[k] = fit
        losses[k] = fit.total_loss
        s = fit.total_loss
        if s <= LOSS_FLOOR:
            zero = True
            s = LOSS_FLOOR
        criterion[k] = n * math.log(s / n) + sel.penalty_term(k, p, n)
    values = np.array([criterion[k] for k in range(sel.k_max + 1)])
    k_hat = int(np.argmin(values))
    return SelectionResult(criterion=criterion, k_hat=k_hat, fits=fits, losses=losses,
                           zero_loss=zero, method=method)


def select_k_quantile(model: RegressionModel, data: Dataset, tau=0.5,
                      sel: Optional[SelectionConfig] = None,
                      constraints: Optional[SegmentationConstraints] = None,
                      config: Optional[FitConfig] = None, threads: int = 1) -> SelectionResult:
    """Choose K minimising n log(S_n(K) / n) + P(K, p) B_n for the check loss.

    Counts that admit no segmentation get criterion +inf; a perfect fit is
    floored at 1e-12 inside the log and flagged through ``zero_loss``.
    """
    return _select(model, data, tau, sel, constraints, config, "quantile", threads)


def select_k_ls(model: RegressionModel, data: Dataset,
                sel: Optional[SelectionConfig] = None,
                constraints: Optional[SegmentationConstraints] = None,
                config: Optional[FitConfig] = None, threads: int = 1) -> SelectionResult:
    """Same criterion with S_n the minimal residual sum of squares."""
    return _select(model, data, 0.5, sel, constraints, config, "ls", threads)
