"""Joint estimation of change-points and per-segment parameters for fixed K.

Break ``l`` means the current phase ends at observation ``l`` (1-based), so
segment r covers observations l_{r-1}+1 .. l_r with l_0 = 0 and
l_{K+1} = n. In 0-based slices segment r is ``[l_{r-1}, l_r)``.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import Dataset, RegressionModel, as_tau
from .estimator import FitConfig, SegmentFit, fit_ls, fit_quantile

METHODS = ("quantile", "ls")


class InfeasibleSegmentation(ValueError):
    pass


@dataclass(frozen=True)
class SegmentationConstraints:
    min_seg_exponent: float = 0.51
    min_seg_floor: Optional[int] = None
    grid_step: int = 1

    def __post_init__(self):
        if not (0.5 < self.min_seg_exponent < 1.0):
            raise ValueError("min_seg_exponent must lie in (1/2, 1)")
        if self.grid_step < 1:
            raise ValueError("grid_step must be a positive integer")
        if self.min_seg_floor is not None and self.min_seg_floor < 1:
            raise ValueError("min_seg_floor must be positive")

    def min_len(self, n: int, p: int) -> int:
        floor = p + 2 if self.min_seg_floor is None else self.min_seg_floor
        if floor < p + 1:
            raise ValueError(f"min_seg_floor must be at least p + 1 = {p + 1}")
        return max(floor, math.ceil(n ** self.min_seg_exponent))


@dataclass(eq=False)
class SegmentedFit:
    k: int
    breaks: tuple[int, ...]
    phis: list[np.ndarray]
    total_loss: float
    per_segment: list[SegmentFit] = field(default_factory=list)

    @property
    def per_segment_losses(self) -> list[float]:
        return [s.loss for s in self.per_segment]

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "breaks": list(self.breaks),
            "phis": [[float(v) for v in phi] for phi in self.phis],
            "total_loss": float(self.total_loss),
            "per_segment_losses": [float(v) for v in self.per_segment_losses],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SegmentedFit":
        phis = [np.asarray(p, float) for p in d["phis"]]
        per = [SegmentFit(phi, float(loss), 0, True)
               for phi, loss in zip(phis, d.get("per_segment_losses", []))]
        return cls(k=int(d["k"]), breaks=tuple(int(b) for b in d["breaks"]),
                   phis=phis, total_loss=float(d["total_loss"]), per_segment=per)

    def __eq__(self, other):
        if not isinstance(other, SegmentedFit):
            return NotImplemented
        return self.to_dict() == other.to_dict()


class SegmentCostCache:
    """Memoised per-segment fits keyed by the 0-based slice ``(start, stop)``.

    Every cell is a pure function of its slice, so the order in which cells
    are filled (or whether they are cached at all) never changes a result.
    """

    def __init__(self, model: RegressionModel, data: Dataset, tau=0.5,
                 config: Optional[FitConfig] = None, method: str = "quantile"):
        if method not in METHODS:
            raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
        self.model = model
        self.data = data
        self.tau = as_tau(tau)
        self.config = config or FitConfig()
        self.method = method
        self._fits: dict[tuple[int, int], SegmentFit] = {}

    def __len__(self):
        return len(self._fits)

    def fit(self, start: int, stop: int) -> SegmentFit:
        key = (start, stop)
        hit = self._fits.get(key)
        if hit is None:
            if self.method == "quantile":
                hit = fit_quantile(self.model, self.data, key, self.tau, self.config)
            else:
                hit = fit_ls(self.model, self.data, key, self.config)
            self._fits[key] = hit
        return hit

    def cost(self, start: int, stop: int) -> float:
        return self.fit(start, stop).loss

    def fill(self, keys, threads: int = 1):
        missing = [k for k in dict.fromkeys(keys) if k not in self._fits]
        if threads > 1 and len(missing) > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                list(pool.map(lambda k: self.fit(*k), missing))
        else:
            for k in missing:
                self.fit(*k)


def segment_cost(model: RegressionModel, data: Dataset, l: int, k: int, tau=0.5,
                 config: Optional[FitConfig] = None, cache: Optional[SegmentCostCache] = None) -> float:
    """Minimal check loss over observations ``l..k`` (1-based, inclusive)."""
    if cache is None:
        cache = SegmentCostCache(model, data, tau, config)
    return cache.cost(l - 1, k)


def candidate_breaks(n: int, min_len: int, step: int = 1) -> list[int]:
    return list(range(min_len, n - min_len + 1, step))


def admissible_breaks(n: int, k: int, min_len: int, step: int = 1):
    """All strictly increasing k-tuples of candidate breaks whose segments
    (including the first and last) have length at least ``min_len``."""
    cands = candidate_breaks(n, min_len, step)
    for combo in itertools.combinations(cands, k):
        bounds = (0,) + combo + (n,)
        if all(b - a >= min_len for a, b in zip(bounds, bounds[1:])):
            yield combo


def _tuple_total(cache: SegmentCostCache, breaks, n: int) -> float:
    # summed right to left, the same association the DP recursion produces
    bounds = (0,) + tuple(breaks) + (n,)
    total = 0.0
    for a, b in reversed(list(zip(bounds, bounds[1:]))):
        total = cache.cost(a, b) + total
    return total


def _assemble(cache: SegmentCostCache, breaks, n: int, k: int) -> SegmentedFit:
    bounds = (0,) + tuple(breaks) + (n,)
    per = [cache.fit(a, b) for a, b in zip(bounds, bounds[1:])]
    return SegmentedFit(k=k, breaks=tuple(int(b) for b in breaks),
                        phis=[s.phi_hat.copy() for s in per],
                        total_loss=_tuple_total(cache, breaks, n), per_segment=per)


def _feasibility(n: int, k: int, min_len: int):
    if k < 0:
        raise ValueError("number of change-points must be nonnegative")
    if (k + 1) * min_len > n:
        raise InfeasibleSegmentation(
            f"infeasible segmentation: {k + 1} segments of length >= {min_len} need n >= "
            f"{(k + 1) * min_len}, got n = {n}")


def _dp(cache: SegmentCostCache, n: int, k: int, min_len: int, cands: list[int], threads: int):
    """Exact minimisation over break tuples drawn from ``cands``.

    suffix[r][m] is the best loss of covering m+1..n with r segments. Breaks
    are then read off left to right taking the smallest minimiser each time,
    which yields the lexicographically smallest optimal tuple.
    """
    layer_keys = [(m, n) for m in cands if n - m >= min_len]
    cache.fill(layer_keys, threads)
    suffix = [None, {m: cache.cost(m, n) for m, _ in layer_keys}]
    for r in range(2, k + 1):
        prev = suffix[r - 1]
        keys = [(m, m2) for m in cands for m2 in prev if m2 - m >= min_len]
        cache.fill(keys, threads)
        cur = {}
        for m, m2 in keys:
            val = cache.cost(m, m2) + prev[m2]
            if m not in cur or val < cur[m]:
                cur[m] = val
        suffix.append(cur)
    top = suffix[k]
    first_keys = [(0, m) for m in top if m >= min_len]
    cache.fill(first_keys, threads)
    if not first_keys:
        raise InfeasibleSegmentation("infeasible segmentation: no admissible break on the grid")
    best = min(cache.cost(0, m) + top[m] for _, m in first_keys)

    breaks = []
    prev_b, target = 0, best
    for r in range(k, 0, -1):
        layer = suffix[r]
        chosen = None
        for m in sorted(layer):
            if m - prev_b < min_len:
                continue
            if cache.cost(prev_b, m) + layer[m] == target:
                chosen = m
                break
        breaks.append(chosen)
        target = layer[chosen]
        prev_b = chosen
    return tuple(breaks), best


def _best_of(cache, n, combos, best, best_val):
    for c in combos:
        val = _tuple_total(cache, c, n)
        if val < best_val or (val == best_val and c < best):
            best, best_val = c, val
    return best, best_val


def _segment_keys(combos, n):
    keys = set()
    for c in combos:
        bounds = (0,) + c + (n,)
        keys.update(zip(bounds, bounds[1:]))
    return sorted(keys)


def _refine_locally(cache, n, k, min_len, breaks, radius, threads, max_rounds=10):
    """Unit-resolution search around coarse breaks.

    First every tuple within +-radius of the current breaks (recentred until
    stable), then coordinate sweeps moving one break at a time over its
    whole admissible range; the cost surface is multimodal in each break, so
    windows alone can stall next to a better optimum.
    """
    best = tuple(breaks)
    best_val = _tuple_total(cache, best, n)
    for _ in range(max_rounds):
        windows = [range(max(min_len, b - radius), min(n - min_len, b + radius) + 1) for b in best]
        combos = [c for c in itertools.product(*windows)
                  if all(b - a >= min_len for a, b in zip((0,) + c, c + (n,)))]
        cache.fill(_segment_keys(combos, n), threads)
        new_best, best_val = _best_of(cache, n, combos, best, best_val)
        if new_best == best:
            break
        best = new_best
    for _ in range(max_rounds):
        start = best
        for r in range(k):
            lo = (best[r - 1] if r > 0 else 0) + min_len
            hi = (best[r + 1] if r + 1 < k else n) - min_len
            combos = [best[:r] + (m,) + best[r + 1:] for m in range(lo, hi + 1)]
            cache.fill(_segment_keys(combos, n), threads)
            best, best_val = _best_of(cache, n, combos, best, best_val)
        if best == start:
            break
    return best


def fit_k_changepoints(model: RegressionModel, data: Dataset, k: int, tau=0.5,
                       constraints: Optional[SegmentationConstraints] = None,
                       config: Optional[FitConfig] = None, method: str = "quantile",
                       cache: Optional[SegmentCostCache] = None, threads: int = 1) -> SegmentedFit:
    """Change-points and per-phase parameters minimising the summed loss
    with ``k`` breaks. ``grid_step > 1`` searches a coarse grid exactly and
    then refines each break within +-grid_step at unit resolution."""
    constraints = constraints or SegmentationConstraints()
    if cache is None:
        cache = SegmentCostCache(model, data, tau, config, method)
    n = data.n
    min_len = constraints.min_len(n, model.dim_phi)
    _feasibility(n, k, min_len)
    if k == 0:
        return _assemble(cache, (), n, 0)
    step = constraints.grid_step
    cands = candidate_breaks(n, min_len, step)
    if step > 1 and cands[-1] != n - min_len:
        cands.append(n - min_len)
    breaks, _ = _dp(cache, n, k, min_len, cands, threads)
    if step > 1:
        breaks = _refine_locally(cache, n, k, min_len, breaks, step, threads)
    fit = _assemble(cache, breaks, n, k)
    _check_gaps(fit, n, min_len)
    return fit


def _check_gaps(fit: SegmentedFit, n: int, min_len: int):
    bounds = (0,) + fit.breaks + (n,)
    gaps = [b - a for a, b in zip(bounds, bounds[1:])]
    assert min(gaps) >= min_len, f"segment shorter than {min_len}: {fit.breaks}"


def brute_force_changepoints(model: RegressionModel, data: Dataset, k: int, tau=0.5,
                             constraints: Optional[SegmentationConstraints] = None,
                             config: Optional[FitConfig] = None, method: str = "quantile",
                             max_tuples: int = 100_000) -> SegmentedFit:
    """Exhaustive search over every admissible break tuple (test oracle)."""
    constraints = constraints or SegmentationConstraints()
    n = data.n
    min_len = constraints.min_len(n, model.dim_phi)
    _feasibility(n, k, min_len)
    step = constraints.grid_step
    n_cands = len(candidate_breaks(n, min_len, step))
    if math.comb(n_cands, k) > max_tuples:
        raise ValueError("oracle too large: more than %d break tuples" % max_tuples)
    cache = SegmentCostCache(model, data, tau, config, method)
    best, best_val = None, math.inf
    for combo in admissible_breaks(n, k, min_len, step):
        val = _tuple_total(cache, combo, n)
        if val < best_val:
            best, best_val = combo, val
    if best is None:
        raise InfeasibleSegmentation("infeasible segmentation: no admissible break tuple")
    return _assemble(cache, best, n, k)
