"""Multi-phase data generation and Monte Carlo replication studies."""

from __future__ import annotations

import csv
import io
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from .changepoint import METHODS, SegmentationConstraints, SegmentedFit, fit_k_changepoints
from .core import Dataset, as_tau, get_model
from .estimator import EstimationError, FitConfig
from .selection import SelectionConfig, SelectionResult, select_k_ls, select_k_quantile

log = logging.getLogger(__name__)

# "zero" is a degenerate law used only to check the generator itself.
ERROR_LAWS = ("normal", "laplace", "cauchy", "zero")
FAILURE_LIMIT = 0.05


def error_distribution(law: str):
    """Frozen scipy distribution of a named error law (scale 1, centred at 0)."""
    dists = {"normal": stats.norm(), "laplace": stats.laplace(), "cauchy": stats.cauchy()}
    try:
        return dists[law]
    except KeyError:
        raise ValueError(f"no continuous distribution for error law {law!r}") from None


def draw_errors(law: str, rng: np.random.Generator, size) -> np.ndarray:
    if law == "normal":
        return rng.standard_normal(size)
    if law == "laplace":
        return rng.laplace(0.0, 1.0, size)
    if law == "cauchy":
        # numpy draws a ratio of independent normals: no moments involved
        return rng.standard_cauchy(size)
    if law == "zero":
        return np.zeros(size)
    raise ValueError(f"unknown error law {law!r}; expected one of {ERROR_LAWS}")


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based stream, so replication r is reproducible on its own."""
    return np.random.Generator(np.random.Philox(seed))


@dataclass(frozen=True)
class ScenarioSpec:
    n: int
    true_breaks: tuple[int, ...]
    true_phis: tuple[tuple[float, ...], ...]
    error_law: str = "normal"
    model: str = "mono_molecular"
    tau: float = 0.5
    seed: int = 0
    x_mean: float = 1.0
    x_sd: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "true_breaks", tuple(int(b) for b in self.true_breaks))
        object.__setattr__(self, "true_phis", tuple(tuple(float(v) for v in p) for p in self.true_phis))
        as_tau(self.tau)
        if self.n < 2:
            raise ValueError("n must be at least 2")
        bounds = (0,) + self.true_breaks + (self.n,)
        if any(b <= a for a, b in zip(bounds, bounds[1:])):
            raise ValueError(f"breaks must be strictly increasing inside (0, {self.n}): {self.true_breaks}")
        if len(self.true_phis) != len(self.true_breaks) + 1:
            raise ValueError("need exactly one parameter vector per phase")
        if any(a == b for a, b in zip(self.true_phis, self.true_phis[1:])):
            raise ValueError("consecutive phases must have different parameters")
        if self.error_law not in ERROR_LAWS:
            raise ValueError(f"unknown error law {self.error_law!r}; expected one of {ERROR_LAWS}")
        p = get_model(self.model).dim_phi
        if any(len(phi) != p for phi in self.true_phis):
            raise ValueError(f"model {self.model!r} takes {p} parameters per phase")
        if self.seed < 0:
            raise ValueError("seed must be unsigned")
        if not self.x_sd > 0:
            raise ValueError("x_sd must be positive")

    @property
    def k(self) -> int:
        return len(self.true_breaks)

    def for_replication(self, rep: int) -> "ScenarioSpec":
        return replace(self, seed=self.seed + rep)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["true_breaks"] = list(self.true_breaks)
        d["true_phis"] = [list(p) for p in self.true_phis]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioSpec":
        return cls(**d)


def generate(spec: ScenarioSpec) -> tuple[Dataset, np.ndarray]:
    """Draw X ~ N(x_mean, x_sd^2) and errors, then assemble the responses
    phase by phase; phase r covers observations l_{r-1}+1 .. l_r."""
    model = get_model(spec.model)
    rng = make_rng(spec.seed)
    x = rng.normal(spec.x_mean, spec.x_sd, size=(spec.n, model.dim_x))
    eps = draw_errors(spec.error_law, rng, spec.n)
    y = np.empty(spec.n)
    bounds = (0,) + spec.true_breaks + (spec.n,)
    for (a, b), phi in zip(zip(bounds, bounds[1:]), spec.true_phis):
        y[a:b] = model.eval(x[a:b], np.asarray(phi, float))
    y += eps
    return Dataset(x, y), eps


# ---------------------------------------------------------------------------
# reports

def summarize(fits: Sequence[SegmentedFit]) -> tuple[list[float], list[list[float]], list[list[float]]]:
    """Median of each break, mean and sd (ddof=1) of each phase's parameters."""
    if not fits:
        return [], [], []
    breaks = np.array([f.breaks for f in fits], dtype=float).reshape(len(fits), -1)
    phis = np.array([np.stack(f.phis) for f in fits])
    medians = [float(v) for v in np.median(breaks, axis=0)] if breaks.shape[1] else []
    means = phis.mean(axis=0).tolist()
    sds = (phis.std(axis=0, ddof=1) if len(fits) > 1 else np.zeros_like(phis[0])).tolist()
    return medians, means, sds


@dataclass(eq=False)
class McReport:
    method: str
    scenario: ScenarioSpec
    k: int
    seeds: list[int]
    fits: list[Optional[SegmentedFit]]
    selections: Optional[list[Optional[SelectionResult]]] = None
    failures: list[tuple[int, str]] = field(default_factory=list)
    k_max: Optional[int] = None

    @property
    def n_reps(self) -> int:
        return len(self.seeds)

    @property
    def flagged(self) -> bool:
        return len(self.failures) >= FAILURE_LIMIT * max(self.n_reps, 1)

    def fits_at_k(self, k: Optional[int] = None) -> list[SegmentedFit]:
        k = self.k if k is None else k
        return [f for f in self.fits if f is not None and f.k == k]

    @property
    def summary(self):
        return summarize(self.fits_at_k())

    @property
    def break_medians(self) -> list[float]:
        return self.summary[0]

    @property
    def phi_means(self) -> list[list[float]]:
        return self.summary[1]

    @property
    def phi_sds(self) -> list[list[float]]:
        return self.summary[2]

    @property
    def selection_freqs(self) -> Optional[dict[int, int]]:
        if self.selections is None:
            return None
        freqs = {k: 0 for k in range(self.k_max + 1)}
        for s in self.selections:
            if s is not None:
                freqs[s.k_hat] += 1
        return freqs

    def to_dict(self) -> dict:
        medians, means, sds = self.summary
        d = {
            "method": self.method,
            "scenario": self.scenario.to_dict(),
            "k": self.k,
            "n_reps": self.n_reps,
            "seeds": list(self.seeds),
            "failures": [[r, msg] for r, msg in self.failures],
            "flagged": self.flagged,
            "break_medians": medians,
            "phi_means": means,
            "phi_sds": sds,
            "per_rep": [None if f is None else f.to_dict() for f in self.fits],
        }
        if self.selections is not None:
            d["k_max"] = self.k_max
            d["selection_freqs"] = {str(k): v for k, v in self.selection_freqs.items()}
            d["selections"] = [None if s is None else s.to_dict() for s in self.selections]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "McReport":
        sels = d.get("selections")
        return cls(
            method=d["method"],
            scenario=ScenarioSpec.from_dict(d["scenario"]),
            k=int(d["k"]),
            seeds=[int(s) for s in d["seeds"]],
            fits=[None if f is None else SegmentedFit.from_dict(f) for f in d["per_rep"]],
            selections=None if sels is None else
            [None if s is None else SelectionResult.from_dict(s) for s in sels],
            failures=[(int(r), str(m)) for r, m in d.get("failures", [])],
            k_max=d.get("k_max"),
        )

    def __eq__(self, other):
        if not isinstance(other, McReport):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    def to_csv(self) -> str:
        """One flat row per replication, for plotting outside Python."""
        max_k = max([f.k for f in self.fits if f is not None] + [self.k])
        p = len(self.scenario.true_phis[0])
        header = ["rep", "seed", "method", "status", "k", "k_hat", "total_loss"]
        header += [f"l{r + 1}" for r in range(max_k)]
        header += [f"phi{r + 1}_{j + 1}" for r in range(max_k + 1) for j in range(p)]
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        failed = dict(self.failures)
        for rep, (seed, fit) in enumerate(zip(self.seeds, self.fits)):
            k_hat = ""
            if self.selections is not None and self.selections[rep] is not None:
                k_hat = self.selections[rep].k_hat
            if fit is None:
                writer.writerow([rep, seed, self.method, "failed: " + failed.get(rep, ""), "", k_hat, ""]
                                + [""] * (len(header) - 7))
                continue
            row = [rep, seed, self.method, "ok", fit.k, k_hat, repr(fit.total_loss)]
            row += list(fit.breaks) + [""] * (max_k - fit.k)
            flat = [repr(float(v)) for phi in fit.phis for v in phi]
            row += flat + [""] * ((max_k + 1) * p - len(flat))
            writer.writerow(row)
        return buf.getvalue()


# ---------------------------------------------------------------------------
# studies

def _map_reps(fn, n_reps: int, threads: int):
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, range(n_reps)))
    return [fn(r) for r in range(n_reps)]


def _check_methods(methods):
    methods = tuple(methods)
    bad = [m for m in methods if m not in METHODS]
    if bad or not methods:
        raise ValueError(f"methods must be a nonempty subset of {METHODS}, got {methods}")
    return methods


def run_table_study(spec: ScenarioSpec, n_reps: int, k: Optional[int] = None,
                    methods: Sequence[str] = ("quantile", "ls"),
                    constraints: Optional[SegmentationConstraints] = None,
                    config: Optional[FitConfig] = None, threads: int = 1) -> dict[str, McReport]:
    """Fit every replication at a fixed number of breaks, per method.

    Replication r uses seed ``spec.seed + r``. Optimizer failures are kept
    in the report and excluded from the summaries.
    """
    if n_reps < 1:
        raise ValueError("n_reps must be at least 1")
    methods = _check_methods(methods)
    k = spec.k if k is None else k
    model = get_model(spec.model)

    def one(rep):
        data, _ = generate(spec.for_replication(rep))
        out = {}
        for method in methods:
            try:
                out[method] = fit_k_changepoints(model, data, k, spec.tau, constraints, config, method)
            except EstimationError as exc:
                out[method] = exc
        log.debug("replication %d done", rep)
        return out

    results = _map_reps(one, n_reps, threads)
    seeds = [spec.seed + r for r in range(n_reps)]
    reports = {}
    for method in methods:
        fits, failures = [], []
        for rep, res in enumerate(results):
            item = res[method]
            if isinstance(item, Exception):
                fits.append(None)
                failures.append((rep, str(item)))
            else:
                fits.append(item)
        reports[method] = McReport(method, spec, k, seeds, fits, failures=failures)
    return reports


def run_selection_study(spec: ScenarioSpec, n_reps: int, sel: Optional[SelectionConfig] = None,
                        methods: Sequence[str] = ("quantile", "ls"),
                        constraints: Optional[SegmentationConstraints] = None,
                        config: Optional[FitConfig] = None, threads: int = 1) -> dict[str, McReport]:
    """Select the number of breaks in every replication, per method."""
    if n_reps < 1:
        raise ValueError("n_reps must be at least 1")
    methods = _check_methods(methods)
    sel = sel or SelectionConfig()
    model = get_model(spec.model)

    def one(rep):
        data, _ = generate(spec.for_replication(rep))
        out = {}
        for method in methods:
            try:
                if method == "quantile":
                    out[method] = select_k_quantile(model, data, spec.tau, sel, constraints, config)
                else:
                    out[method] = select_k_ls(model, data, sel, constraints, config)
            except EstimationError as exc:
                out[method] = exc
        return out

    results = _map_reps(one, n_reps, threads)
    seeds = [spec.seed + r for r in range(n_reps)]
    reports = {}
    for method in methods:
        fits, sels, failures = [], [], []
        for rep, res in enumerate(results):
            item = res[method]
            if isinstance(item, Exception):
                fits.append(None)
                sels.append(None)
                failures.append((rep, str(item)))
            else:
                sels.append(item)
                fits.append(item.fits[item.k_hat])
        reports[method] = McReport(method, spec, spec.k, seeds, fits, selections=sels,
                                   failures=failures, k_max=sel.k_max)
    return reports
