"""Monte Carlo checks of the limit laws for break and parameter estimators."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from scipy import linalg, stats

from .core import RegressionModel, as_tau, check_loss, get_model
from .estimator import estimate_f0, gradient_gram
from .simulation import McReport, ScenarioSpec, draw_errors, error_distribution, generate, make_rng


def _grid_order(J: int) -> np.ndarray:
    # 0, -1, 1, -2, 2, ...: np.argmin keeps the first hit, giving the
    # smallest-|j|-then-negative tie-break
    order = [0]
    for j in range(1, J + 1):
        order += [-j, j]
    return np.array(order)


@dataclass(frozen=True, eq=False)
class LimitProcessSample:
    j_grid: np.ndarray
    z_values: dict[int, float]
    argmin_j: int


@dataclass(frozen=True, eq=False)
class BreakLaw:
    """Probability mass function on the integers -J..J."""

    support: np.ndarray
    pmf: np.ndarray
    outside_mass: float = 0.0

    @property
    def J(self) -> int:
        return int(self.support[-1])

    def to_csv(self) -> str:
        lines = ["j,pmf"] + [f"{int(j)},{float(p)!r}" for j, p in zip(self.support, self.pmf)]
        return "\n".join(lines) + "\n"


def z_process(model: RegressionModel, left, right, tau, error_law: str, J: int,
              rng: np.random.Generator, n_draws: int = 1,
              x_mean: float = 1.0, x_sd: float = 1.0) -> np.ndarray:
    """Z values of ``n_draws`` realisations around a break from phase
    ``left`` to phase ``right``; columns follow the order 0, -1, 1, -2, 2, ...
    """
    tau = as_tau(tau)
    left = np.asarray(left, float)
    right = np.asarray(right, float)
    shape = (n_draws, J)

    def side(own, other):
        x = rng.normal(x_mean, x_sd, size=(n_draws * J, model.dim_x))
        eps = draw_errors(error_law, rng, shape)
        shift = (model.eval(x, other) - model.eval(x, own)).reshape(shape)
        # observation generated by `own` but fitted with `other`
        terms = check_loss(eps - shift, tau) - check_loss(eps, tau)
        return np.cumsum(terms, axis=1)

    z_right = side(right, left)   # break placed j steps late
    z_left = side(left, right)    # break placed j steps early
    z = np.zeros((n_draws, 2 * J + 1))
    z[:, 1::2] = z_left
    z[:, 2::2] = z_right
    return z


def _limit_process(model: RegressionModel, spec: ScenarioSpec, r: int, J: int, rng, n_draws: int):
    if not 1 <= r <= spec.k:
        raise ValueError(f"break index r must be in 1..{spec.k}")
    return z_process(model, spec.true_phis[r - 1], spec.true_phis[r], spec.tau, spec.error_law,
                     J, rng, n_draws, spec.x_mean, spec.x_sd)


def argmin_on_grid(z: np.ndarray) -> np.ndarray:
    """Grid index j of the minimum of each row of ``z_process`` output, with
    ties going to the smallest |j| and then to the negative side."""
    J = (z.shape[1] - 1) // 2
    return _grid_order(J)[np.argmin(z, axis=1)]


def sample_limit_process(model: RegressionModel, spec: ScenarioSpec, r: int, J: int,
                         rng: np.random.Generator) -> LimitProcessSample:
    order = _grid_order(J)
    z = _limit_process(model, spec, r, J, rng, 1)[0]
    vals = {int(j): float(v) for j, v in zip(order, z)}
    return LimitProcessSample(j_grid=np.arange(-J, J + 1), z_values=vals,
                              argmin_j=int(order[np.argmin(z)]))


def sample_limit_law(model: RegressionModel, spec: ScenarioSpec, r: int, J: int = 15,
                     n_draws: int = 10_000, seed: Optional[int] = None) -> BreakLaw:
    """Empirical law of argmin_j Z_{r,j} over -J..J.

    For j > 0, Z_{r,j} sums rho(eps_i - g(X_i, phi_r) + g(X_i, phi_{r+1})) - rho(eps_i)
    over the j observations right after the true break; j < 0 mirrors this
    over the |j| observations ending at the break. X and errors are drawn
    fresh for every realisation.
    """
    if J < 1:
        raise ValueError("J must be at least 1")
    rng = make_rng(spec.seed if seed is None else seed)
    counts = np.zeros(2 * J + 1)
    chunk = 2000
    done = 0
    while done < n_draws:
        m = min(chunk, n_draws - done)
        z = _limit_process(model, spec, r, J, rng, m)
        idx = argmin_on_grid(z) + J
        counts += np.bincount(idx, minlength=2 * J + 1)
        done += m
    return BreakLaw(support=np.arange(-J, J + 1), pmf=counts / n_draws)


def total_variation(p: BreakLaw, q: BreakLaw) -> float:
    """Half the L1 distance, counting mass outside each grid as disjoint."""
    lo = min(p.support[0], q.support[0])
    hi = max(p.support[-1], q.support[-1])
    grid = np.arange(lo, hi + 1)
    pa = np.zeros(grid.shape)
    qa = np.zeros(grid.shape)
    pa[p.support - lo] = p.pmf
    qa[q.support - lo] = q.pmf
    return 0.5 * float(np.abs(pa - qa).sum() + p.outside_mass + q.outside_mass)


def empirical_break_law(mc: McReport, r: int, J: int) -> BreakLaw:
    true = mc.scenario.true_breaks[r - 1]
    errors = np.array([f.breaks[r - 1] - true for f in mc.fits_at_k()])
    if errors.size == 0:
        raise ValueError("report holds no successful fits")
    support = np.arange(-J, J + 1)
    inside = np.abs(errors) <= J
    counts = np.bincount(errors[inside] + J, minlength=2 * J + 1)
    return BreakLaw(support=support, pmf=counts / errors.size,
                    outside_mass=float(np.mean(~inside)))


@dataclass(frozen=True)
class BreakLawComparison:
    distance: float
    outside_mass: float
    flagged: bool


def compare_break_law(mc: McReport, limit: BreakLaw, r: int) -> BreakLawComparison:
    """Total variation between the Monte Carlo law of (l_hat_r - l_r) and a
    simulated limit law; flagged when over 20% of estimates fall off-grid."""
    emp = empirical_break_law(mc, r, limit.J)
    d = total_variation(emp, limit)
    return BreakLawComparison(distance=d, outside_mass=emp.outside_mass,
                              flagged=emp.outside_mass > 0.2)


@dataclass(frozen=True, eq=False)
class NormalityCheck:
    standardized: np.ndarray
    ks_per_coord: np.ndarray
    cov_error: float

    def to_dict(self) -> dict:
        return {"ks_per_coord": self.ks_per_coord.tolist(), "cov_error": self.cov_error,
                "n_reps": int(self.standardized.shape[0])}

    def to_csv(self) -> str:
        p = self.standardized.shape[1]
        lines = [",".join(f"z{j + 1}" for j in range(p))]
        lines += [",".join(repr(float(v)) for v in row) for row in self.standardized]
        return "\n".join(lines) + "\n"


def normality_stats(standardized) -> NormalityCheck:
    z = np.atleast_2d(np.asarray(standardized, float))
    ks = np.array([stats.kstest(z[:, j], "norm").statistic for j in range(z.shape[1])])
    cov = np.atleast_2d(np.cov(z, rowvar=False))
    cov_error = float(np.linalg.norm(cov - np.eye(z.shape[1]), 2))
    return NormalityCheck(standardized=z, ks_per_coord=ks, cov_error=cov_error)


def true_f0(spec: ScenarioSpec) -> float:
    return float(error_distribution(spec.error_law).pdf(0.0))


def check_normality(mc: McReport, model: Optional[RegressionModel], spec: Optional[ScenarioSpec],
                    r: int, f0: Union[str, float] = "true") -> NormalityCheck:
    """Standardise each replication's phase-r estimate as
    sqrt(len) * f0 / sqrt(tau(1 - tau)) * Sigma_r^{1/2} (phi_hat - phi0)
    and compare with N(0, I).

    Sigma_r is the gradient Gram matrix at the true parameters over the true
    phase, recomputed from the regenerated replication data. ``f0`` is
    ``"true"`` (error density at 0), ``"estimate"`` (kernel estimate from the
    phase residuals) or a number.
    """
    spec = spec or mc.scenario
    model = model or get_model(spec.model)
    tau = as_tau(spec.tau)
    k = len(spec.true_breaks)
    if not 1 <= r <= k + 1:
        raise ValueError(f"phase index r must be in 1..{k + 1}")
    phi0 = np.asarray(spec.true_phis[r - 1], float)
    true_bounds = (0,) + spec.true_breaks + (spec.n,)
    rows = []
    for rep, fit in enumerate(mc.fits):
        if fit is None or fit.k != k:
            continue
        data, _ = generate(spec.for_replication(mc.seeds[rep] - spec.seed))
        sigma = gradient_gram(model, data, (true_bounds[r - 1], true_bounds[r]), phi0)
        if np.linalg.cond(sigma) >= 1e12:
            raise np.linalg.LinAlgError("degenerate design: gradient Gram matrix is singular")
        bounds = (0,) + fit.breaks + (data.n,)
        length = bounds[r] - bounds[r - 1]
        if f0 == "true":
            dens = true_f0(spec)
        elif f0 == "estimate":
            x, y = data.segment((bounds[r - 1], bounds[r]))
            dens = estimate_f0(y - model.eval(x, fit.phis[r - 1]), tau).f0_hat
        else:
            dens = float(f0)
        root = np.real(linalg.sqrtm(sigma))
        scale = np.sqrt(length) * dens / np.sqrt(tau * (1.0 - tau))
        rows.append(scale * root @ (fit.phis[r - 1] - phi0))
    if not rows:
        raise ValueError("report holds no successful fits")
    return normality_stats(np.array(rows))
