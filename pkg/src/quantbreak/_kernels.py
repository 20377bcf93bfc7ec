"""Compiled inner loops: segment losses, Nelder-Mead and Levenberg-Marquardt.

The registered regression families live here too and are selected by an
integer id. Passing jitted callables as arguments instead would defeat
numba's on-disk cache and force a recompile in every process.
"""

import numpy as np
from numba import njit

CHECK = 0
SQUARED = 1

MONO_MOLECULAR = 0
LINEAR = 1


@njit(cache=True, nogil=True)
def mono_eval(x, phi):
    return phi[0] - np.exp(-phi[1] * x[:, 0])


@njit(cache=True, nogil=True)
def mono_grad(x, phi):
    out = np.empty((x.shape[0], 2))
    out[:, 0] = 1.0
    out[:, 1] = x[:, 0] * np.exp(-phi[1] * x[:, 0])
    return out


@njit(cache=True, nogil=True)
def linear_eval(x, phi):
    out = np.full(x.shape[0], phi[0])
    for j in range(x.shape[1]):
        out += phi[j + 1] * x[:, j]
    return out


@njit(cache=True, nogil=True)
def linear_grad(x, phi):
    out = np.empty((x.shape[0], x.shape[1] + 1))
    out[:, 0] = 1.0
    out[:, 1:] = x
    return out


@njit(cache=True, nogil=True)
def model_eval(model_id, x, phi):
    if model_id == MONO_MOLECULAR:
        return mono_eval(x, phi)
    return linear_eval(x, phi)


@njit(cache=True, nogil=True)
def model_grad(model_id, x, phi):
    if model_id == MONO_MOLECULAR:
        return mono_grad(x, phi)
    return linear_grad(x, phi)


@njit(cache=True, nogil=True)
def loss_sum(model_id, x, y, phi, tau, kind):
    pred = model_eval(model_id, x, phi)
    s = 0.0
    for i in range(y.shape[0]):
        u = y[i] - pred[i]
        if kind == CHECK:
            if u <= 0.0:
                s += u * (tau - 1.0)
            else:
                s += u * tau
        else:
            s += u * u
    if not np.isfinite(s):
        return np.inf
    return s


@njit(cache=True, nogil=True)
def _clip(v, lo, hi):
    out = v.copy()
    for j in range(v.shape[0]):
        if out[j] < lo[j]:
            out[j] = lo[j]
        elif out[j] > hi[j]:
            out[j] = hi[j]
    return out


@njit(cache=True, nogil=True)
def _lex_less(a, b):
    for j in range(a.shape[0]):
        if a[j] < b[j]:
            return True
        if a[j] > b[j]:
            return False
    return False


@njit(cache=True, nogil=True)
def nelder_mead(model_id, x, y, tau, kind, x0, lo, hi, max_iters, ftol, xtol):
    """Box-projected Nelder-Mead; returns (phi, loss, n_evals, converged)."""
    p = x0.shape[0]
    sim = np.empty((p + 1, p))
    fs = np.empty(p + 1)
    sim[0] = _clip(x0, lo, hi)
    for k in range(p):
        pt = sim[0].copy()
        step = 0.05 * abs(pt[k]) if pt[k] != 0.0 else 0.00025
        if pt[k] + step > hi[k]:
            step = -step
        pt[k] += step
        sim[k + 1] = _clip(pt, lo, hi)
    nfev = 0
    for k in range(p + 1):
        fs[k] = loss_sum(model_id, x, y, sim[k], tau, kind)
        nfev += 1

    converged = False
    it = 0
    while it < max_iters:
        it += 1
        order = np.argsort(fs, kind="mergesort")
        sim = sim[order]
        fs = fs[order]
        fspread = 0.0
        xspread = 0.0
        for k in range(1, p + 1):
            d = abs(fs[k] - fs[0])
            if not (d <= fspread):
                fspread = d
            for j in range(p):
                dx = abs(sim[k, j] - sim[0, j])
                if dx > xspread:
                    xspread = dx
        if fspread <= ftol and xspread <= xtol:
            converged = True
            break

        c = np.zeros(p)
        for k in range(p):
            c += sim[k]
        c /= p
        worst = sim[p]
        xr = _clip(c + (c - worst), lo, hi)
        fr = loss_sum(model_id, x, y, xr, tau, kind)
        nfev += 1
        if fr < fs[0]:
            xe = _clip(c + 2.0 * (c - worst), lo, hi)
            fe = loss_sum(model_id, x, y, xe, tau, kind)
            nfev += 1
            if fe < fr:
                sim[p] = xe
                fs[p] = fe
            else:
                sim[p] = xr
                fs[p] = fr
        elif fr < fs[p - 1]:
            sim[p] = xr
            fs[p] = fr
        else:
            shrink = False
            if fr < fs[p]:
                xc = _clip(c + 0.5 * (xr - c), lo, hi)
                fc = loss_sum(model_id, x, y, xc, tau, kind)
                nfev += 1
                if fc <= fr:
                    sim[p] = xc
                    fs[p] = fc
                else:
                    shrink = True
            else:
                xc = _clip(c + 0.5 * (worst - c), lo, hi)
                fc = loss_sum(model_id, x, y, xc, tau, kind)
                nfev += 1
                if fc < fs[p]:
                    sim[p] = xc
                    fs[p] = fc
                else:
                    shrink = True
            if shrink:
                for k in range(1, p + 1):
                    sim[k] = sim[0] + 0.5 * (sim[k] - sim[0])
                    fs[k] = loss_sum(model_id, x, y, sim[k], tau, kind)
                    nfev += 1
    best = 0
    for k in range(1, p + 1):
        if fs[k] < fs[best] or (fs[k] == fs[best] and _lex_less(sim[k], sim[best])):
            best = k
    return sim[best].copy(), fs[best], nfev, converged


@njit(cache=True, nogil=True)
def multistart_nelder_mead(model_id, x, y, tau, kind, starts, lo, hi,
                           max_iters, ftol, xtol, max_restarts):
    """Run Nelder-Mead from every row of ``starts``, restarting each search at
    its own optimum until the loss stops improving by more than ``ftol``.

    Ties in loss are broken towards the lexicographically smallest vector.
    """
    p = starts.shape[1]
    best_phi = np.full(p, np.nan)
    best_f = np.inf
    total = 0
    any_conv = False
    for s in range(starts.shape[0]):
        phi, f, nfev, conv = nelder_mead(model_id, x, y, tau, kind, starts[s],
                                         lo, hi, max_iters, ftol, xtol)
        total += nfev
        for _ in range(max_restarts):
            if not np.isfinite(f):
                break
            phi2, f2, nfev2, conv2 = nelder_mead(model_id, x, y, tau, kind, phi,
                                                 lo, hi, max_iters, ftol, xtol)
            total += nfev2
            improved = f2 < f - ftol
            if f2 <= f:
                phi, f, conv = phi2, f2, conv2
            if not improved:
                break
        if not np.isfinite(f):
            continue
        any_conv = any_conv or conv
        if f < best_f or (f == best_f and _lex_less(phi, best_phi)):
            best_f = f
            best_phi = phi
    return best_phi, best_f, total, any_conv


@njit(cache=True, nogil=True)
def levenberg_marquardt(model_id, x, y, x0, lo, hi, max_iters, tol):
    """Box-projected Levenberg-Marquardt for sum of squared residuals.

    Returns (phi, sse, n_evals, converged).
    """
    p = x0.shape[0]
    phi = _clip(x0, lo, hi)
    r = y - model_eval(model_id, x, phi)
    f = np.dot(r, r)
    nfev = 1
    if not np.isfinite(f):
        return phi, np.inf, nfev, False
    lam = 1e-3
    converged = False
    for it in range(max_iters):
        jac = model_grad(model_id, x, phi)
        a = jac.T @ jac
        g = jac.T @ r
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(g))):
            break
        accepted = False
        f_new = f
        step_norm = 0.0
        while lam < 1e16:
            m = a.copy()
            for j in range(p):
                m[j, j] += lam * max(a[j, j], 1e-12)
            delta = np.linalg.solve(m, g)
            cand = _clip(phi + delta, lo, hi)
            rc = y - model_eval(model_id, x, cand)
            fc = np.dot(rc, rc)
            nfev += 1
            if np.isfinite(fc) and fc <= f:
                step_norm = 0.0
                for j in range(p):
                    step_norm = max(step_norm, abs(cand[j] - phi[j]) / (abs(phi[j]) + 1e-8))
                phi = cand
                r = rc
                f_new = fc
                lam = max(lam * 0.3, 1e-12)
                accepted = True
                break
            lam *= 10.0
        if not accepted:
            converged = True
            break
        decrease = f - f_new
        f = f_new
        if decrease <= tol * (1.0 + f) and step_norm <= 1e-8 + tol:
            converged = True
            break
        if f == 0.0:
            converged = True
            break
    return phi, f, nfev, converged
