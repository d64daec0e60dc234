"""Inner loops shared by the probability engine and the simulation code.

Each kernel exists twice: a numba-compiled scalar loop (``*_nb``) and a
vectorised numpy version (``*_np``).  The public wrappers pick one according
to :func:`supnoninf._accel.backend`.  Both paths consume the same inputs, so
results agree to floating point round-off.
"""
import math

import numpy as np
from scipy import special

from supnoninf import _accel
from supnoninf._accel import njit

_SQRT1_2 = 1.0 / math.sqrt(2.0)
_TINY = 1e-300

# Wichura (1988) AS241, PPND16
_A = np.array([3.3871328727963666080e0, 1.3314166789178437745e2, 1.9715909503065514427e3,
               1.3731693765509461125e4, 4.5921953931549871457e4, 6.7265770927008700853e4,
               3.3430575583588128105e4, 2.5090809287301226727e3])
_B = np.array([1.0, 4.2313330701600911252e1, 6.8718700749205790830e2, 5.3941960214247511077e3,
               2.1213794301586595867e4, 3.9307895800092710610e4, 2.8729085735721942674e4,
               5.2264952788528545610e3])
_C = np.array([1.42343711074968357734e0, 4.63033784615654529590e0, 5.76949722146069140550e0,
               3.64784832476320460504e0, 1.27045825245236838258e0, 2.41780725177450611770e-1,
               2.27238449892691845833e-2, 7.74545014278341407640e-4])
_D = np.array([1.0, 2.05319162663775882187e0, 1.67638483018380384940e0, 6.89767334985100004550e-1,
               1.48103976427480074590e-1, 1.51986665636164571966e-2, 5.47593808499534494600e-4,
               1.05075007164441684324e-9])
_E = np.array([6.65790464350110377720e0, 5.46378491116411436990e0, 1.78482653991729133580e0,
               2.96560571828504891230e-1, 2.65321895265761230930e-2, 1.24266094738807843860e-3,
               2.71155556874348757815e-5, 2.01033439929228813265e-7])
_F = np.array([1.0, 5.99832206555887937690e-1, 1.36929880922735805310e-1, 1.48753612908506148525e-2,
               7.86869131145613259100e-4, 1.84631831751005468180e-5, 1.42151175831644588870e-7,
               2.04426310338993978564e-15])


@njit
def _horner(coef, x):
    acc = 0.0
    for i in range(coef.shape[0] - 1, -1, -1):
        acc = acc * x + coef[i]
    return acc


@njit
def ndtri_nb(p):
    """Standard normal quantile (AS241); p must lie in (0, 1)."""
    q = p - 0.5
    if abs(q) <= 0.425:
        r = 0.180625 - q * q
        return q * _horner(_A, r) / _horner(_B, r)
    r = p if q < 0.0 else 1.0 - p
    r = math.sqrt(-math.log(r))
    if r <= 5.0:
        r -= 1.6
        x = _horner(_C, r) / _horner(_D, r)
    else:
        r -= 5.0
        x = _horner(_E, r) / _horner(_F, r)
    return -x if q < 0.0 else x


@njit
def _ncdf(x):
    return 0.5 * math.erfc(-x * _SQRT1_2)


@njit
def _nsf(x):
    return 0.5 * math.erfc(x * _SQRT1_2)


# --------------------------------------------------------------------------
# separation-of-variables integrand (Genz) for a central multivariate t
# --------------------------------------------------------------------------

@njit
def sov_integrand_nb(a, b, L, s, w):
    n_pts = s.shape[0]
    m = a.shape[0]
    out = np.empty(n_pts)
    y = np.zeros(m)
    for n in range(n_pts):
        sc = s[n]
        prod = 1.0
        for i in range(m):
            shift = 0.0
            for j in range(i):
                shift += L[i, j] * y[j]
            lo = (a[i] * sc - shift) / L[i, i]
            hi = (b[i] * sc - shift) / L[i, i]
            if lo > 0.0:
                # upper tail: keep precision by working with survival values
                qlo = _nsf(lo)
                e = qlo - _nsf(hi)
                if e <= 0.0:
                    prod = 0.0
                    break
                prod *= e
                if i < m - 1:
                    u = qlo - w[n, i] * e
                    u = min(max(u, _TINY), 1.0 - 1e-16)
                    y[i] = -ndtri_nb(u)
            else:
                plo = _ncdf(lo)
                e = _ncdf(hi) - plo
                if e <= 0.0:
                    prod = 0.0
                    break
                prod *= e
                if i < m - 1:
                    u = plo + w[n, i] * e
                    u = min(max(u, _TINY), 1.0 - 1e-16)
                    y[i] = ndtri_nb(u)
        out[n] = prod
    return out


def sov_integrand_np(a, b, L, s, w):
    n_pts = s.shape[0]
    m = a.shape[0]
    prod = np.ones(n_pts)
    y = np.zeros((n_pts, m))
    with np.errstate(invalid="ignore"):
        for i in range(m):
            shift = y[:, :i] @ L[i, :i] if i else np.zeros(n_pts)
            lo = (a[i] * s - shift) / L[i, i]
            hi = (b[i] * s - shift) / L[i, i]
            upper = lo > 0.0
            qlo = special.ndtr(-lo)
            plo = special.ndtr(lo)
            e = np.where(upper, qlo - special.ndtr(-hi), special.ndtr(hi) - plo)
            e = np.maximum(e, 0.0)
            prod *= e
            if i < m - 1:
                wi = w[:, i]
                u_up = np.clip(qlo - wi * e, _TINY, 1.0 - 1e-16)
                u_lo = np.clip(plo + wi * e, _TINY, 1.0 - 1e-16)
                y[:, i] = np.where(upper, -special.ndtri(u_up), special.ndtri(u_lo))
    return prod


def sov_integrand(a, b, L, s, w):
    """Integrand values at QMC points.

    ``a``/``b`` are the bounds in t units, ``L`` the Cholesky factor of the
    correlation matrix, ``s`` the chi scale ``sqrt(chi2_d / d)`` for each point
    and ``w`` the remaining ``m - 1`` uniforms.
    """
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    L = np.ascontiguousarray(L, dtype=np.float64)
    s = np.ascontiguousarray(s, dtype=np.float64)
    w = np.ascontiguousarray(w, dtype=np.float64).reshape(s.shape[0], -1)
    if _accel.backend() == "numba":
        return sov_integrand_nb(a, b, L, s, w)
    return sov_integrand_np(a, b, L, s, w)


# --------------------------------------------------------------------------
# one-factor (exchangeable) inner integral
# --------------------------------------------------------------------------

@njit
def onefactor_inner_nb(lower, upper, rho, s_nodes, z_nodes, z_weights):
    m = lower.shape[0]
    root_rho = math.sqrt(rho)
    root_comp = math.sqrt(1.0 - rho)
    out = np.empty(s_nodes.shape[0])
    for i in range(s_nodes.shape[0]):
        sc = s_nodes[i]
        acc = 0.0
        for j in range(z_nodes.shape[0]):
            zz = root_rho * z_nodes[j]
            prod = 1.0
            for k in range(m):
                lo = (lower[k] * sc - zz) / root_comp
                hi = (upper[k] * sc - zz) / root_comp
                if lo > 0.0:
                    e = _nsf(lo) - _nsf(hi)
                else:
                    e = _ncdf(hi) - _ncdf(lo)
                prod *= e
                if prod <= 0.0:
                    prod = 0.0
                    break
            acc += z_weights[j] * prod
        out[i] = acc
    return out


def onefactor_inner_np(lower, upper, rho, s_nodes, z_nodes, z_weights):
    root_comp = math.sqrt(1.0 - rho)
    zz = math.sqrt(rho) * z_nodes[None, :, None]
    sc = s_nodes[:, None, None]
    with np.errstate(invalid="ignore"):
        lo = (lower[None, None, :] * sc - zz) / root_comp
        hi = (upper[None, None, :] * sc - zz) / root_comp
    e = np.where(lo > 0.0, special.ndtr(-lo) - special.ndtr(-hi), special.ndtr(hi) - special.ndtr(lo))
    e = np.maximum(e, 0.0)
    return np.prod(e, axis=2) @ z_weights


def onefactor_inner(lower, upper, rho, s_nodes, z_nodes, z_weights):
    """Integral over the shared normal factor, one value per chi node.

    ``z_weights`` already include the standard normal density.
    """
    args = [np.ascontiguousarray(v, dtype=np.float64) for v in (lower, upper)]
    nodes = [np.ascontiguousarray(v, dtype=np.float64) for v in (s_nodes, z_nodes, z_weights)]
    if _accel.backend() == "numba":
        return onefactor_inner_nb(args[0], args[1], float(rho), *nodes)
    return onefactor_inner_np(args[0], args[1], float(rho), *nodes)


# --------------------------------------------------------------------------
# bootstrap statistics for the resampling comparators
# --------------------------------------------------------------------------

@njit
def _chol_solve_small(V, rhs, out):
    """In-place Cholesky solve; returns False if V is not positive definite."""
    m = V.shape[0]
    Lc = np.zeros((m, m))
    for i in range(m):
        for j in range(i + 1):
            acc = V[i, j]
            for k in range(j):
                acc -= Lc[i, k] * Lc[j, k]
            if i == j:
                if acc <= 0.0:
                    return False
                Lc[i, i] = math.sqrt(acc)
            else:
                Lc[i, j] = acc / Lc[j, j]
    tmp = np.empty(m)
    for i in range(m):
        acc = rhs[i]
        for k in range(i):
            acc -= Lc[i, k] * tmp[k]
        tmp[i] = acc / Lc[i, i]
    for i in range(m - 1, -1, -1):
        acc = tmp[i]
        for k in range(i + 1, m):
            acc -= Lc[k, i] * out[k]
        out[i] = acc / Lc[i, i]
    return True


@njit
def _group_moments(x, idx, mean, cov):
    n = idx.shape[0]
    m = x.shape[1]
    for k in range(m):
        mean[k] = 0.0
    for i in range(n):
        r = idx[i]
        for k in range(m):
            mean[k] += x[r, k]
    for k in range(m):
        mean[k] /= n
    for k in range(m):
        for l in range(m):
            cov[k, l] = 0.0
    for i in range(n):
        r = idx[i]
        for k in range(m):
            dk = x[r, k] - mean[k]
            for l in range(k + 1):
                cov[k, l] += dk * (x[r, l] - mean[l])
    for k in range(m):
        for l in range(k + 1):
            cov[k, l] /= n - 1
            cov[l, k] = cov[k, l]


@njit
def boot_stats_nb(x1, x2, idx1, idx2, centre, ridge):
    n_boot = idx1.shape[0]
    n1 = idx1.shape[1]
    n2 = idx2.shape[1]
    m = x1.shape[1]
    f = 1.0 / n1 + 1.0 / n2
    tstar = np.empty((n_boot, m))
    sestar = np.empty((n_boot, m))
    t2 = np.empty(n_boot)
    ridged = np.zeros(n_boot, dtype=np.bool_)
    mean1 = np.empty(m)
    mean2 = np.empty(m)
    cov1 = np.empty((m, m))
    cov2 = np.empty((m, m))
    V = np.empty((m, m))
    diff = np.empty(m)
    sol = np.empty(m)
    for b in range(n_boot):
        _group_moments(x1, idx1[b], mean1, cov1)
        _group_moments(x2, idx2[b], mean2, cov2)
        for k in range(m):
            diff[k] = mean1[k] - mean2[k] - centre[k]
            pooled = ((n1 - 1) * cov1[k, k] + (n2 - 1) * cov2[k, k]) / (n1 + n2 - 2)
            se = math.sqrt(pooled * f)
            sestar[b, k] = se
            tstar[b, k] = diff[k] / se if se > 0.0 else np.nan
        trace = 0.0
        for k in range(m):
            for l in range(m):
                V[k, l] = cov1[k, l] / n1 + cov2[k, l] / n2
            trace += V[k, k]
        if not _chol_solve_small(V, diff, sol):
            for k in range(m):
                V[k, k] += ridge * trace / m
            ridged[b] = True
            if not _chol_solve_small(V, diff, sol):
                t2[b] = np.nan
                continue
        acc = 0.0
        for k in range(m):
            acc += diff[k] * sol[k]
        t2[b] = acc
    return tstar, sestar, t2, ridged


def boot_stats_np(x1, x2, idx1, idx2, centre, ridge):
    n1 = idx1.shape[1]
    n2 = idx2.shape[1]
    m = x1.shape[1]
    f = 1.0 / n1 + 1.0 / n2
    g1 = x1[idx1]
    g2 = x2[idx2]
    mean1 = g1.mean(axis=1)
    mean2 = g2.mean(axis=1)
    c1 = g1 - mean1[:, None, :]
    c2 = g2 - mean2[:, None, :]
    cov1 = np.einsum("bik,bil->bkl", c1, c1) / (n1 - 1)
    cov2 = np.einsum("bik,bil->bkl", c2, c2) / (n2 - 1)
    diff = mean1 - mean2 - centre
    pooled = ((n1 - 1) * np.diagonal(cov1, axis1=1, axis2=2)
              + (n2 - 1) * np.diagonal(cov2, axis1=1, axis2=2)) / (n1 + n2 - 2)
    sestar = np.sqrt(pooled * f)
    with np.errstate(divide="ignore", invalid="ignore"):
        tstar = np.where(sestar > 0.0, diff / sestar, np.nan)
    V = cov1 / n1 + cov2 / n2
    ridged = np.linalg.eigvalsh(V)[:, 0] <= 0.0
    if ridged.any():
        trace = np.trace(V, axis1=1, axis2=2)
        V[ridged] += (ridge * trace[ridged] / m)[:, None, None] * np.eye(m)
    sol = np.linalg.solve(V, diff[..., None])[..., 0]
    t2 = np.einsum("bk,bk->b", diff, sol)
    return tstar, sestar, t2, ridged


def boot_stats(x1, x2, idx1, idx2, centre, ridge=1e-8):
    """Per-resample centred t statistics, their SEs and the unequal-covariance T^2.

    Returns ``(tstar, sestar, t2, ridged)`` with shapes ``(B, m)``, ``(B, m)``,
    ``(B,)`` and ``(B,)``.
    """
    x1 = np.ascontiguousarray(x1, dtype=np.float64)
    x2 = np.ascontiguousarray(x2, dtype=np.float64)
    idx1 = np.ascontiguousarray(idx1, dtype=np.int64)
    idx2 = np.ascontiguousarray(idx2, dtype=np.int64)
    centre = np.ascontiguousarray(centre, dtype=np.float64)
    if _accel.backend() == "numba":
        return boot_stats_nb(x1, x2, idx1, idx2, centre, float(ridge))
    return boot_stats_np(x1, x2, idx1, idx2, centre, float(ridge))


# --------------------------------------------------------------------------
# Mahalanobis distance to the non-positive orthant
# --------------------------------------------------------------------------

@njit
def orthant_dist2_nb(delta, W):
    """Squared W-distance from each row of ``delta`` to {theta <= 0}.

    Every subset of free coordinates is tried; the other coordinates are pinned
    at zero.  The smallest objective among feasible candidates is the exact
    projection distance.
    """
    n_obs, m = delta.shape
    out = np.empty(n_obs)
    free = np.empty(m, dtype=np.int64)
    pinned = np.empty(m, dtype=np.int64)
    for r in range(n_obs):
        best = np.inf
        for mask in range(1 << m):
            nf = 0
            npn = 0
            for k in range(m):
                if mask & (1 << k):
                    free[nf] = k
                    nf += 1
                else:
                    pinned[npn] = k
                    npn += 1
            # theta_F = delta_F + W_FF^{-1} W_FA delta_A
            theta_free = np.empty(nf)
            if nf > 0:
                Wff = np.empty((nf, nf))
                rhs = np.empty(nf)
                for i in range(nf):
                    acc = 0.0
                    for j in range(npn):
                        acc += W[r, free[i], pinned[j]] * delta[r, pinned[j]]
                    rhs[i] = acc
                    for j in range(nf):
                        Wff[i, j] = W[r, free[i], free[j]]
                sol = np.empty(nf)
                if not _chol_solve_small(Wff, rhs, sol):
                    continue
                feasible = True
                for i in range(nf):
                    theta_free[i] = delta[r, free[i]] + sol[i]
                    if theta_free[i] > 1e-12:
                        feasible = False
                if not feasible:
                    continue
            # residual = delta - theta, theta_A = 0
            resid = delta[r].copy()
            for i in range(nf):
                resid[free[i]] -= theta_free[i]
            obj = 0.0
            for i in range(m):
                for j in range(m):
                    obj += resid[i] * W[r, i, j] * resid[j]
            if obj < best:
                best = obj
        out[r] = max(best, 0.0)
    return out


def orthant_dist2_np(delta, W):
    n_obs, m = delta.shape
    best = np.full(n_obs, np.inf)
    for mask in range(1 << m):
        free = [k for k in range(m) if mask & (1 << k)]
        pinned = [k for k in range(m) if not mask & (1 << k)]
        theta = np.zeros((n_obs, m))
        ok = np.ones(n_obs, dtype=bool)
        if free:
            Wff = W[:, free][:, :, free]
            rhs = np.einsum("rij,rj->ri", W[:, free][:, :, pinned], delta[:, pinned])
            sol = np.linalg.solve(Wff, rhs[..., None])[..., 0]
            theta[:, free] = delta[:, free] + sol
            ok = np.all(theta[:, free] <= 1e-12, axis=1)
        resid = delta - theta
        obj = np.einsum("ri,rij,rj->r", resid, W, resid)
        best = np.where(ok & (obj < best), obj, best)
    return np.maximum(best, 0.0)


def orthant_dist2(delta, W):
    delta = np.ascontiguousarray(np.atleast_2d(delta), dtype=np.float64)
    W = np.ascontiguousarray(W, dtype=np.float64)
    if W.ndim == 2:
        W = np.broadcast_to(W, (delta.shape[0],) + W.shape).copy()
    if _accel.backend() == "numba":
        return orthant_dist2_nb(delta, W)
    return orthant_dist2_np(delta, W)
