"""Convex ball subproblems behind the composite prox step and criticality measures.

Three deterministic building blocks live here:

* :func:`prox_step` solves the proximal linearization
  ``min_u <g, u-x> + rho*||c + J(u-x)|| + ||u-x||^2/(2*gamma)``
  through its dual, a concave quadratic over the radius-``rho`` ball.
* :func:`theta` evaluates the infeasibility stationarity measure
  ``||c|| - min_{||s||<=1} ||c + J s||``.
* :func:`phi` evaluates the penalty steering measure
  ``rho*||c|| - min_{||s||<=1} ( <g, s> + rho*||c + J s|| )``.

Every solve returns a duality-gap certificate so callers never have to
trust iteration counts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SubsolverError
from .problems import spectral_norm

__all__ = [
    "ProxResult",
    "BallSubproblemResult",
    "prox_step",
    "generalized_gradient",
    "theta",
    "phi",
]

DEFAULT_PROX_TOL = 1e-10
DEFAULT_MEASURE_TOL = 1e-8
MAX_SUBSOLVER_ITERS = 100_000


@dataclass(frozen=True)
class ProxResult:
    """Solution of one proximal step.

    ``x_plus`` is the new point, ``d = x_plus - x`` the step, ``lam`` the
    dual vector (``||lam|| <= rho``), ``p_gamma = (x - x_plus)/gamma`` the
    generalized gradient, and ``gap`` the certified duality gap.
    """

    x_plus: np.ndarray
    d: np.ndarray
    lam: np.ndarray
    p_gamma: np.ndarray
    gap: float


@dataclass(frozen=True)
class BallSubproblemResult:
    """Result of minimizing a convex objective over a norm ball.

    ``value`` is the attained inner minimum, ``gap`` a certified bound on
    its suboptimality, and ``measure`` the derived quantity (theta or phi)
    clamped at zero.
    """

    s_star: np.ndarray
    value: float
    gap: float
    measure: float


def _proj_ball(v: np.ndarray, radius: float) -> np.ndarray:
    nv = float(np.linalg.norm(v))
    if nv <= radius:
        return v
    return v * (radius / nv)


def _golden_section(fn, lo: float, hi: float, iters: int = 96) -> float:
    """Argmin of a convex scalar function on [lo, hi]."""
    inv_phi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    x1 = b - inv_phi * (b - a)
    x2 = a + inv_phi * (b - a)
    f1, f2 = fn(x1), fn(x2)
    for _ in range(iters):
        if f1 <= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - inv_phi * (b - a)
            f1 = fn(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + inv_phi * (b - a)
            f2 = fn(x2)
    return 0.5 * (a + b)


def _prox_primal(d, g, c, jac, rho, gamma):
    return float(g @ d + rho * np.linalg.norm(c + jac @ d) + d @ d / (2.0 * gamma))


def _prox_dual(lam, g, c, jac, gamma):
    r = g + jac.T @ lam
    return float(lam @ c - 0.5 * gamma * (r @ r))


def _secular_root(w: np.ndarray, beta: np.ndarray, radius: float) -> float:
    """Solve sum(beta^2/(w+nu)^2) = radius^2 for nu > 0.

    Standard trust-region secular equation with PSD eigenvalues ``w``;
    the root is bracketed in (0, ||beta||/radius] and polished by a
    safeguarded Newton iteration on 1/||lam(nu)|| - 1/radius.
    """
    norm_b = float(np.linalg.norm(beta))
    if norm_b == 0.0:
        return 0.0
    hi = norm_b / radius
    lo = 0.0
    nu = hi / 2.0
    for _ in range(200):
        denom = w + nu
        lam_norm_sq = float(np.sum((beta / denom) ** 2))
        lam_norm = np.sqrt(lam_norm_sq)
        if lam_norm > radius:
            lo = nu
        else:
            hi = nu
        f = 1.0 / lam_norm - 1.0 / radius
        if abs(f) <= 1e-15 / radius:
            break
        fp = float(np.sum(beta**2 / denom**3)) / (lam_norm_sq * lam_norm)
        step = f / fp
        nu_new = nu - step
        if not (lo < nu_new < hi):
            nu_new = 0.5 * (lo + hi)
        if abs(nu_new - nu) <= 1e-16 * max(1.0, nu):
            nu = nu_new
            break
        nu = nu_new
    return nu


def _dual_ball_quadratic(a_mat: np.ndarray, b: np.ndarray, radius: float) -> np.ndarray:
    """Maximize <b, lam> - 0.5*lam' A lam over ||lam|| <= radius, A PSD.

    Interior solutions use the least-norm stationary point; boundary
    solutions come from the secular equation in the eigenbasis of A.
    """
    q = b.size
    if radius == 0.0:
        return np.zeros(q)
    if q == 1:
        a = float(a_mat[0, 0])
        bb = float(b[0])
        if a > 0.0:
            lam = bb / a
            return np.array([float(np.clip(lam, -radius, radius))])
        return np.array([radius * np.sign(bb)]) if bb != 0.0 else np.zeros(1)
    w, q_mat = np.linalg.eigh(a_mat)
    w = np.maximum(w, 0.0)
    beta = q_mat.T @ b
    w_top = float(w[-1])
    mask = w > max(w_top, 1.0) * 1e-14
    lam_ln = q_mat @ np.where(mask, beta / np.where(mask, w, 1.0), 0.0)
    resid = float(np.linalg.norm(a_mat @ lam_ln - b))
    scale = float(np.linalg.norm(b)) + w_top * float(np.linalg.norm(lam_ln)) + 1.0
    if resid <= 1e-11 * scale and float(np.linalg.norm(lam_ln)) <= radius:
        return lam_ln
    nu = _secular_root(w, beta, radius)
    if nu == 0.0:
        return lam_ln * (radius / max(float(np.linalg.norm(lam_ln)), 1e-300))
    return q_mat @ (beta / (w + nu))


def prox_step(
    x: np.ndarray,
    g: np.ndarray,
    c: np.ndarray,
    jac: np.ndarray,
    rho: float,
    gamma: float,
    tol: float = DEFAULT_PROX_TOL,
) -> ProxResult:
    """Proximal step of the linearized exact-penalty model.

    Solves ``min_d <g, d> + rho*||c + J d|| + ||d||^2/(2*gamma)`` exactly
    through the dual ``max_{||lam|| <= rho} <lam, c> - (gamma/2)*||g + J' lam||^2``
    and recovers ``d = -gamma*(g + J' lam)``.

    Parameters
    ----------
    x : ndarray, shape (n,)
        Current point (only used to report ``x_plus = x + d``).
    g : ndarray, shape (n,)
        Gradient estimate at ``x``.
    c, jac : ndarray
        Constraint value ``(q,)`` and Jacobian ``(q, n)`` at ``x``.
    rho : float
        Penalty parameter, ``>= 0``.
    gamma : float
        Step size, ``> 0``.
    tol : float
        Acceptable duality gap for the returned step.

    Returns
    -------
    ProxResult
        With stationarity ``g + J' lam + d/gamma = 0`` holding exactly by
        construction and ``gap <= tol`` certified.

    Raises
    ------
    SubsolverError
        If the certified gap exceeds ``tol``.
    """
    x = np.asarray(x, dtype=float)
    g = np.asarray(g, dtype=float)
    c = np.asarray(c, dtype=float).reshape(-1)
    jac = np.atleast_2d(np.asarray(jac, dtype=float))
    if gamma <= 0.0:
        raise SubsolverError(f"prox step size must be > 0, got {gamma}")
    if rho < 0.0:
        raise SubsolverError(f"penalty parameter must be >= 0, got {rho}")

    a_mat = gamma * (jac @ jac.T)
    b = c - gamma * (jac @ g)
    lam = _dual_ball_quadratic(a_mat, b, rho)
    d = -gamma * (g + jac.T @ lam)
    gap = _prox_primal(d, g, c, jac, rho, gamma) - _prox_dual(lam, g, c, jac, gamma)
    gap = max(float(gap), 0.0)
    if gap > tol:
        raise SubsolverError(f"prox duality gap {gap:.3e} exceeds tolerance {tol:.3e}", gap=gap)
    return ProxResult(x_plus=x + d, d=d, lam=lam, p_gamma=-d / gamma, gap=gap)


def generalized_gradient(x: np.ndarray, x_plus: np.ndarray, gamma: float) -> np.ndarray:
    """Generalized projected gradient ``(x - x_plus)/gamma`` of a prox step."""
    return (np.asarray(x, dtype=float) - np.asarray(x_plus, dtype=float)) / gamma


def _theta_q1(c: np.ndarray, jac: np.ndarray, tol: float) -> BallSubproblemResult:
    # single constraint: the inner product ranges over [-||j||, ||j||]
    j = jac[0]
    nj = float(np.linalg.norm(j))
    c0 = float(c[0])
    if nj == 0.0:
        return BallSubproblemResult(np.zeros(j.size), abs(c0), 0.0, 0.0)
    t = float(np.clip(-c0, -nj, nj))
    s = (t / nj**2) * j
    value = abs(c0 + t)
    measure = max(abs(c0) - value, 0.0)
    return BallSubproblemResult(s, value, 0.0, measure)


def theta(c: np.ndarray, jac: np.ndarray, tol: float = DEFAULT_MEASURE_TOL) -> BallSubproblemResult:
    """Infeasibility stationarity measure ``||c|| - min_{||s||<=1} ||c + J s||``.

    The inner problem is solved on the squared residual with projected
    gradient and Barzilai-Borwein steps, falling back to the fixed step
    ``1/||J'J||`` when the nonmonotone steps stall.  The reported ``gap``
    bounds the error of ``value`` (the attained residual norm), and the
    measure is clamped to be nonnegative.
    """
    c = np.asarray(c, dtype=float).reshape(-1)
    jac = np.atleast_2d(np.asarray(jac, dtype=float))
    q, n = jac.shape
    if q == 1:
        return _theta_q1(c, jac, tol)

    jn = spectral_norm(jac)
    norm_c = float(np.linalg.norm(c))
    if jn == 0.0:
        return BallSubproblemResult(np.zeros(n), norm_c, 0.0, 0.0)
    base_step = 1.0 / jn**2

    def qval(s):
        r = c + jac @ s
        return float(r @ r)

    def qgrad(s):
        return 2.0 * (jac.T @ (c + jac @ s))

    def value_gap(s, qv, gr):
        # Frank-Wolfe gap on the squared objective, mapped to the norm scale
        fw = float(gr @ s) + float(np.linalg.norm(gr))
        fw = max(fw, 0.0)
        root = np.sqrt(qv)
        return root - np.sqrt(max(qv - fw, 0.0))

    s = np.zeros(n)
    best_s, best_q = s, qval(s)
    grad = qgrad(s)
    step = base_step
    since_best = 0
    for it in range(2000):
        if it % 10 == 0 or since_best == 0:
            vgap = value_gap(best_s, best_q, qgrad(best_s))
            if vgap <= tol:
                value = np.sqrt(best_q)
                return BallSubproblemResult(
                    best_s, value, vgap, max(norm_c - value, 0.0)
                )
        s_new = _proj_ball(s - step * grad, 1.0)
        grad_new = qgrad(s_new)
        q_new = qval(s_new)
        if q_new < best_q:
            best_q, best_s = q_new, s_new
            since_best = 0
        else:
            since_best += 1
        ds = s_new - s
        dg = grad_new - grad
        denom = float(ds @ dg)
        if since_best >= 50 or denom <= 0.0:
            step = base_step  # convergence fallback
        else:
            step = float(np.clip((ds @ ds) / denom, 1e-4 * base_step, 1e4 * base_step))
        s, grad = s_new, grad_new
    # terminal fallback: the inner problem is a ball-constrained PSD
    # quadratic, so solve it exactly in the eigenbasis of J'J
    s_exact = _dual_ball_quadratic(2.0 * (jac.T @ jac), -2.0 * (jac.T @ c), 1.0)
    q_exact = qval(s_exact)
    gap_exact = value_gap(s_exact, q_exact, qgrad(s_exact))
    gap_pg = value_gap(best_s, best_q, qgrad(best_s))
    if gap_exact <= gap_pg:
        best_s, best_q, gap = s_exact, q_exact, gap_exact
    else:
        gap = gap_pg
    if gap > tol:
        raise SubsolverError(
            f"theta subsolver stalled at value gap {gap:.3e} (tolerance {tol:.3e})", gap=gap
        )
    value = np.sqrt(best_q)
    return BallSubproblemResult(best_s, value, gap, max(norm_c - value, 0.0))


def _phi_q1(
    g: np.ndarray, c: np.ndarray, jac: np.ndarray, rho: float, tol: float
) -> BallSubproblemResult:
    # decompose s along the single constraint gradient and its complement
    j = jac[0]
    nj = float(np.linalg.norm(j))
    c0 = float(c[0])
    norm_g = float(np.linalg.norm(g))
    if nj == 0.0:
        s = -g / norm_g if norm_g > 0.0 else np.zeros(g.size)
        value = float(g @ s) + rho * abs(c0)
        return BallSubproblemResult(s, value, 0.0, max(rho * abs(c0) - value, 0.0))
    a = float(g @ j) / nj**2
    g_perp = g - a * j
    b = float(np.linalg.norm(g_perp))

    def objective_t(t):
        r = np.sqrt(max(1.0 - (t / nj) ** 2, 0.0))
        return a * t - b * r + rho * abs(c0 + t)

    t_star = _golden_section(objective_t, -nj, nj)
    for cand in (t_star, float(np.clip(-c0, -nj, nj)), -nj, nj, 0.0):
        if -nj <= cand <= nj and objective_t(cand) < objective_t(t_star):
            t_star = cand
    radial = np.sqrt(max(1.0 - (t_star / nj) ** 2, 0.0))
    s = (t_star / nj**2) * j
    if b > 1e-12 * max(norm_g, 1.0):
        # re-orthogonalize against j so a cancellation-noise g_perp cannot
        # fabricate a direction with a component along j (for n = 1 the
        # complement is empty and u collapses to zero)
        u = g_perp - (float(g_perp @ j) / nj**2) * j
        u_norm = float(np.linalg.norm(u))
        if u_norm > 0.0:
            s = s - radial * (u / u_norm)
    value = float(g @ s) + rho * abs(c0 + float(j @ s))

    def neg_dual(lam):
        return -(lam * c0 - float(np.linalg.norm(g + lam * j)))

    lam_star = _golden_section(neg_dual, -rho, rho)
    dual_val = -neg_dual(lam_star)
    gap = max(value - dual_val, 0.0)
    if gap > tol:
        raise SubsolverError(
            f"phi subsolver stalled at duality gap {gap:.3e} (tolerance {tol:.3e})", gap=gap
        )
    return BallSubproblemResult(s, value, gap, max(rho * abs(c0) - value, 0.0))


def phi(
    g: np.ndarray,
    c: np.ndarray,
    jac: np.ndarray,
    rho: float,
    tol: float = DEFAULT_MEASURE_TOL,
) -> BallSubproblemResult:
    """Penalty steering measure of the linearized model.

    Evaluates ``rho*||c|| - min_{||s||<=1} ( <g, s> + rho*||c + J s|| )``.
    With a single constraint the inner problem reduces to a convex scalar
    problem solved by golden section on both the primal and the dual; for
    ``q >= 2`` a primal-dual hybrid gradient iteration on the saddle form
    ``min_{||s||<=1} max_{||lam||<=rho} <g, s> + <lam, c + J s>`` is used,
    with step sizes satisfying ``tau * sigma * ||J||^2 <= 1``.  The duality
    gap of the best primal-dual pair certifies ``value``.
    """
    g = np.asarray(g, dtype=float)
    c = np.asarray(c, dtype=float).reshape(-1)
    jac = np.atleast_2d(np.asarray(jac, dtype=float))
    q, n = jac.shape
    if rho < 0.0:
        raise SubsolverError(f"penalty parameter must be >= 0, got {rho}")
    if q == 1:
        return _phi_q1(g, c, jac, rho, tol)

    jn = spectral_norm(jac)
    step = 1.0 / jn if jn > 0.0 else 1.0
    rho_c = rho * float(np.linalg.norm(c))

    def primal(s):
        return float(g @ s) + rho * float(np.linalg.norm(c + jac @ s))

    def dual(lam):
        return float(lam @ c) - float(np.linalg.norm(g + jac.T @ lam))

    s = np.zeros(n)
    lam = np.zeros(q)
    s_bar = s.copy()
    best_p, best_s = primal(s), s
    best_d = dual(lam)
    for it in range(1, MAX_SUBSOLVER_ITERS + 1):
        lam = _proj_ball(lam + step * (c + jac @ s_bar), rho)
        s_new = _proj_ball(s - step * (g + jac.T @ lam), 1.0)
        s_bar = 2.0 * s_new - s
        s = s_new
        if it % 25 == 0:
            p_now = primal(s)
            if p_now < best_p:
                best_p, best_s = p_now, s.copy()
            d_now = dual(lam)
            if d_now > best_d:
                best_d = d_now
            if best_p - best_d <= tol:
                break
    gap = max(best_p - best_d, 0.0)
    if gap > tol:
        raise SubsolverError(
            f"phi subsolver stalled at duality gap {gap:.3e} (tolerance {tol:.3e})", gap=gap
        )
    return BallSubproblemResult(best_s, best_p, gap, max(rho_c - best_p, 0.0))
