"""Inner machinery of a single boosting step.

Given the current fit ``F`` the log loss is expanded to second order,
which turns the search for the next base learner inside one pathway into a
weighted least-squares problem with an intercept.  Weighted centering
removes the intercept and leaves an ordinary penalized least-squares
problem

    min_beta (1/N) ||eta_tilde + K_tilde beta||^2 + penalty(beta)

solved here by coordinate descent (L1) or a closed-form ridge solve (L2).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.linalg import cho_factor, cho_solve
from scipy.special import expit

from .errors import ConvergenceError

Q_FLOOR = 1e-10
PENALTIES = ("L1", "L2")


@dataclass(frozen=True)
class DerivativeState:
    """First/second derivatives of the log loss at the current fit.

    ``eta = h / q`` and ``w = q / 2`` (the diagonal of the weight matrix).
    ``q`` is stored after clamping at ``Q_FLOOR``.
    """

    h: np.ndarray
    q: np.ndarray
    eta: np.ndarray
    w: np.ndarray


@dataclass(frozen=True)
class BaseLearnerFit:
    pathway_index: int
    beta: np.ndarray
    intercept: float
    regularized_loss: float


def normalize_penalty(penalty: str) -> str:
    p = str(penalty).upper()
    if p not in PENALTIES:
        raise ValueError(f"penalty must be one of {PENALTIES}, got {penalty!r}")
    return p


def compute_derivatives(y, F) -> DerivativeState:
    y = np.asarray(y, dtype=float)
    z = y * np.asarray(F, dtype=float)
    p_wrong = expit(-z)  # 1 / (1 + e^{yF})
    h = -y * p_wrong
    q = np.maximum(expit(z) * p_wrong, Q_FLOOR)
    return DerivativeState(h=h, q=q, eta=h / q, w=q / 2.0)


def log_loss(y, F) -> float:
    """Mean of log(1 + exp(-y F))."""
    return float(np.mean(np.logaddexp(0.0, -np.asarray(y) * np.asarray(F))))


def weighted_centering(eta, w, K):
    """Intercept-eliminating transform.

    Returns ``sqrt(W) (I - 1 w^T / sum(w)) eta`` and the same map applied
    to ``K``.
    """
    eta = np.asarray(eta, dtype=float)
    w = np.asarray(w, dtype=float)
    K = np.asarray(K, dtype=float)
    s = w.sum()
    root = np.sqrt(w)
    eta_t = root * (eta - (w @ eta) / s)
    K_t = root[:, None] * (K - (w @ K) / s)
    return eta_t, K_t


def centered_eta(eta, w) -> np.ndarray:
    eta = np.asarray(eta, dtype=float)
    return np.sqrt(w) * (eta - (w @ eta) / w.sum())


@njit(cache=True)
def _shifted_outer_gram(X, w, shift):
    # sqrt(W) P X P^T sqrt(W) + shift I for symmetric X, in one pass.
    n = w.shape[0]
    s = w.sum()
    v = (X @ w) / s
    const = (v @ w) / s
    out = np.empty((n, n))
    for i in range(n):
        ri = np.sqrt(w[i])
        for j in range(n):
            out[i, j] = (X[i, j] - v[i] - v[j] + const) * ri * np.sqrt(w[j])
        out[i, i] += shift
    return out


def centered_outer_gram(K_squared, w) -> np.ndarray:
    """``K_tilde K_tilde^T`` from a cached ``K @ K`` in O(N^2).

    With ``P = I - 1 w^T / s`` and ``X = K K`` symmetric,
    ``P X P^T = X - 1 v^T - v 1^T + (v.w / s) 1 1^T`` where ``v = X w / s``.
    """
    return _shifted_outer_gram(np.ascontiguousarray(K_squared, dtype=float),
                               np.asarray(w, dtype=float), 0.0)


def solve_l2(K_tilde, eta_tilde, lam: float, outer_gram=None) -> np.ndarray:
    """Ridge coefficients ``-(K~'K~ + N lam I)^{-1} K~' eta~``.

    Solved in the equivalent dual form ``-K~' (K~K~' + N lam I)^{-1} eta~``
    with a Cholesky factorization; ``outer_gram`` may supply ``K~K~'``.
    """
    if lam <= 0:
        raise ValueError("lambda must be positive")
    K_tilde = np.asarray(K_tilde, dtype=float)
    eta_tilde = np.asarray(eta_tilde, dtype=float)
    n = eta_tilde.size
    if not np.any(eta_tilde):
        return np.zeros(K_tilde.shape[1])
    G = K_tilde @ K_tilde.T if outer_gram is None else np.array(outer_gram, dtype=float)
    G[np.diag_indices_from(G)] += n * lam
    return -(K_tilde.T @ _cholesky_solve(G, eta_tilde))


def _cholesky_solve(A, b):
    return cho_solve(cho_factor(A, lower=True, overwrite_a=True, check_finite=False), b,
                     check_finite=False)


def solve_l2_kernel(K, K_squared, w, eta_tilde, lam: float) -> np.ndarray:
    """:func:`solve_l2` for ``K_tilde`` given implicitly by ``K``, ``K @ K`` and ``w``."""
    if lam <= 0:
        raise ValueError("lambda must be positive")
    n = eta_tilde.size
    if not np.any(eta_tilde):
        return np.zeros(n)
    w = np.asarray(w, dtype=float)
    G = _shifted_outer_gram(K_squared, w, n * lam)
    return -CenteredKernel(K, w).rmatvec(_cholesky_solve(G, eta_tilde))


def lambda_max(K_tilde, eta_tilde) -> float:
    """Smallest L1 penalty at which beta = 0 is optimal."""
    K_tilde = np.asarray(K_tilde, dtype=float)
    n = K_tilde.shape[0]
    return float(np.max(np.abs(K_tilde.T @ eta_tilde)) * 2.0 / n) if n else 0.0


@njit(cache=True)
def _cd_sweeps(G, c, diag, beta, lam, n, tol, max_sweeps):
    # Cyclic coordinate descent on (1/n)(b'Gb + 2c'b) + lam |b|_1 over the
    # active block.  G = K~_A' K~_A, c = K~_A' eta~.
    a = beta.shape[0]
    grad = c + G @ beta
    for sweep in range(max_sweeps):
        max_delta = 0.0
        max_beta = 0.0
        for j in range(a):
            if diag[j] <= 0.0:
                continue
            old = beta[j]
            z = old - grad[j] / diag[j]
            thr = 0.5 * n * lam / diag[j]
            if z > thr:
                new = z - thr
            elif z < -thr:
                new = z + thr
            else:
                new = 0.0
            if new != old:
                delta = new - old
                beta[j] = new
                for k in range(a):
                    grad[k] += G[k, j] * delta
                if abs(delta) > max_delta:
                    max_delta = abs(delta)
            if abs(new) > max_beta:
                max_beta = abs(new)
        if max_delta <= tol * (1.0 + max_beta):
            return sweep + 1
    return -1


def _feature_sign(G, c, beta, lam, n, max_steps=500):
    # Exact minimizer of (1/n)(b'Gb + 2c'b) + lam|b|_1 by feature-sign
    # search started from ``beta``; None if it does not settle in time.
    b = beta.copy()
    half = 0.5 * n * lam
    tol = 1e-12 * (1.0 + half)
    for _ in range(max_steps):
        grad = c + G @ b
        signs = np.sign(b)
        on = signs != 0
        off_viol = np.where(on, 0.0, np.abs(grad) - half)
        if not np.any(on) or np.max(np.abs(grad[on] + half * signs[on])) <= tol:
            j = int(np.argmax(off_viol))
            if off_viol[j] <= tol:
                return b
            signs[j] = -np.sign(grad[j])
            on[j] = True
        support = np.flatnonzero(on)
        Gs = G[np.ix_(support, support)]
        rhs = -(c[support] + half * signs[support])
        start = b[support]
        x = _block_target(Gs, rhs)
        if x is None:
            # Singular block with no stationary point on this orthant: the
            # objective falls linearly along the null-space part of the
            # gradient, so move that way until a coefficient reaches zero.
            vals, vecs = np.linalg.eigh(Gs)
            null = vecs[:, vals <= 1e-12 * max(vals[-1], 0.0)]
            d = null @ (null.T @ rhs)
            shrinking = start * d < 0
            if not np.any(shrinking):
                return None
            ts = np.where(shrinking, -start / np.where(shrinking, d, 1.0), np.inf)
            k = int(np.argmin(ts))
            moved = start + ts[k] * d
            moved[k] = 0.0
            b[support] = moved
            continue
        if np.all(np.sign(x) == signs[support]):
            b[support] = x
            continue
        # Best point among the target and the sign changes along the segment;
        # there the objective is a quadratic in t plus the L1 term.
        diff = x - start
        with np.errstate(divide="ignore", invalid="ignore"):
            ts = -start / diff
        ts = np.append(np.unique(ts[(ts > 0) & (ts < 1) & (start != 0)]), 1.0)
        cs = c[support]
        Gd = Gs @ diff
        a0 = start @ (Gs @ start) + 2.0 * (cs @ start)
        a1 = 2.0 * (start @ Gd) + 2.0 * (cs @ diff)
        a2 = diff @ Gd
        points = start[None, :] + ts[:, None] * diff[None, :]
        points[:-1][np.abs(points[:-1]) <= 1e-15 * (1.0 + np.abs(start))] = 0.0
        points[-1] = x
        vals = (a0 + a1 * ts + a2 * ts ** 2) / n + lam * np.abs(points).sum(axis=1)
        best = points[int(np.argmin(vals))]
        if np.array_equal(start, best):
            return None
        b[support] = best
    return None


def _block_target(Gs, rhs, rel_tol=1e-12):
    # Minimizer of b'Gs b/2 - rhs'b for PSD Gs. A Cholesky factor with
    # healthy pivots is used directly; otherwise the eigendecomposition
    # gives the least-squares minimizer when rhs lies in the range of Gs,
    # and None when it does not (no minimizer exists).
    top = np.abs(np.diag(Gs)).max(initial=0.0)
    try:
        factor = cho_factor(Gs, lower=True, check_finite=False)
        if np.min(np.diag(factor[0])) ** 2 > rel_tol * top:
            return cho_solve(factor, rhs, check_finite=False)
    except np.linalg.LinAlgError:
        pass
    vals, vecs = np.linalg.eigh(Gs)
    keep = vals > rel_tol * max(vals[-1], top)
    coef = vecs.T @ rhs
    if np.linalg.norm(coef[~keep]) > 1e-9 * (np.linalg.norm(rhs) + 1e-300):
        return None
    return vecs[:, keep] @ (coef[keep] / vals[keep])


class CenteredKernel:
    """``K_tilde = sqrt(W) (I - 1 w^T / sum(w)) K`` applied without forming it."""

    def __init__(self, K, w):
        self.K = np.asarray(K, dtype=float)
        self.w = np.asarray(w, dtype=float)
        self.s = self.w.sum()
        self.root = np.sqrt(self.w)
        self.shape = self.K.shape

    def matvec(self, b):
        kb = self.K @ b
        return self.root * (kb - (self.w @ kb) / self.s)

    def rmatvec(self, r):
        u = self.root * r
        return self.K.T @ (u - self.w * (u.sum() / self.s))

    def columns(self, idx):
        cols = self.K[:, idx]
        return self.root[:, None] * (cols - (self.w @ cols) / self.s)


class _DenseDesign:
    def __init__(self, A):
        self.A = A
        self.shape = A.shape

    def matvec(self, b):
        return self.A @ b

    def rmatvec(self, r):
        return self.A.T @ r

    def columns(self, idx):
        return self.A[:, idx]


def solve_l1(K_tilde, eta_tilde, lam: float, tol: float = 1e-6, kkt_tol: float = 1e-7,
             max_sweeps: int = 1000, grow_by: int = 25, sweeps_per_round: int = 20,
             warm_support=None) -> np.ndarray:
    """LASSO coefficients for ``(1/N)||eta~ + K~ b||^2 + lam ||b||_1``.

    ``K_tilde`` is a matrix or a :class:`CenteredKernel`. Cyclic coordinate
    descent with soft-thresholding runs on a working set that grows by the
    ``grow_by`` worst KKT violators of the full problem at a time (seeded
    with ``warm_support`` if given). Each round sweeps until the largest
    coefficient change is at most ``tol * (1 + max|b|)`` (or
    ``sweeps_per_round`` is used up), then the block is finished exactly by
    a feature-sign search started from the coordinate-descent iterate. The
    result is returned once every KKT
    condition of the full problem holds to ``kkt_tol``; more than
    ``max_sweeps`` sweeps in total raises ``ConvergenceError`` carrying the
    last iterate.
    """
    if lam <= 0:
        raise ValueError("lambda must be positive")
    design = K_tilde if hasattr(K_tilde, "rmatvec") else _DenseDesign(np.asarray(K_tilde, dtype=float))
    eta_tilde = np.asarray(eta_tilde, dtype=float)
    n, p = design.shape
    beta = np.zeros(p)
    if not np.any(eta_tilde):
        return beta
    scale = 2.0 / n
    active = np.zeros(p, dtype=bool)
    if warm_support is not None:
        active[np.asarray(warm_support, dtype=int)] = True
    sweeps_used = 0
    step_tol = tol
    first = True
    while True:
        grad = scale * design.rmatvec(eta_tilde + design.matvec(beta))
        nz = beta != 0
        viol = np.where(nz, np.abs(grad + lam * np.sign(beta)), np.abs(grad) - lam)
        if np.max(viol, initial=0.0) <= kkt_tol:
            return beta
        if sweeps_used >= max_sweeps or step_tol < 1e-18:
            raise ConvergenceError(f"coordinate descent did not converge in {max_sweeps} sweeps",
                                   last_iterate=beta.copy())
        outside = np.where(~active & ~nz, np.abs(grad) - lam, 0.0)
        growing = bool(np.any(outside > 0))
        if growing:
            order = np.argsort(-outside, kind="stable")[:grow_by]
            active[order[outside[order] > 0]] = True
        elif not first:
            step_tol *= 0.01
        first = False
        idx = np.flatnonzero(active)
        cols = design.columns(idx)
        G = cols.T @ cols
        c = cols.T @ eta_tilde
        sub = beta[idx].copy()
        budget = min(sweeps_per_round, max_sweeps - sweeps_used)
        used = _cd_sweeps(G, c, np.ascontiguousarray(np.diag(G)), sub, float(lam), float(n),
                          step_tol, budget)
        sweeps_used += budget if used < 0 else used
        polished = None if growing else _feature_sign(G, c, sub, lam, n)
        beta[idx] = sub if polished is None else polished


def recover_intercept(eta, w, K, beta) -> float:
    """Minimizer over c of the weighted quadratic for fixed beta."""
    w = np.asarray(w, dtype=float)
    resid = np.asarray(eta, dtype=float) + np.asarray(K, dtype=float) @ beta
    return float(-(w @ resid) / w.sum())


def regularized_loss(beta, intercept, deriv: DerivativeState, K, lam, penalty) -> float:
    """Working loss ``(1/N) sum w_i (eta_i + f_i)^2 + penalty`` with f = K beta + c.

    The term that does not depend on f is omitted.
    """
    beta = np.asarray(beta, dtype=float)
    f = np.asarray(K, dtype=float) @ beta + intercept
    quad = float(np.mean(deriv.w * (deriv.eta + f) ** 2))
    if normalize_penalty(penalty) == "L1":
        return quad + lam * float(np.abs(beta).sum())
    return quad + lam * float(beta @ beta)


def line_search(y, F, f_vals, d_max: float = 100.0, grad_tol: float = 1e-8,
                width_tol: float = 1e-10) -> float:
    """Step length minimizing the mean log loss along ``F + d f`` for d in (0, d_max].

    The loss is convex in d, so the minimizer is bracketed on a decade grid
    below ``d_max`` and then narrowed by golden-section splits steered by
    the sign of the derivative. Returns ``d_max`` when the loss is still
    decreasing there, and 0 if ``f`` is not a descent direction.
    """
    y = np.asarray(y, dtype=float)
    F = np.asarray(F, dtype=float)
    f_vals = np.asarray(f_vals, dtype=float)
    if not np.any(f_vals):
        raise ValueError("line search direction is identically zero")
    yf = y * f_vals
    yF = y * F

    def slope(d):
        return float(np.mean(-yf * expit(-(yF + d * yf))))

    if slope(0.0) >= 0.0:
        return 0.0
    if slope(d_max) < 0.0:
        return float(d_max)
    lo, hi = 0.0, float(d_max)
    d = hi / 10.0
    while d > width_tol:
        if slope(d) < 0.0:
            lo = d
            break
        hi = d
        d /= 10.0
    ratio = (np.sqrt(5.0) - 1.0) / 2.0
    while hi - lo > width_tol:
        x = hi - ratio * (hi - lo) if (hi - lo) > 0 else lo
        g = slope(x)
        if abs(g) <= grad_tol:
            return x
        if g > 0.0:
            hi = x
        else:
            lo = x
    return 0.5 * (lo + hi) if lo > 0 else hi
