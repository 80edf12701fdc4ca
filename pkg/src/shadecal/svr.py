"""Epsilon-insensitive support vector regression with a linear kernel.

The dual QP is solved by a Mehrotra primal-dual interior point method and
then polished: once the support pattern is known the KKT conditions are a
small linear system, and solving it directly gives the optimum to machine
precision independent of sample order. If the polished point fails the KKT
check, SMO with second-order working-set selection (the libsvm scheme)
takes over from it.
"""
import warnings
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

_TAU = 1e-12


@dataclass
class DualSolution:
    beta: np.ndarray  # alpha - alpha*, one per sample
    intercept: float
    gap: float
    n_iter: int


def _select(grad, a, yt, q_diag, q, C, tol):
    # Second-order working set selection (Fan, Chen and Lin).
    up = ((yt > 0) & (a < C)) | ((yt < 0) & (a > 0))
    low = ((yt > 0) & (a > 0)) | ((yt < 0) & (a < C))
    score = -yt * grad
    if not up.any() or not low.any():
        return -1, -1, 0.0
    i = int(np.flatnonzero(up)[np.argmax(score[up])])
    gmax = score[i]
    gmin = score[low].min()
    if gmax - gmin < tol:
        return -1, -1, gmax - gmin
    cand = low & (score < gmax)
    b = gmax - score
    a_ij = q_diag[i] + q_diag - 2.0 * yt[i] * yt * q[i]
    a_ij = np.where(a_ij > 0, a_ij, _TAU)
    obj = np.where(cand, -(b * b) / a_ij, np.inf)
    j = int(np.argmin(obj))
    return i, j, gmax - gmin


def _smo(kernel, y, C, eps, tol, max_iter, beta0=None):
    n = len(y)
    yt = np.concatenate([np.ones(n), -np.ones(n)])
    idx = np.concatenate([np.arange(n), np.arange(n)])
    q = (yt[:, None] * yt[None, :]) * kernel[np.ix_(idx, idx)]
    q_diag = np.diag(q).copy()
    p = np.concatenate([eps - y, eps + y])
    if beta0 is None:
        a = np.zeros(2 * n)
    else:
        a = np.concatenate([np.maximum(beta0, 0.0), np.maximum(-beta0, 0.0)])
    grad = q @ a + p
    it = 0
    while it < max_iter:
        i, j, _ = _select(grad, a, yt, q_diag, q, C, tol)
        if i < 0:
            break
        it += 1
        ai, aj = a[i], a[j]
        if yt[i] != yt[j]:
            quad = max(q_diag[i] + q_diag[j] + 2.0 * q[i, j], _TAU)
            delta = (-grad[i] - grad[j]) / quad
            diff = ai - aj
            a[i] += delta
            a[j] += delta
            if diff > 0:
                if a[j] < 0:
                    a[j], a[i] = 0.0, diff
            elif a[i] < 0:
                a[i], a[j] = 0.0, -diff
            if diff > 0:
                if a[i] > C:
                    a[i], a[j] = C, C - diff
            elif a[j] > C:
                a[j], a[i] = C, C + diff
        else:
            quad = max(q_diag[i] + q_diag[j] - 2.0 * q[i, j], _TAU)
            delta = (grad[i] - grad[j]) / quad
            total = ai + aj
            a[i] -= delta
            a[j] += delta
            if total > C:
                if a[i] > C:
                    a[i], a[j] = C, total - C
            elif a[j] < 0:
                a[j], a[i] = 0.0, total
            if total > C:
                if a[j] > C:
                    a[j], a[i] = C, total - C
            elif a[i] < 0:
                a[i], a[j] = 0.0, total
        da_i, da_j = a[i] - ai, a[j] - aj
        grad += q[:, i] * da_i + q[:, j] * da_j
    return a[:n] - a[n:], it


def _interior_point(kernel, y, C, eps, max_iter=100, tol=1e-11):
    """Dual QP over u = (alpha, alpha*) with 0 <= u <= C and sum(alpha - alpha*) = 0."""
    n = len(y)
    m = 2 * n
    a = np.concatenate([np.ones(n), -np.ones(n)])
    q = np.block([[kernel, -kernel], [-kernel, kernel]])
    p = np.concatenate([eps - y, eps + y])
    u = np.full(m, C / 2.0)
    s = C - u
    scale = max(1.0, float(np.abs(p).max()))
    z = np.full(m, scale)
    v = np.full(m, scale)
    lam = 0.0

    def step_to_boundary(x, dx):
        neg = dx < 0
        return min(1.0, float(np.min(-x[neg] / dx[neg]))) if neg.any() else 1.0

    for _ in range(max_iter):
        r_d = q @ u + p - a * lam - z + v
        r_p = a @ u
        mu = (u @ z + s @ v) / (2 * m)
        if mu < tol * scale and np.abs(r_d).max() < tol * scale and abs(r_p) < tol * C * n:
            break
        d = z / u + v / s
        kkt = np.zeros((m + 1, m + 1))
        kkt[:m, :m] = q + np.diag(d)
        kkt[:m, m] = -a
        kkt[m, :m] = a

        def direction(target_uz, target_sv):
            rhs = np.empty(m + 1)
            rhs[:m] = -r_d + (target_uz / u - z) - (target_sv / s - v)
            rhs[m] = -r_p
            sol = np.linalg.solve(kkt, rhs)
            du = sol[:m]
            dz = (target_uz - u * z - z * du) / u
            dv = (target_sv - s * v + v * du) / s
            return du, sol[m], dz, dv

        du, dl, dz, dv = direction(np.zeros(m), np.zeros(m))
        ap = min(step_to_boundary(u, du), step_to_boundary(s, -du))
        ad = min(step_to_boundary(z, dz), step_to_boundary(v, dv))
        mu_aff = ((u + ap * du) @ (z + ad * dz) + (s - ap * du) @ (v + ad * dv)) / (2 * m)
        sigma = (mu_aff / mu) ** 3
        du, dl, dz, dv = direction(sigma * mu - du * dz, sigma * mu + du * dv)
        ap = 0.99 * min(step_to_boundary(u, du), step_to_boundary(s, -du))
        ad = 0.99 * min(step_to_boundary(z, dz), step_to_boundary(v, dv))
        u = u + ap * du
        s = C - u
        z, v, lam = z + ad * dz, v + ad * dv, lam + ad * dl
        s = np.maximum(s, 1e-300)
    return u[:n] - u[n:]


def _intercept(beta, kernel, y, C, eps, bound_tol):
    """Intercept from the KKT conditions; midpoint of the feasible interval
    when no sample is free."""
    resid = y - kernel @ beta
    free = (np.abs(beta) > bound_tol) & (np.abs(beta) < C - bound_tol)
    if free.any():
        return float(np.mean(resid[free] - eps * np.sign(beta[free])))
    lo, hi = -np.inf, np.inf
    at_upper = beta >= C - bound_tol
    at_lower = beta <= -C + bound_tol
    zero = ~(at_upper | at_lower)
    if at_upper.any():
        hi = min(hi, np.min(resid[at_upper] - eps))
    if at_lower.any():
        lo = max(lo, np.max(resid[at_lower] + eps))
    if zero.any():
        lo = max(lo, np.max(resid[zero] - eps))
        hi = min(hi, np.min(resid[zero] + eps))
    if np.isfinite(lo) and np.isfinite(hi):
        return float((lo + hi) / 2.0)
    return float(lo if np.isfinite(lo) else hi)


def _polish(beta, kernel, y, C, eps, bound_tol):
    """Re-solve the KKT system for the free samples exactly."""
    free = (np.abs(beta) > bound_tol) & (np.abs(beta) < C - bound_tol)
    if not free.any():
        return None
    fixed = np.where(free, 0.0, np.where(beta >= C - bound_tol, C,
                                         np.where(beta <= -C + bound_tol, -C, 0.0)))
    f_idx = np.flatnonzero(free)
    k = len(f_idx)
    sign = np.sign(beta[f_idx])
    lhs = np.zeros((k + 1, k + 1))
    lhs[:k, :k] = kernel[np.ix_(f_idx, f_idx)]
    lhs[:k, k] = 1.0
    lhs[k, :k] = 1.0
    rhs = np.empty(k + 1)
    rhs[:k] = y[f_idx] - eps * sign - kernel[f_idx] @ fixed
    rhs[k] = -fixed.sum()
    sol, *_ = np.linalg.lstsq(lhs, rhs, rcond=None)
    new = fixed.copy()
    new[f_idx] = sol[:k]
    if np.any(sign * new[f_idx] < 0) or np.any(np.abs(new) > C):
        return None
    return new, float(sol[k])


def kkt_violation(beta, intercept, kernel, y, C, eps, bound_tol=1e-9):
    resid = y - (kernel @ beta + intercept)
    viol = np.zeros_like(resid)
    zero = np.abs(beta) <= bound_tol
    upper = beta >= C - bound_tol
    lower = beta <= -C + bound_tol
    pos_free = (beta > bound_tol) & ~upper
    neg_free = (beta < -bound_tol) & ~lower
    viol[zero] = np.maximum(np.abs(resid[zero]) - eps, 0.0)
    viol[upper] = np.maximum(eps - resid[upper], 0.0)
    viol[lower] = np.maximum(resid[lower] + eps, 0.0)
    viol[pos_free] = np.abs(resid[pos_free] - eps)
    viol[neg_free] = np.abs(resid[neg_free] + eps)
    return float(viol.max()) if len(viol) else 0.0


def dual_objective(beta, kernel, y, eps):
    """Dual objective to be maximized."""
    return float(-0.5 * beta @ kernel @ beta - eps * np.abs(beta).sum() + y @ beta)


def primal_objective(beta, intercept, kernel, y, C, eps):
    # With a linear kernel ||w||^2 = beta' K beta.
    resid = y - (kernel @ beta + intercept)
    return float(0.5 * beta @ kernel @ beta + C * np.maximum(np.abs(resid) - eps, 0.0).sum())


def feasible_start(beta, C):
    """Project a coefficient vector onto the box and the zero-sum constraint.

    Used to warm-start from a related problem, e.g. the full-data solution
    with one sample removed.
    """
    beta = np.clip(np.asarray(beta, dtype=np.float64), -C, C).copy()
    excess = beta.sum()
    for j in range(len(beta)):
        if abs(excess) <= 0:
            break
        room = beta[j] + C if excess > 0 else C - beta[j]
        step = min(abs(excess), room)
        beta[j] -= np.sign(excess) * step
        excess = beta.sum()
    return beta


def solve_dual(kernel, y, C=1.0, eps=0.1, tol=1e-10, max_iter=1_000_000, gap_rtol=1e-6, beta0=None,
               method="ipm"):
    """Solve the epsilon-SVR dual for a precomputed kernel matrix.

    ``method="smo"`` skips the interior point stage. ``beta0`` optionally
    warm-starts SMO; it must satisfy the box and zero-sum constraints (see
    :func:`feasible_start`). ``n_iter`` of the result counts SMO steps only.
    """
    kernel = np.asarray(kernel, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = len(y)
    bound_tol = 1e-12 * max(C, 1.0)
    target_gap = gap_rtol * C * n
    total_iter = 0
    kkt_tol = 1e-9 * max(1.0, float(np.abs(y).max()))

    if method not in ("ipm", "smo"):
        raise ValueError(f"unknown method {method!r}")
    if method == "ipm":
        beta = np.clip(_interior_point(kernel, y, C, eps), -C, C)
        polished = _polish(beta, kernel, y, C, eps, 1e-6 * C)
        if polished is not None and kkt_violation(*polished, kernel, y, C, eps) <= kkt_tol:
            beta, b = polished
            gap = primal_objective(beta, b, kernel, y, C, eps) - dual_objective(beta, kernel, y, eps)
            if gap <= target_gap:
                return DualSolution(beta, b, gap, 0)
        if beta0 is None:
            beta0 = feasible_start(beta, C)

    for _ in range(6):
        beta, it = _smo(kernel, y, C, eps, tol, max_iter, beta0)
        beta0 = np.clip(beta, -C, C)
        total_iter += it
        beta = np.clip(beta, -C, C)
        b = _intercept(beta, kernel, y, C, eps, max(bound_tol, 1e-9 * C))
        polished = _polish(beta, kernel, y, C, eps, max(bound_tol, 1e-9 * C))
        if polished is not None:
            pb, pint = polished
            before = kkt_violation(beta, b, kernel, y, C, eps)
            if kkt_violation(pb, pint, kernel, y, C, eps) <= max(before, 1e-9):
                beta, b = pb, pint
        gap = primal_objective(beta, b, kernel, y, C, eps) - dual_objective(beta, kernel, y, eps)
        if gap <= target_gap:
            break
        tol /= 100.0
    return DualSolution(beta, b, gap, total_iter)


class LinearEpsilonSVR(RegressorMixin, BaseEstimator):
    """Linear-kernel epsilon-SVR on standardized inputs.

    Multi-output targets are fitted one column at a time with shared
    hyperparameters. Predictions use the dual expansion
    ``sum_i beta_i <x_i, x> + b`` over the standardized training inputs.
    """

    def __init__(self, C=1.0, epsilon=0.1, tol=1e-10, max_iter=1_000_000, solver="ipm"):
        self.C = C
        self.epsilon = epsilon
        self.tol = tol
        self.max_iter = max_iter
        self.solver = solver

    def fit(self, X, y, init_dual_coef=None):
        """Fit on ``X`` (n, d) and ``y`` (n,) or (n, k).

        ``init_dual_coef`` (k, n) warm-starts the dual solver; it only
        affects speed, not the solution.
        """
        X, y = check_X_y(X, y, multi_output=True, y_numeric=True, dtype=np.float64)
        if not self.C > 0:
            raise ValueError(f"C must be positive, got {self.C}")
        if not self.epsilon >= 0:
            raise ValueError(f"epsilon must be non-negative, got {self.epsilon}")
        if len(X) < 2:
            raise ValueError("SVR needs at least 2 samples")
        self._single_output = y.ndim == 1
        Y = y.reshape(len(y), -1)
        self.mean_ = X.mean(axis=0)
        scale = X.std(axis=0)
        self.scale_ = np.where(scale > 0, scale, 1.0)
        self.X_fit_ = (X - self.mean_) / self.scale_
        self.n_features_in_ = X.shape[1]
        kernel = self.X_fit_ @ self.X_fit_.T
        n_out = Y.shape[1]
        self.dual_coef_ = np.zeros((n_out, len(X)))
        self.intercept_ = np.zeros(n_out)
        self.duality_gap_ = np.zeros(n_out)
        self.n_iter_ = np.zeros(n_out, dtype=int)
        if np.all(np.ptp(X, axis=0) == 0):
            warnings.warn("all SVR inputs are identical; using a constant median predictor")
            self.intercept_ = np.median(Y, axis=0)
            return self
        for k in range(n_out):
            beta0 = None
            if init_dual_coef is not None:
                beta0 = feasible_start(np.asarray(init_dual_coef, dtype=np.float64).reshape(n_out, -1)[k],
                                       self.C)
            sol = solve_dual(kernel, Y[:, k], self.C, self.epsilon, self.tol, self.max_iter,
                             beta0=beta0, method=self.solver)
            self.dual_coef_[k] = sol.beta
            self.intercept_[k] = sol.intercept
            self.duality_gap_[k] = sol.gap
            self.n_iter_[k] = sol.n_iter
        return self

    @property
    def coef_(self):
        """Primal weights in standardized input space, one row per output."""
        check_is_fitted(self, "dual_coef_")
        return self.dual_coef_ @ self.X_fit_

    def predict(self, X):
        check_is_fitted(self, "dual_coef_")
        X = check_array(X, dtype=np.float64)
        z = (X - self.mean_) / self.scale_
        out = (z @ self.X_fit_.T) @ self.dual_coef_.T + self.intercept_
        return out[:, 0] if self._single_output else out

    def to_dict(self):
        check_is_fitted(self, "dual_coef_")
        return {
            "C": self.C, "epsilon": self.epsilon,
            "mean": self.mean_.tolist(), "scale": self.scale_.tolist(),
            "support_inputs": self.X_fit_.tolist(),
            "dual_coef": self.dual_coef_.tolist(),
            "intercept": self.intercept_.tolist(),
            "single_output": self._single_output,
        }

    @classmethod
    def from_dict(cls, d):
        est = cls(C=d["C"], epsilon=d["epsilon"])
        est.mean_ = np.array(d["mean"], dtype=np.float64)
        est.scale_ = np.array(d["scale"], dtype=np.float64)
        est.X_fit_ = np.array(d["support_inputs"], dtype=np.float64)
        est.dual_coef_ = np.array(d["dual_coef"], dtype=np.float64)
        est.intercept_ = np.array(d["intercept"], dtype=np.float64)
        est.n_features_in_ = len(est.mean_)
        est._single_output = bool(d.get("single_output", False))
        return est
