"""Low-level logistic-regression fitting routines.

Shared by the risk-model and validation modules. Everything here operates
on plain numpy arrays; the public model classes live elsewhere. Two
solvers are provided:

* Newton / iteratively-reweighted least squares with step-halving, for
  maximum likelihood and ridge-penalized maximum likelihood.
* A coordinate-descent path solver for the L1-penalized problem,
  compiled with numba because it sits inside cross-validation and
  bootstrap loops.
"""
from __future__ import annotations

import numpy as np
from numba import njit
from scipy.special import expit


class FitError(RuntimeError):
    """A logistic fit could not be completed."""


class SeparationError(FitError):
    """Coefficients diverged, indicating (quasi-)separated data."""


class ConvergenceError(FitError):
    """The solver exhausted its iteration budget before converging."""


def bernoulli_loglik(eta: np.ndarray, y: np.ndarray) -> float:
    """Log-likelihood of 0/1 outcomes y under logit-scale predictions eta."""
    return float(y @ eta - np.logaddexp(0.0, eta).sum())


def irls(
    x: np.ndarray,
    y: np.ndarray,
    penalty: np.ndarray | None = None,
    tol: float = 1e-8,
    max_iter: int = 200,
    separation_bound: float | None = None,
):
    """Maximize loglik(beta) - 0.5 * beta' diag(penalty) beta by Newton steps.

    x must already contain any intercept column. Steps are halved until the
    penalized objective improves, so the returned history is non-decreasing
    up to float rounding. Convergence is declared when the largest absolute
    component of the penalized score drops below tol; once the objective is
    flat at float precision, full Newton steps finish the contraction.

    Returns (beta, history) where history is the objective value at the
    start of every iteration plus the final one.
    """
    n, p = x.shape
    if penalty is None:
        penalty = np.zeros(p)
    penalty = np.asarray(penalty, dtype=float)

    beta = np.zeros(p)
    eta = x @ beta
    obj = bernoulli_loglik(eta, y) - 0.5 * float(penalty @ beta**2)
    history = [obj]

    for _ in range(max_iter):
        mu = expit(eta)
        score = x.T @ (y - mu) - penalty * beta
        score_norm = np.max(np.abs(score), initial=0.0)
        if score_norm < tol:
            return beta, history
        w = mu * (1.0 - mu)
        hess = x.T @ (x * w[:, None])
        hess[np.diag_indices_from(hess)] += penalty
        try:
            step = np.linalg.solve(hess, score)
        except np.linalg.LinAlgError as exc:
            raise FitError("singular information matrix") from exc

        improved = False
        trial = step
        for _ in range(40):
            cand = beta + trial
            eta_cand = x @ cand
            obj_cand = bernoulli_loglik(eta_cand, y) - 0.5 * float(penalty @ cand**2)
            if obj_cand > obj:
                beta, eta, obj = cand, eta_cand, obj_cand
                improved = True
                break
            trial = trial * 0.5
        if not improved:
            # The objective is flat at float precision, so the line search
            # cannot see progress any more, but undamped Newton still
            # contracts the score quadratically in this regime. Take full
            # steps as long as the score keeps shrinking.
            cand = beta + step
            eta_cand = x @ cand
            new_norm = np.max(
                np.abs(x.T @ (y - expit(eta_cand)) - penalty * cand), initial=0.0
            )
            if new_norm >= score_norm:
                return beta, history
            beta, eta = cand, eta_cand
            obj = bernoulli_loglik(eta, y) - 0.5 * float(penalty @ beta**2)
        history.append(obj)
        if separation_bound is not None and np.max(np.abs(beta), initial=0.0) > separation_bound:
            raise SeparationError(
                "coefficient magnitude exceeded %g on the standardized scale; "
                "the outcome is (quasi-)separated" % separation_bound
            )

    raise ConvergenceError("IRLS did not converge in %d iterations" % max_iter)


def observed_information(x: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """Unpenalized observed information X' W X at beta."""
    mu = expit(x @ beta)
    w = mu * (1.0 - mu)
    return x.T @ (x * w[:, None])


@njit(cache=True)
def _lasso_path_engine(xt, y, lambdas, kkt_tol, max_outer, max_sweeps, inner_tol):
    """Coordinate-descent path for L1-penalized logistic regression.

    xt is (p, n) with standardized rows (one row per covariate), y is 0/1.
    lambdas must be sorted in decreasing order; solutions are warm-started
    along the path. Minimizes (1/n) * NLL + lam * sum(|beta|) with an
    unpenalized intercept. Outer loops form the usual quadratic
    approximation; convergence is declared only when the exact KKT
    conditions of the logistic problem hold within kkt_tol.
    """
    p, n = xt.shape
    n_lam = lambdas.shape[0]
    b0_out = np.empty(n_lam)
    beta_out = np.zeros((n_lam, p))
    ok = np.zeros(n_lam, np.bool_)

    ybar = y.sum() / n
    b0 = np.log(ybar / (1.0 - ybar))
    beta = np.zeros(p)
    eta = np.full(n, b0)

    mu = np.empty(n)
    w = np.empty(n)
    rw = np.empty(n)
    wx2 = np.empty(p)

    for il in range(n_lam):
        lam = lambdas[il]
        converged = False
        for _outer in range(max_outer):
            # Stable logistic transform and exact KKT residual.
            for i in range(n):
                e = eta[i]
                if e >= 0.0:
                    mu[i] = 1.0 / (1.0 + np.exp(-e))
                else:
                    ex = np.exp(e)
                    mu[i] = ex / (1.0 + ex)
                rw[i] = y[i] - mu[i]
            g0 = 0.0
            for i in range(n):
                g0 += rw[i]
            g0 /= n
            viol = abs(g0)
            for j in range(p):
                gj = 0.0
                for i in range(n):
                    gj += xt[j, i] * rw[i]
                gj /= n
                if beta[j] > 0.0:
                    v = abs(gj - lam)
                elif beta[j] < 0.0:
                    v = abs(gj + lam)
                else:
                    v = abs(gj) - lam
                    if v < 0.0:
                        v = 0.0
                if v > viol:
                    viol = v
            if viol <= kkt_tol:
                converged = True
                break

            # Quadratic approximation at the current point; rw already holds
            # the weighted working residual y - mu.
            wsum = 0.0
            for i in range(n):
                w[i] = mu[i] * (1.0 - mu[i])
                wsum += w[i]
            for j in range(p):
                s = 0.0
                for i in range(n):
                    s += w[i] * xt[j, i] * xt[j, i]
                wx2[j] = s / n

            for _sweep in range(max_sweeps):
                max_delta = 0.0
                d0 = 0.0
                for i in range(n):
                    d0 += rw[i]
                d0 /= wsum
                if d0 != 0.0:
                    b0 += d0
                    for i in range(n):
                        rw[i] -= d0 * w[i]
                    if abs(d0) > max_delta:
                        max_delta = abs(d0)
                for j in range(p):
                    if wx2[j] <= 1e-12:
                        continue
                    gj = 0.0
                    for i in range(n):
                        gj += xt[j, i] * rw[i]
                    gj = gj / n + wx2[j] * beta[j]
                    if gj > lam:
                        bj = (gj - lam) / wx2[j]
                    elif gj < -lam:
                        bj = (gj + lam) / wx2[j]
                    else:
                        bj = 0.0
                    d = bj - beta[j]
                    if d != 0.0:
                        beta[j] = bj
                        for i in range(n):
                            rw[i] -= d * w[i] * xt[j, i]
                        if abs(d) > max_delta:
                            max_delta = abs(d)
                if max_delta < inner_tol:
                    break

            # Refresh eta exactly to avoid accumulated drift.
            for i in range(n):
                e = b0
                for j in range(p):
                    if beta[j] != 0.0:
                        e += beta[j] * xt[j, i]
                eta[i] = e

        b0_out[il] = b0
        for j in range(p):
            beta_out[il, j] = beta[j]
        ok[il] = converged

    return b0_out, beta_out, ok


def lasso_path_std(
    x_std: np.ndarray,
    y: np.ndarray,
    lambdas: np.ndarray,
    kkt_tol: float = 5e-7,
    max_outer: int = 200,
    max_sweeps: int = 2000,
    inner_tol: float = 1e-10,
):
    """Run the compiled path solver on standardized columns.

    lambdas must be decreasing. Returns (intercepts, coefficients) on the
    standardized scale; raises ConvergenceError if any path point fails the
    exact KKT test.
    """
    xt = np.ascontiguousarray(x_std.T)
    y = np.ascontiguousarray(y, dtype=float)
    lambdas = np.ascontiguousarray(lambdas, dtype=float)
    if np.any(np.diff(lambdas) > 0):
        raise ValueError("lambda grid must be non-increasing")
    b0s, betas, ok = _lasso_path_engine(
        xt, y, lambdas, kkt_tol, max_outer, max_sweeps, inner_tol
    )
    if not np.all(ok):
        bad = lambdas[~ok]
        raise ConvergenceError(
            "coordinate descent failed the KKT test at lambda=%s" % bad[:3]
        )
    return b0s, betas
