"""Equality-constrained minimization of the layout objective.

Solves min f(q) s.t. c(q) = 0 with analytic first derivatives, in two
deterministic phases:

1. an augmented-Lagrangian outer loop (LANCELOT-style tolerance schedule)
   whose subproblems are nonlinear least squares -- the objective is a sum
   of squares and the penalty term completes the square -- handled by
   Levenberg-Marquardt with diagonal-scaled damping;
2. a least-norm Gauss-Newton polish on c(q) = 0 alone, pushing feasibility
   from the solver tolerance to near machine accuracy.

Constraint rows are scaled internally (volumes by 1/L_c^3, plane pins by
1/L_c) so the solve is invariant under global rescaling of the design; all
reported residuals are raw and recomputed from the returned iterate. There
is no randomization anywhere.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse

from .constraints import ConstraintSystem
from .errors import SolverError


@dataclass
class SolverOptions:
    tol_feasibility: float = 1e-10  # max |c(q*)|, raw units
    tol_stationarity: float = 1e-8  # inf-norm of the Lagrangian gradient
    max_outer_iterations: int = 500
    max_inner_iterations: int = 200
    rho0: float = 10.0
    rho_growth: float = 10.0
    # scaled residuals are O(1); beyond ~1e7 the penalty gradient drowns in
    # rounding noise (rho * eps) and the inner loop cannot meet tight
    # stationarity tolerances. Multiplier updates carry feasibility instead.
    rho_max: float = 1e7
    polish: bool = True
    polish_max_iterations: int = 10
    fd_check: bool = False
    fd_step_rel: float = 1e-6

    def __post_init__(self):
        if self.tol_feasibility <= 0 or self.tol_stationarity <= 0:
            raise SolverError("tolerances must be positive")


@dataclass
class SolveStats:
    iterations: int = 0
    outer_iterations: int = 0
    wall_time: float = 0.0
    final_objective: float = float("nan")
    max_constraint: float = float("nan")
    stationarity: float = float("nan")
    termination: str = "unknown"
    rank_deficient: bool = False
    condition_estimate: float = float("nan")
    trace: list = field(default_factory=list)
    log: list = field(default_factory=list)

    @property
    def converged(self):
        return self.termination == "converged"


def _classify_row(system: ConstraintSystem, row: int) -> str:
    for name, sl in system.row_class_slices.items():
        if sl.start <= row < sl.stop:
            return name
    return "unknown"


class _Work:
    """Evaluation cache: everything the phases need at one iterate."""

    __slots__ = ("q", "F", "JF", "c", "J", "f", "feas_raw")

    def __init__(self, system, D, q):
        P = system.positions(q)
        Pr, Ps = system._surface_partials(q)
        self.q = q
        self.F = system.objective_residuals(q, positions=P)
        self.JF = system.objective_jacobian(q, positions=P, partials=(Pr, Ps))
        c_raw = system.residual(q, positions=P)
        self.c = c_raw * D
        self.J = system.jacobian(q, positions=P, partials=(Pr, Ps)).multiply(D[:, None]).tocsr()
        self.f = float(self.F @ self.F)
        self.feas_raw = float(np.abs(c_raw).max()) if len(c_raw) else 0.0

    def grad_f(self):
        return 2.0 * (self.JF.T @ self.F)


def _check_finite(system, work):
    if not np.all(np.isfinite(work.c)):
        row = int(np.argmax(~np.isfinite(work.c)))
        raise SolverError(
            f"NaN/inf in constraint residual row {row} ({_classify_row(system, row)})"
        )
    if not (np.all(np.isfinite(work.F)) and np.all(np.isfinite(work.q))):
        raise SolverError("NaN/inf in objective residual or iterate")


def minimize(system: ConstraintSystem, q0, opts: SolverOptions = SolverOptions()):
    """Solve the design problem from q0; returns (q_star, SolveStats)."""
    t_start = time.perf_counter()
    stats = SolveStats()
    if opts.fd_check:
        report = fd_self_check(system, q0, opts.fd_step_rel * system.L_c)
        if report["max_rel_error"] > 1e-5:
            raise SolverError(
                f"analytic derivatives disagree with finite differences "
                f"(max rel error {report['max_rel_error']:.3e} at {report['worst_entry']})"
            )

    D = system.row_scale
    try:
        work = _Work(system, D, np.array(q0, dtype=float))
    except SolverError:
        raise
    except Exception as exc:
        raise SolverError(f"initial point not evaluable: {exc}") from exc
    _check_finite(system, work)

    lam = np.zeros(system.n_rows)
    rho = opts.rho0
    eta_k = 0.1 / rho**0.1
    eps_k = 1.0 / rho
    eps_floor = opts.tol_stationarity / 2.0
    termination = "max_outer_iterations"
    no_progress = 0

    for outer in range(opts.max_outer_iterations):
        before = stats.iterations
        work, stat_al = _lm_inner(system, D, work, lam, rho, max(eps_k, eps_floor), opts, stats, outer)
        _check_finite(system, work)
        stats.outer_iterations = outer + 1
        feas_scaled = float(np.abs(work.c).max()) if len(work.c) else 0.0
        if work.feas_raw <= opts.tol_feasibility and stat_al <= max(opts.tol_stationarity, 1e-5):
            # the AL gradient lags behind the multiplier estimate; certify
            # with least-squares multipliers before grinding further
            g = work.grad_f()
            JT = work.J.T.toarray()
            lam_ls, *_ = np.linalg.lstsq(JT, g, rcond=None)
            if float(np.abs(g - JT @ lam_ls).max()) <= opts.tol_stationarity:
                termination = "al_done"
                break
        if feas_scaled <= eta_k:
            lam = lam - rho * work.c
            eta_k = max(eta_k / rho**0.9, 1e-16)
            eps_k = max(eps_k / rho, eps_floor)
        elif rho < opts.rho_max:
            rho = min(rho * opts.rho_growth, opts.rho_max)
            eta_k = 0.1 / rho**0.1
            eps_k = max(1.0 / rho, eps_floor)
        else:
            # at the penalty cap: multiplier updates are all that is left
            lam = lam - rho * work.c
            eps_k = max(eps_k / 10.0, eps_floor)
        if stats.iterations == before:
            no_progress += 1
            if no_progress >= 5:
                termination = "stalled"
                break
        else:
            no_progress = 0

    if opts.polish:
        work = _polish_feasibility(system, D, work, opts, stats)

    # ----- certification (never trusts loop-internal values) -----
    q = work.q
    c_raw = system.residual(q)
    stats.max_constraint = float(np.abs(c_raw).max()) if len(c_raw) else 0.0
    stats.final_objective = system.objective(q)
    stats.stationarity = _lagrangian_stationarity(system, D, q)
    if stats.max_constraint <= opts.tol_feasibility and stats.stationarity <= opts.tol_stationarity:
        termination = "converged"
    elif termination in ("al_done", "max_outer_iterations"):
        termination = "tolerance_not_met" if termination == "al_done" else "max_outer_iterations"
    stats.termination = termination
    stats.wall_time = time.perf_counter() - t_start
    return q, stats


def _lm_inner(system, D, work, lam, rho, eps_k, opts, stats, outer):
    """Levenberg-Marquardt on ||F||^2 + (rho/2)||c - lam/rho||^2."""
    shift = lam / rho
    w = np.sqrt(rho / 2.0)

    def phi_grad(wk):
        return 2.0 * (wk.JF.T @ wk.F) + 2.0 * w * (wk.J.T @ (w * (wk.c - shift)))

    phi = work.f + float((w * (work.c - shift)) @ (w * (work.c - shift)))
    grad = phi_grad(work)
    mu_rel = 1e-8
    for inner in range(opts.max_inner_iterations):
        gnorm = float(np.abs(grad).max())
        if gnorm <= eps_k:
            break
        JR = scipy.sparse.vstack([work.JF, work.J.multiply(w)]).tocsr()
        JTJ = (JR.T @ JR).toarray()
        diag = np.clip(np.diag(JTJ), 1e-12, None)
        rhs = -0.5 * grad
        mu = mu_rel
        step_taken = False
        for _attempt in range(30):
            H = JTJ + mu * np.diag(diag)
            try:
                cho = scipy.linalg.cho_factor(H, check_finite=False)
                delta = scipy.linalg.cho_solve(cho, rhs, check_finite=False)
            except scipy.linalg.LinAlgError:
                mu = max(mu * 10.0, 1e-12)
                continue
            try:
                trial = _Work(system, D, work.q + delta)
            except Exception:
                mu = max(mu * 10.0, 1e-12)
                continue
            phi2 = trial.f + float((w * (trial.c - shift)) @ (w * (trial.c - shift)))
            # near the optimum the merit decrease drops below rounding noise;
            # fall back to accepting steps that shrink the gradient instead
            accept = np.isfinite(phi2) and phi2 < phi
            if not accept and np.isfinite(phi2) and phi2 <= phi + 64.0 * np.finfo(float).eps * abs(phi):
                grad2 = phi_grad(trial)
                accept = float(np.abs(grad2).max()) < 0.9 * gnorm
            if accept:
                work, phi = trial, phi2
                grad = phi_grad(work)
                mu_rel = max(mu / 4.0, 1e-14)
                step_taken = True
                stats.iterations += 1
                step_norm = float(np.linalg.norm(delta))
                stats.trace.append(
                    {"phase": "al", "outer": outer, "inner": inner, "phi": phi, "f": work.f,
                     "rho": rho, "mu": mu, "step_norm": step_norm}
                )
                stats.log.append(
                    {"iteration": stats.iterations, "f": work.f, "max_c": work.feas_raw,
                     "step_norm": step_norm}
                )
                break
            mu = max(mu * 10.0, 1e-12)
        if not step_taken:
            break
    return work, float(np.abs(grad).max())


def _polish_feasibility(system, D, work, opts, stats):
    """Least-norm Gauss-Newton steps on the scaled constraints alone."""
    if system.n_rows == 0:
        return work
    best = work
    did_svd = False
    for _ in range(opts.polish_max_iterations):
        cmax = float(np.abs(work.c).max())
        if cmax <= 1e-15:
            break
        Jd = work.J.toarray()
        if not did_svd:
            sv = scipy.linalg.svdvals(Jd)
            stats.condition_estimate = float(sv[0] / max(sv[-1], 1e-300)) if sv[0] > 0 else float("nan")
            stats.rank_deficient = bool(sv[-1] < 1e-10 * sv[0])
            did_svd = True
        delta, *_ = np.linalg.lstsq(Jd, -work.c, rcond=None)
        alpha = 1.0
        stepped = False
        for _ls in range(20):
            try:
                trial = _Work(system, D, work.q + alpha * delta)
            except Exception:
                alpha *= 0.5
                continue
            if np.all(np.isfinite(trial.c)) and float(np.abs(trial.c).max()) < cmax:
                work = trial
                stepped = True
                break
            alpha *= 0.5
        if not stepped:
            break
        if work.feas_raw < best.feas_raw:
            best = work
    return work if work.feas_raw <= best.feas_raw else best


def _lagrangian_stationarity(system, D, q):
    """inf-norm of grad f - J^T lambda* with least-squares multipliers."""
    g = system.gradient(q)
    if system.n_rows == 0:
        return float(np.abs(g).max())
    J = system.jacobian(q).multiply(D[:, None]).tocsr()
    JT = J.T.toarray()
    lam, *_ = np.linalg.lstsq(JT, g, rcond=None)
    return float(np.abs(g - JT @ lam).max())


def fd_self_check(system: ConstraintSystem, q, step):
    """Compare the analytic Jacobian and gradient against central differences.

    Returns per-class maxima of the relative error (normalized by the
    largest entry magnitude in the class) plus the location of the worst
    entry. Intended for small systems; cost is two residual evaluations per
    variable.
    """
    if step <= 0:
        raise SolverError("finite-difference step must be positive")
    q = np.asarray(q, dtype=float)
    n = len(q)
    J_an = system.jacobian(q).toarray()
    g_an = system.gradient(q)
    J_fd = np.empty_like(J_an)
    g_fd = np.empty(n)
    for k in range(n):
        qp = q.copy()
        qp[k] += step
        qm = q.copy()
        qm[k] -= step
        J_fd[:, k] = (system.residual(qp) - system.residual(qm)) / (2 * step)
        g_fd[k] = (system.objective(qp) - system.objective(qm)) / (2 * step)
    report = {"by_class": {}}
    worst = (0, 0)
    worst_err = 0.0
    for name, sl in system.row_class_slices.items():
        blk_an = J_an[sl]
        blk_fd = J_fd[sl]
        if blk_an.size == 0:
            report["by_class"][name] = 0.0
            continue
        scale = max(np.abs(blk_an).max(), np.abs(blk_fd).max(), 1e-12)
        diff = np.abs(blk_an - blk_fd) / scale
        err = float(diff.max())
        report["by_class"][name] = err
        if err > worst_err:
            worst_err = err
            loc = np.unravel_index(int(np.argmax(diff)), diff.shape)
            worst = (int(loc[0]) + sl.start, int(loc[1]))
    g_scale = max(np.abs(g_an).max(), np.abs(g_fd).max(), 1e-12)
    g_err = float(np.abs(g_an - g_fd).max() / g_scale)
    report["gradient_rel_error"] = g_err
    report["max_rel_error"] = max(worst_err, g_err)
    report["worst_entry"] = list(worst)
    return report
