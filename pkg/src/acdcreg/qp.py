"""Dense convex quadratic programming with KKT certification.

Solves
    minimize    (1/2) x'Px + q'x
    subject to  Ax = b,  Gx <= h

by operator-splitting iterations on a regularized augmented system, followed
by a direct-factorization polish on the detected active set.  A solution is
reported Optimal only when the four KKT residuals (stationarity, equality
feasibility, inequality violation, complementarity) are all below the
requested tolerance; the polish step normally lands them near machine
precision.

The solver is deliberately self-contained and dense.  ``QpWorkspace`` keeps
the factorizations for a fixed constraint structure so that repeated solves
with new linear terms (the pattern produced by coordinate descent) cost only
a few triangular solves.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

__all__ = [
    "OPTIMAL",
    "INFEASIBLE",
    "MAX_ITER",
    "QpProblem",
    "QpSolution",
    "KktReport",
    "QpError",
    "solve_qp",
    "check_kkt",
    "QpWorkspace",
]

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
MAX_ITER = "max_iter"


class QpError(ValueError):
    """Invalid problem data (dimension mismatch or a non-PSD objective)."""


def _as_matrix(M, name):
    M = np.asarray(M, dtype=float)
    if M.ndim != 2:
        raise QpError(f"{name} must be a 2-d array")
    if not np.all(np.isfinite(M)):
        raise QpError(f"{name} contains non-finite entries")
    return M


def _as_vector(v, name):
    v = np.asarray(v, dtype=float)
    if v.ndim != 1:
        raise QpError(f"{name} must be a 1-d array")
    if not np.all(np.isfinite(v)):
        raise QpError(f"{name} contains non-finite entries")
    return v


@dataclass(frozen=True)
class QpProblem:
    """Problem data.  A and b (or G and h) may be None when absent."""

    P: np.ndarray
    q: np.ndarray
    A: np.ndarray = None
    b: np.ndarray = None
    G: np.ndarray = None
    h: np.ndarray = None

    def __post_init__(self):
        P = _as_matrix(self.P, "P")
        m = P.shape[0]
        if P.shape[1] != m:
            raise QpError("P must be square")
        sym_tol = 1e-12 * max(1.0, float(np.abs(P).max(initial=0.0)))
        if np.abs(P - P.T).max(initial=0.0) > sym_tol:
            raise QpError("P is not symmetric")
        P = 0.5 * (P + P.T)
        q = _as_vector(self.q, "q")
        if q.shape[0] != m:
            raise QpError("q length does not match P")
        A, b = self.A, self.b
        if (A is None) != (b is None):
            raise QpError("A and b must be supplied together")
        if A is None:
            A, b = np.zeros((0, m)), np.zeros(0)
        else:
            A = _as_matrix(A, "A")
            b = _as_vector(b, "b")
            if A.shape[1] != m or A.shape[0] != b.shape[0]:
                raise QpError("A/b dimensions inconsistent with P")
        G, h = self.G, self.h
        if (G is None) != (h is None):
            raise QpError("G and h must be supplied together")
        if G is None:
            G, h = np.zeros((0, m)), np.zeros(0)
        else:
            G = _as_matrix(G, "G")
            h = _as_vector(h, "h")
            if G.shape[1] != m or G.shape[0] != h.shape[0]:
                raise QpError("G/h dimensions inconsistent with P")
        for name, val in (("P", P), ("q", q), ("A", A), ("b", b), ("G", G), ("h", h)):
            arr = np.ascontiguousarray(val)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def m(self):
        return self.P.shape[0]

    @property
    def me(self):
        return self.A.shape[0]

    @property
    def mi(self):
        return self.G.shape[0]


@dataclass(frozen=True)
class KktReport:
    """Infinity norms of the four first-order optimality residuals."""

    primal_eq_residual: float
    primal_ineq_violation: float
    dual_residual: float
    complementarity: float

    def max_residual(self):
        return max(
            self.primal_eq_residual,
            self.primal_ineq_violation,
            self.dual_residual,
            self.complementarity,
        )


@dataclass(frozen=True)
class QpSolution:
    x: np.ndarray
    y_eq: np.ndarray
    z_ineq: np.ndarray
    status: str
    iterations: int
    kkt: KktReport
    message: str = ""

    def __post_init__(self):
        for name in ("x", "y_eq", "z_ineq"):
            arr = np.asarray(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)


def check_kkt(prob, sol):
    """Recompute KKT residual norms for a candidate solution.

    Accepts a QpSolution or any object with x / y_eq / z_ineq attributes.
    """
    return kkt_residuals(prob, sol.x, sol.y_eq, sol.z_ineq)


def kkt_residuals(prob, x, y_eq=None, z_ineq=None):
    """KKT residual norms from raw primal/dual vectors."""
    x = _as_vector(x, "x")
    if x.shape[0] != prob.m:
        raise QpError("x length does not match problem")
    y_eq = np.zeros(prob.me) if y_eq is None else _as_vector(y_eq, "y_eq")
    z_ineq = np.zeros(prob.mi) if z_ineq is None else _as_vector(z_ineq, "z_ineq")
    if y_eq.shape[0] != prob.me or z_ineq.shape[0] != prob.mi:
        raise QpError("dual lengths do not match problem")
    stat = prob.P @ x + prob.q
    if prob.me:
        stat = stat + prob.A.T @ y_eq
    if prob.mi:
        stat = stat + prob.G.T @ z_ineq
    eq = prob.A @ x - prob.b if prob.me else np.zeros(0)
    slack = prob.h - prob.G @ x if prob.mi else np.zeros(0)
    return KktReport(
        primal_eq_residual=float(np.abs(eq).max(initial=0.0)),
        primal_ineq_violation=float(np.maximum(-slack, 0.0).max(initial=0.0)),
        dual_residual=float(np.abs(stat).max(initial=0.0)),
        complementarity=float(np.abs(z_ineq * slack).max(initial=0.0)),
    )


# ---- scaling ---------------------------------------------------------------


def _ruiz_scaling(P, C, iters=10):
    """Symmetric equilibration of [[P, C'], [C, 0]] plus a cost scale.

    Returns diagonal vectors d (variables), e (constraint rows), and the
    scalar c applied to the objective.  The cost scale is computed from P
    alone so that a workspace can reuse the scaling for every linear term.
    """
    m = P.shape[0]
    mc = C.shape[0]
    d = np.ones(m)
    e = np.ones(mc)
    c = 1.0
    Ps = P.copy()
    Cs = C.copy()
    for _ in range(iters):
        col_p = np.abs(Ps).max(axis=0) if m else np.zeros(0)
        col_c = np.abs(Cs).max(axis=0) if mc else np.zeros(m)
        dv = 1.0 / np.sqrt(np.maximum(np.maximum(col_p, col_c), 1e-8))
        row_c = np.abs(Cs).max(axis=1) if mc else np.zeros(0)
        de = 1.0 / np.sqrt(np.maximum(row_c, 1e-8))
        Ps = Ps * dv[:, None] * dv[None, :]
        Cs = Cs * de[:, None] * dv[None, :]
        d *= dv
        e *= de
        gamma = 1.0 / max(float(np.abs(Ps).max(axis=0).mean()) if m else 1.0, 1e-8)
        gamma = min(max(gamma, 1e-6), 1e6)
        Ps *= gamma
        c *= gamma
    return d, e, c


# ---- workspace -------------------------------------------------------------


class QpWorkspace:
    """Reusable solver state for a fixed (P, A, G) constraint structure.

    The quadratic term and constraint matrices are fixed at construction;
    ``solve`` accepts fresh linear data (q, b, h) plus an optional warm start.
    Factorizations of the splitting matrix and of the last successful
    active-set system are cached across calls, which is what makes repeated
    coordinate-descent solves cheap.
    """

    def __init__(self, P, A=None, G=None, *, psd_tol=1e-10):
        P = _as_matrix(P, "P")
        m = P.shape[0]
        A = np.zeros((0, m)) if A is None else _as_matrix(A, "A")
        G = np.zeros((0, m)) if G is None else _as_matrix(G, "G")
        if A.shape[1] != m or G.shape[1] != m:
            raise QpError("constraint matrices do not match P")
        self.m = m
        self.me = A.shape[0]
        self.mi = G.shape[0]
        self.P = 0.5 * (P + P.T)
        self.A = A
        self.G = G
        self._check_psd(psd_tol)
        self.C = np.vstack([A, G]) if (self.me or self.mi) else np.zeros((0, m))
        self.d, self.e, self.cost_scale = _ruiz_scaling(self.P, self.C)
        self.Ps = self.cost_scale * (self.P * self.d[:, None] * self.d[None, :])
        self.Cs = (self.C * self.e[:, None]) * self.d[None, :]
        self.sigma = 1e-6
        self.alpha = 1.6
        # rho has one value per constraint class, so the weighted Gram matrix
        # is a fixed combination of these two blocks; refactoring after a rho
        # update then costs one Cholesky, not a fresh matrix product
        As, Gs = self.Cs[: self.me], self.Cs[self.me:]
        self._AtA = As.T @ As if self.me else None
        self._GtG = Gs.T @ Gs if self.mi else None
        self._factor(0.1)
        # polish caches: fixed-block KKT factorization, per-row back-solves,
        # and the last successful active set with its Schur factor
        self._polish_key = None
        self._schur_key = None
        self._schur_S = None
        self._schur_chol = None
        self._base_ready = False
        self._base_ok = False
        self._base_chol = None
        self._base_lu = None
        self._hx = None
        self._hx_have = None
        self._delta = 1e-11 * max(1.0, float(np.abs(self.P).max(initial=0.0)))

    # -- setup helpers

    def _check_psd(self, psd_tol):
        if self.m == 0:
            return
        scale = max(1.0, float(np.abs(self.P).max(initial=0.0)))
        shift = psd_tol + 1e-14 * scale
        try:
            sla.cholesky(self.P + shift * np.eye(self.m), lower=True, check_finite=False)
            return
        except sla.LinAlgError:
            pass
        w = sla.eigvalsh(self.P, check_finite=False)
        if w[0] < -max(psd_tol, 1e-12 * scale):
            raise QpError(f"P is not positive semidefinite (min eigenvalue {w[0]:.3e})")

    def _factor(self, rho_bar):
        self._rho_bar = rho_bar
        self.rho = np.full(self.me + self.mi, rho_bar)
        self.rho[: self.me] *= 1e3  # stiff handling of equality rows
        M = self.Ps + self.sigma * np.eye(self.m)
        if self._AtA is not None:
            M = M + (1e3 * rho_bar) * self._AtA
        if self._GtG is not None:
            M = M + rho_bar * self._GtG
        self._M_chol = sla.cho_factor(M, lower=True, check_finite=False)

    # -- main solve

    def solve(self, q, b=None, h=None, *, tol=1e-8, max_iter=20000,
              x0=None, y0=None, z0=None, verbose=False):
        """Solve with the workspace's fixed structure and fresh linear data."""
        m, me, mi = self.m, self.me, self.mi
        if max_iter < 1:
            raise QpError("max_iter must be at least 1")
        q = _as_vector(q, "q")
        if q.shape[0] != m:
            raise QpError("q length does not match workspace")
        b = np.zeros(me) if b is None else _as_vector(b, "b")
        h = np.zeros(mi) if h is None else _as_vector(h, "h")
        if b.shape[0] != me or h.shape[0] != mi:
            raise QpError("b/h lengths do not match workspace")
        view = _ProblemView(self.P, q, self.A, b, self.G, h)

        if m == 0:
            kkt = kkt_residuals(view, np.zeros(0), np.zeros(me), np.zeros(mi))
            return QpSolution(np.zeros(0), np.zeros(me), np.zeros(mi), OPTIMAL, 0, kkt)

        # scaled data
        qs = self.cost_scale * (self.d * q)
        ls = np.concatenate([self.e[:me] * b, np.full(mi, -np.inf)])
        us = self.e * np.concatenate([b, h])
        mc = me + mi

        # try the cached active set before iterating at all
        if self._polish_key is not None:
            cand = self._polish_refine(
                view, np.array(self._polish_key, dtype=np.intp), tol)
            if cand is not None:
                kkt = kkt_residuals(view, *cand)
                if kkt.max_residual() <= tol:
                    return QpSolution(*cand, OPTIMAL, 0, kkt)

        if mc == 0:
            x = self._unconstrained(qs)
            kkt = kkt_residuals(view, x, np.zeros(0), np.zeros(0))
            status = OPTIMAL if kkt.max_residual() <= tol else MAX_ITER
            return QpSolution(x, np.zeros(0), np.zeros(0), status, 0, kkt)

        xs = np.zeros(m) if x0 is None else np.asarray(x0, dtype=float) / self.d
        if y0 is None and z0 is None:
            ys = np.zeros(mc)
        else:
            y_full = np.concatenate([
                np.zeros(me) if y0 is None else np.asarray(y0, dtype=float),
                np.zeros(mi) if z0 is None else np.asarray(z0, dtype=float),
            ])
            ys = (self.cost_scale / self.e) * y_full
        zs = np.clip(self.Cs @ xs, ls, us)

        polish_at = 60 if self._polish_key is None else 25
        check_every = 10
        y_window = ys.copy()
        r_prim_first = None
        best = None
        best_max = np.inf

        for it in range(1, max_iter + 1):
            rhs = self.sigma * xs - qs + self.Cs.T @ (self.rho * zs - ys)
            x_t = sla.cho_solve(self._M_chol, rhs, check_finite=False)
            v_t = self.Cs @ x_t
            xs = self.alpha * x_t + (1.0 - self.alpha) * xs
            v = self.alpha * v_t + (1.0 - self.alpha) * zs
            zs_new = np.clip(v + ys / self.rho, ls, us)
            ys = ys + self.rho * (v - zs_new)
            zs = zs_new

            if it % check_every == 0 or it == max_iter:
                x = self.d * xs
                y_full = (self.e * ys) / self.cost_scale
                y_eq, z_in = y_full[:me], np.maximum(y_full[me:], 0.0)
                kkt = kkt_residuals(view, x, y_eq, z_in)
                worst = kkt.max_residual()
                if verbose:
                    print(f"qp iter {it}: kkt max {worst:.3e}", file=sys.stderr)
                if worst < best_max:
                    best_max = worst
                    best = (x, y_eq, z_in, kkt)
                if worst <= tol:
                    # one last polish pass: the active set is reliable at
                    # this point and the direct solve is near-exact; give
                    # up quickly though, the iterate is already acceptable
                    cand = self._polish(view, xs, ys, tol, rounds=6)
                    if cand is not None:
                        kkt_p = kkt_residuals(view, *cand)
                        if kkt_p.max_residual() <= max(worst, 1e-300):
                            return QpSolution(*cand, OPTIMAL, it, kkt_p)
                    return QpSolution(x, y_eq, z_in, OPTIMAL, it, kkt)
                if r_prim_first is None:
                    r_prim_first = self._prim_residual(xs, zs)

            if it >= polish_at:
                polish_at = it + min(250, max(25, it))
                cand = self._polish(view, xs, ys, tol)
                if cand is not None:
                    kkt = kkt_residuals(view, *cand)
                    if kkt.max_residual() <= tol:
                        return QpSolution(*cand, OPTIMAL, it, kkt)

            if it % 50 == 0:
                msg = self._infeasibility_certificate(ys - y_window, b, h)
                y_window = ys.copy()
                if msg is None and it >= 1000 and self._diverged(xs, zs, r_prim_first):
                    msg = "scaled residuals diverged; problem appears infeasible"
                if msg is not None:
                    x = self.d * xs
                    kkt = kkt_residuals(view, x, np.zeros(me), np.zeros(mi))
                    return QpSolution(x, np.zeros(me), np.zeros(mi),
                                      INFEASIBLE, it, kkt, message=msg)

            if it % 100 == 0:
                self._adapt_rho(xs, zs, ys, qs)

        x, y_eq, z_in, kkt = best
        return QpSolution(x, y_eq, z_in, MAX_ITER, max_iter, kkt,
                          message="iteration limit reached")

    # -- pieces

    def _unconstrained(self, qs):
        try:
            chol = sla.cho_factor(self.Ps, lower=True, check_finite=False)
            return self.d * sla.cho_solve(chol, -qs, check_finite=False)
        except sla.LinAlgError:
            # singular P: converge the sigma-regularized iteration instead
            xs = sla.cho_solve(self._M_chol, -qs, check_finite=False)
            for _ in range(50):
                res = -qs - self.Ps @ xs
                step = sla.cho_solve(self._M_chol, res, check_finite=False)
                xs = xs + step
                if np.abs(step).max(initial=0.0) <= 1e-15 * max(1.0, np.abs(xs).max()):
                    break
            return self.d * xs

    def _prim_residual(self, xs, zs):
        if not zs.shape[0]:
            return 0.0
        return float(np.abs(self.Cs @ xs - zs).max(initial=0.0))

    def _diverged(self, xs, zs, r_first):
        if r_first is None:
            return False
        r_now = self._prim_residual(xs, zs)
        return not np.isfinite(r_now) or r_now > 1e6 * (1.0 + r_first)

    def _adapt_rho(self, xs, zs, ys, qs):
        if not zs.shape[0]:
            return
        r_prim = np.abs(self.Cs @ xs - zs).max(initial=0.0)
        r_dual = np.abs(self.Ps @ xs + qs + self.Cs.T @ ys).max(initial=0.0)
        denom_p = max(np.abs(self.Cs @ xs).max(initial=0.0),
                      np.abs(zs[np.isfinite(zs)]).max(initial=0.0), 1e-10)
        denom_d = max(np.abs(self.Ps @ xs).max(initial=0.0),
                      np.abs(qs).max(initial=0.0),
                      np.abs(self.Cs.T @ ys).max(initial=0.0), 1e-10)
        ratio = np.sqrt((r_prim / denom_p) / max(r_dual / denom_d, 1e-16))
        if not np.isfinite(ratio) or ratio <= 0:
            return
        new_bar = float(np.clip(self._rho_bar * ratio, 1e-6, 1e6))
        if new_bar > 5.0 * self._rho_bar or new_bar < self._rho_bar / 5.0:
            self._factor(new_bar)

    def _infeasibility_certificate(self, dy, b, h):
        mc = dy.shape[0]
        if mc == 0:
            return None
        d_full = (self.e * dy) / self.cost_scale  # unscaled dual direction
        norm = np.abs(d_full).max(initial=0.0)
        if norm <= 1e-14:
            return None
        d_unit = d_full / norm
        me = self.me
        if self.mi and d_unit[me:].min(initial=0.0) < -1e-6:
            return None
        d_ineq = np.maximum(d_unit[me:], 0.0)
        ct = np.zeros(self.m)
        if me:
            ct += self.A.T @ d_unit[:me]
        if self.mi:
            ct += self.G.T @ d_ineq
        ct_norm = np.abs(ct).max(initial=0.0)
        support = (float(b @ d_unit[:me]) if me else 0.0) + \
                  (float(h @ d_ineq) if self.mi else 0.0)
        if ct_norm <= 1e-8 and support < -1e-8:
            return ("primal infeasibility certificate: |C'dy| = "
                    f"{ct_norm:.2e}, support value {support:.2e}")
        return None

    # -- polish: direct solves on the detected active set
    #
    # Every active-set round solves a saddle system sharing the fixed block
    # [[P + delta I, A'], [A, -delta I]].  That block is factored once per
    # workspace and each constraint row's back-solve is cached, so a round
    # only pays for a Schur complement in the rows that changed.

    def _polish(self, view, xs, ys, tol, rounds=60):
        """Polish from the current iterate's guessed active set."""
        x = self.d * xs
        y_full = (self.e * ys) / self.cost_scale
        active = self._guess_active(view, x, y_full)
        return self._polish_refine(view, active, tol, rounds=rounds)

    def _ensure_base(self):
        if self._base_ready:
            return self._base_ok
        self._base_ready = True
        m, me = self.m, self.me
        for bump in (1.0, 1e3):
            d = self._delta * bump
            try:
                if me == 0:
                    Kb = self.P + d * np.eye(m)
                    self._base_chol = sla.cho_factor(Kb, lower=True,
                                                     check_finite=False)
                else:
                    Kb = np.zeros((m + me, m + me))
                    Kb[:m, :m] = self.P + d * np.eye(m)
                    Kb[m:, :m] = self.A
                    Kb[:m, m:] = self.A.T
                    Kb[m:, m:] = -d * np.eye(me)
                    self._base_lu = sla.lu_factor(Kb, check_finite=False)
            except (sla.LinAlgError, ValueError):
                continue
            self._delta = d
            self._hx = np.zeros((m + me, self.mi))
            self._hx_have = np.zeros(self.mi, dtype=bool)
            self._base_ok = True
            return True
        return False

    def _base_solve(self, rhs):
        if self._base_chol is not None:
            return sla.cho_solve(self._base_chol, rhs, check_finite=False)
        return sla.lu_solve(self._base_lu, rhs, check_finite=False)

    def _ensure_hx(self, rows):
        need = rows[~self._hx_have[rows]]
        if need.size:
            rhs = np.zeros((self.m + self.me, need.size))
            rhs[: self.m] = self.G[need].T
            self._hx[:, need] = self._base_solve(rhs)
            self._hx_have[need] = True

    def _guess_active(self, view, x, y_full):
        if self.mi == 0:
            return np.zeros(0, dtype=np.intp)
        slack = view.h - self.G @ x
        z = y_full[self.me:]
        z_scale = float(np.abs(z).max(initial=0.0))
        # strict thresholds: unconverged duals are noisy and a loose guess
        # drags the whole constraint block into the polish factorization
        act = (slack < 1e-6 * np.maximum(1.0, np.abs(view.h))) | (z > 1e-5 * z_scale)
        idx = np.flatnonzero(act)
        cap = max(self.m - self.me, 0)
        if idx.size > cap:
            # keep the rows with the largest multipliers; refinement adds
            # back anything violated once the first solve is in hand
            order = np.argsort(z[idx])[::-1]
            idx = np.sort(idx[order[:cap]])
        return idx

    def _polish_refine(self, view, active, tol, rounds=60):
        """Adjust the active set until multipliers and slacks are consistent.

        One round drops rows with negative multipliers and adds violated
        rows in a single simultaneous update, then re-solves; the Schur
        matrix is patched in place of being rebuilt.  Dropping is rationed
        to avoid overshooting, and a nearly settled set whose clipped
        candidate already meets the requested tolerance is accepted as is
        (ties between neighboring rows can flicker forever otherwise).
        """
        if not self._ensure_base():
            return None
        mi = self.mi
        h_scale = np.maximum(1.0, np.abs(view.h))
        key = tuple(active.tolist())
        W, S = self._schur_blocks(active, key)
        seen = set()
        for _ in range(rounds):
            if key in seen:
                return None
            seen.add(key)
            sol = self._solve_schur(view, active, key, W, S)
            if sol is None:
                return None
            x, y_eq, z_act, chol = sol
            keep = np.ones(active.shape[0], dtype=bool)
            if z_act.shape[0]:
                neg = z_act < -1e-10 * max(1.0, float(np.abs(z_act).max()))
                cap = max(16, active.shape[0] // 8)
                if int(neg.sum()) > cap:
                    worst = np.argsort(z_act)[:cap]
                    neg = np.zeros_like(neg)
                    neg[worst] = True
                keep = ~neg
            slack = view.h - self.G @ x
            viol = slack < -1e-9 * h_scale
            viol[active] = False
            changed = int((~keep).sum()) + int(viol.sum())
            accept = changed == 0
            if not accept and changed <= max(4, active.shape[0] // 64):
                z = np.zeros(mi)
                if z_act.shape[0]:
                    z[active] = np.maximum(z_act, 0.0)
                accept = kkt_residuals(view, x, y_eq, z).max_residual() <= tol
            if accept:
                z = np.zeros(mi)
                if z_act.shape[0]:
                    z[active] = np.maximum(z_act, 0.0)
                self._polish_key = key
                self._schur_key, self._schur_S, self._schur_chol = key, S, chol
                return x, y_eq, z
            new_active = np.unique(np.concatenate(
                [active[keep], np.flatnonzero(viol)]))
            W, S = self._update_schur(active, keep, new_active, S)
            active = new_active
            key = tuple(active.tolist())
        return None

    def _schur_blocks(self, active, key):
        """W = base backsolves of the active rows and S = G_a W restricted."""
        if key == self._schur_key and self._schur_S is not None:
            return self._hx[:, active], self._schur_S
        self._ensure_hx(active)
        W = self._hx[:, active]
        S = self.G[active] @ W[: self.m]
        S = 0.5 * (S + S.T)
        return W, S

    def _update_schur(self, active, keep, new_active, S):
        kept = active[keep]
        pos_old = np.flatnonzero(keep)
        is_old = np.isin(new_active, kept)
        pos_new_old = np.flatnonzero(is_old)
        added = new_active[~is_old]
        self._ensure_hx(new_active)
        W_new = self._hx[:, new_active]
        S_new = np.empty((new_active.shape[0], new_active.shape[0]))
        S_new[np.ix_(pos_new_old, pos_new_old)] = S[np.ix_(pos_old, pos_old)]
        if added.size:
            pos_new_add = np.flatnonzero(~is_old)
            border = self.G[added] @ W_new[: self.m]
            S_new[pos_new_add, :] = border
            S_new[:, pos_new_add] = border.T
        return W_new, S_new

    def _solve_schur(self, view, active, key, W, S):
        m, me = self.m, self.me
        na = active.shape[0]
        if na and key == self._schur_key and self._schur_chol is not None:
            chol = self._schur_chol
        elif na:
            K = S.copy()
            K[np.diag_indices(na)] += self._delta
            try:
                chol = sla.cho_factor(K, lower=True, check_finite=False)
            except (sla.LinAlgError, ValueError):
                return None
        else:
            chol = None
        Ga = self.G[active]
        ha = view.h[active]
        u = self._base_solve(np.concatenate([-view.q, view.b]))
        if na:
            za = sla.cho_solve(chol, Ga @ u[:m] - ha, check_finite=False)
            u = u - W @ za
        else:
            za = np.zeros(0)
        x, y_eq = u[:m], u[m:]
        for _ in range(3):  # refinement against the unregularized system
            r1 = -view.q - self.P @ x - Ga.T @ za
            if me:
                r1 = r1 - self.A.T @ y_eq
                r2 = view.b - self.A @ x
            else:
                r2 = np.zeros(0)
            r3 = ha - Ga @ x
            c = self._base_solve(np.concatenate([r1, r2]))
            if na:
                cz = sla.cho_solve(chol, Ga @ c[:m] - r3, check_finite=False)
                c = c - W @ cz
                za = za + cz
            x = x + c[:m]
            y_eq = y_eq + c[m:]
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y_eq))
                and np.all(np.isfinite(za))):
            return None
        return x, y_eq, za, chol


class _ProblemView:
    """Lightweight problem-shaped bundle used for residual checks."""

    def __init__(self, P, q, A, b, G, h):
        self.P, self.q, self.A, self.b, self.G, self.h = P, q, A, b, G, h
        self.m = P.shape[0]
        self.me = A.shape[0]
        self.mi = G.shape[0]


def solve_qp(prob, tol=1e-8, max_iter=20000, *, x0=None, y0=None, z0=None,
             verbose=False):
    """Solve a QpProblem from scratch.

    Deterministic given identical inputs.  Returns a QpSolution whose status
    is Optimal only if every KKT residual is at most ``tol``; Infeasible comes
    with a certificate-level diagnostic message; MaxIter returns the best
    iterate seen together with its residuals.
    """
    if not isinstance(prob, QpProblem):
        raise QpError("solve_qp expects a QpProblem")
    if tol <= 0:
        raise QpError("tol must be positive")
    ws = QpWorkspace(prob.P, prob.A if prob.me else None, prob.G if prob.mi else None)
    return ws.solve(prob.q, prob.b if prob.me else None, prob.h if prob.mi else None,
                    tol=tol, max_iter=max_iter, x0=x0, y0=y0, z0=z0, verbose=verbose)
