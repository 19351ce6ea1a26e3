"""Univariate shape-constrained penalized least squares.

Fits one convex (or concave) component to a residual vector by solving

    minimize (1/2n) ||r - f||^2 + lam * ||f||_inf
    subject to  f centered, piecewise linear between sorted sample values,
                with monotone slopes (nondecreasing for convex fits).

Two equivalent quadratic programs are available.  The "slopes" formulation
carries the fitted values and the slopes between consecutive sorted points as
variables, tied by interpolation equalities.  The "curvature" formulation
carries the slope increments as variables and reaches the fitted values
through the centered hinge design matrix; the shape constraint is then just a
sign constraint on the increments.  Both are solved through the qp module and
produce identical fits up to solver tolerance.

``CoordinateSolver`` pins the QP structure for one covariate column and reuses
its factorizations across repeated calls with fresh residuals and penalty
levels, which is the access pattern of the block coordinate descent driver.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.optimize as sopt
import scipy.sparse as sp

from .data import Permutation, hinge_matrix_sorted
from .qp import OPTIMAL, QpWorkspace

__all__ = [
    "CONVEX",
    "CONCAVE",
    "FORM_SLOPES",
    "FORM_CURVATURE",
    "UnivariateFit",
    "FitOptions",
    "FitError",
    "CoordinateSolver",
    "fit_convex_univariate",
    "fit_concave_univariate",
    "fit_secondderiv",
    "convert_fit",
    "evaluate_component",
    "objective_value",
]

CONVEX = "convex"
CONCAVE = "concave"
FORM_SLOPES = "slopes"
FORM_CURVATURE = "curvature"

ZERO_COMPONENT_TOL = 1e-6  # a component counts as zero below this sup-norm


class FitError(RuntimeError):
    """A shape-constrained fit failed to reach a certified optimum."""


@dataclass(frozen=True)
class UnivariateFit:
    """One fitted shape-constrained component.

    Parameters
    ----------
    coordinate : int
        Column index this component belongs to.
    perm : Permutation
        Stable ascending sort order of the covariate column.
    x_sorted : ndarray of shape (n,)
        Covariate values in sorted order.
    values : ndarray of shape (n,)
        Fitted values in the original sample order; they sum to zero.
    slopes : ndarray of shape (n-1,)
        Slope between consecutive sorted samples; monotone per ``shape``.
    curvature : ndarray of shape (n-1,)
        Slope increments: first entry equals the first slope, later entries
        are consecutive slope differences, sign-constrained per ``shape``.
    shape : str
        ``"convex"`` or ``"concave"``.
    sup_norm : float
        Largest absolute fitted value.
    """

    coordinate: int
    perm: Permutation
    x_sorted: np.ndarray
    values: np.ndarray
    slopes: np.ndarray
    curvature: np.ndarray
    shape: str
    sup_norm: float

    def __post_init__(self):
        if self.shape not in (CONVEX, CONCAVE):
            raise ValueError(f"unknown shape {self.shape!r}")
        for name in ("x_sorted", "values", "slopes", "curvature"):
            arr = np.ascontiguousarray(np.asarray(getattr(self, name), dtype=float))
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        n = self.values.shape[0]
        if self.x_sorted.shape[0] != n or self.perm.n != n:
            raise ValueError("field lengths inconsistent")
        if self.slopes.shape[0] != n - 1 or self.curvature.shape[0] != n - 1:
            raise ValueError("slopes and curvature must have length n-1")
        scale = max(1.0, float(self.sup_norm))
        if abs(float(self.values.sum())) > 1e-7 * n * scale:
            raise ValueError("fitted values are not centered")

    @property
    def n(self):
        return self.values.shape[0]

    @property
    def values_sorted(self):
        """Fitted values arranged in the sort order of the covariate."""
        return self.values[self.perm.order]

    def is_zero(self, threshold=ZERO_COMPONENT_TOL):
        return self.sup_norm <= threshold


@dataclass(frozen=True)
class FitOptions:
    """Penalty level, QP formulation choice, and solver tolerances."""

    lam: float = 0.0
    formulation: str = FORM_CURVATURE
    qp_tol: float = 1e-8
    qp_max_iter: int = 20000

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")
        if self.formulation not in (FORM_SLOPES, FORM_CURVATURE):
            raise ValueError(f"unknown formulation {self.formulation!r}")
        if self.qp_tol <= 0:
            raise ValueError("qp_tol must be positive")


# ---- the per-coordinate solver --------------------------------------------


class CoordinateSolver:
    """Reusable fitter for one covariate column.

    Sorting, the hinge design, and the QP constraint structure depend only on
    the column, so they are built once; ``fit`` accepts fresh residuals and
    penalty levels.  The previous solution warm-starts the next solve.
    """

    def __init__(self, x, coordinate=0, shape=CONVEX, formulation=FORM_CURVATURE,
                 qp_tol=1e-8, qp_max_iter=20000):
        x = np.asarray(x, dtype=float)
        if x.ndim != 1 or x.shape[0] < 2:
            raise ValueError("need a 1-d column with at least two samples")
        if not np.all(np.isfinite(x)):
            raise ValueError("covariate column contains non-finite entries")
        if shape not in (CONVEX, CONCAVE):
            raise ValueError(f"unknown shape {shape!r}")
        if formulation not in (FORM_SLOPES, FORM_CURVATURE):
            raise ValueError(f"unknown formulation {formulation!r}")
        self.coordinate = coordinate
        self.shape = shape
        self.formulation = formulation
        self.qp_tol = qp_tol
        self.qp_max_iter = qp_max_iter
        self.n = x.shape[0]
        self.perm = Permutation(np.argsort(x, kind="stable"), coordinate)
        self.xs = x[self.perm.order]
        self.gaps = np.diff(self.xs)
        self.degenerate = bool(self.xs[-1] == self.xs[0])
        self.design = None
        if not self.degenerate and formulation == FORM_CURVATURE:
            raw = hinge_matrix_sorted(self.xs)
            self.design = raw - raw.mean(axis=0)  # centered hinge, sorted rows
        # the penalized problem carries a sup-norm epigraph variable; the
        # unpenalized one is a plain cone projection without it (keeping the
        # costless variable would leave a degenerate face that defeats the
        # active-set polish), so each lives in its own lazily built workspace
        self._ws = {}
        self._last = {}
        self._lp = None  # zero-test LP structure, built on first use

    # -- structure builders

    def _build_curvature(self, with_sup):
        n = self.n
        nd = n - 1
        m = nd + 1 if with_sup else nd
        P = np.zeros((m, m))
        P[:nd, :nd] = (self.design.T @ self.design) / n
        sign = -1.0 if self.shape == CONVEX else 1.0
        sign_rows = np.zeros((max(n - 2, 0), m))
        for i in range(1, n - 1):  # first increment stays unconstrained
            sign_rows[i - 1, i] = sign
        if with_sup:
            top = np.hstack([self.design, -np.ones((n, 1))])
            bot = np.hstack([-self.design, -np.ones((n, 1))])
            G = np.vstack([sign_rows, top, bot])
        else:
            G = sign_rows
        return QpWorkspace(P, None, G), None, np.zeros(G.shape[0])

    def _build_slopes(self, with_sup):
        n = self.n
        m = 2 * n if with_sup else 2 * n - 1  # values, slopes[, epigraph]
        P = np.zeros((m, m))
        P[np.arange(n), np.arange(n)] = 1.0 / n
        A = np.zeros((n, m))
        for i in range(n - 1):  # interpolation along the sort order
            A[i, i] = -1.0
            A[i, i + 1] = 1.0
            A[i, n + i] = -self.gaps[i]
        A[n - 1, :n] = 1.0  # centering
        sign = 1.0 if self.shape == CONVEX else -1.0
        mono = np.zeros((max(n - 2, 0), m))
        for i in range(n - 2):  # monotone slopes
            mono[i, n + i] = sign
            mono[i, n + i + 1] = -sign
        if with_sup:
            top = np.zeros((n, m))
            top[np.arange(n), np.arange(n)] = 1.0
            top[:, m - 1] = -1.0
            bot = np.zeros((n, m))
            bot[np.arange(n), np.arange(n)] = -1.0
            bot[:, m - 1] = -1.0
            G = np.vstack([mono, top, bot])
        else:
            G = mono
        return QpWorkspace(P, A, G), np.zeros(n), np.zeros(G.shape[0])

    def _workspace(self, with_sup):
        entry = self._ws.get(with_sup)
        if entry is None:
            if self.formulation == FORM_CURVATURE:
                entry = self._build_curvature(with_sup)
            else:
                entry = self._build_slopes(with_sup)
            self._ws[with_sup] = entry
        return entry

    def _zero_lp(self):
        """Structure of the zero-test program over distinct column values."""
        if self._lp is None:
            u, inv, counts = np.unique(self.xs, return_inverse=True,
                                       return_counts=True)
            m = u.shape[0]
            if m < 3:
                rows = None
            else:
                gaps = np.diff(u)
                lead = 1.0 / gaps[:-1]
                trail = 1.0 / gaps[1:]
                # convex test directions: divided second differences >= 0,
                # flipped to the <= 0 orientation the LP solver expects
                rows = -sp.diags_array(
                    [lead, -(lead + trail), trail], offsets=[0, 1, 2],
                    shape=(m - 2, m), format="csr")
            self._lp = (inv, counts.astype(float), rows)
        return self._lp

    def zero_penalty(self, r):
        """Smallest penalty level at which the fit is identically zero.

        First-order optimality of the zero component: the penalty has to
        cover max <r, v>/n over centered unit-sup-norm sequences v inside
        the shape cone, a small linear program over the distinct values of
        the column.  ``fit`` consults this before building any quadratic
        program, so components the penalty kills come back as exact zeros.
        """
        r = np.asarray(r, dtype=float)
        if r.shape != (self.n,):
            raise ValueError("residual length does not match the column")
        if not np.all(np.isfinite(r)):
            raise ValueError("residual contains non-finite entries")
        return self._zero_penalty_sorted(r[self.perm.order])

    def _zero_penalty_sorted(self, rs):
        if self.degenerate:
            return 0.0
        inv, counts, rows = self._zero_lp()
        rho = np.bincount(inv, weights=rs)
        if self.shape == CONCAVE:
            rho = -rho  # concave directions are negated convex ones
        b_ub = None if rows is None else np.zeros(rows.shape[0])
        res = sopt.linprog(-rho / self.n, A_ub=rows, b_ub=b_ub,
                           A_eq=counts[None, :], b_eq=[0.0],
                           bounds=(-1.0, 1.0), method="highs")
        if not res.success:
            raise FitError(f"coordinate {self.coordinate}: zero-test LP "
                           f"failed ({res.message})")
        return max(0.0, -float(res.fun))

    # -- fitting

    def zero_fit(self):
        n = self.n
        return UnivariateFit(
            coordinate=self.coordinate,
            perm=self.perm,
            x_sorted=self.xs,
            values=np.zeros(n),
            slopes=np.zeros(n - 1),
            curvature=np.zeros(n - 1),
            shape=self.shape,
            sup_norm=0.0,
        )

    def fit(self, r, lam, warm=True):
        """Fit the component to residual vector r at penalty level lam."""
        r = np.asarray(r, dtype=float)
        if r.shape != (self.n,):
            raise ValueError("residual length does not match the column")
        if not np.all(np.isfinite(r)):
            raise ValueError("residual contains non-finite entries")
        if lam < 0:
            raise ValueError("lam must be nonnegative")
        if self.degenerate:
            # only the zero function is centered and piecewise linear here
            return self.zero_fit()
        n = self.n
        rs = r[self.perm.order]
        if np.all(rs == rs[0]):
            # projecting a constant: centering forces the zero function
            return self.zero_fit()
        with_sup = lam > 0.0
        # a penalty past the dual norm of the residual makes zero the exact
        # optimum; answering from the LP test sidesteps the fully degenerate
        # epigraph QP that sits there
        if with_sup and lam >= self._zero_penalty_sorted(rs) * (1.0 - 1e-9):
            return self.zero_fit()
        ws, b, h = self._workspace(with_sup)
        if self.formulation == FORM_CURVATURE:
            q = -(self.design.T @ rs) / n
        else:
            q = np.concatenate([-rs / n, np.zeros(n - 1)])
        if with_sup:
            q = np.concatenate([q, [lam]])
        kwargs = {}
        last = self._last.get(with_sup)
        if warm and last is not None:
            kwargs = dict(x0=last[0], y0=last[1], z0=last[2])
        sol = ws.solve(q, b, h, tol=self.qp_tol,
                       max_iter=self.qp_max_iter, **kwargs)
        if sol.status != OPTIMAL:
            raise FitError(
                f"coordinate {self.coordinate}: QP ended with status "
                f"{sol.status} (max KKT residual {sol.kkt.max_residual():.3e})"
            )
        self._last[with_sup] = (sol.x, sol.y_eq, sol.z_ineq)
        if self.formulation == FORM_CURVATURE:
            curv = sol.x[: n - 1]
            fs = self.design @ curv
            slopes = np.cumsum(curv)
        else:
            fs = sol.x[:n]
            slopes = sol.x[n:2 * n - 1]
            curv = np.concatenate([slopes[:1], np.diff(slopes)])
        values = np.empty(n)
        values[self.perm.order] = fs
        return UnivariateFit(
            coordinate=self.coordinate,
            perm=self.perm,
            x_sorted=self.xs,
            values=values,
            slopes=slopes,
            curvature=curv,
            shape=self.shape,
            sup_norm=float(np.abs(values).max()),
        )


# ---- public one-shot entry points -----------------------------------------


def fit_convex_univariate(x, r, opts=None):
    """Penalized convex fit of r against x; see the module docstring."""
    opts = opts or FitOptions()
    solver = CoordinateSolver(x, shape=CONVEX, formulation=opts.formulation,
                              qp_tol=opts.qp_tol, qp_max_iter=opts.qp_max_iter)
    return solver.fit(r, opts.lam, warm=False)


def fit_concave_univariate(x, r, opts=None):
    """Penalized concave fit; the mirror image of the convex QP."""
    opts = opts or FitOptions()
    solver = CoordinateSolver(x, shape=CONCAVE, formulation=opts.formulation,
                              qp_tol=opts.qp_tol, qp_max_iter=opts.qp_max_iter)
    return solver.fit(r, opts.lam, warm=False)


def fit_secondderiv(x, r, opts=None, shape=CONVEX):
    """Fit through the curvature (slope-increment) formulation explicitly."""
    opts = opts or FitOptions()
    solver = CoordinateSolver(x, shape=shape, formulation=FORM_CURVATURE,
                              qp_tol=opts.qp_tol, qp_max_iter=opts.qp_max_iter)
    return solver.fit(r, opts.lam, warm=False)


def convert_fit(fit):
    """Recompute each representation from its counterpart.

    Slopes become prefix sums of the curvature, the curvature becomes first
    differences of the slopes, and the fitted values are rebuilt from the new
    slopes by interpolation from a centered anchor.  Applying the conversion
    twice reproduces the fit up to floating-point roundoff.
    """
    new_slopes = np.cumsum(fit.curvature)
    new_curv = np.concatenate([fit.slopes[:1], np.diff(fit.slopes)])
    gaps = np.diff(fit.x_sorted)
    steps = np.concatenate([[0.0], np.cumsum(new_slopes * gaps)])
    fs = steps - steps.mean()
    values = np.empty(fit.n)
    values[fit.perm.order] = fs
    return UnivariateFit(
        coordinate=fit.coordinate,
        perm=fit.perm,
        x_sorted=fit.x_sorted,
        values=values,
        slopes=new_slopes,
        curvature=new_curv,
        shape=fit.shape,
        sup_norm=float(np.abs(values).max()),
    )


def evaluate_component(fit, x_new):
    """Evaluate the fitted component at new points.

    The component is the pointwise max (convex) or min (concave) of the
    supporting hyperplanes anchored at the sorted training points; the last
    point reuses the final slope so every sample owns a hyperplane.  Outside
    the training range this extrapolates linearly.  Accepts a scalar or an
    array and returns the matching shape.
    """
    t = np.asarray(x_new, dtype=float)
    scalar = t.ndim == 0
    t2 = np.atleast_1d(t)
    slopes_ext = np.concatenate([fit.slopes, fit.slopes[-1:]])
    planes = fit.values_sorted[None, :] + slopes_ext[None, :] * (
        t2[:, None] - fit.x_sorted[None, :]
    )
    out = planes.max(axis=1) if fit.shape == CONVEX else planes.min(axis=1)
    return float(out[0]) if scalar else out


def objective_value(fit, r, lam):
    """Penalized objective (1/2n)||r - f||^2 + lam * ||f||_inf of a fit."""
    r = np.asarray(r, dtype=float)
    diff = r - fit.values
    return 0.5 * float(diff @ diff) / r.shape[0] + lam * fit.sup_norm
