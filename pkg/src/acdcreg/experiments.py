"""Desk-scale simulation harness for the screening pipeline.

Covers the standard study designs: quadratic signals over Gaussian
covariates, exact-support-recovery curves over a sample-size grid,
penalty paths with warm starts, and repeated k-fold cross-validation
with shape-aware refits.

Randomness is keyed, not sequential.  Every unit of work (a trial, a
repeat) derives its own counter-based Philox stream from the master seed
plus its integer coordinates, so results never depend on evaluation
order and stay reproducible across machines.
"""

from dataclasses import dataclass, replace

import numpy as np

from .data import Dataset
from .screening import (
    AcSolver,
    ZERO_COMPONENT_TOL,
    default_lambda,
)
from .univariate import CONCAVE

__all__ = [
    "DESIGN_AR",
    "DESIGN_IDENTITY",
    "CvResult",
    "PathResult",
    "RecoveryRow",
    "RecoveryTable",
    "SimConfig",
    "coupling_matrix",
    "cross_validate",
    "design_covariance",
    "recovery_curve",
    "regularization_path",
    "simulate",
]

DESIGN_IDENTITY = "identity"
DESIGN_AR = "ar"


def _stream(seed, *words):
    """Philox generator keyed by the master seed and work coordinates."""
    ss = np.random.SeedSequence((int(seed),) + tuple(int(w) for w in words))
    return np.random.Generator(np.random.Philox(ss))


# ---- configuration ---------------------------------------------------------


@dataclass(frozen=True)
class SimConfig:
    """One simulated-regression scenario.

    The response is the quadratic form of the relevant covariate block,
    x_S' Q x_S, plus centered Gaussian noise.  Covariates are jointly
    Gaussian: independent columns, or an autoregressive covariance with
    entry ``ar_coeff ** |i - j|``.
    """

    n: int
    p: int
    relevant: tuple
    Q: np.ndarray
    design: str = DESIGN_IDENTITY
    ar_coeff: float = 0.0
    noise_sd: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("n must be at least 2")
        if self.p < 1:
            raise ValueError("p must be positive")
        relevant = tuple(sorted(set(int(k) for k in self.relevant)))
        if not relevant:
            raise ValueError("relevant set must not be empty")
        if relevant[0] < 0 or relevant[-1] >= self.p:
            raise ValueError("relevant coordinates out of range")
        object.__setattr__(self, "relevant", relevant)
        Q = np.ascontiguousarray(np.asarray(self.Q, dtype=float))
        if Q.shape != (len(relevant), len(relevant)):
            raise ValueError("Q must be square with one row per relevant "
                             "coordinate")
        if not np.allclose(Q, Q.T, atol=1e-10):
            raise ValueError("Q must be symmetric")
        if np.linalg.eigvalsh(Q).min() <= 0:
            raise ValueError("Q must be positive definite")
        Q.flags.writeable = False
        object.__setattr__(self, "Q", Q)
        if self.design not in (DESIGN_IDENTITY, DESIGN_AR):
            raise ValueError(f"unknown design {self.design!r}")
        if not 0.0 <= self.ar_coeff < 1.0:
            raise ValueError("ar_coeff must lie in [0, 1)")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be nonnegative")

    @property
    def s(self):
        return len(self.relevant)


def design_covariance(cfg):
    """Covariance matrix of the covariate draw implied by the config."""
    if cfg.design == DESIGN_IDENTITY or cfg.ar_coeff == 0.0:
        return np.eye(cfg.p)
    idx = np.arange(cfg.p)
    return cfg.ar_coeff ** np.abs(idx[:, None] - idx[None, :])


def coupling_matrix(s, prob, rng=None, floor=0.05):
    """Random signal matrix: unit diagonal, half-strength couplings.

    Each off-diagonal pair is set to 1/2 independently with probability
    ``prob``, the result symmetrized, and any eigenvalue below ``floor``
    raised to it so the matrix is always usable as a SimConfig Q.
    """
    if not 0.0 <= prob <= 1.0:
        raise ValueError("prob must lie in [0, 1]")
    rng = np.random.default_rng(rng)
    Q = np.eye(s)
    for i in range(s):
        for j in range(i + 1, s):
            if rng.random() < prob:
                Q[i, j] = Q[j, i] = 0.5
    vals, vecs = np.linalg.eigh(Q)
    if vals.min() < floor:
        Q = (vecs * np.maximum(vals, floor)) @ vecs.T
        Q = 0.5 * (Q + Q.T)
    return Q


# ---- data generation -------------------------------------------------------


def simulate(cfg):
    """Draw one Dataset for the scenario; deterministic given the seed."""
    rng = _stream(cfg.seed)
    Z = rng.standard_normal((cfg.n, cfg.p))
    if cfg.design == DESIGN_AR and cfg.ar_coeff > 0.0:
        L = np.linalg.cholesky(design_covariance(cfg))
        X = Z @ L.T
    else:
        X = Z
    xs = X[:, cfg.relevant]
    y = np.einsum("ij,jk,ik->i", xs, cfg.Q, xs)
    if cfg.noise_sd > 0:
        y = y + cfg.noise_sd * rng.standard_normal(cfg.n)
    return Dataset(X, y)


def _trial_seed(seed, n, trial):
    # stable child seed for one (sample size, trial) cell
    ss = np.random.SeedSequence((int(seed), int(n), int(trial)))
    return int(ss.generate_state(1)[0])


# ---- support recovery over a sample-size grid ------------------------------


@dataclass(frozen=True)
class RecoveryRow:
    """Exact-recovery frequency for one sample size."""

    n: int
    p: int
    trials: int
    rate: float


@dataclass(frozen=True)
class RecoveryTable:
    """Recovery rows in the order the sample-size grid was given."""

    rows: tuple

    def __post_init__(self):
        object.__setattr__(self, "rows", tuple(self.rows))

    @property
    def rates(self):
        return np.array([row.rate for row in self.rows])


def recovery_curve(base, n_grid, trials, threshold=ZERO_COMPONENT_TOL):
    """Exact-support-recovery frequency at each sample size.

    Every (sample size, trial) cell simulates its own dataset from a
    child seed, screens it at the size-matched default penalty, and
    counts a success only when the selected set equals the configured
    relevant set exactly.

    Parameters
    ----------
    base : SimConfig
        Scenario template; its ``n`` is replaced by each grid value.
    n_grid : sequence of int
        Sample sizes, reported in the given order.
    trials : int
        Independent repetitions per sample size.

    Returns
    -------
    RecoveryTable
    """
    if trials < 1:
        raise ValueError("trials must be positive")
    rows = []
    for n in n_grid:
        n = int(n)
        hits = 0
        for t in range(trials):
            cfg = replace(base, n=n, seed=_trial_seed(base.seed, n, t))
            ds = simulate(cfg)
            report = AcSolver(ds).screen(
                lam=default_lambda(n, base.p), threshold=threshold)
            if report.selected == base.relevant:
                hits += 1
        rows.append(RecoveryRow(n=n, p=base.p, trials=trials,
                                rate=hits / trials))
    return RecoveryTable(tuple(rows))


# ---- penalty path ----------------------------------------------------------


@dataclass(frozen=True)
class PathResult:
    """Selection along an increasing penalty grid.

    ``norm_fractions`` rescale the total component sup-norm at each
    penalty by its maximum along the path, giving the usual shrinking
    x-axis for path plots.  ``size_violations`` lists grid indices where
    the selected-set size grew as the penalty increased; the penalty
    does not strictly guarantee monotonicity, so these are reported
    rather than hidden.
    """

    lambdas: np.ndarray
    ac_norms: np.ndarray
    selected: tuple
    norm_fractions: np.ndarray
    size_violations: tuple = ()

    def __post_init__(self):
        for name in ("lambdas", "ac_norms", "norm_fractions"):
            arr = np.ascontiguousarray(np.asarray(getattr(self, name),
                                                  dtype=float))
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "selected",
                          tuple(tuple(s) for s in self.selected))
        object.__setattr__(self, "size_violations",
                          tuple(self.size_violations))


def regularization_path(ds, lambda_grid, threshold=ZERO_COMPONENT_TOL,
                        tol=None, max_cycles=None, solver=None):
    """Fit the two-stage screen along a penalty grid with warm starts.

    The grid must be strictly increasing; internally the fits run from
    the largest penalty down, each started from the previous solution,
    and the table is reported in grid order.
    """
    grid = np.asarray(lambda_grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0:
        raise ValueError("lambda grid must be a nonempty 1-d sequence")
    if np.any(grid < 0):
        raise ValueError("lambda grid must be nonnegative")
    if grid.size > 1 and np.any(np.diff(grid) <= 0):
        raise ValueError("lambda grid must be strictly increasing")
    solver = AcSolver(ds) if solver is None else solver
    fit_args = {}
    if tol is not None:
        fit_args["tol"] = tol
    if max_cycles is not None:
        fit_args["max_cycles"] = max_cycles
    ac_norms = np.zeros((grid.size, ds.p))
    selected = [None] * grid.size
    model = None
    for i in range(grid.size - 1, -1, -1):
        model = solver.fit(grid[i], init=model, **fit_args)
        concave = solver.fit_concave_residual(model, grid[i],
                                              zero_tol=threshold)
        norms = np.array([c.sup_norm for c in model.components])
        dc_norms = {k: f.sup_norm for k, f in concave.items()}
        ac_norms[i] = norms
        selected[i] = tuple(
            k for k in range(ds.p)
            if norms[k] > threshold or dc_norms.get(k, 0.0) > threshold)
    totals = ac_norms.sum(axis=1)
    top = totals.max()
    fractions = totals / top if top > 0 else np.zeros_like(totals)
    sizes = [len(s) for s in selected]
    violations = tuple(i for i in range(1, grid.size)
                       if sizes[i] > sizes[i - 1])
    return PathResult(lambdas=grid, ac_norms=ac_norms,
                      selected=tuple(selected), norm_fractions=fractions,
                      size_violations=violations)


# ---- cross-validation ------------------------------------------------------


@dataclass(frozen=True)
class CvResult:
    """Held-out squared error along the penalty grid."""

    lambdas: np.ndarray
    mse_mean: np.ndarray
    mse_sd: np.ndarray
    evaluations: int

    def __post_init__(self):
        for name in ("lambdas", "mse_mean", "mse_sd"):
            arr = np.ascontiguousarray(np.asarray(getattr(self, name),
                                                  dtype=float))
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def best_lambda(self):
        return float(self.lambdas[int(np.argmin(self.mse_mean))])


def _row_subset(ds, rows):
    return Dataset(ds.X[rows], ds.y[rows], ds.names)


def cross_validate(ds, folds, lambda_grid, repeats=1, seed=0,
                   threshold=ZERO_COMPONENT_TOL):
    """Repeated k-fold estimate of held-out error per penalty.

    Each fold screens the training rows at every grid penalty (warm
    starts down the grid), refits the selected coordinates without any
    penalty (convex where the first stage kept them, concave where the
    residual stage rescued them), and records the mean squared error of
    the refit predictions on the held-out rows.  An empty selection
    falls back to the constant training mean.

    Fold assignment is a seeded permutation split into near-equal
    blocks, so every row is held out exactly once per repeat.
    """
    if not 2 <= folds <= ds.n:
        raise ValueError("folds must lie between 2 and n")
    if repeats < 1:
        raise ValueError("repeats must be positive")
    grid = np.asarray(lambda_grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0:
        raise ValueError("lambda grid must be a nonempty 1-d sequence")
    if np.any(grid < 0):
        raise ValueError("lambda grid must be nonnegative")
    order = np.argsort(-grid)  # fit large-to-small for warm starts
    scores = np.zeros((grid.size, repeats * folds))
    col = 0
    for rep in range(repeats):
        perm = _stream(seed, rep).permutation(ds.n)
        blocks = np.array_split(perm, folds)
        for block in blocks:
            test = np.sort(block)
            train = np.sort(np.setdiff1d(perm, block, assume_unique=True))
            solver = AcSolver(_row_subset(ds, train))
            model = None
            for i in order:
                lam = float(grid[i])
                model = solver.fit(lam, init=model)
                concave = solver.fit_concave_residual(model, lam,
                                                      zero_tol=threshold)
                shapes = {}
                picked = []
                for k, comp in enumerate(model.components):
                    if comp.sup_norm > threshold:
                        picked.append(k)
                    elif concave.get(k) is not None \
                            and concave[k].sup_norm > threshold:
                        picked.append(k)
                        shapes[k] = CONCAVE
                refit = solver.fit(0.0, coords=picked, shapes=shapes)
                pred = refit.predict(ds.X[test])
                scores[i, col] = float(np.mean((ds.y[test] - pred) ** 2))
            col += 1
    sd = scores.std(axis=1, ddof=1) if scores.shape[1] > 1 \
        else np.zeros(grid.size)
    return CvResult(lambdas=grid, mse_mean=scores.mean(axis=1),
                    mse_sd=sd, evaluations=repeats * folds)
