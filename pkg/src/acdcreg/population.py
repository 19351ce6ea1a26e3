"""Population-level additive projections on discretized densities.

Everything here works with functions and densities tabulated on tensor
grids (dimension at most three).  Expectations are trapezoid quadrature,
conditionals come from renormalized density slices, and the additive
projection is computed by backfitting conditional means to a fixed
point.  A closed-form companion covers the bivariate Gaussian quadratic
case, and a small catalog of named function/density pairs reproduces the
standard situations where the additive projection drops a variable that
matters.
"""

from dataclasses import dataclass

import numpy as np

from .qp import QpWorkspace

__all__ = [
    "GridDensity",
    "GridFunction",
    "ProjectionResult",
    "additive_projection_grid",
    "decoupled_concave_projection_grid",
    "gaussian_quadratic_projection",
    "canonical_example",
    "CANONICAL_EXAMPLES",
]

MAX_GRID_DIM = 3


def _axis_tuple(axes):
    out = []
    for ax in axes:
        ax = np.ascontiguousarray(np.asarray(ax, dtype=float))
        if ax.ndim != 1 or ax.shape[0] < 2:
            raise ValueError("each axis needs at least two points")
        if not np.all(np.isfinite(ax)):
            raise ValueError("axis contains non-finite entries")
        if not np.all(np.diff(ax) > 0):
            raise ValueError("axis points must be strictly increasing")
        ax.flags.writeable = False
        out.append(ax)
    if not 1 <= len(out) <= MAX_GRID_DIM:
        raise ValueError(f"dimension must be between 1 and {MAX_GRID_DIM}")
    return tuple(out)


def _trapezoid_weights(ax):
    # per-point quadrature weight: half-gaps on both sides
    gaps = np.diff(ax)
    w = np.zeros(ax.shape[0])
    w[:-1] += 0.5 * gaps
    w[1:] += 0.5 * gaps
    return w


# ---- grid containers -------------------------------------------------------


@dataclass(frozen=True)
class GridDensity:
    """Probability density tabulated on a tensor grid.

    ``axes`` hold the per-dimension grid points, ``weights`` the density
    values at every grid node.  Total trapezoid mass must be 1 within
    1e-8.  ``cell_masses`` turns the values into per-node probabilities
    used by every expectation in this module.
    """

    axes: tuple
    weights: np.ndarray

    def __post_init__(self):
        axes = _axis_tuple(self.axes)
        object.__setattr__(self, "axes", axes)
        w = np.ascontiguousarray(np.asarray(self.weights, dtype=float))
        if w.shape != tuple(ax.shape[0] for ax in axes):
            raise ValueError("weights shape does not match the axes")
        if not np.all(np.isfinite(w)):
            raise ValueError("weights contain non-finite entries")
        if np.any(w < 0):
            raise ValueError("density values must be nonnegative")
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)
        if abs(self.mass() - 1.0) > 1e-8:
            raise ValueError(f"total mass {self.mass():.10f} is not 1")

    @property
    def dim(self):
        return len(self.axes)

    def quadrature(self):
        """Per-axis trapezoid weight vectors."""
        return tuple(_trapezoid_weights(ax) for ax in self.axes)

    def cell_masses(self):
        """Probability attached to every grid node (sums to the mass)."""
        masses = self.weights
        for k, q in enumerate(self.quadrature()):
            shape = [1] * self.dim
            shape[k] = -1
            masses = masses * q.reshape(shape)
        return masses

    def mass(self):
        return float(self.cell_masses().sum())

    def marginal(self, k):
        """Probability masses of coordinate k (length of axis k)."""
        other = tuple(j for j in range(self.dim) if j != k)
        return self.cell_masses().sum(axis=other)


@dataclass(frozen=True)
class GridFunction:
    """Real function tabulated on the same kind of tensor grid."""

    axes: tuple
    values: np.ndarray

    def __post_init__(self):
        axes = _axis_tuple(self.axes)
        object.__setattr__(self, "axes", axes)
        v = np.ascontiguousarray(np.asarray(self.values, dtype=float))
        if v.shape != tuple(ax.shape[0] for ax in axes):
            raise ValueError("values shape does not match the axes")
        if not np.all(np.isfinite(v)):
            raise ValueError("values contain non-finite entries")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def dim(self):
        return len(self.axes)


@dataclass(frozen=True)
class ProjectionResult:
    """Backfitting output: one centered component per coordinate.

    ``residual_norm`` is the stationarity defect: the largest sup-norm,
    over coordinates, of the violation of the fixed-point identity
    "component k equals the conditional mean of the partial residual
    minus the overall mean".
    """

    components: tuple
    mu_star: float
    iterations: int
    residual_norm: float
    converged: bool = True

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))


# ---- additive projection by backfitting ------------------------------------


def _check_pair(f, dens):
    if f.dim != dens.dim:
        raise ValueError("function and density dimensions differ")
    for af, ad in zip(f.axes, dens.axes):
        if af.shape != ad.shape or not np.array_equal(af, ad):
            raise ValueError("function and density axes differ")


def _conditional_mean(values, masses, k):
    """E[values | x_k] for every grid value of x_k."""
    other = tuple(j for j in range(masses.ndim) if j != k)
    num = (masses * values).sum(axis=other)
    den = masses.sum(axis=other)
    if np.any(den <= 0):
        raise ValueError(f"zero-mass conditional slice along coordinate {k}")
    return num / den


def _broadcast_axis(vec, k, dim):
    shape = [1] * dim
    shape[k] = -1
    return vec.reshape(shape)


def additive_projection_grid(f, dens, tol=1e-10, max_sweeps=500):
    """Best additive approximation of f under dens, by backfitting.

    Components are updated in coordinate order; each update replaces
    component k with the conditional mean, given x_k, of the function
    minus the other components, recentered to mean zero.  Iteration
    stops when no component moved more than ``tol`` in sup norm, or
    after ``max_sweeps`` sweeps (reported through ``converged``; the
    defect is computed either way).

    Parameters
    ----------
    f : GridFunction
    dens : GridDensity
        Same axes as f; strictly positive marginals required.
    tol : float
        Sup-norm sweep-change threshold.
    max_sweeps : int
        Hard cap on full sweeps.

    Returns
    -------
    ProjectionResult
    """
    _check_pair(f, dens)
    masses = dens.cell_masses()
    d = f.dim
    marginals = [dens.marginal(k) for k in range(d)]
    for k, marg in enumerate(marginals):
        if np.any(marg <= 0):
            raise ValueError(f"zero-mass conditional slice along coordinate {k}")
    mu = float((masses * f.values).sum())
    comps = [np.zeros(ax.shape[0]) for ax in f.axes]
    sweeps = 0
    converged = False
    for _ in range(max_sweeps):
        sweeps += 1
        biggest = 0.0
        for k in range(d):
            partial = f.values
            for j in range(d):
                if j != k:
                    partial = partial - _broadcast_axis(comps[j], j, d)
            new = _conditional_mean(partial, masses, k) - mu
            new = new - float(marginals[k] @ new)  # keep the component centered
            biggest = max(biggest, float(np.abs(new - comps[k]).max()))
            comps[k] = new
        if biggest <= tol:
            converged = True
            break
    # fixed-point defect, recomputed from scratch
    defect = 0.0
    for k in range(d):
        partial = f.values
        for j in range(d):
            if j != k:
                partial = partial - _broadcast_axis(comps[j], j, d)
        target = _conditional_mean(partial, masses, k) - mu
        defect = max(defect, float(np.abs(comps[k] - target).max()))
    components = tuple(GridFunction((f.axes[k],), comps[k]) for k in range(d))
    return ProjectionResult(components=components, mu_star=mu,
                            iterations=sweeps, residual_norm=defect,
                            converged=converged)


# ---- decoupled concave projection ------------------------------------------


def decoupled_concave_projection_grid(f, dens, components, k,
                                      qp_tol=1e-9, qp_max_iter=20000):
    """Concave one-coordinate follow-up fit of the projection residual.

    Forms the conditional-mean residual for coordinate k (the function
    minus every other component, averaged given x_k, minus the overall
    mean) and projects it onto the cone of concave mean-zero functions
    on coordinate k's axis, in the norm weighted by that coordinate's
    marginal.

    Returns the projected component as a 1-d GridFunction.
    """
    _check_pair(f, dens)
    if not 0 <= k < f.dim:
        raise IndexError(f"coordinate {k} out of range for dim={f.dim}")
    masses = dens.cell_masses()
    mu = components.mu_star
    partial = f.values
    for j in range(f.dim):
        if j != k:
            partial = partial - _broadcast_axis(components.components[j].values,
                                                j, f.dim)
    target = _conditional_mean(partial, masses, k) - mu
    marg = dens.marginal(k)
    marg = marg / marg.sum()
    ax = f.axes[k]
    n = ax.shape[0]
    # weighted least squares onto {concave, mean-zero}:
    #   min (1/2) g' diag(w) g - (w*h)' g
    #   s.t. divided second differences <= 0, w' g = 0
    # weights scaled to mean 1 so thin-tailed marginals stay well posed
    w = marg * n
    P = np.diag(w)
    q = -(w * target)
    gaps = np.diff(ax)
    rows = np.zeros((n - 2, n))
    for i in range(n - 2):
        # slope on the right minus slope on the left must not increase
        rows[i, i] = 1.0 / gaps[i]
        rows[i, i + 1] = -(1.0 / gaps[i] + 1.0 / gaps[i + 1])
        rows[i, i + 2] = 1.0 / gaps[i + 1]
    ws = QpWorkspace(P, marg[None, :], rows)
    sol = ws.solve(q, np.zeros(1), np.zeros(n - 2),
                   tol=qp_tol, max_iter=qp_max_iter)
    if sol.status != "optimal":
        raise RuntimeError(
            f"concave projection QP ended with status {sol.status}")
    g = np.array(sol.x)
    g[np.abs(g) < 1e-12] = 0.0
    return GridFunction((ax,), g)


# ---- bivariate Gaussian closed form ----------------------------------------


def gaussian_quadratic_projection(H, alpha):
    """Quadratic coefficients of the additive projection, closed form.

    For f(x) = x' H x with a bivariate standard-margin Gaussian of
    correlation alpha, the additive components are a_k (x_k^2 - 1) with

        a_1 = (T_1 - T_2 a^2) / (1 - a^4)
        a_2 = (T_2 - T_1 a^2) / (1 - a^4)
        T_1 = H11 + 2 H12 a + H22 a^2
        T_2 = H22 + 2 H12 a + H11 a^2

    Parameters
    ----------
    H : (2, 2) array_like
        Symmetric positive definite quadratic coefficient matrix.
    alpha : float
        Correlation, strictly between -1 and 1.

    Returns
    -------
    (a1, a2) : pair of floats
    """
    H = np.asarray(H, dtype=float)
    if H.shape != (2, 2):
        raise ValueError("H must be 2x2")
    if not np.allclose(H, H.T, atol=1e-12):
        raise ValueError("H must be symmetric")
    if np.any(np.linalg.eigvalsh(H) <= 0):
        raise ValueError("H must be positive definite")
    alpha = float(alpha)
    if not -1.0 < alpha < 1.0:
        raise ValueError("alpha must lie strictly inside (-1, 1)")
    t1 = H[0, 0] + 2.0 * H[0, 1] * alpha + H[1, 1] * alpha ** 2
    t2 = H[1, 1] + 2.0 * H[0, 1] * alpha + H[0, 0] * alpha ** 2
    denom = 1.0 - alpha ** 4
    return (t1 - t2 * alpha ** 2) / denom, (t2 - t1 * alpha ** 2) / denom


# ---- canonical function/density pairs --------------------------------------


def _uniform_density(axes):
    vol = 1.0
    for ax in axes:
        vol *= ax[-1] - ax[0]
    shape = tuple(ax.shape[0] for ax in axes)
    return GridDensity(axes, np.full(shape, 1.0 / vol))


def _egg_carton(resolution):
    ax = np.linspace(0.0, 1.0, resolution)
    f = np.sin(2.0 * np.pi * ax)[:, None] * np.sin(2.0 * np.pi * ax)[None, :]
    return GridFunction((ax, ax), f), _uniform_density((ax, ax))


def _tilting_slope(resolution):
    ax1 = np.linspace(-1.0, 1.0, resolution)
    ax2 = np.linspace(0.0, 1.0, resolution)
    f = ax1[:, None] * ax2[None, :]
    return GridFunction((ax1, ax2), f), _uniform_density((ax1, ax2))


def _quadratic_values(ax1, ax2, H):
    x1 = ax1[:, None]
    x2 = ax2[None, :]
    return H[0, 0] * x1 ** 2 + 2.0 * H[0, 1] * x1 * x2 + H[1, 1] * x2 ** 2


def _gaussian_weights(ax1, ax2, alpha, box=None):
    det = 1.0 - alpha ** 2
    x1 = ax1[:, None]
    x2 = ax2[None, :]
    quad = (x1 ** 2 - 2.0 * alpha * x1 * x2 + x2 ** 2) / det
    w = np.exp(-0.5 * quad) / (2.0 * np.pi * np.sqrt(det))
    if box is not None:
        inside = (np.abs(x1) <= box) & (np.abs(x2) <= box)
        w = np.where(inside, w, 0.0)
    return w


def _normalized_density(axes, values):
    q1 = _trapezoid_weights(axes[0])
    q2 = _trapezoid_weights(axes[1])
    mass = float((values * q1[:, None] * q2[None, :]).sum())
    return GridDensity(axes, values / mass)


def _gaussian_quadratic(resolution, H, alpha, b):
    ax = np.linspace(-b, b, resolution)
    f = _quadratic_values(ax, ax, H)
    w = _gaussian_weights(ax, ax, alpha)
    return GridFunction((ax, ax), f), _normalized_density((ax, ax), w)


def _boundary_flat_mixture(resolution, H, alpha, b, eps, weight):
    half = b + eps
    ax = np.linspace(-half, half, resolution)
    f = _quadratic_values(ax, ax, H)
    core = _gaussian_weights(ax, ax, alpha, box=b)
    q1 = _trapezoid_weights(ax)
    core_mass = float((core * q1[:, None] * q1[None, :]).sum())
    core = core / core_mass
    uniform = 1.0 / (2.0 * half) ** 2
    dens_values = weight * uniform + (1.0 - weight) * core
    return GridFunction((ax, ax), f), _normalized_density((ax, ax), dens_values)


DEFAULT_H = np.array([[1.6, 2.0], [2.0, 5.0]])

CANONICAL_EXAMPLES = (
    "egg-carton",
    "tilting-slope",
    "gaussian-quadratic",
    "boundary-flat-mixture",
)


def canonical_example(name, resolution=None, H=None, alpha=-0.5, b=5.0,
                      eps=0.3, weight=1e-4):
    """Named function/density pairs used throughout the lab.

    ``egg-carton``
        sin(2 pi x1) sin(2 pi x2), uniform on the unit square; every
        conditional mean vanishes, so the additive projection is zero.
    ``tilting-slope``
        x1 x2 on [-1,1] x [0,1], uniform; the second component of the
        projection vanishes even though x2 matters.
    ``gaussian-quadratic``
        x' H x under a truncated correlated Gaussian on [-b, b]^2.
    ``boundary-flat-mixture``
        the same quadratic under a mixture of that truncated Gaussian
        with a slightly wider uniform, which keeps the density positive
        on the whole box.

    Returns
    -------
    (GridFunction, GridDensity)
    """
    H = DEFAULT_H if H is None else np.asarray(H, dtype=float)
    if name == "egg-carton":
        return _egg_carton(resolution or 101)
    if name == "tilting-slope":
        return _tilting_slope(resolution or 101)
    if name == "gaussian-quadratic":
        if not -1.0 < alpha < 1.0:
            raise ValueError("alpha must lie strictly inside (-1, 1)")
        return _gaussian_quadratic(resolution or 201, H, alpha, b)
    if name == "boundary-flat-mixture":
        if not -1.0 < alpha < 1.0:
            raise ValueError("alpha must lie strictly inside (-1, 1)")
        if eps <= 0 or not 0.0 < weight < 1.0:
            raise ValueError("need eps > 0 and mixture weight in (0, 1)")
        return _boundary_flat_mixture(resolution or 201, H, alpha, b, eps,
                                      weight)
    raise ValueError(f"unknown example {name!r}; "
                     f"choose one of {', '.join(CANONICAL_EXAMPLES)}")
