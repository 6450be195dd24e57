"""Discrete exterior calculus on matrix-valued forms, mollification, norms.

Form storage: degree 0 -> (*res, n, n); degree 1 -> (*res, n, n, n) with the
form index LAST (``[row, col, j]``); degree 2 -> (*res, n, n, P) with
canonical pairs i < j in lexicographic order.

Sign conventions (fixed once, asserted by tests):
    d   on 1-forms:  (d w)_{(i,j)} = D_i w_j - D_j w_i
    delta           = -sum_j D_j (.)_j   (minus the divergence)
    Delta           = delta d + d delta  (collapses to -sum_j D_j^2 per
                      component: Delta vanishes on affine data and
                      Delta[(x1)^2 + (x2)^2] = -4 at n = 2)
"""

from dataclasses import dataclass
import json

import numpy as np

from . import _kernels
from .charts import Chart, GridField
from .errors import DegreeError, ResolutionError, ShapeError, SolverError, ConfigurationError

HOLDER_PAIR_FLOOR = 4  # pair-separation floor for Hölder quotients, in units of max(h)


def form_pairs(n):
    return [(i, j) for i in range(n) for j in range(i + 1, n)]


@dataclass
class MatrixForm:
    """Matrix-valued differential k-form sampled on a chart."""

    chart: Chart
    degree: int
    values: np.ndarray

    def __post_init__(self):
        n = self.chart.n
        want = {
            0: self.chart.res + (n, n),
            1: self.chart.res + (n, n, n),
            2: self.chart.res + (n, n, len(form_pairs(n))),
        }
        if self.degree not in want:
            raise DegreeError(f"unsupported degree {self.degree}")
        if self.values.shape != want[self.degree]:
            raise ShapeError(
                f"degree-{self.degree} form needs shape {want[self.degree]}, got {self.values.shape}"
            )

    def same_layout(self, other):
        if self.chart != other.chart:
            raise ShapeError("charts differ")
        return other


def connection_form(conn):
    """View connection samples G[mu, rho, nu] as the matrix 1-form w[mu, nu, rho]."""
    return MatrixForm(conn.chart, 1, np.ascontiguousarray(conn.values.swapaxes(-1, -2)))


def form_to_connection(w):
    from .charts import connection_field

    return connection_field(w.chart, np.ascontiguousarray(w.values.swapaxes(-1, -2)))


def full_antisymmetric(w):
    """Expand canonical 2-form storage to the full antisymmetric (..., i, j) array."""
    n = w.chart.n
    out = np.zeros(w.values.shape[:-1] + (n, n))
    for k, (i, j) in enumerate(form_pairs(n)):
        out[..., i, j] = w.values[..., k]
        out[..., j, i] = -w.values[..., k]
    return out


def exterior_derivative(w):
    """d: centered second-order differences inside, one-sided at the boundary."""
    chart, n = w.chart, w.chart.n
    if w.degree == 0:
        out = np.stack([chart.deriv(w.values, j) for j in range(n)], axis=-1)
        return MatrixForm(chart, 1, out)
    if w.degree == 1:
        pairs = form_pairs(n)
        out = np.empty(w.values.shape[:-1] + (len(pairs),))
        for k, (i, j) in enumerate(pairs):
            out[..., k] = chart.deriv(w.values[..., j], i) - chart.deriv(w.values[..., i], j)
        return MatrixForm(chart, 2, out)
    raise DegreeError("exterior derivative supports degrees 0 and 1 only")


def coderivative(w):
    """delta, the Euclidean codifferential: minus-divergence over the form index."""
    chart, n = w.chart, w.chart.n
    if w.degree == 1:
        out = np.zeros(w.values.shape[:-1])
        for j in range(n):
            out -= chart.deriv(w.values[..., j], j)
        return MatrixForm(chart, 0, out)
    if w.degree == 2:
        full = full_antisymmetric(w)
        out = np.zeros(w.values.shape[:-1] + (n,))
        for j in range(n):
            acc = np.zeros(w.values.shape[:-1])
            for i in range(n):
                acc -= chart.deriv(full[..., i, j], i)
            out[..., j] = acc
        return MatrixForm(chart, 1, out)
    raise DegreeError("coderivative supports degrees 1 and 2 only")


def laplacian(w):
    """Delta = delta d + d delta, literally composed from the two operators.

    With delta = -div this is the positive-semidefinite geometer's Laplacian:
    on 0-forms Delta f = -sum_j D_j D_j f, e.g. Delta[(x1)^2 + (x2)^2] = -4.
    """
    if w.degree == 0:
        return coderivative(exterior_derivative(w))
    if w.degree == 1:
        return MatrixForm(
            w.chart,
            1,
            coderivative(exterior_derivative(w)).values
            + exterior_derivative(coderivative(w)).values,
        )
    raise DegreeError("laplacian supports degrees 0 and 1 only")


def wedge(a, b):
    """(a ^ b)_{(i,j)} = a_i b_j - a_j b_i with matrix products."""
    if a.degree != 1 or b.degree != 1:
        raise DegreeError("wedge is defined for pairs of 1-forms")
    a.same_layout(b)
    pairs = form_pairs(a.chart.n)
    out = np.empty(a.values.shape[:-1] + (len(pairs),))
    for k, (i, j) in enumerate(pairs):
        out[..., k] = np.einsum(
            "...ms,...sn->...mn", a.values[..., i], b.values[..., j]
        ) - np.einsum("...ms,...sn->...mn", a.values[..., j], b.values[..., i])
    return MatrixForm(a.chart, 2, out)


def matrix_inner(a, b):
    """<a; b> = sum_j a_j b_j, contraction over the form index with matrix chain."""
    if a.degree != 1 or b.degree != 1:
        raise DegreeError("matrix inner product is defined for pairs of 1-forms")
    a.same_layout(b)
    out = np.einsum("...msj,...snj->...mn", a.values, b.values)
    return MatrixForm(a.chart, 0, out)


def matmul(A, w):
    """Left matrix multiplication of a form by a matrix 0-form (or raw array)."""
    Av = A.values if isinstance(A, MatrixForm) else A
    if w.degree == 0:
        return MatrixForm(w.chart, 0, np.einsum("...ms,...sn->...mn", Av, w.values))
    return MatrixForm(
        w.chart, w.degree, np.einsum("...ms,...snk->...mnk", Av, w.values)
    )


def form_divergence(w):
    """div->: divergence over the second form index of a 2-form.

    (div w)_rho = sum_tau D_tau w_{rho tau}; the remaining index stays a form
    index, so the output is a matrix 1-form.
    """
    if w.degree != 2:
        raise DegreeError("form divergence needs a degree-2 input")
    chart, n = w.chart, w.chart.n
    full = full_antisymmetric(w)
    out = np.zeros(w.values.shape[:-1] + (n,))
    for rho in range(n):
        acc = np.zeros(w.values.shape[:-1])
        for tau in range(n):
            acc += chart.deriv(full[..., rho, tau], tau)
        out[..., rho] = acc
    return MatrixForm(chart, 1, out)


# ---------------------------------------------------------------------------
# mollification
# ---------------------------------------------------------------------------


def bump_kernel(chart, eps):
    """Discrete (1 - r^2)^4 bump on the grid stencil, radius eps, mass renormalized."""
    rad = [int(np.floor(eps / chart.h[ax])) for ax in range(chart.n)]
    if min(rad) < 2:
        raise ResolutionError(f"mollifier radius {eps:g} below 2h = {2 * chart.h.max():g}")
    offs = np.meshgrid(
        *[np.arange(-r, r + 1) * chart.h[ax] for ax, r in enumerate(rad)], indexing="ij"
    )
    r2 = sum(o ** 2 for o in offs) / eps ** 2
    K = np.where(r2 < 1.0, (1.0 - np.minimum(r2, 1.0)) ** 4, 0.0)
    return K


def mollify(fld, eps):
    """Normalized convolution with the bump kernel; truncated-renormalized at the rim.

    Linear, positivity preserving, exact on constants, and leaves affine data
    unchanged wherever the kernel support is fully interior.
    """
    chart = fld.chart
    K = bump_kernel(chart, eps)
    comp = fld.values.reshape(chart.res + (-1,))
    if chart.n == 2:
        out = _kernels.mollify2(comp, K)
    else:
        from scipy import ndimage

        out = np.empty_like(comp)
        den = ndimage.convolve(np.ones(chart.res), K, mode="constant", cval=0.0)
        for c in range(comp.shape[-1]):
            out[..., c] = ndimage.convolve(comp[..., c], K, mode="constant", cval=0.0) / den
    return fld.copy(values=out.reshape(fld.values.shape))


# ---------------------------------------------------------------------------
# norms
# ---------------------------------------------------------------------------


@dataclass
class NormReport:
    p: float
    alpha: float
    lp: float
    w1p: float
    c0: float
    c0alpha: float
    pair_floor: float

    def to_json(self):
        return json.dumps(
            {
                "p": self.p,
                "alpha": self.alpha,
                "lp": self.lp,
                "w1p": self.w1p,
                "c0": self.c0,
                "c0alpha": self.c0alpha,
                "pair_floor": self.pair_floor,
            },
            sort_keys=True,
        )


def _pointwise_mag(values, chart):
    flat = values.reshape(chart.npoints, -1)
    return np.sqrt((flat ** 2).sum(axis=1))


def lp_norm(fld, p, weights=None):
    """h-weighted (trapezoidal) L^p norm of the pointwise Frobenius magnitude."""
    chart = fld.chart
    mag = _pointwise_mag(fld.values, chart)
    if weights is not None:
        mag = mag * weights.ravel()
    if np.isinf(p):
        return float(mag.max())
    return float((chart.quad_weights.ravel() * mag ** p).sum() ** (1.0 / p))


def gradient_field(fld):
    chart = fld.chart
    grads = np.stack([chart.deriv(fld.values, ax) for ax in range(chart.n)], axis=-1)
    return fld.copy(values=grads)


def norm_report(fld, p, alpha, pair_subsample=None):
    """L^p (h-weighted Riemann sum), W^{1,p}, C^0 and C^{0,alpha} estimates.

    Pointwise magnitudes are Frobenius norms over components.  The Hölder
    quotient maxes over node pairs with separation >= 4 max(h); on large
    grids ``pair_subsample`` strides the node set (exactness is only needed
    for the shipped tolerance tests, which pass None).
    """
    chart = fld.chart
    if not np.isinf(p) and p <= chart.n:
        raise ConfigurationError(f"exponent p must exceed n={chart.n} (or be inf), got {p}")
    if not (0 < alpha <= 1):
        raise ConfigurationError(f"alpha must lie in (0, 1], got {alpha}")
    lp = lp_norm(fld, p)
    w1p = lp + lp_norm(gradient_field(fld), p)
    mag = _pointwise_mag(fld.values, chart)
    c0 = float(mag.max())
    floor = HOLDER_PAIR_FLOOR * float(chart.h.max())
    coords = chart.nodes.reshape(-1, chart.n)
    vals = fld.values.reshape(chart.npoints, -1)
    if pair_subsample and pair_subsample > 1:
        coords = coords[::pair_subsample]
        vals = vals[::pair_subsample]
    quot = _kernels.holder_pair_max(coords, vals, alpha, floor)
    return NormReport(
        p=float(p),
        alpha=float(alpha),
        lp=lp,
        w1p=w1p,
        c0=c0,
        c0alpha=c0 + quot,
        pair_floor=floor,
    )


# ---------------------------------------------------------------------------
# elliptic engine
# ---------------------------------------------------------------------------


def poisson_solve(source, boundary):
    """Solve Delta u = source with Dirichlet data, componentwise.

    Delta is the same composed operator as :func:`laplacian` (the composition
    collapses to -sum_j D_j^2 per component exactly, by commutation of the
    axis-difference matrices).  Sparse LU; deterministic.
    """
    if isinstance(source, MatrixForm):
        chart = source.chart
        bvals = boundary.values if isinstance(boundary, MatrixForm) else boundary
        u = chart.dirichlet_solve(source.values, bvals)
        out = MatrixForm(chart, source.degree, u)
        resid = _relative_residual(chart, u, source.values)
        if resid > 1e-10:
            raise SolverError(f"poisson residual {resid:.2e} above 1e-10", [resid])
        return out
    chart = source.chart
    bvals = boundary.values if isinstance(boundary, GridField) else boundary
    u = chart.dirichlet_solve(source.values, bvals)
    resid = _relative_residual(chart, u, source.values)
    if resid > 1e-10:
        raise SolverError(f"poisson residual {resid:.2e} above 1e-10", [resid])
    return source.copy(values=u)


def _relative_residual(chart, u, src):
    interior = chart.interior_mask
    lap = chart.laplace(u)
    num = np.abs((lap - src)[interior]).max()
    den = max(np.abs(src[interior]).max(), 1.0)
    return num / den
