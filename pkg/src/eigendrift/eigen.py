"""Principal eigenpairs of the assembled operators.

Symmetric tridiagonal matrices go through Sturm-sequence bisection followed by
inverse iteration.  Everything else uses shift-inverted power iteration with
Perron selection: the iterate stays positive, and for Z-matrices the
Collatz-Wielandt ratios bracket the eigenvalue at every step.  When exact row
sums are known the first shift is the smallest row sum and the solves are
done with a subtraction-free elimination, which keeps full relative accuracy
for exponentially small eigenvalues.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg import lapack

from . import operators as op
from .model import Field, Grid1D, Grid2D, ProblemSpec

AUTO, BOTH = "auto", "both"
OVERFLOW_GUARD = 700.0
BRACKET_TOL = 1e-6
FORM_ALIASES = {"auto": AUTO, "both": BOTH, "direct": op.DIRECT, "sym": op.SYMMETRIZED,
                "symmetrized": op.SYMMETRIZED}


class EigenError(RuntimeError):
    """Numerical failure of an eigen solver."""


@dataclass(frozen=True, eq=False)
class EigenResult:
    lam: float
    eigenfunction: Field          # w, positive, trapezoid norm 1
    phi: Field                    # untransformed eigenfunction, max 1
    residual: float
    iterations: int
    form: op.DiscretizationForm
    grid_n: int
    certificate: dict = field(default_factory=dict)
    companion: "EigenResult | None" = None

    @property
    def discrepancy(self):
        if self.companion is None:
            return None
        return abs(self.lam - self.companion.lam)


# --------------------------------------------------------------------------
# symmetric tridiagonal: Sturm bisection

def sturm_count(main, off, x: float) -> int:
    """Number of eigenvalues strictly below x (LDL^T inertia)."""
    count = 0
    tiny = 1e-300
    off2 = off * off
    m = main.tolist()
    o2 = off2.tolist()
    d = m[0] - x
    for i in range(len(m)):
        if i:
            d = (m[i] - x) - o2[i - 1] / d
        if d == 0.0:
            d = -tiny
        if d < 0:
            count += 1
    return count


def _gershgorin(main, lower, upper):
    off = np.zeros(main.size)
    off[1:] += np.abs(lower)
    off[:-1] += np.abs(upper)
    return float(np.min(main - off)), float(np.max(main + off))


def principal_eig_sym_tridiag(T, max_bisect: int = 200):
    """Smallest eigenvalue and positive eigenvector of a symmetric tridiagonal matrix.

    Accepts a :class:`TridiagonalMatrix` or a ``(main, off)`` pair.  Returns
    ``(lam, v, info)`` with ``v`` of unit 2-norm and positive sum.
    """
    if isinstance(T, op.TridiagonalMatrix):
        if not T.symmetric:
            raise ValueError("matrix is not symmetric")
        main, off = np.asarray(T.main, float), np.asarray(T.upper, float)
    else:
        main, off = (np.asarray(a, float) for a in T)
    n = main.size
    if n == 1:
        return float(main[0]), np.ones(1), {"tol": 0.0, "count_below": 0, "count_above": 1, "bisections": 0}
    lo, hi = _gershgorin(main, off, off)
    radius = max(abs(lo), abs(hi), hi - lo)
    tol = 1e-12 * radius
    a, b = lo, hi
    it = 0
    while b - a > tol:
        it += 1
        if it > max_bisect:
            raise EigenError("bisection did not converge")
        mid = 0.5 * (a + b)
        if sturm_count(main, off, mid) >= 1:
            b = mid
        else:
            a = mid
    lam_b = 0.5 * (a + b)

    # inverse iteration from a positive start at a shift just below the root
    sigma = lam_b - 4 * tol - 1e-300
    ab = np.zeros((3, n))
    ab[0, 1:] = off
    ab[1] = main - sigma
    ab[2, :-1] = off
    from scipy.linalg import solve_banded
    v = np.ones(n) / math.sqrt(n)
    for _ in range(4):
        y = solve_banded((1, 1), ab, v)
        if not np.all(np.isfinite(y)):
            sigma -= 4 * tol
            ab[1] = main - sigma
            continue
        v = y / np.linalg.norm(y)
    if v.sum() < 0:
        v = -v
    Tv = main * v
    Tv[1:] += off * v[:-1]
    Tv[:-1] += off * v[1:]
    lam_r = float(v @ Tv)
    lam = lam_r if abs(lam_r - lam_b) <= tol else lam_b
    info = {
        "tol": tol,
        "bisections": it,
        "count_below": sturm_count(main, off, lam - 10 * tol),
        "count_above": sturm_count(main, off, lam + tol),
    }
    return lam, v, info


def symmetrize_tridiagonal(A: op.TridiagonalMatrix):
    """Diagonal similarity S = Delta A Delta^{-1} with S symmetric.

    Needs lower*upper >= 0 entrywise.  Returns ``(S, log_d)`` where
    Delta = diag(exp(log_d)); an eigenvector v of S maps to Delta^{-1} v of A.
    """
    lower, upper = np.asarray(A.lower, float), np.asarray(A.upper, float)
    prod = lower * upper
    if np.any(prod < 0):
        raise ValueError("off-diagonal products must be nonnegative")
    off = np.sign(upper) * np.sqrt(prod)
    step = np.zeros(lower.size)
    both = (lower != 0) & (upper != 0)
    step[both] = 0.5 * (np.log(np.abs(upper[both])) - np.log(np.abs(lower[both])))
    log_d = np.concatenate([[0.0], np.cumsum(step)])
    S = op.TridiagonalMatrix(off.copy(), np.asarray(A.main, float).copy(), off.copy(), True,
                             A.free, A.grid, None, None, A.form)
    return S, log_d


def principal_eig_similarity(A: op.TridiagonalMatrix):
    """Principal pair of a tridiagonal Z-matrix through its symmetric similar matrix.

    Returns ``(lam, log_v, info)``; the eigenvector is returned as logarithms
    because the similarity scaling can exceed the floating-point range.
    """
    S, log_d = symmetrize_tridiagonal(A)
    lam, v, info = principal_eig_sym_tridiag(S)
    v = _positive(v)
    with np.errstate(divide="ignore"):
        log_v = np.log(v) - log_d
    return lam, log_v, info


# --------------------------------------------------------------------------
# shift-inverted power iteration

class _TridiagSolver:
    def __init__(self, T: op.TridiagonalMatrix, sigma: float, exact_rows: bool):
        self.n = T.size
        self.singular = False
        self.dense = None
        if self.n < 3:
            # the LAPACK wrappers reject the empty second superdiagonal
            self.dense = T.to_dense() - sigma * np.eye(self.n)
            self.singular = np.linalg.matrix_rank(self.dense) < self.n
        elif exact_rows:
            self._gth(T, sigma)
        else:
            dl, d, du, du2, ipiv, info = lapack.dgttrf(T.lower.astype(float), T.main - sigma,
                                                       T.upper.astype(float))
            if info > 0:
                self.singular = True
            self.factors = (dl, d, du, du2, ipiv)

    def _gth(self, T, sigma):
        # subtraction-free elimination for a Z-matrix with nonnegative shifted row sums
        n = self.n
        a = np.abs(T.lower).tolist()
        c = np.abs(T.upper).tolist() + [0.0]
        r = np.maximum(T.row_sums - sigma, 0.0).tolist()
        d = [0.0] * n
        mult = [0.0] * max(n - 1, 0)
        rp = r[0]
        d[0] = rp + c[0]
        for i in range(1, n):
            if d[i - 1] == 0.0:
                self.singular = True
                break
            g = a[i - 1] / d[i - 1]
            mult[i - 1] = -g
            rp = r[i] + a[i - 1] * (rp / d[i - 1])
            d[i] = rp + c[i]
        if d[-1] == 0.0:
            self.singular = True
        self.factors = (np.array(mult), np.array(d), T.upper.astype(float).copy(),
                        np.zeros(max(n - 2, 0)), np.arange(1, n + 1, dtype=np.int32))

    def solve(self, v):
        if self.dense is not None:
            return np.linalg.solve(self.dense, v)
        dl, d, du, du2, ipiv = self.factors
        x, info = lapack.dgttrs(dl, d, du, du2, ipiv, v.reshape(-1, 1).astype(float))
        return x.ravel()


class _SparseSolver:
    def __init__(self, A: op.SparseMatrix, sigma: float):
        M = (A.csr - sigma * sp.identity(A.size, format="csr")).tocsc()
        self.singular = False
        try:
            self.lu = spla.splu(M, permc_spec="COLAMD")
        except RuntimeError:
            self.singular = True

    def solve(self, v):
        return self.lu.solve(v)


def _residual(A, lam, v) -> float:
    r = A.matvec(v) - lam * v
    return float(np.max(np.abs(r)) / np.max(np.abs(v)))


def principal_eig_power(A, shift: str = "auto", tol: float = 1e-12, maxit: int = 10_000):
    """Principal eigenpair by shift-inverted power iteration.

    ``A`` is a :class:`TridiagonalMatrix`, :class:`SparseMatrix` or dense array.
    Shift policy ``"gershgorin"`` uses (Gershgorin lower bound) - 1 and keeps
    it fixed.  ``"auto"`` additionally starts from the smallest exact row sum
    when it is known and moves the shift toward the Collatz-Wielandt lower
    bound when convergence is slow (Z-matrices only).  Returns
    ``(lam, v, info)`` with v positive and max-normalized.
    """
    if isinstance(A, np.ndarray):
        A = _dense_to_operator(A)
    tridiag = isinstance(A, op.TridiagonalMatrix)
    z_matrix = _is_z(A)
    exact = tridiag and A.row_sums is not None and z_matrix and shift == "auto"
    if exact:
        sigma = float(np.min(A.row_sums))
    else:
        sigma = A.gershgorin_lower() - 1.0
    adaptive = shift == "auto" and z_matrix

    def factor(s, gth):
        return _TridiagSolver(A, s, gth) if tridiag else _SparseSolver(A, s)

    solver = factor(sigma, exact)
    if solver.singular:
        if exact:
            # the shift is an eigenvalue: all shifted row sums vanish along the chain
            lam = sigma
            gap = max(abs(sigma), 1.0) * 1e-8
            solver = factor(sigma - gap, False)
            v = np.ones(A.size)
            for _ in range(3):
                v = solver.solve(v)
                v = v / np.max(np.abs(v))
            v = _positive(v)
            return lam, v, {"iterations": 0, "sigma": sigma, "bounds": (lam, lam),
                            "residual": _residual(A, lam, v), "exact_shift": True}
        raise EigenError("shifted matrix is singular")

    v = np.ones(A.size)
    best = math.inf
    since_best = 0
    lam = math.nan
    bounds = (-math.inf, math.inf)
    it = 0
    for it in range(1, maxit + 1):
        y = solver.solve(v)
        if not np.all(np.isfinite(y)):
            raise EigenError("non-finite iterate")
        if y.sum() < 0:
            y = -y
        vy = float(v @ y)
        lam = sigma + float(v @ v) / vy
        if z_matrix and np.all(y > 0):
            ratio = v / y
            bounds = (sigma + float(ratio.min()), sigma + float(ratio.max()))
        vnew = y / np.max(np.abs(y))
        change = float(np.max(np.abs(vnew - v)))
        v = vnew
        if change < tol:
            break
        if change < 0.5 * best:
            best, since_best = change, 0
        else:
            since_best += 1
        if best < 1e-9 and since_best >= 50:
            break  # converged to the rounding floor
        if adaptive and it % 20 == 0 and np.isfinite(bounds[0]) and bounds[0] > sigma:
            new_sigma = bounds[0] - 0.05 * (bounds[0] - sigma)
            if new_sigma > sigma:
                sigma = new_sigma
                exact = False
                solver = factor(sigma, False)
                if solver.singular:
                    raise EigenError("shift update hit the spectrum")
    else:
        raise EigenError(f"power iteration stagnated after {maxit} iterations")
    if z_matrix and np.all(v > 0):
        # final Collatz-Wielandt bracket for the converged vector
        y = solver.solve(v)
        if np.all(y > 0):
            ratio = v / y
            bounds = (sigma + float(ratio.min()), sigma + float(ratio.max()))
            lam = sigma + float(v @ v) / float(v @ y)
    if np.min(v) < -1e-10 * np.max(v):
        raise EigenError("converged eigenvector is not positive (wrong eigenpair)")
    v = np.where(v < 0, 0.0, v)
    return lam, v, {"iterations": it, "sigma": sigma, "bounds": bounds,
                    "residual": _residual(A, lam, v), "exact_shift": False}


def _positive(v):
    if v.sum() < 0:
        v = -v
    v = v / np.max(np.abs(v))
    if np.min(v) < -1e-10:
        raise EigenError("converged eigenvector is not positive (wrong eigenpair)")
    return np.where(v < 0, 0.0, v)


def _is_z(A) -> bool:
    if isinstance(A, op.TridiagonalMatrix):
        return A.is_z_matrix()
    M = A.csr.tocoo()
    off = M.row != M.col
    return bool(np.all(M.data[off] <= 0))


def _dense_to_operator(A: np.ndarray):
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    band = np.triu(np.tril(A, 1), -1)
    if n > 1 and np.array_equal(band, A):
        sym = np.array_equal(np.diag(A, -1), np.diag(A, 1))
        return op.TridiagonalMatrix(np.diag(A, -1).copy(), np.diag(A).copy(), np.diag(A, 1).copy(),
                                    sym, np.arange(n), Grid1D(np.arange(float(n))))
    return op.SparseMatrix(sp.csr_matrix(A), False, np.arange(n), None)


# --------------------------------------------------------------------------
# variational check

def rayleigh_quotient(spec: ProblemSpec, w: Field) -> float:
    """Quadratic form of the transformed problem divided by the trapezoid norm of w.

    For kink-free m the drift term is integrated by parts, which turns the form
    into D|grad w|^2 + Q w^2 plus a boundary term with the normal derivative of
    m; this quadrature is the one the symmetrized matrix represents.  With
    kinks Q carries point masses, so the drift form is evaluated directly with
    midpoint gradients.
    """
    vals = np.asarray(w.values, dtype=float)
    if isinstance(w.grid, Grid1D):
        g = w.grid
        den = float(g.weights @ (vals * vals))
        if den == 0:
            raise ValueError("zero field")
        num = _form_1d(spec, g, vals)
    else:
        g = w.grid
        den = float(np.sum(g.weights * vals * vals))
        if den == 0:
            raise ValueError("zero field")
        num = _form_2d(spec, g, vals)
    return num / den


def _form_1d(spec, g, vals):
    D, a = spec.D, spec.alpha
    h = g.h
    smooth = not spec.kinks
    diff = (vals[1:] - vals[:-1]) / h
    if smooth:
        num = float(np.sum(D * diff * diff * h))
        num += float(g.weights @ (op.transformed_potential(spec, g.nodes) * vals * vals))
    else:
        dm = np.asarray(spec.m.gradient(g.midpoints)[0], float)
        grad = diff - (a / D) * 0.5 * (vals[1:] + vals[:-1]) * dm
        num = float(np.sum(D * grad * grad * h))
        num += float(g.weights @ (op._eval_V(spec, g.nodes) * vals * vals))
    for face, idx, normal in (("left", 0, -1.0), ("right", -1, 1.0)):
        bc = spec.bc[face]
        if bc.kind == "dirichlet":
            continue
        c = float(bc.coefficient(D, spec.face_point(face)["x"]))
        if smooth:
            c -= (a / D) * normal * float(spec.m.gradient(g.nodes[idx])[0])
        num += D * c * vals[idx] ** 2
    return num


def _form_2d(spec, g, vals):
    D, a = spec.D, spec.alpha
    X, Y = g.mesh()
    hx, hy = g.x.h, g.y.h
    smooth = not spec.kinks
    dx = (vals[1:, :] - vals[:-1, :]) / hx[:, None]
    dy = (vals[:, 1:] - vals[:, :-1]) / hy[None, :]
    if smooth:
        num = float(np.sum(g.weights * op.transformed_potential(spec, X, Y) * vals * vals))
    else:
        num = float(np.sum(g.weights * op._eval_V(spec, X, Y) * vals * vals))
        mx, my = np.meshgrid(g.x.midpoints, g.y.nodes, indexing="ij")
        dmx = np.asarray(spec.m.gradient(mx, my)[0], float) * np.ones(mx.shape)
        dx = dx - (a / D) * 0.5 * (vals[1:, :] + vals[:-1, :]) * dmx
        mx, my = np.meshgrid(g.x.nodes, g.y.midpoints, indexing="ij")
        dmy = np.asarray(spec.m.gradient(mx, my)[1], float) * np.ones(mx.shape)
        dy = dy - (a / D) * 0.5 * (vals[:, 1:] + vals[:, :-1]) * dmy
    # x-edges weighted by the y trapezoid weights and vice versa
    num += float(np.sum(D * dx * dx * hx[:, None] * g.y.weights[None, :]))
    num += float(np.sum(D * dy * dy * hy[None, :] * g.x.weights[:, None]))
    faces = {"left": ((0, slice(None)), g.y.weights, -1.0, 0),
             "right": ((-1, slice(None)), g.y.weights, 1.0, 0),
             "bottom": ((slice(None), 0), g.x.weights, -1.0, 1),
             "top": ((slice(None), -1), g.x.weights, 1.0, 1)}
    for face, (sl, wt, normal, axis) in faces.items():
        bc = spec.bc[face]
        if bc.kind == "dirichlet":
            continue
        xs, ys = X[sl], Y[sl]
        c = np.asarray(bc.coefficient(D, {"x": xs, "y": ys}), float) * np.ones(wt.shape)
        if smooth:
            c = c - (a / D) * normal * np.asarray(spec.m.gradient(xs, ys)[axis], float)
        num += float(np.sum(D * c * vals[sl] ** 2 * wt))
    return num


# --------------------------------------------------------------------------
# dispatch

def choose_form(spec: ProblemSpec, grid) -> str:
    """Symmetrized unless the drift has kinks or exp(alpha m / D) would overflow."""
    if spec.kinks:
        return op.DIRECT
    if spec.alpha == 0:
        return op.SYMMETRIZED
    if isinstance(grid, Grid1D):
        m = spec.m.value(grid.nodes)
    else:
        m = spec.m.value(*grid.mesh())
    osc = float(np.max(m) - np.min(m))
    return op.SYMMETRIZED if spec.alpha * osc / spec.D < OVERFLOW_GUARD else op.DIRECT


def _normalize_pair(spec, grid, free, vec, kind, log_input=False):
    """Build (w, phi) Fields from the solver vector via logarithms."""
    shape = (len(grid),) if isinstance(grid, Grid1D) else grid.shape
    size = int(np.prod(shape))
    if isinstance(grid, Grid1D):
        mvals = np.asarray(spec.m.value(grid.nodes), float)
        weights = grid.weights
    else:
        mvals = np.asarray(spec.m.value(*grid.mesh()), float).ravel()
        weights = grid.weights.ravel()
    if log_input:
        logv = np.full(size, -np.inf)
        logv[free] = vec
    else:
        full = np.zeros(size)
        full[free] = vec
        with np.errstate(divide="ignore"):
            logv = np.log(full)
    shift = spec.alpha * mvals / spec.D
    if kind == "w":
        logw, logphi = logv, logv - shift
    else:
        logphi, logw = logv, logv + shift
    w = np.exp(logw - np.max(logw))
    w /= math.sqrt(float(weights @ (w * w)))
    phi = np.exp(logphi - np.max(logphi))
    return Field(grid, w.reshape(shape)), Field(grid, phi.reshape(shape))


def _solve_form(spec: ProblemSpec, grid, form: str, scheme: str) -> EigenResult:
    one_d = isinstance(grid, Grid1D)
    if form == op.SYMMETRIZED:
        if one_d:
            T = op.assemble_symmetrized_1d(spec, grid)
            lam, v, info = principal_eig_sym_tridiag(T)
            resid = _residual(T, lam, v)
            iters = info["bisections"]
            cert = {"sturm_below": info["count_below"], "sturm_above": info["count_above"],
                    "tol": info["tol"]}
        else:
            T = op.assemble_2d(spec, grid, op.SYMMETRIZED)
            lam, v, info = principal_eig_power(T)
            resid, iters = info["residual"], info["iterations"]
            cert = {"bounds": info["bounds"]}
        w_vec = v / T.scale
        w, phi = _normalize_pair(spec, grid, T.free, np.abs(w_vec) if np.min(w_vec) >= -1e-10 * np.max(np.abs(w_vec)) else w_vec, "w")
        form_obj = T.form
    else:
        if one_d:
            A = op.assemble_direct_1d(spec, grid, scheme)
        else:
            A = op.assemble_2d(spec, grid, op.DIRECT, scheme)
        try:
            lam, v, info = principal_eig_power(A)
            resid, iters = info["residual"], info["iterations"]
            cert = {"bounds": info["bounds"], "exact_shift": info["exact_shift"], "route": "power"}
            w, phi = _normalize_pair(spec, grid, A.free, v, "phi")
            lo, hi = info["bounds"]
            if one_d and A.is_z_matrix() and not hi - lo <= BRACKET_TOL * abs(lam):
                # loose bracket: near-degenerate pair or underflowed iterate, so
                # confirm against the Sturm-certified similar matrix
                lam_s, _, sinfo = principal_eig_similarity(A)
                if abs(lam_s - lam) > 10 * sinfo["tol"]:
                    raise EigenError(f"power iteration off by {abs(lam_s - lam):.3g}")
                cert["similarity_check"] = lam_s
        except EigenError as err:
            if not (one_d and A.is_z_matrix()):
                raise
            # strongly non-normal fitted matrices: same spectrum via the symmetric similar matrix
            lam, log_v, info = principal_eig_similarity(A)
            iters = info["bisections"]
            cert = {"route": "similarity", "power_error": str(err), "tol": info["tol"],
                    "sturm_below": info["count_below"], "sturm_above": info["count_above"]}
            w, phi = _normalize_pair(spec, grid, A.free, log_v, "phi", log_input=True)
            S, log_d = symmetrize_tridiagonal(A)
            v = np.exp(log_v + log_d)
            resid = _residual(S, lam, v / np.max(v))
        form_obj = A.form
    if np.any(w.values[_interior_mask(grid)] < 0):
        raise EigenError("eigenfunction not positive")
    n = grid.n if one_d else max(grid.x.n, grid.y.n)
    return EigenResult(float(lam), w, phi, float(resid), int(iters), form_obj, n, cert)


def _interior_mask(grid):
    if isinstance(grid, Grid1D):
        m = np.zeros(len(grid), bool)
        m[1:-1] = True
        return m
    m = np.zeros(grid.shape, bool)
    m[1:-1, 1:-1] = True
    return m


def solve(spec: ProblemSpec, grid, form: str = AUTO, scheme: str = op.FITTED) -> EigenResult:
    """Principal eigenpair of ``spec`` on ``grid``.

    ``form`` is ``auto``, ``direct``, ``sym``/``symmetrized`` or ``both``; with
    ``both`` the direct result is returned and the symmetrized one attached as
    ``companion``.
    """
    form = FORM_ALIASES.get(form, form)
    if isinstance(grid, int):
        grid = Grid1D.uniform(*spec.domain[0], grid) if spec.dimension == 1 else \
            Grid2D.uniform(*spec.domain[0], grid, *spec.domain[1], grid)
    if form == AUTO:
        form = choose_form(spec, grid)
    if form == BOTH:
        direct = _solve_form(spec, grid, op.DIRECT, scheme)
        sym = _solve_form(spec, grid, op.SYMMETRIZED, scheme)
        return EigenResult(direct.lam, direct.eigenfunction, direct.phi, direct.residual,
                           direct.iterations, direct.form, direct.grid_n, direct.certificate, sym)
    if form not in (op.DIRECT, op.SYMMETRIZED):
        raise ValueError(f"unknown form policy {form!r}")
    return _solve_form(spec, grid, form, scheme)
