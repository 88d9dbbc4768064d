"""Discrete operators for the drift eigenproblem.

Two independent discretizations are provided.

* Direct: the operator  -D phi'' - 2 alpha m' phi' + V phi  acting on phi, either
  with plain central differences or with exponentially fitted
  (Scharfetter-Gummel) two-point fluxes for the conservative form
  -exp(-2 alpha m/D) (D exp(2 alpha m/D) phi')'.
* Symmetrized: the substitution w = exp(alpha m/D) phi gives  -D w'' + Q w  with
  Q = alpha^2/D |m'|^2 + alpha m'' + V.  It is assembled as a symmetric matrix
  Omega^{-1/2} K Omega^{-1/2} + diag(Q) from the finite-volume stiffness K and
  the control-volume weights Omega.

Robin, Neumann and Dirichlet conditions are folded into the matrices; Dirichlet
nodes are removed, so every matrix carries the list of nodes it acts on.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .model import Grid1D, Grid2D, ProblemSpec, validate

DIRECT = "direct"
SYMMETRIZED = "symmetrized"
CENTERED = "centered"
FITTED = "fitted"


def bernoulli(t):
    """B(t) = t / (exp(t) - 1), with a series branch near 0."""
    t = np.asarray(t, dtype=float)
    out = np.empty_like(t)
    small = np.abs(t) < 1e-4
    ts = t[small]
    out[small] = 1 - ts / 2 + ts * ts / 12
    pos = t >= 1e-4
    neg = t <= -1e-4
    tp, tn = t[pos], t[neg]
    with np.errstate(under="ignore"):
        # written with exp(-|t|) so nothing overflows; B -> 0 for large positive t
        out[pos] = tp * np.exp(-tp) / -np.expm1(-tp)
        out[neg] = tn / np.expm1(tn)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class DiscretizationForm:
    tag: str
    scheme: str | None = None
    Q: object = field(default=None, repr=False)  # potential Field for the symmetrized form

    def label(self) -> str:
        return self.tag if self.scheme is None else f"{self.tag}-{self.scheme}"


@dataclass(frozen=True, eq=False)
class TridiagonalMatrix:
    """Tridiagonal matrix on the free (non-Dirichlet) nodes of a 1D grid.

    ``row_sums`` holds the exact row sums when the assembly knows them
    (Z-matrices from the fitted scheme); ``scale`` maps the symmetric
    eigenvector to the w variable (w = v / scale).
    """

    lower: np.ndarray
    main: np.ndarray
    upper: np.ndarray
    symmetric: bool
    free: np.ndarray
    grid: Grid1D
    row_sums: np.ndarray | None = None
    scale: np.ndarray | None = None
    form: DiscretizationForm | None = None

    def __post_init__(self):
        n = self.main.size
        if self.lower.size != n - 1 or self.upper.size != n - 1:
            raise ValueError("inconsistent diagonal lengths")
        if self.symmetric and not np.array_equal(self.lower, self.upper):
            raise ValueError("symmetric flag set but off-diagonals differ")

    @property
    def size(self) -> int:
        return self.main.size

    def is_z_matrix(self) -> bool:
        return bool(np.all(self.lower <= 0) and np.all(self.upper <= 0))

    def gershgorin_lower(self) -> float:
        off = np.zeros(self.size)
        off[1:] += np.abs(self.lower)
        off[:-1] += np.abs(self.upper)
        return float(np.min(self.main - off))

    def matvec(self, v):
        v = np.asarray(v, dtype=float)
        out = self.main * v
        out[1:] += self.lower * v[:-1]
        out[:-1] += self.upper * v[1:]
        return out

    def to_sparse(self):
        return sp.diags([self.lower, self.main, self.upper], [-1, 0, 1], format="csr")

    def to_dense(self):
        return self.to_sparse().toarray()

    def shifted(self, c: float) -> "TridiagonalMatrix":
        rs = None if self.row_sums is None else self.row_sums + c
        return TridiagonalMatrix(self.lower, self.main + c, self.upper, self.symmetric,
                                 self.free, self.grid, rs, self.scale, self.form)


@dataclass(frozen=True, eq=False)
class SparseMatrix:
    """CSR matrix on the free nodes of a 2D tensor grid (flattened x-major)."""

    csr: sp.csr_matrix
    symmetric: bool
    free: np.ndarray
    grid: Grid2D
    scale: np.ndarray | None = None
    form: DiscretizationForm | None = None

    @property
    def size(self) -> int:
        return self.csr.shape[0]

    def gershgorin_lower(self) -> float:
        A = self.csr
        diag = A.diagonal()
        absrow = np.asarray(abs(A).sum(axis=1)).ravel()
        return float(np.min(diag - (absrow - np.abs(diag))))

    def matvec(self, v):
        return self.csr @ v


def dump_triplets(matrix) -> str:
    """'i j value' lines, row-major, 17 significant digits."""
    A = matrix.to_sparse() if isinstance(matrix, TridiagonalMatrix) else matrix.csr
    A = sp.csr_matrix(A)
    A.sort_indices()
    buf = io.StringIO()
    for i in range(A.shape[0]):
        for p in range(A.indptr[i], A.indptr[i + 1]):
            buf.write(f"{i} {A.indices[p]} {A.data[p]:.17g}\n")
    return buf.getvalue()


# --------------------------------------------------------------------------
# helpers

def _require_valid(spec: ProblemSpec, dim: int):
    if spec.dimension != dim:
        raise ValueError(f"expected a {dim}D problem")
    problems = validate(spec)
    if problems:
        raise ValueError("invalid problem: " + "; ".join(problems))


def _check_kinks_off_grid(spec: ProblemSpec, grid: Grid1D):
    for k in spec.kinks:
        if np.any(np.isclose(grid.nodes, k, rtol=0, atol=1e-12 * (grid.b - grid.a))):
            raise RuntimeError(f"grid node coincides with kink {k}")


def transformed_potential(spec: ProblemSpec, *coords):
    """Q = alpha^2/D |grad m|^2 + alpha lap m + V."""
    g = spec.m.gradient(*coords)
    grad2 = sum(np.asarray(gi, dtype=float) ** 2 for gi in g)
    lap = spec.m.laplacian(*coords)
    V = _eval_V(spec, *coords)
    a = spec.alpha
    return (a * a / spec.D) * grad2 + a * lap + V


def _eval_V(spec, *coords):
    from .expr import evaluate
    pt = dict(zip(("x", "y"), coords))
    out = evaluate(spec.V, pt)
    return np.broadcast_to(out, np.shape(coords[0])).astype(float)


def _face_coefficients_1d(spec: ProblemSpec):
    """Robin coefficients (original variable) at left/right; None for Dirichlet."""
    out = []
    for face in ("left", "right"):
        bc = spec.bc[face]
        if bc.kind == "dirichlet":
            out.append(None)
        else:
            out.append(float(bc.coefficient(spec.D, spec.face_point(face)["x"])))
    return out


# --------------------------------------------------------------------------
# 1D assemblies

def stiffness_1d(grid: Grid1D, D: float):
    """Scaled stiffness diagonals Omega^{-1/2} K Omega^{-1/2} (no boundary terms)."""
    h = grid.h
    w = grid.weights
    s = np.sqrt(w)
    off = -D / (h * s[:-1] * s[1:])
    main = np.empty(w.size)
    main[:] = 0.0
    main[:-1] += D / (h * w[:-1])
    main[1:] += D / (h * w[1:])
    return off, main


def assemble_symmetrized_1d(spec: ProblemSpec, grid: Grid1D) -> TridiagonalMatrix:
    """Symmetric matrix for -D w'' + Q w with transformed boundary rows."""
    _require_valid(spec, 1)
    if spec.kinks:
        raise ValueError("symmetrized form needs a drift without kinks")
    x = grid.nodes
    D, a = spec.D, spec.alpha
    w = grid.weights
    off, main = stiffness_1d(grid, D)
    Q = transformed_potential(spec, x)
    main = main + Q
    cl, cr = _face_coefficients_1d(spec)
    dm_l = float(spec.m.gradient(x[0])[0])
    dm_r = float(spec.m.gradient(x[-1])[0])
    if cl is not None:
        main[0] += D * (cl + (a / D) * dm_l) / w[0]
    if cr is not None:
        main[-1] += D * (cr - (a / D) * dm_r) / w[-1]
    free = np.arange(x.size)
    if cl is None:
        free = free[1:]
    if cr is None:
        free = free[:-1]
    lo, hi = free[0], free[-1]
    main = main[lo:hi + 1]
    off = off[lo:hi]
    from .model import Field
    form = DiscretizationForm(SYMMETRIZED, None, Field(grid, Q))
    return TridiagonalMatrix(off.copy(), main, off.copy(), True, free, grid,
                             None, np.sqrt(w)[free], form)


def assemble_direct_1d(spec: ProblemSpec, grid: Grid1D, scheme: str = FITTED) -> TridiagonalMatrix:
    """Non-symmetric matrix acting on phi, central or exponentially fitted."""
    _require_valid(spec, 1)
    scheme = scheme.lower()
    if scheme not in (CENTERED, FITTED):
        raise ValueError(f"unknown scheme {scheme!r}")
    if scheme == CENTERED:
        return _centered_1d(spec, grid)
    _check_kinks_off_grid(spec, grid)
    x = grid.nodes
    D, a = spec.D, spec.alpha
    h = grid.h
    w = grid.weights
    t = 2 * a * np.asarray(spec.m.gradient(grid.midpoints)[0], dtype=float) * h / D
    right = D * bernoulli(-t) / h   # coupling of node i to i+1 through cell i
    left = D * bernoulli(t) / h     # coupling of node i+1 to i through cell i
    V = _eval_V(spec, x)
    N = x.size
    sub = -left / w[1:]
    sup = -right / w[:-1]
    diag = np.zeros(N)
    diag[:-1] += right / w[:-1]
    diag[1:] += left / w[1:]
    diag += V
    rs = V.copy()
    cl, cr = _face_coefficients_1d(spec)
    if cl is not None:
        diag[0] += D * cl / w[0]
        rs[0] += D * cl / w[0]
    if cr is not None:
        diag[-1] += D * cr / w[-1]
        rs[-1] += D * cr / w[-1]
    free = np.arange(N)
    if cl is None:
        free = free[1:]
        rs[1] += -sub[0]
    if cr is None:
        free = free[:-1]
        rs[-2] += -sup[-1]
    lo, hi = free[0], free[-1]
    form = DiscretizationForm(DIRECT, FITTED)
    return TridiagonalMatrix(sub[lo:hi].copy(), diag[lo:hi + 1].copy(), sup[lo:hi].copy(), False,
                             free, grid, rs[lo:hi + 1].copy(), None, form)


def _centered_1d(spec: ProblemSpec, grid: Grid1D) -> TridiagonalMatrix:
    x = grid.nodes
    D = spec.D
    N = x.size
    h = grid.h
    drift = 2 * spec.alpha * np.asarray(spec.m.gradient(x)[0], dtype=float)
    V = _eval_V(spec, x)
    sub = np.zeros(N - 1)
    sup = np.zeros(N - 1)
    diag = V.copy()
    hm, hp = h[:-1], h[1:]
    s = hm + hp
    b = drift[1:-1]
    # -D phi'' - b phi'
    sub[:-1] = -2 * D / (hm * s) + b * hp / (hm * s)
    sup[1:] = -2 * D / (hp * s) - b * hm / (hp * s)
    diag[1:-1] += 2 * D / (hm * hp) - b * (hp - hm) / (hm * hp)
    cl, cr = _face_coefficients_1d(spec)
    if cl is not None:
        h0 = h[0]
        diag[0] += 2 * D / h0 ** 2 + 2 * D * cl / h0 - drift[0] * cl
        sup[0] = -2 * D / h0 ** 2
    if cr is not None:
        hn = h[-1]
        diag[-1] += 2 * D / hn ** 2 + 2 * D * cr / hn + drift[-1] * cr
        sub[-1] = -2 * D / hn ** 2
    free = np.arange(N)
    if cl is None:
        free = free[1:]
    if cr is None:
        free = free[:-1]
    lo, hi = free[0], free[-1]
    form = DiscretizationForm(DIRECT, CENTERED)
    return TridiagonalMatrix(sub[lo:hi].copy(), diag[lo:hi + 1].copy(), sup[lo:hi].copy(), False,
                             free, grid, None, None, form)


# --------------------------------------------------------------------------
# 2D

def _free_nodes_2d(spec: ProblemSpec, grid: Grid2D):
    nx, ny = grid.shape
    keep = np.ones((nx, ny), bool)
    if spec.bc["left"].kind == "dirichlet":
        keep[0, :] = False
    if spec.bc["right"].kind == "dirichlet":
        keep[-1, :] = False
    if spec.bc["bottom"].kind == "dirichlet":
        keep[:, 0] = False
    if spec.bc["top"].kind == "dirichlet":
        keep[:, -1] = False
    return np.flatnonzero(keep.ravel())


def _face_terms_2d(spec: ProblemSpec, grid: Grid2D, transformed: bool):
    """Diagonal contribution D*c/omega from Robin/Neumann faces (nx, ny array)."""
    nx, ny = grid.shape
    X, Y = grid.mesh()
    wx, wy = grid.x.weights, grid.y.weights
    D, a = spec.D, spec.alpha
    out = np.zeros((nx, ny))
    for face, (sl, normal, axis) in {
        "left": ((0, slice(None)), -1.0, 0), "right": ((-1, slice(None)), 1.0, 0),
        "bottom": ((slice(None), 0), -1.0, 1), "top": ((slice(None), -1), 1.0, 1),
    }.items():
        bc = spec.bc[face]
        if bc.kind == "dirichlet":
            continue
        xs, ys = X[sl], Y[sl]
        c = np.asarray(bc.coefficient(D, {"x": xs, "y": ys}), dtype=float) * np.ones(xs.shape)
        if transformed:
            dn = normal * np.asarray(spec.m.gradient(xs, ys)[axis], dtype=float)
            c = c - (a / D) * dn
        omega = wx[sl[0]] if axis == 0 else wy[sl[1]]
        out[sl] += D * c / omega
    return out


def assemble_2d(spec: ProblemSpec, grid: Grid2D, form: str = SYMMETRIZED,
                scheme: str = FITTED) -> SparseMatrix:
    """Five-point matrix on a rectangle, symmetrized or direct (per-axis fluxes)."""
    _require_valid(spec, 2)
    X, Y = grid.mesh()
    nx, ny = grid.shape
    free = _free_nodes_2d(spec, grid)
    if form == SYMMETRIZED:
        offx, mainx = stiffness_1d(grid.x, spec.D)
        offy, mainy = stiffness_1d(grid.y, spec.D)
        Tx = sp.diags([offx, mainx, offx], [-1, 0, 1], format="csr")
        Ty = sp.diags([offy, mainy, offy], [-1, 0, 1], format="csr")
        Q = transformed_potential(spec, X, Y)
        diag = Q + _face_terms_2d(spec, grid, True)
        A = sp.kron(Tx, sp.identity(ny), format="csr") + sp.kron(sp.identity(nx), Ty, format="csr")
        A = A + sp.diags(diag.ravel(), 0, format="csr")
        A = A[free][:, free].tocsr()
        A.eliminate_zeros()
        A.sort_indices()
        # enforce bitwise symmetry of the stored values
        A = ((A + A.T) * 0.5).tocsr() if not _bitwise_symmetric(A) else A
        from .model import Field
        scale = np.sqrt(grid.weights.ravel())[free]
        return SparseMatrix(A, True, free, grid, scale, DiscretizationForm(SYMMETRIZED, None, Field(grid, Q)))
    if form != DIRECT:
        raise ValueError(f"unknown form {form!r}")
    scheme = scheme.lower()
    D, a = spec.D, spec.alpha
    V = _eval_V(spec, X, Y)
    idx = np.arange(nx * ny).reshape(nx, ny)
    rows, cols, vals = [], [], []
    diag = V.copy()
    for axis, g1 in ((0, grid.x), (1, grid.y)):
        h = g1.h
        w = g1.weights
        if axis == 0:
            mx, my = np.meshgrid(g1.midpoints, grid.y.nodes, indexing="ij")
            hh = h[:, None]
            w_lo, w_hi = w[:-1, None], w[1:, None]
            i_lo, i_hi = idx[:-1, :], idx[1:, :]
        else:
            mx, my = np.meshgrid(grid.x.nodes, g1.midpoints, indexing="ij")
            hh = h[None, :]
            w_lo, w_hi = w[None, :-1], w[None, 1:]
            i_lo, i_hi = idx[:, :-1], idx[:, 1:]
        if scheme == FITTED:
            t = 2 * a * np.asarray(spec.m.gradient(mx, my)[axis], dtype=float) * np.ones(mx.shape) * hh / D
            right = D * bernoulli(-t) / hh
            left = D * bernoulli(t) / hh
        else:
            raise ValueError("2D direct assembly supports the fitted scheme only")
        rows += [i_lo.ravel(), i_hi.ravel()]
        cols += [i_hi.ravel(), i_lo.ravel()]
        vals += [(-right / w_lo).ravel(), (-left / w_hi).ravel()]
        dflat = diag.ravel()
        np.add.at(dflat, i_lo.ravel(), (right / w_lo).ravel())
        np.add.at(dflat, i_hi.ravel(), (left / w_hi).ravel())
        diag = dflat.reshape(nx, ny)
    diag = diag + _face_terms_2d(spec, grid, False)
    rows.append(idx.ravel())
    cols.append(idx.ravel())
    vals.append(diag.ravel())
    A = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(nx * ny, nx * ny))
    A = A[free][:, free].tocsr()
    A.eliminate_zeros()
    A.sort_indices()
    return SparseMatrix(A, False, free, grid, None, DiscretizationForm(DIRECT, FITTED))


def _bitwise_symmetric(A) -> bool:
    B = A.T.tocsr()
    B.sort_indices()
    return (A.indptr.tolist() == B.indptr.tolist() and np.array_equal(A.indices, B.indices)
            and np.array_equal(A.data, B.data))
