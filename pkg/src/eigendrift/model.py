"""Grids, boundary conditions and problem descriptions.

Everything here is immutable after construction.  One-dimensional faces are
called ``left``/``right``; rectangles add ``bottom``/``top``.  A Robin face
means  d(phi)/dn + c*phi = 0  with the outward normal, so the left face of an
interval reads  -phi'(a) + c*phi(a) = 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import integrate

from . import expr as ex

FACES_1D = ("left", "right")
FACES_2D = ("left", "right", "bottom", "top")
KINDS = ("dirichlet", "neumann", "robin")

MAX_GRADING = 1.2
MIN_CELLS = 8


def _as_expr(e) -> ex.Expr:
    if isinstance(e, str):
        return ex.parse(e)
    if isinstance(e, (int, float)):
        return ex.const(e)
    return e


# --------------------------------------------------------------------------
# grids

@dataclass(frozen=True, eq=False)
class Grid1D:
    """Nodes x_0 = a < ... < x_n = b."""

    nodes: np.ndarray

    def __post_init__(self):
        x = np.array(self.nodes, dtype=float)
        if x.ndim != 1 or x.size < 2:
            raise ValueError("a grid needs at least two nodes")
        if not np.all(np.isfinite(x)) or np.any(np.diff(x) <= 0):
            raise ValueError("grid nodes must be finite and strictly increasing")
        x.setflags(write=False)
        object.__setattr__(self, "nodes", x)

    @classmethod
    def uniform(cls, a: float, b: float, n: int) -> "Grid1D":
        x = np.linspace(a, b, n + 1)
        x[0], x[-1] = a, b
        return cls(x)

    @property
    def a(self) -> float:
        return float(self.nodes[0])

    @property
    def b(self) -> float:
        return float(self.nodes[-1])

    @property
    def n(self) -> int:
        """Number of cells."""
        return self.nodes.size - 1

    @property
    def h(self) -> np.ndarray:
        return np.diff(self.nodes)

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.nodes[1:] + self.nodes[:-1])

    @property
    def weights(self) -> np.ndarray:
        """Trapezoid (control volume) weights."""
        h = self.h
        w = np.empty(self.nodes.size)
        w[0], w[-1] = h[0] / 2, h[-1] / 2
        w[1:-1] = (h[:-1] + h[1:]) / 2
        return w

    def grading(self) -> float:
        h = self.h
        if h.size < 2:
            return 1.0
        r = h[1:] / h[:-1]
        return float(np.max(np.maximum(r, 1 / r)))

    def diagnostics(self) -> list[str]:
        """Admissibility for eigenvalue work: enough cells, gentle grading."""
        out = []
        if self.n < MIN_CELLS:
            out.append(f"grid has {self.n} cells, fewer than {MIN_CELLS}")
        if self.grading() > MAX_GRADING * (1 + 1e-9):
            out.append(f"adjacent cell ratio {self.grading():.4g} exceeds {MAX_GRADING}")
        return out

    def __len__(self):
        return self.nodes.size


@dataclass(frozen=True, eq=False)
class Grid2D:
    """Tensor grid on a rectangle; node (i, j) sits at (x[i], y[j])."""

    x: Grid1D
    y: Grid1D

    @classmethod
    def uniform(cls, ax, bx, nx, ay, by, ny) -> "Grid2D":
        return cls(Grid1D.uniform(ax, bx, nx), Grid1D.uniform(ay, by, ny))

    @property
    def shape(self) -> tuple[int, int]:
        return (len(self.x), len(self.y))

    @property
    def weights(self) -> np.ndarray:
        return np.outer(self.x.weights, self.y.weights)

    def mesh(self):
        return np.meshgrid(self.x.nodes, self.y.nodes, indexing="ij")

    def diagnostics(self) -> list[str]:
        return [f"x axis: {d}" for d in self.x.diagnostics()] + [
            f"y axis: {d}" for d in self.y.diagnostics()]

    def __len__(self):
        return len(self.x) * len(self.y)


@dataclass(frozen=True, eq=False)
class Field:
    grid: object
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        expected = (len(self.grid),) if isinstance(self.grid, Grid1D) else self.grid.shape
        if v.shape != expected:
            raise ValueError(f"field has shape {v.shape}, grid expects {expected}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)


def sample_field(f, grid) -> Field:
    """Evaluate an expression at every node of a 1D or 2D grid."""
    f = _as_expr(f)
    if isinstance(grid, Grid1D):
        extra = ex.variables(f) - {"x"}
        if extra:
            raise ValueError(f"expression uses {sorted(extra)} on a 1D grid")
        pts = {"x": grid.nodes}
    else:
        X, Y = grid.mesh()
        pts = {"x": X, "y": Y}
    try:
        vals = ex.evaluate(f, pts)
    except ex.ExprDomainError as err:
        idx = err.index
        if idx is not None and not isinstance(grid, Grid1D):
            idx = np.unravel_index(idx, grid.shape)
        raise ex.ExprDomainError(f"at node {idx}: {err.args[0]}", err.node) from err
    return Field(grid, np.broadcast_to(vals, np.shape(pts["x"])))


# --------------------------------------------------------------------------
# graded meshes

def _size_function(bands, floors, slope, h_cap):
    def h(x):
        out = np.full(np.shape(x), float(h_cap))
        for (lo, hi), hf in zip(bands, floors):
            d = np.maximum(0.0, np.maximum(lo - x, x - hi))
            out = np.minimum(out, hf + slope * d)
        return out
    return h


def _level_map(a, b, n, bands, K, slope):
    """Cumulative node-count function F on sample points, or None if infeasible."""
    L = b - a
    floors = [(hi - lo) / K for lo, hi in bands]
    hmin = min(floors)
    pts = [np.linspace(a, b, 20001)]
    for (lo, hi), hf in zip(bands, floors):
        geo = hf * np.geomspace(1e-3, L / hf + 1, 600)
        pts.append(np.linspace(lo, hi, int(min(8 * K, 4000)) + 2))
        pts.append(lo - geo)
        pts.append(hi + geo)
    s = np.unique(np.clip(np.concatenate(pts), a, b))

    def count(h_cap):
        inv = 1.0 / _size_function(bands, floors, slope, h_cap)(s)
        return integrate.cumulative_trapezoid(inv, s, initial=0.0)

    if count(np.inf)[-1] > n:
        return None
    lo_c, hi_c = hmin, L
    if count(lo_c)[-1] < n:
        return "uniform"
    for _ in range(200):
        mid = math.sqrt(lo_c * hi_c)
        if count(mid)[-1] > n:
            lo_c = mid
        else:
            hi_c = mid
        if hi_c / lo_c < 1 + 1e-12:
            break
    F = count(hi_c)
    return F * (n / F[-1]), s


def graded_grid(a: float, b: float, n: int, layers: Sequence[tuple[float, float]] = (),
                avoid: Sequence[float] = (), slope: float = 0.15) -> Grid1D:
    """Grid of n cells refined geometrically toward each (location, width) layer.

    Every band [p - w, p + w] (clipped to [a, b]) receives at least 16 nodes and
    neighbouring cells differ by at most a factor 1.2.  Points in ``avoid`` are
    placed a quarter cell away from the nearest node, so they are neither nodes
    nor cell midpoints.
    """
    if not b > a:
        raise ValueError("need a < b")
    for p, w in layers:
        if not w > 0 or not a <= p <= b:
            raise ValueError(f"bad layer ({p}, {w})")
    L = b - a
    levels_x = None
    if layers:
        bands = [(max(a, p - w), min(b, p + w)) for p, w in layers]
        # extra resolution inside layers when n allows it, the bare minimum otherwise
        for K in (max(17.0, n / (6.0 * len(layers))), 17.0):
            levels_x = _level_map(a, b, n, bands, K, slope)
            if levels_x is not None:
                break
        if levels_x is None:
            raise ValueError(f"infeasible refinement: {n} cells cannot resolve layers {list(layers)}")
        if isinstance(levels_x, str):
            levels_x = None

    if levels_x is None:
        x = np.linspace(a, b, n + 1)
        F_of = lambda t: (np.asarray(t) - a) / L * n
        x_of = lambda lev: a + L * np.asarray(lev) / n
    else:
        F, s = levels_x
        F_of = lambda t: np.interp(t, s, F)
        x_of = lambda lev: np.interp(lev, F, s)
        x = x_of(np.arange(n + 1, dtype=float))

    if avoid:
        lev = np.arange(n + 1, dtype=float)
        span = 10.0
        for k in avoid:
            if not a < k < b:
                continue
            sk = float(F_of(k))
            frac = sk - math.floor(sk)
            tau = frac - 0.25
            if tau > 0.5:
                tau -= 1.0
            tent = np.clip(1 - np.abs(lev - sk) / span, 0, None)
            tent[0] = tent[-1] = 0.0
            lev = lev + tau * tent
        x = x_of(lev)

    x[0], x[-1] = a, b
    grid = Grid1D(x)
    for p, w in layers:
        lo, hi = max(a, p - w), min(b, p + w)
        inside = np.count_nonzero((x >= lo) & (x <= hi))
        if inside < 16:
            raise ValueError(f"infeasible refinement: layer ({p}, {w}) holds {inside} nodes")
    if grid.grading() > MAX_GRADING:
        raise ValueError(f"infeasible refinement: grading {grid.grading():.3f}")
    return grid


# --------------------------------------------------------------------------
# boundary conditions, drift potentials, problems

@dataclass(frozen=True)
class BoundaryCondition:
    """Dirichlet, Neumann or Robin data for one face.

    Robin data is either a constant ``c`` or a product ``k * beta(x, y)``.
    With ``per_diffusion`` the coefficient is ``k * beta / D`` (so ``D`` times
    the coefficient stays fixed as D varies).
    """

    kind: str
    c: float | None = None
    k: float | None = None
    beta: ex.Expr | None = None
    per_diffusion: bool = False

    def __post_init__(self):
        kind = self.kind.lower()
        object.__setattr__(self, "kind", kind)
        if kind not in KINDS:
            raise ValueError(f"unknown boundary kind {self.kind!r}")
        if kind != "robin":
            if any(v is not None for v in (self.c, self.k, self.beta)) or self.per_diffusion:
                raise ValueError(f"{kind} boundary carries no data")
            return
        if self.beta is not None:
            object.__setattr__(self, "beta", _as_expr(self.beta))
            if self.k is None:
                object.__setattr__(self, "k", 1.0)
        if self.c is None and self.beta is None:
            raise ValueError("robin boundary needs c or k*beta")
        if self.c is not None and self.per_diffusion:
            raise ValueError("per_diffusion applies to the k*beta form")
        for v in (self.c, self.k):
            if v is not None and not math.isfinite(v):
                raise ValueError("robin coefficient must be finite")

    @classmethod
    def dirichlet(cls):
        return cls("dirichlet")

    @classmethod
    def neumann(cls):
        return cls("neumann")

    @classmethod
    def robin(cls, c=None, k=None, beta=None, per_diffusion=False):
        return cls("robin", c=c, k=k, beta=beta, per_diffusion=per_diffusion)

    def beta_values(self, point):
        """beta on the face (1 when the constant form is used)."""
        if self.beta is None:
            return 1.0
        return ex.evaluate(self.beta, point)

    def coefficient(self, D: float, point):
        """Robin coefficient c at the face point(s); 0 for Neumann."""
        if self.kind == "neumann":
            return 0.0 * np.asarray(point["x"] if isinstance(point, Mapping) else point, dtype=float)
        if self.kind == "dirichlet":
            raise ValueError("dirichlet face has no coefficient")
        if self.beta is None:
            return self.c + 0.0 * np.asarray(point["x"] if isinstance(point, Mapping) else point, dtype=float)
        c = self.k * np.asarray(self.beta_values(point), dtype=float)
        return c / D if self.per_diffusion else c

    def describe(self) -> str:
        if self.kind != "robin":
            return self.kind
        if self.beta is None:
            return f"robin c={self.c!r}"
        tail = " per_D" if self.per_diffusion else ""
        return f"robin k={self.k!r} beta={ex.to_source(self.beta)}{tail}"


@dataclass(frozen=True, eq=False)
class Potential:
    """Drift potential m with symbolic first and second derivatives.

    Built either from an expression, or from its gradient alone (1D) with the
    values of m tabulated by quadrature.
    """

    dim: int
    expr: ex.Expr | None
    grad: tuple
    hess: tuple
    table: tuple | None = None

    @classmethod
    def from_expr(cls, m, dim: int = 1) -> "Potential":
        m = _as_expr(m)
        names = ("x", "y")[:dim]
        extra = ex.variables(m) - set(names)
        if extra:
            raise ValueError(f"drift uses {sorted(extra)} in dimension {dim}")
        g = tuple(ex.differentiate(m, v) for v in names)
        H = tuple(tuple(ex.differentiate(gi, v) for v in names) for gi in g)
        return cls(dim, m, g, H)

    @classmethod
    def from_gradient(cls, dm, a: float, b: float, knots: int = 10_000) -> "Potential":
        """1D potential with m(a) = 0 and m' = dm, tabulated on ``knots`` cells."""
        dm = _as_expr(dm)
        d2m = ex.differentiate(dm, "x")
        xk = np.linspace(a, b, knots + 1)
        gx, gw = np.polynomial.legendre.leggauss(8)
        lo, hi = xk[:-1], xk[1:]
        mid, half = (lo + hi) / 2, (hi - lo) / 2
        pts = mid[:, None] + half[:, None] * gx[None, :]
        vals = np.asarray(ex.evaluate(dm, {"x": pts}), dtype=float)
        cell = (vals * gw[None, :]).sum(axis=1) * half
        m = np.concatenate([[0.0], np.cumsum(cell)])
        return cls(1, None, (dm,), ((d2m,),), (xk, m))

    def _pt(self, *coords):
        return dict(zip(("x", "y"), coords))

    def value(self, *coords):
        if self.expr is not None:
            return ex.evaluate(self.expr, self._pt(*coords))
        xk, mk = self.table
        out = np.interp(coords[0], xk, mk)
        return float(out) if np.ndim(out) == 0 else out

    def gradient(self, *coords) -> list:
        return [ex.evaluate(g, self._pt(*coords)) for g in self.grad]

    def hessian(self, *coords) -> list:
        return [[ex.evaluate(h, self._pt(*coords)) for h in row] for row in self.hess]

    def laplacian(self, *coords):
        return sum(ex.evaluate(self.hess[i][i], self._pt(*coords)) for i in range(self.dim))

    def kink_candidates(self) -> list:
        src = self.expr if self.expr is not None else self.grad[0]
        return ex.abs_arguments(src)

    def source(self) -> str:
        if self.expr is not None:
            return ex.to_source(self.expr)
        return f"integral of ({ex.to_source(self.grad[0])})"


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """-D lap(phi) - 2 alpha grad(m).grad(phi) + V phi = lambda phi with face conditions."""

    dimension: int
    D: float
    alpha: float
    m: Potential
    V: ex.Expr
    bc: Mapping[str, BoundaryCondition]
    domain: tuple = ((0.0, 1.0),)
    kinks: tuple = ()

    def __post_init__(self):
        if not isinstance(self.m, Potential):
            object.__setattr__(self, "m", Potential.from_expr(self.m, self.dimension))
        object.__setattr__(self, "V", _as_expr(self.V))
        object.__setattr__(self, "bc", dict(self.bc))
        dom = tuple(tuple(float(v) for v in iv) for iv in self.domain)
        if self.dimension == 2 and len(dom) == 1:
            dom = dom * 2
        object.__setattr__(self, "domain", dom)
        object.__setattr__(self, "kinks", tuple(sorted(float(k) for k in self.kinks)))
        object.__setattr__(self, "D", float(self.D))
        object.__setattr__(self, "alpha", float(self.alpha))

    @property
    def faces(self):
        return FACES_1D if self.dimension == 1 else FACES_2D

    def with_D(self, D: float) -> "ProblemSpec":
        return replace_spec(self, D=D)

    def with_V(self, V) -> "ProblemSpec":
        return replace_spec(self, V=V)

    def has_kinks(self) -> bool:
        return bool(self.kinks)

    def face_point(self, face: str, coord=None):
        (ax, bx), *rest = self.domain
        if face in ("left", "right"):
            x = ax if face == "left" else bx
            return {"x": x} if coord is None else {"x": x, "y": coord}
        ay, by = rest[0]
        if face == "bottom":
            return {"x": coord, "y": ay}
        return {"x": coord, "y": by}


def replace_spec(spec: ProblemSpec, **changes) -> ProblemSpec:
    kw = dict(dimension=spec.dimension, D=spec.D, alpha=spec.alpha, m=spec.m, V=spec.V,
              bc=spec.bc, domain=spec.domain, kinks=spec.kinks)
    kw.update(changes)
    return ProblemSpec(**kw)


def make_problem(m, V="0", bc="dirichlet", D=1.0, alpha=1.0, domain=((0.0, 1.0),),
                 dimension=1, kinks=()) -> ProblemSpec:
    """Convenience constructor; ``bc`` is a condition for every face or a face mapping."""
    faces = FACES_1D if dimension == 1 else FACES_2D
    if isinstance(bc, (str, BoundaryCondition)):
        bc = {f: bc for f in faces}
    bc = {f: (BoundaryCondition(v) if isinstance(v, str) else v) for f, v in bc.items()}
    return ProblemSpec(dimension, D, alpha, m, V, bc, domain, kinks)


def validate(spec: ProblemSpec) -> list[str]:
    """Diagnostics; an empty list means the problem is well posed here."""
    out = []
    if not (math.isfinite(spec.D) and spec.D > 0):
        out.append("nonpositive diffusion")
    if not (math.isfinite(spec.alpha) and spec.alpha >= 0):
        out.append("advection strength must be finite and nonnegative")
    if spec.dimension not in (1, 2):
        out.append(f"unsupported dimension {spec.dimension}")
        return out
    if len(spec.domain) != spec.dimension or any(not lo < hi for lo, hi in spec.domain):
        out.append("domain must be nonempty intervals, one per dimension")
        return out
    names = {"x", "y"} if spec.dimension == 2 else {"x"}
    for label, e in (("V", spec.V),):
        extra = ex.variables(e) - names
        if extra:
            out.append(f"{label} uses variables {sorted(extra)}")
    if spec.m.dim != spec.dimension:
        out.append("drift dimension does not match problem dimension")
    missing = [f for f in spec.faces if f not in spec.bc]
    unknown = [f for f in spec.bc if f not in spec.faces]
    if missing:
        out.append(f"missing boundary conditions for {missing}")
    if unknown:
        out.append(f"unknown faces {unknown}")
    if spec.kinks and spec.dimension != 1:
        out.append("declared kinks are supported in 1D only")

    # differentiability of m away from kinks, sampled
    if spec.dimension == 1:
        (a, b), = spec.domain
        xs = np.linspace(a, b, 2001)
        for k in spec.kinks:
            if not a < k < b:
                out.append(f"kink {k} outside the open domain")
        if spec.kinks:
            gap = 1e-9 * (b - a)
            keep = np.ones(xs.size, bool)
            for k in spec.kinks:
                keep &= np.abs(xs - k) > gap
            xs = xs[keep]
        try:
            g = spec.m.gradient(xs)[0]
            H = spec.m.hessian(xs)[0][0]
            if not (np.all(np.isfinite(g)) and np.all(np.isfinite(H))):
                out.append("drift derivatives not finite on the domain")
        except ex.ExprDomainError as err:
            out.append(f"drift not twice differentiable away from declared kinks: {err}")
        try:
            v = ex.evaluate(spec.V, {"x": xs})
            if not np.all(np.isfinite(v)):
                out.append("V not finite on the domain")
        except ex.ExprDomainError as err:
            out.append(f"V undefined on the domain: {err}")
    else:
        (ax, bx), (ay, by) = spec.domain
        X, Y = np.meshgrid(np.linspace(ax, bx, 101), np.linspace(ay, by, 101), indexing="ij")
        try:
            H = spec.m.hessian(X, Y)
            if not all(np.all(np.isfinite(h)) for row in H for h in row):
                out.append("drift derivatives not finite on the domain")
        except ex.ExprDomainError as err:
            out.append(f"drift not twice differentiable: {err}")

    for face, bcnd in spec.bc.items():
        if face not in spec.faces:
            continue
        if bcnd.kind == "robin" and bcnd.beta is not None:
            pts = _face_samples(spec, face)
            try:
                beta = np.asarray(bcnd.beta_values(pts), dtype=float)
                c = np.asarray(bcnd.coefficient(spec.D, pts), dtype=float)
                scale = bcnd.k / spec.D if bcnd.per_diffusion else bcnd.k
                if not np.all(np.isfinite(c)) or not np.allclose(c, scale * beta, rtol=1e-12, atol=0):
                    out.append(f"robin data on {face} inconsistent with c = k*beta")
            except ex.ExprDomainError as err:
                out.append(f"robin beta undefined on {face}: {err}")
            if spec.dimension == 1 and "y" in ex.variables(bcnd.beta):
                out.append(f"robin beta on {face} uses y in 1D")
    return out


def _face_samples(spec: ProblemSpec, face: str, n: int = 64):
    if spec.dimension == 1:
        return spec.face_point(face)
    (ax, bx), (ay, by) = spec.domain
    t = np.linspace(ay, by, n) if face in ("left", "right") else np.linspace(ax, bx, n)
    p = spec.face_point(face, t)
    return {k: (np.full(n, v) if np.ndim(v) == 0 else v) for k, v in p.items()}
