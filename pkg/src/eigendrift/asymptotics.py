"""Limits of the principal eigenvalue for small and large diffusion.

Small D: the eigenfunction concentrates where the drift potential m is
stationary (interior critical points and intervals, boundary points with zero
gradient) or where the gradient points straight out of the domain.  Each such
candidate x contributes

    V(x) + alpha * sum_i (|kappa_i| + kappa_i)  (+ 2 alpha c |grad m| on Robin faces)

with kappa_i the Hessian eigenvalues, and the limit is the smallest
contribution.  Large D: the sign of the principal Laplace-Robin eigenvalue mu1
decides between +inf, -inf and a finite limit.

The module also runs D sweeps on refined meshes and fits decay rates.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, stats

from . import eigen
from . import expr as ex
from .model import (BoundaryCondition, Field, Grid1D, Grid2D, Potential, ProblemSpec,
                    graded_grid, make_problem, replace_spec)

log = logging.getLogger(__name__)

SAMPLES = 10_000
INF = math.inf


# --------------------------------------------------------------------------
# critical sets

@dataclass(frozen=True)
class CriticalPoint:
    location: tuple
    kappa: tuple = ()
    grad_norm: float = 0.0
    face: str | None = None

    @property
    def x(self) -> float:
        return self.location[0]


@dataclass(frozen=True)
class CriticalInterval:
    """Maximal run where the gradient vanishes; ``open_left``/``open_right`` mark a boundary end."""

    left: float
    right: float
    open_left: bool = False
    open_right: bool = False

    @property
    def location(self):
        return (self.left, self.right)


@dataclass(frozen=True)
class CriticalSet:
    sigma1: tuple
    sigma2: tuple
    sigma3: tuple
    tol_grad: float
    diagnostics: tuple = ()

    @property
    def points(self):
        return [p for p in self.sigma1 if isinstance(p, CriticalPoint)]

    @property
    def intervals(self):
        return [p for p in self.sigma1 if isinstance(p, CriticalInterval)]


def _potential(m, dim=1) -> Potential:
    return m if isinstance(m, Potential) else Potential.from_expr(m, dim)


def _safe_eval(e: ex.Expr, xs: np.ndarray):
    """Evaluate on samples, dropping those where the expression is undefined."""
    keep = np.ones(xs.size, bool)
    for _ in range(64):
        try:
            vals = np.asarray(ex.evaluate(e, {"x": xs[keep]}), float) * np.ones(int(keep.sum()))
            out = np.full(xs.size, np.nan)
            out[keep] = vals
            return out
        except ex.ExprDomainError as err:
            if err.index is None:
                raise
            keep[np.flatnonzero(keep)[err.index]] = False
    raise ex.ExprError("too many undefined samples")


def hessian_eigs(m, x) -> tuple:
    """Hessian eigenvalues of m at a point, largest first."""
    pot = _potential(m, 2 if np.ndim(x) and len(x) == 2 else 1)
    if pot.dim == 1:
        xx = x[0] if np.ndim(x) else x
        return (float(pot.hessian(float(xx))[0][0]),)
    H = pot.hessian(float(x[0]), float(x[1]))
    mxx, mxy, myy = float(H[0][0]), float(H[0][1]), float(H[1][1])
    mean = 0.5 * (mxx + myy)
    rad = math.hypot(0.5 * (mxx - myy), mxy)
    return (mean + rad, mean - rad)


def critical_points(m, domain, tol_grad: float | None = None, kinks=()) -> CriticalSet:
    """Interior critical points/intervals and the boundary sets of m."""
    if len(domain) == 2 and not np.ndim(domain[0]):
        domain = (tuple(domain),)
    dim = len(domain)
    pot = _potential(m, dim)
    if dim == 2:
        return _critical_points_2d(pot, domain, tol_grad)
    (a, b), = domain
    dm = pot.grad[0]
    xs = np.linspace(a, b, SAMPLES + 1)
    g = _safe_eval(dm, xs)
    finite = np.isfinite(g)
    scale = float(np.nanmax(np.abs(g))) if finite.any() else 0.0
    tol = tol_grad if tol_grad is not None else 1e-8 * scale
    diags = []
    if scale == 0.0 and tol == 0.0:
        tol = 1e-300
    small = finite & (np.abs(g) < tol)

    def is_small(x):
        try:
            return abs(float(ex.evaluate(dm, {"x": x}))) < tol
        except ex.ExprDomainError:
            return False

    def refine_edge(inside, outside):
        # bisection on the predicate |m'| < tol
        for _ in range(60):
            mid = 0.5 * (inside + outside)
            if is_small(mid):
                inside = mid
            else:
                outside = mid
        return inside

    def kink_between(lo, hi):
        return any(lo <= k <= hi for k in kinks) or not (np.all(np.isfinite(g[(xs >= lo) & (xs <= hi)])))

    sigma1, sigma2, sigma3 = [], [], []
    # runs of small samples
    i = 0
    n = xs.size
    runs = []
    while i < n:
        if small[i]:
            j = i
            while j + 1 < n and small[j + 1]:
                j += 1
            runs.append((i, j))
            i = j + 1
        else:
            i += 1
    point_runs = set()
    for i, j in runs:
        if i == j and 0 < i < n - 1:
            point_runs.add(i)
            continue
        if i == j:
            continue  # isolated boundary zero, handled with the endpoints
        lo = xs[i] if i == 0 else refine_edge(xs[i], xs[i - 1])
        hi = xs[j] if j == n - 1 else refine_edge(xs[j], xs[j + 1])
        sigma1.append(CriticalInterval(float(lo), float(hi), i == 0, j == n - 1))

    for i in sorted(point_runs):
        x0 = float(xs[i])
        if g[i] != 0 and np.isfinite(g[i - 1]) and np.isfinite(g[i + 1]) and g[i - 1] * g[i + 1] < 0:
            x0 = _root(dm, xs[i - 1], xs[i + 1])
        sigma1.append(_interior_point(pot, x0, diags))

    # sign changes between non-small samples
    for i in range(n - 1):
        if small[i] or small[i + 1]:
            continue
        gi, gj = g[i], g[i + 1]
        if not (np.isfinite(gi) and np.isfinite(gj)):
            # undefined sample: look across it for a sign change
            continue
        if gi * gj < 0:
            if kink_between(xs[i], xs[i + 1]):
                diags.append(f"sign change of m' across a kink in [{xs[i]:.6g}, {xs[i + 1]:.6g}] excluded")
                continue
            sigma1.append(_interior_point(pot, _root(dm, xs[i], xs[i + 1]), diags))
    # sign changes across undefined samples (kinks)
    bad = np.flatnonzero(~finite)
    for i in bad:
        lo, hi = i - 1, i + 1
        if lo >= 0 and hi < n and np.isfinite(g[lo]) and np.isfinite(g[hi]) and g[lo] * g[hi] < 0:
            diags.append(f"sign change of m' across a kink near {xs[i]:.6g} excluded")

    sigma1.sort(key=lambda p: p.location[0])
    # endpoints
    for x0, normal, face in ((a, -1.0, "left"), (b, 1.0, "right")):
        try:
            gx = float(ex.evaluate(dm, {"x": x0}))
        except ex.ExprDomainError:
            diags.append(f"m' undefined at boundary {x0}")
            continue
        if abs(gx) < tol:
            sigma2.append(CriticalPoint((x0,), hessian_eigs(pot, x0), abs(gx), face))
        elif gx * normal > tol:
            sigma3.append(CriticalPoint((x0,), (), abs(gx), face))
    return CriticalSet(tuple(sigma1), tuple(sigma2), tuple(sigma3), tol, tuple(diags))


def _root(dm, lo, hi) -> float:
    f = lambda x: float(ex.evaluate(dm, {"x": x}))
    return float(optimize.brentq(f, float(lo), float(hi), xtol=1e-12, rtol=4 * np.finfo(float).eps))


def _interior_point(pot, x0, diags) -> CriticalPoint:
    try:
        kappa = hessian_eigs(pot, x0)
    except ex.ExprDomainError:
        diags.append(f"Hessian undefined at critical point {x0:.6g}")
        kappa = (math.inf,)
    return CriticalPoint((float(x0),), kappa)


def _critical_points_2d(pot, domain, tol_grad):
    (ax, bx), (ay, by) = domain
    gx, gy = pot.grad
    (hxx, hxy), (_, hyy) = pot.hess
    X, Y = np.meshgrid(np.linspace(ax, bx, 200), np.linspace(ay, by, 200), indexing="ij")
    X, Y = X.ravel(), Y.ravel()

    def ev(e, x, y):
        return np.asarray(ex.evaluate(e, {"x": x, "y": y}), float) * np.ones(x.shape)

    G0 = np.hypot(ev(gx, X, Y), ev(gy, X, Y))
    scale = float(np.max(G0))
    tol = tol_grad if tol_grad is not None else 1e-8 * max(scale, 1e-300)
    x, y = X.copy(), Y.copy()
    for _ in range(50):
        fx, fy = ev(gx, x, y), ev(gy, x, y)
        a11, a12, a22 = ev(hxx, x, y), ev(hxy, x, y), ev(hyy, x, y)
        det = a11 * a22 - a12 * a12
        ok = np.abs(det) > 1e-300
        dx = np.where(ok, (a22 * fx - a12 * fy) / np.where(ok, det, 1), 0.0)
        dy = np.where(ok, (a11 * fy - a12 * fx) / np.where(ok, det, 1), 0.0)
        x, y = x - dx, y - dy
        x = np.where(np.isfinite(x), x, np.nan)
        y = np.where(np.isfinite(y), y, np.nan)
    res = np.hypot(ev(gx, np.nan_to_num(x), np.nan_to_num(y)), ev(gy, np.nan_to_num(x), np.nan_to_num(y)))
    inside = np.isfinite(x) & np.isfinite(y) & (x > ax) & (x < bx) & (y > ay) & (y < by) & (res < tol)
    pts = []
    for px, py in sorted(zip(x[inside], y[inside])):
        if all(math.hypot(px - qx, py - qy) > 1e-6 for qx, qy in pts):
            pts.append((float(px), float(py)))
    sigma1 = tuple(CriticalPoint((px, py), hessian_eigs(pot, (px, py))) for px, py in pts)
    return CriticalSet(sigma1, (), (), tol, ("boundary sets are not computed in 2D",))


# --------------------------------------------------------------------------
# small-D limit

@dataclass(frozen=True)
class Candidate:
    kind: str                 # interior point, interval, boundary zero, boundary outflow
    location: tuple
    V: float
    curvature: float          # alpha * sum(|kappa| + kappa)
    correction: float         # Robin boundary term
    total: float


@dataclass(frozen=True)
class AsymptoticReport:
    limit: float
    location: tuple | None
    candidates: tuple
    rule: str
    warnings: tuple = ()

    def recompute(self) -> float:
        return min((c.total for c in self.candidates), default=INF)


def _min_over_interval(V: ex.Expr, lo: float, hi: float):
    xs = np.linspace(lo, hi, 2001)
    vals = np.asarray(ex.evaluate(V, {"x": xs}), float) * np.ones(xs.size)
    k = int(np.argmin(vals))
    best_x, best = float(xs[k]), float(vals[k])
    span = (hi - lo) / 2000
    a, b = max(lo, best_x - span), min(hi, best_x + span)
    if b > a:
        r = optimize.minimize_scalar(lambda t: float(ex.evaluate(V, {"x": t})), bounds=(a, b),
                                     method="bounded", options={"xatol": 1e-13})
        if r.success and r.fun < best:
            best_x, best = float(r.x), float(r.fun)
    return best_x, best


def limit_small_D(spec: ProblemSpec, tol_grad: float | None = None) -> AsymptoticReport:
    """Closed-form D -> 0 limit assembled from the critical sets of m."""
    a = spec.alpha
    warnings = []
    V = spec.V
    Vat = lambda *p: float(ex.evaluate(V, dict(zip(("x", "y"), p))))
    cands = []
    if spec.dimension == 2:
        cs = critical_points(spec.m, spec.domain, tol_grad)
        (ax, bx), (ay, by) = spec.domain
        # boundary candidates: zero gradient or outward gradient anywhere on the edges
        t = np.linspace(0.0, 1.0, 401)
        edges = {"left": (np.full_like(t, ax), ay + (by - ay) * t, -1, 0),
                 "right": (np.full_like(t, bx), ay + (by - ay) * t, 1, 0),
                 "bottom": (ax + (bx - ax) * t, np.full_like(t, ay), -1, 1),
                 "top": (ax + (bx - ax) * t, np.full_like(t, by), 1, 1)}
        for face, (xe, ye, sgn, axis) in edges.items():
            if spec.bc[face].kind == "dirichlet":
                grad = spec.m.gradient(xe, ye)
                gn = np.hypot(grad[0] * np.ones(t.shape), grad[1] * np.ones(t.shape))
                if np.any(gn < cs.tol_grad):
                    raise ValueError(f"boundary critical points on {face}: 2D boundary formulas are not supported")
                continue
            grad = spec.m.gradient(xe, ye)
            gn = np.hypot(grad[0] * np.ones(t.shape), grad[1] * np.ones(t.shape))
            outward = sgn * grad[axis] * np.ones(t.shape)
            if np.any(gn < cs.tol_grad) or np.any(np.abs(outward - gn) <= 1e-9 * max(1.0, gn.max())):
                raise ValueError(f"boundary candidates on {face}: 2D boundary formulas are not supported")
        for p in cs.sigma1:
            curv = a * sum(abs(k) + k for k in p.kappa)
            v = Vat(*p.location)
            cands.append(Candidate("interior point", p.location, v, curv, 0.0, v + curv))
        return _report(cands, "interior critical points (2D)", warnings + list(cs.diagnostics))

    (lo_d, hi_d), = spec.domain
    cs = critical_points(spec.m, spec.domain, tol_grad, spec.kinks)
    warnings += list(cs.diagnostics)
    for p in cs.sigma1:
        if isinstance(p, CriticalInterval):
            x0, v = _min_over_interval(V, p.left, p.right)
            cands.append(Candidate("interval", (p.left, p.right), v, 0.0, 0.0, v))
        else:
            curv = a * sum(abs(k) + k for k in p.kappa)
            v = Vat(p.x)
            cands.append(Candidate("interior point", p.location, v, curv, 0.0, v + curv))
    for p in cs.sigma2:
        bc = spec.bc[p.face]
        curv = a * sum(abs(k) + k for k in p.kappa)
        if bc.kind == "dirichlet" and any(k != 0 for k in p.kappa):
            warnings.append(f"boundary zero of m' at {p.x} with m'' = {p.kappa[0]:.6g} on a Dirichlet face: "
                            "the closed form assumes a degenerate boundary critical point")
        v = Vat(p.x)
        cands.append(Candidate("boundary zero", p.location, v, curv, 0.0, v + curv))
    kinds = set()
    for p in cs.sigma3:
        bc = spec.bc[p.face]
        kinds.add(bc.kind)
        v = Vat(p.x)
        if bc.kind == "dirichlet":
            continue
        if bc.kind == "neumann":
            cands.append(Candidate("boundary outflow", p.location, v, 0.0, 0.0, v))
            continue
        beta = float(np.asarray(bc.beta_values({"x": p.x}), float)) if bc.beta is not None else None
        if bc.per_diffusion:
            # coefficient k*beta/D blows up as D -> 0: behaves like a Dirichlet face where beta > 0
            if beta > 0:
                continue
            corr = 0.0
        else:
            c = bc.c if bc.beta is None else bc.k * beta
            corr = 2 * a * c * p.grad_norm
        cands.append(Candidate("boundary outflow", p.location, v, 0.0, corr, v + corr))
    rule = "critical points of m with " + "/".join(spec.bc[f].kind for f in ("left", "right")) + " faces"
    return _report(cands, rule, warnings)


def _report(cands, rule, warnings):
    if not cands:
        return AsymptoticReport(INF, None, (), rule, tuple(warnings))
    best = min(cands, key=lambda c: c.total)
    return AsymptoticReport(best.total, best.location, tuple(cands), rule, tuple(warnings))


# --------------------------------------------------------------------------
# large-D limit

PLUS_INFINITY, MINUS_INFINITY, FINITE = "plus_infinity", "minus_infinity", "finite"


@dataclass(frozen=True)
class LargeDReport:
    mu1: float
    verdict: str
    value: float | None = None
    phi0: Field | None = field(default=None, repr=False)
    certified: bool = False       # classification from exact algebra
    tolerance_based: bool = False
    gradient_weighted_value: float | None = None  # integral without the phi0 factor

    @property
    def limit(self) -> float:
        if self.verdict == PLUS_INFINITY:
            return INF
        if self.verdict == MINUS_INFINITY:
            return -INF
        return self.value


def robin_line_phi0(k0: float, k1: float, tol: float = 1e-12):
    """Coefficients (a, b) of the normalized linear null function b*(k0 x + 1) on (0, 1)."""
    scale = 1.0 + abs(k0) + abs(k1) + abs(k0 * k1)
    if not k0 > -1:
        raise ValueError("need k0 > -1 for a positive null function")
    if abs(k0 + k1 + k0 * k1) > tol * scale:
        raise ValueError("k0 + k1 + k0*k1 must vanish")
    if k0 == 0:
        b = 1.0
    else:
        b = ((1 + k0) ** 3 - 1) / (3 * k0)
        b = b ** -0.5
    return k0 * b, b


def _limiting_faces(spec: ProblemSpec):
    """Face data as D -> infinity: per-D Robin data tends to Neumann."""
    out = {}
    for f, bc in spec.bc.items():
        if bc.kind == "robin" and bc.per_diffusion:
            out[f] = BoundaryCondition.neumann()
        else:
            out[f] = bc
    return out


def _constant_robin(bc: BoundaryCondition):
    if bc.kind == "neumann":
        return 0.0
    if bc.kind != "robin":
        return None
    if bc.beta is None:
        return float(bc.c)
    if ex.is_constant(bc.beta):
        return bc.k * float(ex.evaluate(bc.beta, {}))
    return None


def _algebraic_1d(faces, L):
    """(sign of mu1, linear null function coefficients in s = x - a) or None."""
    lf, rf = faces["left"], faces["right"]
    if lf.kind == "dirichlet" and rf.kind == "dirichlet":
        return 1, None
    if lf.kind == "dirichlet":
        k1 = _constant_robin(rf)
        if k1 is None:
            return None
        s = 1 + k1 * L
        return (0 if s == 0 else int(np.sign(s))), (0.0, 1.0)
    k0 = _constant_robin(lf)
    if k0 is None:
        return None
    if rf.kind == "dirichlet":
        s = 1 + k0 * L
        return (0 if s == 0 else int(np.sign(s))), (1.0, k0)
    k1 = _constant_robin(rf)
    if k1 is None:
        return None
    if not k0 * L > -1:
        return -1, None
    s = k0 + k1 + k0 * k1 * L
    scale = 1 + abs(k0) + abs(k1) + abs(k0 * k1 * L)
    if abs(s) <= 1e-12 * scale:
        return 0, (1.0, k0)
    return int(np.sign(s)), None


def laplace_robin_mu1(spec: ProblemSpec, n: int = 800):
    """Principal eigenpair of -lap(phi) = mu phi with the limiting face data."""
    lap = replace_spec(spec, D=1.0, alpha=0.0, m=Potential.from_expr(ex.Const(0.0), spec.dimension),
                       V=ex.Const(0.0), bc=_limiting_faces(spec), kinks=())
    if spec.dimension == 1:
        grid = Grid1D.uniform(*spec.domain[0], n)
    else:
        k = max(64, n // 8)
        grid = Grid2D.uniform(*spec.domain[0], k, *spec.domain[1], k)
    r = eigen.solve(lap, grid, "sym")
    return r.lam, r.eigenfunction


def limit_large_D(spec: ProblemSpec, n: int = 800) -> LargeDReport:
    """D -> infinity: +inf, -inf, or the finite value from the null function phi0."""
    faces = _limiting_faces(spec)
    alg = None
    if spec.dimension == 1:
        (a, b), = spec.domain
        alg = _algebraic_1d(faces, b - a)
    if alg is not None:
        sign, lin = alg
        mu1 = 0.0 if sign == 0 else math.nan
        if sign != 0:
            mu_num, _ = laplace_robin_mu1(spec, n)
            mu1 = mu_num
            return LargeDReport(mu1, PLUS_INFINITY if sign > 0 else MINUS_INFINITY, certified=True)
        value, alt, phi0 = _finite_value_linear(spec, lin)
        return LargeDReport(0.0, FINITE, value, phi0, True, False, alt)
    mu1, phi = laplace_robin_mu1(spec, n)
    gate = 1e-6 * (1 + abs(mu1))
    if mu1 > gate:
        return LargeDReport(mu1, PLUS_INFINITY)
    if mu1 < -gate:
        return LargeDReport(mu1, MINUS_INFINITY)
    value, alt = _finite_value_numeric(spec, phi)
    return LargeDReport(mu1, FINITE, value, phi, False, True, alt)


def _finite_value_linear(spec, lin):
    """Integrals with phi0 = c0 + c1 (x - a), normalized, by Gauss-Legendre quadrature."""
    (a, b), = spec.domain
    c0, c1 = lin
    gx, gw = np.polynomial.legendre.leggauss(20)
    edges = np.linspace(a, b, 201)
    mids, halves = (edges[1:] + edges[:-1]) / 2, (edges[1:] - edges[:-1]) / 2
    xs = (mids[:, None] + halves[:, None] * gx[None, :]).ravel()
    ws = (halves[:, None] * gw[None, :]).ravel()
    phi = c0 + c1 * (xs - a)
    norm = math.sqrt(float(ws @ (phi * phi)))
    phi, dphi = phi / norm, c1 / norm
    V = np.asarray(ex.evaluate(spec.V, {"x": xs}), float) * np.ones(xs.size)
    dm = np.asarray(spec.m.gradient(xs)[0], float) * np.ones(xs.size)
    al = spec.alpha
    value = float(ws @ (V * phi * phi - 2 * al * phi * dm * dphi))
    alt = float(ws @ (V * phi * phi - 2 * al * dm * dphi))
    grid = Grid1D.uniform(a, b, 400)
    phi0 = Field(grid, (c0 + c1 * (grid.nodes - a)) / norm)
    return value, alt, phi0


def _finite_value_numeric(spec, phi: Field):
    vals = np.asarray(phi.values, float)
    al = spec.alpha
    if isinstance(phi.grid, Grid1D):
        g = phi.grid
        x = g.nodes
        V = np.asarray(ex.evaluate(spec.V, {"x": x}), float) * np.ones(x.size)
        dm = np.asarray(spec.m.gradient(x)[0], float) * np.ones(x.size)
        dphi = np.gradient(vals, x)
        value = float(g.weights @ (V * vals * vals - 2 * al * vals * dm * dphi))
        alt = float(g.weights @ (V * vals * vals - 2 * al * dm * dphi))
        return value, alt
    g = phi.grid
    X, Y = g.mesh()
    V = np.asarray(ex.evaluate(spec.V, {"x": X, "y": Y}), float) * np.ones(X.shape)
    mx, my = (np.asarray(c, float) * np.ones(X.shape) for c in spec.m.gradient(X, Y))
    px = np.gradient(vals, g.x.nodes, axis=0)
    py = np.gradient(vals, g.y.nodes, axis=1)
    W = g.weights
    value = float(np.sum(W * (V * vals * vals - 2 * al * vals * (mx * px + my * py))))
    alt = float(np.sum(W * (V * vals * vals - 2 * al * (mx * px + my * py))))
    return value, alt


def mu1_sign_algebraic(k0: float, k1: float) -> int:
    """Sign of the Laplace-Robin principal eigenvalue on (0, 1) from the closed form."""
    if k0 <= -1:
        return -1
    s = k0 + k1 + k0 * k1
    return 0 if s == 0 else int(np.sign(s))


def mu1_robin_line(k0: float, k1: float, n: int = 400) -> float:
    """Numerical principal eigenvalue of -phi'' = mu phi on (0, 1) with Robin data k0, k1."""
    spec = make_problem("0", "0", {"left": BoundaryCondition.robin(c=k0),
                                   "right": BoundaryCondition.robin(c=k1)}, D=1.0, alpha=0.0)
    return eigen.solve(spec, Grid1D.uniform(0.0, 1.0, n), "sym").lam


# --------------------------------------------------------------------------
# sweeps

@dataclass(frozen=True)
class SweepRow:
    D: float
    grid_n: int
    lam: float
    residual: float
    form: str
    error: str | None = None


@dataclass(frozen=True)
class SweepTable:
    rows: tuple

    def __len__(self):
        return len(self.rows)

    @property
    def D(self):
        return np.array([r.D for r in self.rows])

    @property
    def lam(self):
        return np.array([r.lam for r in self.rows])


@dataclass(frozen=True)
class GridPolicy:
    n0: int = 256
    n_max: int = 1 << 17
    rel_tol: float = 1e-3
    form: str = "auto"
    h_floor: float = 1e-7


def layers_for(spec: ProblemSpec, policy: GridPolicy = GridPolicy()):
    """Refinement layers at critical locations and at outflow boundaries."""
    (a, b), = spec.domain
    L = b - a
    D, al = spec.D, spec.alpha
    if al == 0:
        return []
    eps = max(math.sqrt(D / al), 10 * policy.h_floor * L)
    cs = critical_points(spec.m, spec.domain, None, spec.kinks)
    spots = []
    for p in cs.sigma1:
        if isinstance(p, CriticalInterval):
            spots += [(p.left, eps), (p.right, eps)]
        else:
            spots.append((p.x, eps))
    for p in cs.sigma2:
        spots.append((p.x, eps))
    for k in spec.kinks:
        spots.append((k, eps))
    for x0, face in ((a, "left"), (b, "right")):
        if any(p.face == face for p in cs.sigma2):
            continue
        try:
            gx = abs(float(spec.m.gradient(x0)[0]))
        except ex.ExprDomainError:
            continue
        if gx > cs.tol_grad:
            spots.append((x0, max(10 * D / (al * gx), 10 * policy.h_floor * L)))
    out = []
    for p, w in sorted(spots):
        if w >= L / 4:
            continue
        if any(abs(p - q) < 1e-12 * L and abs(w - v) <= 1e-12 * L for q, v in out):
            continue
        out.append((float(p), float(w)))
    return out


def converged_solve(spec: ProblemSpec, policy: GridPolicy = GridPolicy()):
    """Solve on layer-graded meshes, doubling n until successive eigenvalues agree."""
    (a, b), = spec.domain
    layers = layers_for(spec, policy)
    n = policy.n0
    prev = None
    last = None
    while n <= policy.n_max:
        try:
            grid = graded_grid(a, b, n, layers, avoid=spec.kinks)
        except ValueError:
            n *= 2
            continue
        r = eigen.solve(spec, grid, policy.form)
        if prev is not None:
            scale = max(abs(r.lam), abs(prev.lam))
            if abs(r.lam - prev.lam) <= policy.rel_tol * scale:
                return r, True
        prev, last = r, r
        n *= 2
    if last is None:
        raise eigen.EigenError("no feasible mesh for the requested layers")
    return last, False


def _sweep_row(args):
    spec, D, policy = args
    s = spec.with_D(D)
    try:
        r, ok = converged_solve(s, policy)
        return SweepRow(D, r.grid_n, r.lam, r.residual, r.form.label(),
                        None if ok else "mesh refinement did not converge")
    except Exception as err:  # recorded per row, the sweep continues
        return SweepRow(D, 0, math.nan, math.nan, "", f"{type(err).__name__}: {err}")


def worker_count() -> int:
    raw = os.environ.get("EIGENDRIFT_THREADS", "0").strip() or "0"
    try:
        k = int(raw)
    except ValueError:
        k = 0
    return k if k > 0 else (os.cpu_count() or 1)


def sweep(spec: ProblemSpec, Ds, policy: GridPolicy = GridPolicy(), workers: int | None = None) -> SweepTable:
    """One converged eigenvalue per D; rows keep the input order."""
    Ds = [float(d) for d in Ds]
    if any(not d > 0 for d in Ds):
        raise ValueError("diffusion values must be positive")
    if Ds != sorted(Ds) and Ds != sorted(Ds, reverse=True):
        raise ValueError("diffusion values must be sorted")
    if spec.dimension != 1:
        raise ValueError("sweeps are implemented for 1D problems")
    jobs = [(spec, d, policy) for d in Ds]
    workers = worker_count() if workers is None else workers
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            rows = list(pool.map(_sweep_row, jobs))
    else:
        rows = [_sweep_row(j) for j in jobs]
    for r in rows:
        if r.error:
            log.warning("D=%g: %s", r.D, r.error)
    return SweepTable(tuple(rows))


# --------------------------------------------------------------------------
# rate fitting

POWER_LAW, EXP_INVERSE = "powerlaw", "expinverse"


@dataclass(frozen=True)
class RateFit:
    model: str
    slope: float
    intercept: float
    r_squared: float
    used: int
    dropped: tuple = ()


def fit_rate(table, model: str = POWER_LAW) -> RateFit:
    """Least-squares slope of log(lambda) against log(D) or 1/D."""
    model = model.lower().replace("-", "").replace("_", "")
    if model not in (POWER_LAW, EXP_INVERSE):
        raise ValueError(f"unknown model {model!r}")
    rows = table.rows if isinstance(table, SweepTable) else table
    D = np.array([float(r.D if hasattr(r, "D") else r[0]) for r in rows])
    lam = np.array([float(r.lam if hasattr(r, "lam") else r[1]) for r in rows])
    if D.size < 4:
        raise ValueError("need at least 4 rows")
    if not np.all(np.isfinite(lam)):
        raise ValueError("non-finite eigenvalue in table")
    keep = lam > 0
    dropped = tuple(f"D={d:g}: nonpositive lambda {l:g} dropped" for d, l in zip(D[~keep], lam[~keep]))
    if keep.sum() < 2:
        raise ValueError("fewer than two positive rows")
    x = np.log(D[keep]) if model == POWER_LAW else 1.0 / D[keep]
    fit = stats.linregress(x, np.log(lam[keep]))
    return RateFit(model, float(fit.slope), float(fit.intercept), float(fit.rvalue ** 2),
                   int(keep.sum()), dropped)
