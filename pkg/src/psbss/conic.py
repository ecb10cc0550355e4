"""Dense primal-dual interior-point solver for linear + second-order cone programs.

Canonical form::

    minimize    c'x
    subject to  A x = b
                h - G x  in  K

``K`` is a product of cones laid out over the rows of ``G`` in order:

* ``("nonneg", n)``       n rows, each >= 0
* ``("soc", q)``          (t, z) with ||z|| <= t
* ``("rotated_soc", q)``  (u, v, z) with 2 u v >= ||z||^2 and u, v >= 0

The rotated-cone normalization ``2uv >= ||z||^2`` is the only one used in
this package.  Internally a rotated block is mapped onto a standard second
order cone by the orthogonal (and self-inverse) change of rows
``(u, v) -> ((u + v)/sqrt2, (u - v)/sqrt2)``.

The method is the homogeneous self-dual embedding with Nesterov-Todd scaling
and a Mehrotra predictor-corrector, so infeasible and unbounded problems
return certificates instead of diverging.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
MAX_ITERS = "max_iters"
NUMERICAL_FAILURE = "numerical_failure"

CONE_KINDS = ("nonneg", "soc", "rotated_soc")
_RT2 = math.sqrt(2.0)


class StructureError(ValueError):
    """Dimensions of a conic problem or modelling spec do not line up."""


@dataclass
class ConicProblem:
    c: np.ndarray
    G: np.ndarray
    h: np.ndarray
    cones: list
    A: Optional[np.ndarray] = None
    b: Optional[np.ndarray] = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).ravel()
        n = self.c.size
        self.G = np.asarray(self.G, dtype=float).reshape(-1, n)
        self.h = np.asarray(self.h, dtype=float).ravel()
        if self.A is None:
            self.A = np.zeros((0, n))
            self.b = np.zeros(0)
        self.A = np.asarray(self.A, dtype=float).reshape(-1, n)
        self.b = np.asarray(self.b, dtype=float).ravel()
        self.cones = [(str(k), int(d)) for k, d in self.cones]
        self.check()

    @property
    def n(self) -> int:
        return self.c.size

    def check(self) -> None:
        if self.h.size != self.G.shape[0]:
            raise StructureError("G and h row counts differ")
        if self.b.size != self.A.shape[0]:
            raise StructureError("A and b row counts differ")
        total = 0
        for kind, dim in self.cones:
            if kind not in CONE_KINDS:
                raise StructureError(f"unknown cone kind {kind!r}")
            if dim < 1 or (kind == "rotated_soc" and dim < 2):
                raise StructureError(f"bad dimension {dim} for {kind}")
            total += dim
        if total != self.G.shape[0]:
            raise StructureError(f"cones cover {total} rows, G has {self.G.shape[0]}")

    def to_dict(self) -> dict:
        return {
            "schema": "psbss-conic",
            "version": 1,
            "c": self.c.tolist(),
            "G": self.G.tolist(),
            "h": self.h.tolist(),
            "A": self.A.tolist(),
            "b": self.b.tolist(),
            "cones": [list(x) for x in self.cones],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ConicProblem":
        if d.get("schema") != "psbss-conic":
            raise StructureError("not a conic problem document")
        n = len(d["c"])
        return cls(
            c=d["c"],
            G=np.array(d["G"], dtype=float).reshape(-1, n),
            h=d["h"],
            A=np.array(d["A"], dtype=float).reshape(-1, n),
            b=d["b"],
            cones=[tuple(x) for x in d["cones"]],
        )

    def to_text(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_text(cls, text: str) -> "ConicProblem":
        return cls.from_dict(json.loads(text))

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path) -> "ConicProblem":
        return cls.from_text(Path(path).read_text())

    def slack(self, x: np.ndarray) -> np.ndarray:
        return self.h - self.G @ x

    def cone_violation(self, x: np.ndarray) -> float:
        """Largest distance-like violation of ``h - Gx in K`` (0 when feasible)."""
        s = self.slack(x)
        worst = 0.0
        i = 0
        for kind, dim in self.cones:
            blk = s[i:i + dim]
            if kind == "nonneg":
                worst = max(worst, float(-blk.min()))
            elif kind == "soc":
                worst = max(worst, float(np.linalg.norm(blk[1:]) - blk[0]))
            else:
                u, v, z = blk[0], blk[1], blk[2:]
                t, r = (u + v) / _RT2, (u - v) / _RT2
                worst = max(worst, float(math.hypot(r, np.linalg.norm(z)) - t))
            i += dim
        return worst


@dataclass
class SolveResult:
    status: str
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    s: np.ndarray
    objective: float
    dual_objective: float
    primal_residual: float
    dual_residual: float
    gap: float
    iterations: int
    history: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL


# --------------------------------------------------------------------------
# modelling layer: constraint classes in a real decision vector x


@dataclass(frozen=True)
class Linear:
    """``a.x + a0 >= 0`` (or ``== 0`` when ``equality``)."""

    a: np.ndarray
    a0: float
    tag: str
    equality: bool = False

    def value(self, x) -> float:
        return float(self.a @ x + self.a0)

    def violation(self, x) -> float:
        v = self.value(x)
        return abs(v) if self.equality else max(0.0, -v)


@dataclass(frozen=True)
class SumSquares:
    """``||F x + f||^2 <= l.x + l0``."""

    F: np.ndarray
    f: np.ndarray
    l: np.ndarray
    l0: float
    tag: str

    def value(self, x) -> float:
        r = self.F @ x + self.f
        return float(self.l @ x + self.l0 - r @ r)

    def violation(self, x) -> float:
        return max(0.0, -self.value(x))

    @property
    def trivial(self) -> bool:
        return not (np.any(self.F) or np.any(self.f))


@dataclass(frozen=True)
class QuadOverLin:
    """``||F x + f||^2 <= (p.x + p0)(q.x + q0)`` with both factors >= 0."""

    F: np.ndarray
    f: np.ndarray
    p: np.ndarray
    p0: float
    q: np.ndarray
    q0: float
    tag: str

    def value(self, x) -> float:
        r = self.F @ x + self.f
        u, v = self.p @ x + self.p0, self.q @ x + self.q0
        if u < 0 or v < 0:
            return float(min(u, v))
        return float(u * v - r @ r)

    def violation(self, x) -> float:
        return max(0.0, -self.value(x))


CONSTRAINT_TYPES = {"linear": Linear, "sum_squares": SumSquares, "quad_over_lin": QuadOverLin}


def constraint_to_dict(con) -> dict:
    kind = {Linear: "linear", SumSquares: "sum_squares", QuadOverLin: "quad_over_lin"}[type(con)]
    out = {"kind": kind}
    for name, val in vars(con).items():
        out[name] = val.tolist() if isinstance(val, np.ndarray) else val
    return out


def constraint_from_dict(d: dict, n: int):
    d = dict(d)
    cls = CONSTRAINT_TYPES[d.pop("kind")]
    for name in ("a", "l", "p", "q"):
        if name in d:
            d[name] = np.asarray(d[name], dtype=float).reshape(n)
    if "F" in d:
        d["F"] = np.asarray(d["F"], dtype=float).reshape(-1, n)
        d["f"] = np.asarray(d["f"], dtype=float)
    return cls(**d)


def lower(spec) -> ConicProblem:
    """Translate a modelling spec into canonical conic form.

    ``spec`` needs ``n_vars``, ``constraints``, ``objective`` (vector) and
    ``sense`` (``"maximize"`` or ``"minimize"``).  Maximization is negated;
    the constant objective offset is not part of the conic problem.
    """
    n = int(spec.n_vars)
    c = np.asarray(spec.objective, dtype=float)
    if c.shape != (n,):
        raise StructureError("objective length differs from variable count")
    if spec.sense not in ("maximize", "minimize"):
        raise StructureError(f"unknown sense {spec.sense!r}")
    if spec.sense == "maximize":
        c = -c
    lin_G, lin_h, eq_A, eq_b = [], [], [], []
    cone_G, cone_h, cones = [], [], []
    for con in spec.constraints:
        if isinstance(con, Linear):
            if con.a.shape != (n,):
                raise StructureError(f"{con.tag}: coefficient length mismatch")
            if con.equality:
                eq_A.append(con.a)
                eq_b.append(-con.a0)
            else:
                lin_G.append(-con.a)
                lin_h.append(con.a0)
        elif isinstance(con, SumSquares):
            if con.F.shape[1:] != (n,) or con.l.shape != (n,) or con.f.shape != (con.F.shape[0],):
                raise StructureError(f"{con.tag}: shape mismatch")
            if con.trivial:
                lin_G.append(-con.l)
                lin_h.append(con.l0)
                continue
            q = con.F.shape[0]
            G = np.vstack([-con.l, np.zeros(n), -con.F])
            h = np.concatenate([[con.l0, 0.5], con.f])
            cone_G.append(G)
            cone_h.append(h)
            cones.append(("rotated_soc", q + 2))
        elif isinstance(con, QuadOverLin):
            if con.F.shape[1:] != (n,) or con.p.shape != (n,) or con.q.shape != (n,):
                raise StructureError(f"{con.tag}: shape mismatch")
            G = np.vstack([-con.p, -0.5 * con.q, -con.F])
            h = np.concatenate([[con.p0, 0.5 * con.q0], con.f])
            cone_G.append(G)
            cone_h.append(h)
            cones.append(("rotated_soc", con.F.shape[0] + 2))
        else:
            raise StructureError(f"unsupported constraint {type(con).__name__}")
    blocks_G, blocks_h, layout = [], [], []
    if lin_G:
        blocks_G.append(np.array(lin_G))
        blocks_h.append(np.array(lin_h))
        layout.append(("nonneg", len(lin_G)))
    blocks_G += cone_G
    blocks_h += cone_h
    layout += cones
    G = np.vstack(blocks_G) if blocks_G else np.zeros((0, n))
    h = np.concatenate(blocks_h) if blocks_h else np.zeros(0)
    A = np.array(eq_A).reshape(-1, n)
    b = np.array(eq_b, dtype=float)
    return ConicProblem(c=c, G=G, h=h, cones=layout, A=A, b=b)


# --------------------------------------------------------------------------
# cone bookkeeping (all cones standard after the rotated -> soc row change)


class _Cones:
    def __init__(self, layout, n_rows):
        nonneg, socs = [], []
        i = 0
        for kind, dim in layout:
            if kind == "nonneg":
                nonneg.extend(range(i, i + dim))
            else:
                socs.append((i, dim))
            i += dim
        self.lin = np.array(nonneg, dtype=int)
        self.socs = socs
        self.degree = len(nonneg) + len(socs)
        self.m = n_rows

    def identity(self) -> np.ndarray:
        e = np.zeros(self.m)
        e[self.lin] = 1.0
        for i, _ in self.socs:
            e[i] = 1.0
        return e

    def max_shift(self, u: np.ndarray) -> float:
        """Smallest ``a`` with ``u + a e`` on the cone boundary."""
        vals = [-u[self.lin].min()] if self.lin.size else []
        for i, q in self.socs:
            vals.append(np.linalg.norm(u[i + 1:i + q]) - u[i])
        return float(max(vals)) if vals else -1.0

    def prod(self, u, v) -> np.ndarray:
        """Jordan product."""
        out = np.empty_like(u)
        out[self.lin] = u[self.lin] * v[self.lin]
        for i, q in self.socs:
            u0, u1 = u[i], u[i + 1:i + q]
            v0, v1 = v[i], v[i + 1:i + q]
            out[i] = u0 * v0 + u1 @ v1
            out[i + 1:i + q] = u0 * v1 + v0 * u1
        return out

    def div(self, lam, xi) -> np.ndarray:
        """Solve ``lam o x = xi`` for x."""
        out = np.empty_like(xi)
        out[self.lin] = xi[self.lin] / lam[self.lin]
        for i, q in self.socs:
            l0, l1 = lam[i], lam[i + 1:i + q]
            x0, x1 = xi[i], xi[i + 1:i + q]
            det = (l0 - np.linalg.norm(l1)) * (l0 + np.linalg.norm(l1))
            a = (l0 * x0 - l1 @ x1) / det
            out[i] = a
            out[i + 1:i + q] = (x1 - a * l1) / l0
        return out

    def max_step(self, u, du) -> float:
        """Largest a >= 0 keeping ``u + a du`` in the cone (inf if unbounded)."""
        amax = math.inf
        if self.lin.size:
            d = du[self.lin]
            neg = d < 0
            if np.any(neg):
                amax = min(amax, float(np.min(-u[self.lin][neg] / d[neg])))
        for i, q in self.socs:
            amax = min(amax, _soc_step(u[i:i + q], du[i:i + q]))
        return amax


def _soc_step(u, d) -> float:
    u0, u1 = u[0], u[1:]
    d0, d1 = d[0], d[1:]
    a = d0 * d0 - d1 @ d1
    b = 2.0 * (u0 * d0 - u1 @ d1)
    c = (u0 - np.linalg.norm(u1)) * (u0 + np.linalg.norm(u1))
    c = max(c, 0.0)
    lin = -u0 / d0 if d0 < 0 else math.inf
    if a == 0.0:
        root = -c / b if b < 0 else math.inf
        return min(root, lin)
    disc = b * b - 4.0 * a * c
    if disc < 0:
        return lin
    sq = math.sqrt(disc)
    # numerically stable pair of roots
    qv = -0.5 * (b + math.copysign(sq, b))
    r1 = qv / a
    r2 = c / qv if qv != 0.0 else -math.inf
    lo, hi = min(r1, r2), max(r1, r2)
    if a > 0:
        root = lo if lo >= 0 else (math.inf if hi < 0 else 0.0)
        if lo < 0 <= hi:
            root = 0.0
    else:
        root = hi if hi >= 0 else 0.0
    return min(root, lin)


class _NTScaling:
    """Nesterov-Todd scaling W with W z = W^{-1} s = lam; W is symmetric."""

    def __init__(self, cones: _Cones, s, z):
        self.cones = cones
        lin = cones.lin
        self.d = np.sqrt(s[lin] / z[lin])
        self.blocks = []
        for i, q in cones.socs:
            sb, zb = s[i:i + q], z[i:i + q]
            sj = _jnorm(sb)
            zj = _jnorm(zb)
            if not (sj > 0 and zj > 0):
                raise FloatingPointError("iterate left the cone interior")
            sbar, zbar = sb / sj, zb / zj
            gam = math.sqrt(max((1.0 + sbar @ zbar) / 2.0, 0.0))
            w0 = (sbar[0] + zbar[0]) / (2.0 * gam)
            w1 = (sbar[1:] - zbar[1:]) / (2.0 * gam)
            beta = math.sqrt(sj / zj)
            self.blocks.append((i, q, beta, w0, w1))

    def apply(self, x, inverse=False):
        """W x (or W^{-1} x); ``x`` may be a vector or a row-block matrix."""
        out = np.empty_like(x)
        lin = self.cones.lin
        if x.ndim == 1:
            out[lin] = x[lin] / self.d if inverse else x[lin] * self.d
        else:
            dd = (1.0 / self.d if inverse else self.d)[:, None]
            out[lin] = x[lin] * dd
        for i, q, beta, w0, w1 in self.blocks:
            out[i:i + q] = _soc_apply(x[i:i + q], beta, w0, w1, inverse)
        return out


def _jnorm(u) -> float:
    n1 = np.linalg.norm(u[1:])
    v = (u[0] - n1) * (u[0] + n1)
    return math.sqrt(v) if v > 0 else 0.0


def _soc_apply(x, beta, w0, w1, inverse):
    x0 = x[0]
    x1 = x[1:]
    wx = w1 @ x1
    sgn = -1.0 if inverse else 1.0
    out = np.empty_like(x)
    out[0] = w0 * x0 + sgn * wx
    coef = sgn * x0 + wx / (1.0 + w0)
    if x.ndim == 1:
        out[1:] = x1 + coef * w1
    else:
        out[1:] = x1 + np.outer(w1, coef)
    return out / beta if inverse else out * beta


class _Prepared:
    """Standardized data: rotated blocks mapped to standard second-order cones."""

    def __init__(self, p: ConicProblem):
        G = p.G.copy()
        h = p.h.copy()
        layout = []
        i = 0
        T = np.array([[1.0, 1.0], [1.0, -1.0]]) / _RT2
        for kind, dim in p.cones:
            if kind == "rotated_soc":
                G[i:i + 2] = T @ G[i:i + 2]
                h[i:i + 2] = T @ h[i:i + 2]
                layout.append(("soc", dim))
            else:
                layout.append((kind, dim))
            i += dim
        self.G, self.h = G, h
        self.c, self.A, self.b = p.c, p.A, p.b
        self.G_s = sp.csr_matrix(G)
        self.A_s = sp.csr_matrix(p.A)
        self.cones = _Cones(layout, G.shape[0])


class _KKT:
    """Sparse LU of the unreduced Newton system for one scaling.

    Each second-order block's scaling satisfies ``W^2 = beta^2 (2 w w' - J)``,
    so ``-W^2`` is a signed diagonal minus a rank-one term; the rank-one
    part is carried by one auxiliary unknown per block, which keeps the
    matrix as sparse as ``G``.  Unknowns: ``(dx, dy, dz, aux)``.  Working on
    the unreduced system (rather than normal equations) keeps the small
    eigen-directions that matter near the optimum.
    """

    REG = 1e-11

    def __init__(self, prep: _Prepared, W: Optional[_NTScaling]):
        self.prep, self.W = prep, W
        n, pdim, m = prep.c.size, prep.b.size, prep.h.size
        socs = prep.cones.socs
        nsoc = len(socs)
        diag = np.empty(m)
        diag[prep.cones.lin] = -(W.d**2 if W is not None else 1.0)
        u_rows, u_cols, u_vals = [], [], []
        for k, (i, q) in enumerate(socs):
            if W is None:
                beta, wv = 1.0, np.eye(q)[0]
            else:
                _, _, beta, w0, w1 = W.blocks[k]
                wv = np.concatenate([[w0], w1])
            diag[i] = beta * beta
            diag[i + 1:i + q] = -beta * beta
            u_rows.extend(range(i, i + q))
            u_cols.extend([k] * q)
            u_vals.extend(-_RT2 * beta * wv)
        U = sp.csc_matrix((u_vals, (u_rows, u_cols)), shape=(m, nsoc))
        reg = self.REG
        rows = [[reg * sp.identity(n), prep.A_s.T, prep.G_s.T, None]]
        rows.append([prep.A_s, -reg * sp.identity(pdim), None, None])
        rows.append([prep.G_s, None, sp.diags(diag), U])
        rows.append([None, None, U.T, sp.identity(nsoc)])
        keep = [j for j, size in enumerate((n, pdim, m, nsoc)) if size > 0]
        K = sp.bmat([[rows[a][b] for b in keep] for a in keep], format="csc")
        self.dims = (n, pdim, m, nsoc)
        self.lu = spla.splu(K, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.1)

    def _solve_once(self, rx, ry, rz):
        n, pdim, m, nsoc = self.dims
        sol = self.lu.solve(np.concatenate([rx, ry, rz, np.zeros(nsoc)]))
        return sol[:n], sol[n:n + pdim], sol[n + pdim:n + pdim + m]

    def solve(self, rx, ry, rz, refine: int = 8):
        """Solve A'dy + G'dz = rx, A dx = ry, G dx - W'W dz = rz.

        Iterative refinement against the unregularized system runs while the
        residual keeps halving.
        """
        prep = self.prep
        scale = max(1.0, np.linalg.norm(rx), np.linalg.norm(ry), np.linalg.norm(rz))

        def residual(dx, dy, dz):
            ex = rx - prep.A_s.T @ dy - prep.G_s.T @ dz
            ey = ry - prep.A_s @ dx
            wwdz = dz if self.W is None else self.W.apply(self.W.apply(dz))
            ez = rz - (prep.G_s @ dx - wwdz)
            return ex, ey, ez, max(np.linalg.norm(ex), np.linalg.norm(ey), np.linalg.norm(ez))

        sol = self._solve_once(rx, ry, rz)
        ex, ey, ez, nrm = residual(*sol)
        for _ in range(refine):
            if nrm <= 1e-15 * scale:
                break
            corr = self._solve_once(ex, ey, ez)
            trial = tuple(a + b for a, b in zip(sol, corr))
            tex, tey, tez, tnrm = residual(*trial)
            if not tnrm < 0.5 * nrm:
                if tnrm < nrm:
                    sol = trial
                break
            sol, ex, ey, ez, nrm = trial, tex, tey, tez, tnrm
        return sol


STALL_ITERS = 5


def solve(
    p: ConicProblem,
    tol: float = 1e-8,
    max_iters: int = 100,
    verbose: bool = False,
) -> SolveResult:
    """Solve ``p`` by a homogeneous self-dual interior-point method.

    ``optimal`` means the relative primal residual, relative dual residual
    and relative duality gap are all at most ``tol``.  Residuals are relative
    to ``max(1, ||b||)``, ``max(1, ||h||)``, ``max(1, ||c||)`` and the gap to
    ``max(1, |primal|, |dual|)``.  If progress stalls the best iterate seen
    is returned with status ``numerical_failure`` (or ``max_iters``).
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    prep = _Prepared(p)
    cones = prep.cones
    G, h, A, b, c = prep.G_s, prep.h, prep.A_s, prep.b, prep.c
    n, m, pdim = c.size, h.size, b.size
    e = cones.identity()
    nrm_b = max(1.0, float(np.linalg.norm(b)))
    nrm_h = max(1.0, float(np.linalg.norm(h)))
    nrm_c = max(1.0, float(np.linalg.norm(c)))
    history = []

    def result(status, it, state, metrics=(math.nan, math.nan, math.nan)):
        x, y, z, s, tau, _ = state
        if status in (INFEASIBLE, UNBOUNDED):
            xs, ys, zs, ss = x, y, z, s
        else:
            xs, ys, zs, ss = x / tau, y / tau, z / tau, s / tau
        return SolveResult(
            status=status, x=xs, y=ys, z=_unrotate(p, zs), s=_unrotate(p, ss),
            objective=float(c @ xs), dual_objective=float(-(b @ ys) - (h @ zs)),
            primal_residual=metrics[0], dual_residual=metrics[1], gap=metrics[2],
            iterations=it, history=history,
        )

    # starting point from two least-squares solves with identity scaling
    try:
        kkt0 = _KKT(prep, None)
        x, _, _ = kkt0.solve(np.zeros(n), b, h)
        _, y, z = kkt0.solve(-c, np.zeros(pdim), np.zeros(m))
    except (RuntimeError, ValueError, FloatingPointError):
        zero = np.zeros(m)
        state = (np.zeros(n), np.zeros(pdim), zero, zero, 1.0, 1.0)
        return result(NUMERICAL_FAILURE, 0, state)
    s = h - G @ x
    shift = cones.max_shift(s)
    if shift >= -1e-8 * max(1.0, np.linalg.norm(s)):
        s = s + (1.0 + shift) * e
    shift = cones.max_shift(z)
    if shift >= -1e-8 * max(1.0, np.linalg.norm(z)):
        z = z + (1.0 + shift) * e
    tau, kappa = 1.0, 1.0

    best = None
    best_metric = math.inf
    since_best = 0
    status = MAX_ITERS
    it = 0
    for it in range(max_iters + 1):
        rx = A.T @ y + G.T @ z + c * tau
        ry = A @ x - b * tau
        rz = s + G @ x - h * tau
        rt = kappa + c @ x + b @ y + h @ z
        mu = (s @ z + tau * kappa) / (cones.degree + 1)
        pcost = c @ x / tau
        dcost = -(b @ y + h @ z) / tau
        pres = max(np.linalg.norm(ry) / nrm_b, np.linalg.norm(rz) / nrm_h) / tau
        dres = np.linalg.norm(rx) / nrm_c / tau
        gap = (s @ z) / tau**2 / max(1.0, abs(pcost), abs(dcost))
        metric = max(pres, dres, gap)
        history.append((it, pcost, dcost, pres, dres, gap, tau, kappa))
        if verbose:
            print(f"{it:3d} p={pcost:+.6e} d={dcost:+.6e} pres={pres:.1e} dres={dres:.1e} "
                  f"gap={gap:.1e} tau={tau:.1e} kap={kappa:.1e}")
        state = (x, y, z, s, tau, kappa)
        if metric < best_metric:
            best, best_metric, since_best = (state, (pres, dres, gap)), metric, 0
        else:
            since_best += 1
        if metric <= tol:
            status = OPTIMAL
            break
        hz_by = h @ z + b @ y
        if hz_by < 0 and np.linalg.norm(A.T @ y + G.T @ z) / nrm_c / (-hz_by) <= tol:
            status = INFEASIBLE
            break
        cx = c @ x
        if cx < 0 and max(np.linalg.norm(A @ x) / nrm_b, np.linalg.norm(G @ x + s) / nrm_h) / (-cx) <= tol:
            status = UNBOUNDED
            break
        if since_best >= STALL_ITERS:
            status = NUMERICAL_FAILURE
            break
        if it == max_iters:
            status = MAX_ITERS
            break

        try:
            W = _NTScaling(cones, s, z)
            lam = W.apply(z)
            kkt = _KKT(prep, W)
            # direction of the tau column, shared by predictor and corrector
            x1, y1, z1 = kkt.solve(-c, b, h)
            den = c @ x1 + b @ y1 + h @ z1 - kappa / tau

            def direction(eta, xi_s, xi_t):
                t = cones.div(lam, xi_s)
                x2, y2, z2 = kkt.solve(-eta * rx, -eta * ry, -eta * rz - W.apply(t))
                dtau = (-eta * rt - xi_t / tau - c @ x2 - b @ y2 - h @ z2) / den
                dx, dy, dz = x2 + dtau * x1, y2 + dtau * y1, z2 + dtau * z1
                ds = W.apply(t - W.apply(dz))
                dkap = (xi_t - kappa * dtau) / tau
                return dx, dy, dz, ds, dtau, dkap

            def step(ds, dz, dtau, dkap):
                a = min(cones.max_step(s, ds), cones.max_step(z, dz))
                if dtau < 0:
                    a = min(a, -tau / dtau)
                if dkap < 0:
                    a = min(a, -kappa / dkap)
                return a

            lam2 = cones.prod(lam, lam)
            _, _, dza, dsa, dta, dka = direction(1.0, -lam2, -tau * kappa)
            a_aff = min(1.0, step(dsa, dza, dta, dka))
            sigma = (1.0 - a_aff) ** 3
            # Mehrotra second-order correction
            wdz = W.apply(dza)
            xi_s = -lam2 - cones.prod(-lam - wdz, wdz) + sigma * mu * e
            xi_t = -tau * kappa - dta * dka + sigma * mu
            dx, dy, dz, ds, dtau, dkap = direction(1.0 - sigma, xi_s, xi_t)
            alpha = min(1.0, 0.99 * step(ds, dz, dtau, dkap))
        except (RuntimeError, ValueError, FloatingPointError, ZeroDivisionError):
            status = NUMERICAL_FAILURE
            break
        if not (alpha > 0 and np.isfinite(alpha)):
            status = NUMERICAL_FAILURE
            break
        x = x + alpha * dx
        y = y + alpha * dy
        z = z + alpha * dz
        s = s + alpha * ds
        tau = tau + alpha * dtau
        kappa = kappa + alpha * dkap
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(z)) and tau > 0):
            status = NUMERICAL_FAILURE
            break

    if status in (INFEASIBLE, UNBOUNDED):
        return result(status, it, (x, y, z, s, tau, kappa))
    if status == OPTIMAL:
        return result(status, it, (x, y, z, s, tau, kappa), (pres, dres, gap))
    state, metrics = best
    return result(status, it, state, metrics)


def _unrotate(p: ConicProblem, v: np.ndarray) -> np.ndarray:
    """Map slacks/duals of rotated blocks back to (u, v, z) coordinates."""
    out = v.copy()
    i = 0
    T = np.array([[1.0, 1.0], [1.0, -1.0]]) / _RT2
    for kind, dim in p.cones:
        if kind == "rotated_soc":
            out[i:i + 2] = T @ v[i:i + 2]
        i += dim
    return out
