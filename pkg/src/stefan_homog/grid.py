"""Uniform tensor grids, finite-difference operators, norms and linear solves.

Two grid flavours share one operator vocabulary:

* ``DomainGrid``: the unit box (0, 1)^n with N intervals per axis, nodes
  ``i / N`` (boundary included) and homogeneous Dirichlet data.
* ``CellGrid``: the periodic cell [0, P)^n with M nodes per axis.

Fluxes live on faces.  ``face_difference(grid, d)`` maps nodal values to the
normal difference on the faces of axis ``d``; ``transverse_average`` brings the
difference along another axis onto those faces.  Elliptic operators are
assembled from a face energy (see ``energy_terms``) and are symmetric whenever
the coefficient is.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class ConvergenceError(RuntimeError):
    """Raised when an iterative solve does not reach its tolerance."""

    def __init__(self, message: str, residual: float = float("nan"), iterations: int = 0):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


# --------------------------------------------------------------------------
# grids


@dataclass(frozen=True)
class DomainGrid:
    dim: int
    N: int

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError("dimension must be 1 or 2")
        if self.N < 4:
            raise ValueError("need N >= 4")

    periodic = False

    @property
    def h(self) -> float:
        return 1.0 / self.N

    @property
    def n_axis(self) -> int:
        return self.N + 1

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.N + 1,) * self.dim

    @property
    def size(self) -> int:
        return (self.N + 1) ** self.dim

    def axis_coords(self) -> np.ndarray:
        return np.arange(self.N + 1) / self.N

    def coords(self) -> np.ndarray:
        """Node coordinates: shape (N+1,) in 1-D, (N+1, N+1, 2) in 2-D."""
        x = self.axis_coords()
        if self.dim == 1:
            return x
        X, Y = np.meshgrid(x, x, indexing="ij")
        return np.stack([X, Y], axis=-1)

    def interior_mask(self) -> np.ndarray:
        m = np.zeros(self.shape, dtype=bool)
        inner = (slice(1, -1),) * self.dim
        m[inner] = True
        return m

    def interior_index(self) -> np.ndarray:
        return np.flatnonzero(self.interior_mask().ravel())

    def weights(self) -> np.ndarray:
        """Trapezoidal quadrature weights on the nodes."""
        w1 = np.full(self.N + 1, self.h)
        w1[[0, -1]] *= 0.5
        if self.dim == 1:
            return w1
        return np.outer(w1, w1)

    @property
    def volume(self) -> float:
        return 1.0

    def face_coords(self, axis: int) -> np.ndarray:
        x = self.axis_coords()
        xf = 0.5 * (x[1:] + x[:-1])
        if self.dim == 1:
            return xf
        ax = [xf if d == axis else x for d in range(2)]
        A, B = np.meshgrid(*ax, indexing="ij")
        return np.stack([A, B], axis=-1)


@dataclass(frozen=True)
class CellGrid:
    dim: int
    M: int
    period: float = 1.0

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError("dimension must be 1 or 2")
        if self.M < 8:
            raise ValueError("need M >= 8")
        if not self.period > 0:
            raise ValueError("period must be positive")

    periodic = True

    @property
    def h(self) -> float:
        return self.period / self.M

    @property
    def n_axis(self) -> int:
        return self.M

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.M,) * self.dim

    @property
    def size(self) -> int:
        return self.M ** self.dim

    def axis_coords(self) -> np.ndarray:
        return np.arange(self.M) * self.h

    def coords(self) -> np.ndarray:
        x = self.axis_coords()
        if self.dim == 1:
            return x
        X, Y = np.meshgrid(x, x, indexing="ij")
        return np.stack([X, Y], axis=-1)

    def weights(self) -> np.ndarray:
        """Normalized cell measure: every node carries 1 / M^n."""
        return np.full(self.shape, 1.0 / self.size)

    @property
    def volume(self) -> float:
        return 1.0

    def face_coords(self, axis: int) -> np.ndarray:
        x = self.axis_coords()
        xf = x + 0.5 * self.h
        if self.dim == 1:
            return xf
        ax = [xf if d == axis else x for d in range(2)]
        A, B = np.meshgrid(*ax, indexing="ij")
        return np.stack([A, B], axis=-1)


Grid = DomainGrid | CellGrid


@dataclass
class GridField:
    """Nodal values on a grid; vector fields carry a trailing axis of length n."""

    values: np.ndarray
    grid: Grid

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        s = self.grid.shape
        if self.values.shape != s and self.values.shape != s + (self.grid.dim,):
            raise ValueError(f"values of shape {self.values.shape} do not match grid {s}")

    @property
    def is_vector(self) -> bool:
        return self.values.shape == self.grid.shape + (self.grid.dim,)


# --------------------------------------------------------------------------
# 1-D building blocks


def _shift(n: int) -> sp.csr_matrix:
    """(S x)[i] = x[i + 1] with periodic wrap."""
    return sp.csr_matrix((np.ones(n), (np.arange(n), (np.arange(n) + 1) % n)), shape=(n, n))


def _diff_1d(grid: Grid) -> sp.csr_matrix:
    n = grid.n_axis
    if grid.periodic:
        return ((_shift(n) - sp.identity(n)) / grid.h).tocsr()
    return (sp.diags([-np.ones(n - 1), np.ones(n - 1)], [0, 1], shape=(n - 1, n)) / grid.h).tocsr()


def _node_to_face_avg(grid: Grid) -> sp.csr_matrix:
    n = grid.n_axis
    if grid.periodic:
        return (0.5 * (sp.identity(n) + _shift(n))).tocsr()
    return sp.diags([0.5 * np.ones(n - 1), 0.5 * np.ones(n - 1)], [0, 1], shape=(n - 1, n)).tocsr()


def _face_to_node_avg(grid: Grid) -> sp.csr_matrix:
    n = grid.n_axis
    if grid.periodic:
        return (0.5 * (sp.identity(n) + _shift(n).T)).tocsr()
    B = sp.lil_matrix((n, n - 1))
    for j in range(n):
        nb = [f for f in (j - 1, j) if 0 <= f < n - 1]
        for f in nb:
            B[j, f] = 1.0 / len(nb)
    return B.tocsr()


def _eye(n: int):
    return sp.identity(n, format="csr")


def _kron_axes(mats: list) -> sp.csr_matrix:
    out = mats[0]
    for m in mats[1:]:
        out = sp.kron(out, m, format="csr")
    return sp.csr_matrix(out)


def face_shape(grid: Grid, axis: int) -> tuple[int, ...]:
    n = grid.n_axis
    nf = n if grid.periodic else n - 1
    return tuple(nf if d == axis else n for d in range(grid.dim))


def face_difference(grid: Grid, axis: int) -> sp.csr_matrix:
    """Normal difference quotient on the faces of ``axis``."""
    n = grid.n_axis
    return _kron_axes([_diff_1d(grid) if d == axis else _eye(n) for d in range(grid.dim)])


def face_average(grid: Grid, axis: int) -> sp.csr_matrix:
    """Mean of the two nodes adjacent to each face of ``axis``."""
    n = grid.n_axis
    return _kron_axes([_node_to_face_avg(grid) if d == axis else _eye(n) for d in range(grid.dim)])


def transverse_average(grid: Grid, d: int, e: int) -> sp.csr_matrix:
    """Average of the four faces of axis ``e`` adjacent to each face of axis ``d``."""
    if d == e:
        raise ValueError("transverse average needs distinct axes")
    mats = []
    for a in range(grid.dim):
        if a == d:
            mats.append(_node_to_face_avg(grid))
        elif a == e:
            mats.append(_face_to_node_avg(grid))
        else:
            mats.append(_eye(grid.n_axis))
    return _kron_axes(mats)


def face_gradient(grid: Grid, axis: int) -> list[sp.csr_matrix]:
    """Operators giving every component of the gradient on the faces of ``axis``."""
    return [face_component(grid, axis, e) for e in range(grid.dim)]


def face_component(grid: Grid, d: int, e: int) -> sp.csr_matrix:
    """Component ``e`` of the gradient on the faces of axis ``d``."""
    if e == d:
        return face_difference(grid, d)
    return (transverse_average(grid, d, e) @ face_difference(grid, e)).tocsr()


def _as_face_matrices(grid: Grid, coeff) -> dict:
    if isinstance(coeff, dict):
        return coeff
    Km = np.asarray(coeff, dtype=float)
    Km = Km * np.eye(grid.dim) if Km.size == 1 else np.atleast_2d(Km)
    if Km.shape != (grid.dim, grid.dim):
        raise ValueError(f"coefficient must be a scalar or {grid.dim}x{grid.dim} matrix")
    if not np.allclose(Km, Km.T):
        raise ValueError("coefficient matrix must be symmetric")
    return {d: np.broadcast_to(Km, (int(np.prod(face_shape(grid, d))),) + Km.shape)
            for d in range(grid.dim)}


def energy_terms(grid: Grid, coeff) -> list[tuple[int, int, int, np.ndarray]]:
    """Split the discrete energy into (face axis d, component a, component b, weight).

    The energy of u against v is sum over terms of sum_{F_d} (grad_a v) w (grad_b u).
    Normal components pair with K_dd; each cross coefficient is split evenly between
    the two orderings, so the energy is symmetric whenever K is.
    ``coeff`` maps each face axis to K sampled there (shape (faces, n, n)), or is a
    constant matrix.
    """
    Kf = _as_face_matrices(grid, coeff)
    out = []
    for d in range(grid.dim):
        K = np.asarray(Kf[d], dtype=float).reshape(-1, grid.dim, grid.dim)
        out.append((d, d, d, K[:, d, d]))
        for e in range(grid.dim):
            if e == d:
                continue
            if np.any(K[:, d, e]):
                out.append((d, d, e, 0.5 * K[:, d, e]))
            if np.any(K[:, e, d]):
                out.append((d, e, d, 0.5 * K[:, e, d]))
    return out


def flux_operator(grid: Grid, coeff) -> sp.csr_matrix:
    """Assemble -div(K grad .) on all nodes from the symmetric face energy."""
    A = sp.csr_matrix((grid.size, grid.size))
    for d, a, b, w in energy_terms(grid, coeff):
        A = A + face_component(grid, d, a).T @ sp.diags(w) @ face_component(grid, d, b)
    return sp.csr_matrix(A)


def sample_faces(grid: Grid, fn: Callable, axis: int, scale: float = 1.0) -> np.ndarray:
    """Evaluate ``fn`` at face centres of ``axis`` mapped by z = x / scale."""
    return np.asarray(fn(grid.face_coords(axis) / scale), dtype=float).ravel()


def matrix_on_faces(grid: Grid, K, scale: float = 1.0) -> dict:
    """Sample a MatrixField (or constant matrix) on every face set: {d: (faces, n, n)}."""
    if isinstance(K, np.ndarray) or np.isscalar(K):
        return _as_face_matrices(grid, K)
    out = {}
    for d in range(grid.dim):
        pts = grid.face_coords(d) / scale
        out[d] = np.asarray(K(pts), dtype=float).reshape(-1, grid.dim, grid.dim)
    return out


# --------------------------------------------------------------------------
# collocated gradient / divergence (diagnostic operators)


def _central_1d(grid: Grid) -> sp.csr_matrix:
    n = grid.n_axis
    h = grid.h
    if grid.periodic:
        S = _shift(n)
        return ((S - S.T) / (2 * h)).tocsr()
    G = sp.lil_matrix((n, n))
    G[0, 0], G[0, 1] = -1 / h, 1 / h
    G[n - 1, n - 2], G[n - 1, n - 1] = -1 / h, 1 / h
    for i in range(1, n - 1):
        G[i, i - 1], G[i, i + 1] = -0.5 / h, 0.5 / h
    return G.tocsr()


def _central_div_1d(grid: Grid) -> sp.csr_matrix:
    n = grid.n_axis
    h = grid.h
    if grid.periodic:
        S = _shift(n)
        return ((S - S.T) / (2 * h)).tocsr()
    Dv = sp.lil_matrix((n, n))
    Dv[0, 0], Dv[0, 1] = -1 / h, 1 / h
    Dv[n - 1, n - 2], Dv[n - 1, n - 1] = -1 / h, 1 / h
    for i in range(1, n - 1):
        Dv[i, i - 1], Dv[i, i + 1] = -0.5 / h, 0.5 / h
    return Dv.tocsr()


def gradient_matrices(grid: Grid) -> list[sp.csr_matrix]:
    n = grid.n_axis
    return [_kron_axes([_central_1d(grid) if a == d else _eye(n) for a in range(grid.dim)])
            for d in range(grid.dim)]


def divergence_matrices(grid: Grid) -> list[sp.csr_matrix]:
    n = grid.n_axis
    return [_kron_axes([_central_div_1d(grid) if a == d else _eye(n) for a in range(grid.dim)])
            for d in range(grid.dim)]


def gradient(grid: Grid, f: GridField) -> GridField:
    """Central differences inside, one-sided at Dirichlet boundaries, wrapped on cells."""
    v = f.values.ravel()
    comps = [(G @ v).reshape(grid.shape) for G in gradient_matrices(grid)]
    return GridField(np.stack(comps, axis=-1), grid)


def divergence(grid: Grid, F: GridField) -> GridField:
    """Central divergence; with trapezoidal weights it is the negative adjoint of
    ``gradient`` against fields that vanish on the Dirichlet boundary."""
    vals = F.values.reshape(-1, grid.dim)
    out = sum(Dv @ vals[:, d] for d, Dv in enumerate(divergence_matrices(grid)))
    return GridField(out.reshape(grid.shape), grid)


def inner(grid: Grid, a: np.ndarray, b: np.ndarray) -> float:
    """Discrete L2 inner product with the grid's quadrature weights."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    w = grid.weights()
    prod = a * b
    if prod.ndim > w.ndim:
        prod = prod.sum(axis=-1)
    return float(np.sum(w * prod))


# --------------------------------------------------------------------------
# norms


def lp_norm(grid: Grid, f, p: float = 2.0) -> float:
    if not p >= 1:
        raise ValueError("p must be >= 1")
    v = f.values if isinstance(f, GridField) else np.asarray(f, dtype=float)
    if v.ndim > grid.dim:
        v = np.linalg.norm(v, axis=-1)
    return float(np.sum(grid.weights() * np.abs(v) ** p) ** (1.0 / p))


def h1_seminorm(grid: Grid, f) -> float:
    ff = f if isinstance(f, GridField) else GridField(f, grid)
    return lp_norm(grid, gradient(grid, ff), 2.0)


def face_h1_seminorm_sq(grid: Grid, u: np.ndarray) -> float:
    """sum over faces of h^n (normal difference)^2, the energy-consistent |grad u|^2."""
    v = np.asarray(u, dtype=float).ravel()
    hn = grid.h ** grid.dim
    return float(sum(hn * np.sum((face_difference(grid, d) @ v) ** 2) for d in range(grid.dim)))


# --------------------------------------------------------------------------
# linear solvers


def pcg(A, b: np.ndarray, precond: Callable | None = None, project: Callable | None = None,
        rtol: float = 1e-10, maxiter: int | None = None, x0: np.ndarray | None = None):
    """Preconditioned conjugate gradients for symmetric positive (semi)definite A.

    ``project`` is applied to the right-hand side, to each residual and to the
    iterate, which keeps semidefinite problems on the complement of the null
    space.  Returns ``(x, iterations, relative_residual)``.
    """
    matvec = A if callable(A) else (lambda v: A @ v)
    P = project or (lambda v: v)
    M = precond or (lambda v: v)
    b = P(np.asarray(b, dtype=float))
    n = b.size
    maxiter = maxiter or max(10 * n, 100)
    bnorm = np.linalg.norm(b)
    x = np.zeros(n) if x0 is None else P(np.array(x0, dtype=float))
    if bnorm == 0.0:
        return np.zeros(n), 0, 0.0
    r = P(b - matvec(x))
    z = P(M(r))
    p = z.copy()
    rz = float(r @ z)
    res = np.linalg.norm(r) / bnorm
    for it in range(1, maxiter + 1):
        if res <= rtol:
            return P(x), it - 1, res
        Ap = P(matvec(p))
        pAp = float(p @ Ap)
        if pAp <= 0:
            raise ConvergenceError("operator is not positive definite on the search space",
                                   res, it)
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        if it % 50 == 0:
            r = P(b - matvec(x))
        res = np.linalg.norm(r) / bnorm
        z = P(M(r))
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    if res <= rtol:
        return P(x), maxiter, res
    raise ConvergenceError(f"CG did not converge: relative residual {res:.3e} after "
                           f"{maxiter} iterations", res, maxiter)


def zero_mean(v: np.ndarray) -> np.ndarray:
    return v - v.mean()


def fft_laplace_preconditioner(grid: CellGrid, scale: float = 1.0) -> Callable:
    """Inverse of scale * (sum_d D_d^T D_d) on zero-mean periodic fields via FFT."""
    M, h = grid.M, grid.h
    k = np.arange(M)
    lam1 = (4.0 / h ** 2) * np.sin(np.pi * k / M) ** 2
    if grid.dim == 1:
        lam = lam1
    else:
        lam = lam1[:, None] + lam1[None, :]
    lam = scale * lam
    inv = np.zeros_like(lam)
    inv[lam > 0] = 1.0 / lam[lam > 0]

    def apply(r):
        rh = np.fft.fftn(r.reshape(grid.shape))
        return np.real(np.fft.ifftn(rh * inv)).ravel()

    return apply


def hminus1_norm(grid: DomainGrid, f, A: sp.spmatrix, solve: Callable | None = None) -> float:
    """Energy int [G grad phi] . grad phi for A phi = f, phi = 0 on the boundary.

    ``A`` is the interior block of an assembled flux operator and ``f`` holds
    interior (or full nodal) values.  Equals the quadrature of f * phi.  Pass
    ``solve = dirichlet_solver(A)`` to reuse one factorization across calls.
    """
    v = f.values if isinstance(f, GridField) else np.asarray(f, dtype=float)
    v = v.ravel()
    idx = grid.interior_index()
    if v.size == grid.size:
        v = v[idx]
    if not np.any(v):
        return 0.0
    phi = (solve or dirichlet_solver(A))(v)
    return float(grid.h ** grid.dim * np.dot(v, phi))


def dirichlet_solver(A: sp.spmatrix) -> Callable:
    """Sparse LU factorization of an interior operator, returned as a solve function."""
    return spla.factorized(sp.csc_matrix(A))


def interior_operator(grid: DomainGrid, A: sp.spmatrix) -> sp.csr_matrix:
    idx = grid.interior_index()
    return sp.csr_matrix(A[idx][:, idx])


# --------------------------------------------------------------------------
# Helmholtz decomposition on the periodic cell


def _central_nullspace(grid: CellGrid) -> np.ndarray:
    M = grid.M
    i = np.arange(M)
    basis1 = [np.ones(M)]
    if M % 2 == 0:
        basis1.append((-1.0) ** i)
    if grid.dim == 1:
        vecs = basis1
    else:
        vecs = [np.outer(a, b).ravel() for a in basis1 for b in basis1]
    Q = np.stack([v / np.linalg.norm(v) for v in vecs], axis=1)
    return Q


def helmholtz_decompose(grid: CellGrid, F: GridField, rtol: float = 1e-12):
    """Split a periodic vector field into gradient part, solenoidal part and mean.

    The potential solves div grad phi = div (F - mean F) with the collocated
    operators; the parts are orthogonal in the discrete L2 product.
    Returns ``(potential, solenoidal, mean, phi)``.
    """
    vals = F.values.reshape(-1, grid.dim)
    m = vals.mean(axis=0)
    Gs = gradient_matrices(grid)
    Ds = divergence_matrices(grid)
    rhs = -sum(Dv @ (vals[:, d] - m[d]) for d, Dv in enumerate(Ds))
    Q = _central_nullspace(grid)
    proj = lambda v: v - Q @ (Q.T @ v)
    neg_lap = lambda v: -sum(Dv @ (G @ v) for Dv, G in zip(Ds, Gs))
    try:
        phi, _, _ = pcg(neg_lap, rhs, project=proj, rtol=rtol, maxiter=20 * grid.size)
    except ConvergenceError as exc:
        raise ConvergenceError("periodic Poisson solve failed; field has unresolved modes",
                               exc.residual, exc.iterations) from exc
    pot = np.stack([G @ phi for G in Gs], axis=-1)
    sol = vals - m - pot
    shape = grid.shape + (grid.dim,)
    return (GridField(pot.reshape(shape), grid), GridField(sol.reshape(shape), grid),
            m, GridField(phi.reshape(grid.shape), grid))


# --------------------------------------------------------------------------
# serialization


def write_csv(path, f: GridField) -> None:
    """One row per node: coordinates, then value(s)."""
    g = f.grid
    X = g.coords().reshape(-1, g.dim) if g.dim == 2 else g.coords().reshape(-1, 1)
    V = f.values.reshape(X.shape[0], -1)
    names = ["x", "y"][: g.dim] + (["value"] if V.shape[1] == 1 else
                                    [f"value_{i}" for i in range(V.shape[1])])
    lines = [",".join(names)]
    for row_x, row_v in zip(X, V):
        lines.append(",".join(repr(float(a)) for a in (*row_x, *row_v)))
    Path(path).write_text("\r\n".join(lines) + "\r\n", encoding="utf-8")


def write_binary(path, f: GridField) -> None:
    """Little-endian dump: int32 n, int32 N, then float64 values in row-major order.

    N is the interval count for a DomainGrid and the node count M for a CellGrid.
    """
    g = f.grid
    N = g.N if isinstance(g, DomainGrid) else g.M
    with open(path, "wb") as fh:
        fh.write(struct.pack("<ii", g.dim, N))
        fh.write(np.ascontiguousarray(f.values, dtype="<f8").tobytes())


def read_binary(path) -> GridField:
    raw = Path(path).read_bytes()
    n, N = struct.unpack("<ii", raw[:8])
    vals = np.frombuffer(raw[8:], dtype="<f8").astype(float)
    if vals.size == (N + 1) ** n:
        grid: Grid = DomainGrid(n, N)
        return GridField(vals.reshape(grid.shape), grid)
    if vals.size == N ** n:
        grid = CellGrid(n, N)
        return GridField(vals.reshape(grid.shape), grid)
    for grid in (DomainGrid(n, N), CellGrid(n, N)):
        if vals.size == grid.size * n:
            return GridField(vals.reshape(grid.shape + (n,)), grid)
    raise ValueError(f"binary payload of {vals.size} values does not match n={n}, N={N}")
