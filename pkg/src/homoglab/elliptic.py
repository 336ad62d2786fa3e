"""Matrix-free solvers on the periodic box.

Conjugate gradient for the SPD lattice operators, massive-term solves,
periodic Green's functions and the exact spectral heat kernel.  All solves
are deterministic: plain CG with a fixed iteration schedule, the true
residual refreshed every 50 steps to keep rounding drift in check.

The elliptic operator div*(a grad .) has the constants as kernel, so
singular problems are solved on the mean-zero subspace (the right-hand
side's mean is subtracted and reported).  Strictly positive operators
(massive term ``shift > 0``) need no projection.

An optional constant-coefficient spectral preconditioner (FFT inverse of
``shift + mean(a) * div* grad``) is available; it changes iteration counts,
never results beyond the residual tolerance.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from .lattice import (
    BoxSpec,
    CoefficientField,
    ScalarField,
    VectorField,
    apply_elliptic_grid,
    div_star,
)

__all__ = [
    "SolverConfig",
    "SolveReport",
    "SolverError",
    "cg_solve",
    "solve_elliptic",
    "solve_shifted",
    "solve_massive",
    "green",
    "heat_kernel",
    "heat_kernel_diagonal",
    "laplacian_symbol",
    "elliptic_matrix",
]


class SolverError(RuntimeError):
    """CG failed to converge, or the iteration produced non-finite values."""

    def __init__(self, message: str, report: "SolveReport | None" = None):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class SolverConfig:
    tol: float = 1e-10          # relative residual target
    max_iter: int | None = None  # default 50 * n_sites
    anchor: str = "mean-zero"    # or "site-zero"
    preconditioner: str = "none"  # or "spectral"

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.anchor not in ("mean-zero", "site-zero"):
            raise ValueError(f"unknown anchor {self.anchor!r}")
        if self.preconditioner not in ("none", "spectral"):
            raise ValueError(f"unknown preconditioner {self.preconditioner!r}")

    def iterations_for(self, n: int) -> int:
        return self.max_iter if self.max_iter is not None else 50 * n


@dataclass(frozen=True)
class SolveReport:
    iterations: int
    final_relative_residual: float
    converged: bool
    rhs_mean_subtracted: float = 0.0

    def to_json(self) -> dict:
        return {
            "iterations": self.iterations,
            "final_relative_residual": self.final_relative_residual,
            "converged": self.converged,
            "rhs_mean_subtracted": self.rhs_mean_subtracted,
        }


class ReportCollector:
    """Thread-safe aggregation of solve reports for run manifests.

    Only order-independent aggregates are kept, so manifests do not depend
    on worker scheduling.
    """

    def __init__(self, parent: "ReportCollector | None" = None):
        self._lock = threading.Lock()
        self._parent = parent
        self.n_solves = 0
        self.total_iterations = 0
        self.max_iterations = 0
        self.max_residual = 0.0
        self.all_converged = True

    def add(self, rep: "SolveReport") -> None:
        with self._lock:
            self.n_solves += 1
            self.total_iterations += rep.iterations
            self.max_iterations = max(self.max_iterations, rep.iterations)
            self.max_residual = max(self.max_residual, rep.final_relative_residual)
            self.all_converged = self.all_converged and rep.converged
        if self._parent is not None:
            self._parent.add(rep)

    def summary(self) -> dict:
        return {
            "n_solves": self.n_solves,
            "total_iterations": self.total_iterations,
            "max_iterations": self.max_iterations,
            "max_final_relative_residual": self.max_residual,
            "all_converged": self.all_converged,
        }


_active_collector: ReportCollector | None = None


@contextmanager
def collecting_reports():
    """Route every cg_solve report into a fresh collector for the duration.

    Collectors nest: an inner collector forwards to the one it shadows, so
    enclosing scopes keep complete aggregates.
    """
    global _active_collector
    previous = _active_collector
    collector = ReportCollector(parent=previous)
    _active_collector = collector
    try:
        yield collector
    finally:
        _active_collector = previous


def laplacian_symbol(box: BoxSpec) -> np.ndarray:
    """Eigenvalues of div* grad on the FFT grid: sum_i 4 sin^2(pi k_i / L)."""
    L = box.L
    k = np.arange(L)
    one_d = 4.0 * np.sin(np.pi * k / L) ** 2
    sym = np.zeros(box.shape)
    for axis in range(box.d):
        shape = [1] * box.d
        shape[axis] = L
        sym = sym + one_d.reshape(shape)
    return sym


def _spectral_inverse(box: BoxSpec, shift: float, scale: float):
    """Apply (shift + scale * div* grad)^-1 via FFT; zero mode dropped when shift=0."""
    sym = shift + scale * laplacian_symbol(box)
    zero = (0,) * box.d
    singular = shift == 0.0
    if singular:
        sym = sym.copy()
        sym[zero] = 1.0

    def apply(r: np.ndarray) -> np.ndarray:
        rh = np.fft.fftn(r)
        rh /= sym
        if singular:
            rh[zero] = 0.0
        return np.fft.ifftn(rh).real

    return apply


def cg_solve(operator, rhs: ScalarField, cfg: SolverConfig = SolverConfig(),
             *, singular: bool = True, precond=None) -> tuple[ScalarField, SolveReport]:
    """Conjugate gradient for an SPD lattice operator.

    ``operator`` maps grid arrays to grid arrays.  With ``singular=True`` the
    operator is assumed to have the constants as kernel: the rhs mean is
    subtracted (and reported) and the solution returned mean-zero; with
    ``anchor='site-zero'`` the constant is fixed by u(site 0) = 0 instead.
    """
    box = rhs.box
    b = rhs.grid().astype(np.float64, copy=True)
    removed = 0.0
    if singular:
        removed = float(b.mean())
        b -= removed
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        rep = SolveReport(0, 0.0, True, removed)
        if _active_collector is not None:
            _active_collector.add(rep)
        return ScalarField.zeros(box), rep

    x = np.zeros_like(b)
    r = b.copy()
    z = precond(r) if precond is not None else r
    p = z.copy()
    rz = float(np.vdot(r, z).real)
    max_iter = cfg.iterations_for(box.n_sites)
    it = 0
    rel = 1.0
    while it < max_iter:
        Ap = operator(p)
        alpha = rz / float(np.vdot(p, Ap).real)
        x += alpha * p
        it += 1
        if it % 50 == 0:
            r = b - operator(x)  # refresh true residual
        else:
            r -= alpha * Ap
        rel = float(np.linalg.norm(r)) / bnorm
        if not np.isfinite(rel):
            raise SolverError("CG produced non-finite residual",
                              SolveReport(it, rel, False, removed))
        if rel <= cfg.tol:
            break
        z = precond(r) if precond is not None else r
        rz_new = float(np.vdot(r, z).real)
        p = z + (rz_new / rz) * p
        rz = rz_new

    # exact true residual for the report
    rel = float(np.linalg.norm(b - operator(x))) / bnorm
    converged = rel <= cfg.tol
    if singular:
        x -= x.mean()
        if cfg.anchor == "site-zero":
            x -= x.ravel(order="F")[0]
    rep = SolveReport(it, rel, converged, removed)
    if _active_collector is not None:
        _active_collector.add(rep)
    return ScalarField.from_grid(box, x), rep


def _checked(result: tuple[ScalarField, SolveReport], what: str) -> tuple[ScalarField, SolveReport]:
    u, rep = result
    if not rep.converged:
        raise SolverError(
            f"{what}: CG did not converge in {rep.iterations} iterations "
            f"(residual {rep.final_relative_residual:.3e})",
            rep,
        )
    return u, rep


def _elliptic_op(a: CoefficientField, shift: float = 0.0):
    grids = [a.grid(i) for i in range(a.box.d)]

    def op(u: np.ndarray) -> np.ndarray:
        out = apply_elliptic_grid(grids, u)
        if shift:
            out += shift * u
        return out

    return op


def laplacian_op(box: BoxSpec):
    """Matrix-free div* grad on grid arrays."""

    def op(u: np.ndarray) -> np.ndarray:
        out = 2 * box.d * u
        for axis in range(box.d):
            out -= np.roll(u, -1, axis=axis) + np.roll(u, 1, axis=axis)
        return out

    return op


def _precond_for(a: CoefficientField, shift: float, cfg: SolverConfig):
    if cfg.preconditioner != "spectral":
        return None
    return _spectral_inverse(a.box, shift, float(a.diag.mean()))


def solve_elliptic(a: CoefficientField, rhs: ScalarField,
                   cfg: SolverConfig = SolverConfig()) -> tuple[ScalarField, SolveReport]:
    """Solve div*(a grad u) = rhs on the mean-zero subspace."""
    op = _elliptic_op(a)
    return _checked(
        cg_solve(op, rhs, cfg, singular=True, precond=_precond_for(a, 0.0, cfg)),
        "solve_elliptic",
    )


def solve_massive(a: CoefficientField, T: float, F: VectorField,
                  cfg: SolverConfig = SolverConfig()) -> tuple[ScalarField, SolveReport]:
    """Solve (1/T) u + div*(a grad u) = div* F.

    The operator is strictly positive, so the solution is unique with no
    mean constraint.  Testing the equation with u gives the energy identity
    (1/T)||u||^2 + <grad u, a grad u> = <F, grad u>, and the a priori bound
    (1/T)||u||^2 + (lam/2)||grad u||^2 <= (2/lam)||F||^2.
    """
    if T <= 0:
        raise ValueError("T must be positive")
    shift = 1.0 / T
    rhs = div_star(F)
    op = _elliptic_op(a, shift=shift)
    return _checked(
        cg_solve(op, rhs, cfg, singular=False, precond=_precond_for(a, shift, cfg)),
        "solve_massive",
    )


def solve_shifted(a: CoefficientField, shift: float, rhs: ScalarField,
                  cfg: SolverConfig = SolverConfig()) -> tuple[ScalarField, SolveReport]:
    """Solve shift * u + div*(a grad u) = rhs for shift > 0 (strictly positive)."""
    if shift <= 0:
        raise ValueError("shift must be positive")
    op = _elliptic_op(a, shift=shift)
    return _checked(
        cg_solve(op, rhs, cfg, singular=False, precond=_precond_for(a, shift, cfg)),
        "solve_shifted",
    )


def green(a: CoefficientField, y: int = 0,
          cfg: SolverConfig = SolverConfig()) -> tuple[ScalarField, SolveReport]:
    """Mean-zero periodic Green's function: div*(a grad G) = delta_y - 1/N.

    The plain Dirac is incompatible with the kernel of the operator on a
    torus, hence the subtracted uniform charge.
    """
    box = a.box
    rhs = np.full(box.n_sites, -1.0 / box.n_sites)
    rhs[y] += 1.0
    return solve_elliptic(a, ScalarField(box, rhs), cfg)


def heat_kernel(t: float, box: BoxSpec) -> ScalarField:
    """p(t, .) solving dp/dt + div* grad p = 0, p(0, .) = delta_0.

    Computed exactly through the spectral representation on the torus;
    nonnegative, total mass 1, and sum_x p(t,x)^2 = p(2t, 0).
    Valid as a stand-in for the infinite lattice only while t << L^2
    (experiments keep t <= (L/8)^2).
    """
    if t < 0:
        raise ValueError("t must be >= 0")
    ph = np.exp(-t * laplacian_symbol(box))
    p = np.fft.ifftn(ph).real
    np.clip(p, 0.0, None, out=p)  # wrap sum of nonnegatives; clip FFT rounding dust
    return ScalarField.from_grid(box, p)


def heat_kernel_diagonal(t: float, box: BoxSpec) -> float:
    """p(t, 0) without materializing the full kernel."""
    return float(np.mean(np.exp(-t * laplacian_symbol(box))))


def elliptic_matrix(a: CoefficientField) -> np.ndarray:
    """Dense matrix of div*(a grad .) in site-index order.

    Intended for small boxes (direct solves, eigenvalue checks); the stencil
    is assembled from the coefficient table without going through the
    operator, so it doubles as an independent cross-check of apply_elliptic.
    """
    box = a.box
    n, d = box.n_sites, box.d
    A = np.zeros((n, n))
    coords = box.coordinate_arrays()
    idx = np.arange(n)
    for i in range(d):
        fwd = coords.copy()
        fwd[:, i] = (fwd[:, i] + 1) % box.L
        j = np.array([box.index_of(c) for c in fwd])
        ai = a.diag[:, i]
        # edge x -> x+e_i with conductance a_i(x) contributes the usual
        # graph-Laplacian pattern
        np.add.at(A, (idx, idx), ai)
        np.add.at(A, (j, j), ai)
        np.add.at(A, (idx, j), -ai)
        np.add.at(A, (j, idx), -ai)
    return A
