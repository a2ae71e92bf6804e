"""Weighted periodic Poisson solves: -div(a grad u) = H on the zero-mean class.

The coefficient a = 1/sqrt(1 + |grad v|^2) comes from a slope field v,
so 0 < a <= 1 and the operator is symmetric positive definite on
zero-mean fields.  The operator is applied in strong form (spectral
derivative, pointwise multiply, spectral divergence) and inverted by
conjugate gradients preconditioned with the constant-coefficient
inverse Laplacian; the kernel (constants) is projected out after every
application.

Solves are stateless pure functions; concurrent calls do not share
workspaces.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolationError, GridMismatchError, SolverFailureError
from .grid import ScalarField, TorusGrid, gradient, lp_norm

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITERATIONS = 500
RHS_MEAN_TOLERANCE = 1e-10


def coefficient_from(v: ScalarField) -> ScalarField:
    """Pointwise 1/sqrt(1 + |grad v|^2) with the spectral gradient."""
    slope = gradient(v).magnitude()
    return ScalarField(v.grid, 1.0 / np.sqrt(1.0 + slope**2))


@dataclass(frozen=True)
class LinearSolveStats:
    iterations: int
    relative_residual: float
    coercivity_lower_bound: float


def project_resolved(values: np.ndarray, grid: TorusGrid) -> np.ndarray:
    """Drop the per-axis Nyquist modes (and record nothing else).

    Collocation first derivatives annihilate those modes, so the
    composed operator -div(a grad .) is singular on them; they carry no
    information for this discretization and are removed from the data.
    """
    hat = np.fft.fftn(values)
    n = grid.points_per_axis
    for axis in range(grid.dim):
        sl = [slice(None)] * grid.dim
        sl[axis] = n // 2
        hat[tuple(sl)] = 0.0
    return np.fft.ifftn(hat).real


class WeightedPoissonProblem:
    """Coefficient, right-hand side and grid for one linearized solve.

    The rhs must already be (numerically) zero-mean; the tiny quadrature
    residue below `mean_tolerance` is projected out, anything larger is
    a caller bug and is rejected.  The rhs is also restricted to the
    resolved trigonometric space (per-axis Nyquist modes dropped), the
    natural solvability class of the collocation operator.
    """

    def __init__(self, coefficient: ScalarField, rhs: ScalarField,
                 mean_tolerance: float = RHS_MEAN_TOLERANCE):
        if coefficient.grid != rhs.grid:
            raise GridMismatchError("coefficient and rhs live on different grids")
        a = coefficient.values
        if np.min(a) <= 0.0 or np.max(a) > 1.0 + 1e-14:
            raise ContractViolationError("coefficient values must lie in (0, 1]")
        rhs_mean = float(np.mean(rhs.values))
        if abs(rhs_mean) >= mean_tolerance:
            raise ContractViolationError(
                f"|mean(rhs)| = {abs(rhs_mean):.3e} exceeds {mean_tolerance:.1e}; "
                "the problem is only solvable for zero-mean data"
            )
        self.grid = coefficient.grid
        self.coefficient = coefficient
        projected = project_resolved(rhs.values - rhs_mean, self.grid)
        self.rhs = ScalarField(self.grid, projected - np.mean(projected))
        self.mean_tolerance = mean_tolerance

    @property
    def coercivity_lower_bound(self) -> float:
        return float(np.min(self.coefficient.values))


def _first_derivative_symbols(grid: TorusGrid):
    n = grid.points_per_axis
    freqs = np.fft.fftfreq(n) * n
    sym = 2j * np.pi * freqs
    sym[n // 2] = 0.0
    out = []
    for axis in range(grid.dim):
        shape = [1] * grid.dim
        shape[axis] = n
        out.append(sym.reshape(shape))
    return out


def _inverse_laplacian_multiplier(grid: TorusGrid):
    n = grid.points_per_axis
    freqs = np.fft.fftfreq(n) * n
    ksq = np.zeros(grid.shape)
    for axis in range(grid.dim):
        shape = [1] * grid.dim
        shape[axis] = n
        ksq = ksq + (freqs.reshape(shape)) ** 2
    mult = np.zeros(grid.shape)
    nonzero = ksq > 0
    mult[nonzero] = 1.0 / (4.0 * np.pi**2 * ksq[nonzero])
    # stay inside the resolved space: the operator is singular on Nyquist modes
    for axis in range(grid.dim):
        sl = [slice(None)] * grid.dim
        sl[axis] = n // 2
        mult[tuple(sl)] = 0.0
    return mult


def apply_operator(problem: WeightedPoissonProblem, u_values: np.ndarray) -> np.ndarray:
    """-div(a grad u), projected onto the resolved zero-mean class.

    The pointwise product a * grad u aliases into cross-axis Nyquist
    rows that the derivative symbols of the other axes do not remove;
    projecting the output keeps the operator an endomorphism of the
    resolved space, where it is symmetric positive definite.
    """
    grid = problem.grid
    syms = _first_derivative_symbols(grid)
    a = problem.coefficient.values
    u_hat = np.fft.fftn(u_values)
    acc = np.zeros(grid.shape)
    for sym in syms:
        du = np.fft.ifftn(u_hat * sym).real
        acc += np.fft.ifftn(np.fft.fftn(a * du) * sym).real
    out = project_resolved(-acc, grid)
    return out - np.mean(out)


def bilinear_form(w1: ScalarField, w2: ScalarField, coefficient: ScalarField) -> float:
    """Quadrature of a grad(w1) . grad(w2) over the torus."""
    g1 = gradient(w1)
    g2 = gradient(w2)
    total = np.zeros(w1.grid.shape)
    for c1, c2 in zip(g1.components, g2.components):
        total += c1 * c2
    return float(np.mean(coefficient.values * total))


def solve_weighted_poisson(
    problem: WeightedPoissonProblem,
    tol: float = DEFAULT_TOL,
    max_iterations: int = DEFAULT_MAX_ITERATIONS,
) -> tuple[ScalarField, LinearSolveStats]:
    """Preconditioned CG for the zero-mean solution of -div(a grad u) = H.

    Convergence is declared when ||H + div(a grad u)||_2 / ||H||_2 <= tol.
    The inverse-Laplacian preconditioner makes the iteration count depend
    only on the coefficient contrast max(a)/min(a).
    """
    grid = problem.grid
    b = problem.rhs.values
    b_norm = float(np.linalg.norm(b))
    stats_bound = problem.coercivity_lower_bound
    if b_norm == 0.0:
        u = ScalarField.constant(grid, 0.0)
        return u, LinearSolveStats(0, 0.0, stats_bound)

    mult = _inverse_laplacian_multiplier(grid)

    def precondition(r):
        return np.fft.ifftn(np.fft.fftn(r) * mult).real

    x = np.zeros(grid.shape)
    r = b.copy()
    z = precondition(r)
    d = z.copy()
    rz = float(np.sum(r * z))
    iterations = 0
    rel = float(np.linalg.norm(r)) / b_norm
    while rel > tol and iterations < max_iterations:
        ad = apply_operator(problem, d)
        curvature = float(np.sum(d * ad))
        if curvature <= 0.0:
            break  # Krylov space exhausted at round-off; the final check decides
        alpha = rz / curvature
        x += alpha * d
        r -= alpha * ad
        rel = float(np.linalg.norm(r)) / b_norm
        z = precondition(r)
        rz_new = float(np.sum(r * z))
        d = z + (rz_new / rz) * d
        rz = rz_new
        iterations += 1

    x -= np.mean(x)
    true_rel = float(np.linalg.norm(b - apply_operator(problem, x))) / b_norm
    stats = LinearSolveStats(iterations, true_rel, stats_bound)
    if true_rel > tol:
        raise SolverFailureError(
            f"conjugate gradients stalled at relative residual {true_rel:.3e} "
            f"after {iterations} iterations (tol {tol:.1e})",
            stats=stats,
        )
    return ScalarField(grid, x), stats


def weak_residual(u: ScalarField, problem: WeightedPoissonProblem) -> float:
    """Strong-form residual ||div(a grad u) + H||_2 of a candidate solution."""
    if u.grid != problem.grid:
        raise GridMismatchError("candidate solution on a different grid")
    lhs = apply_operator(problem, u.values)  # -div(a grad u), zero-mean
    return lp_norm(ScalarField(problem.grid, problem.rhs.values - lhs), 2.0)
