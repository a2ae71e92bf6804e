"""Vertical shift of a candidate graph: the root of the averaged normal flux.

For a slope field v and a smoothed ambient field, F(t) is the torus
average of nu(grad v) . g(x, v(x) + t).  Admissible fields make F
strictly increasing, so the unique root in (-1/4, 1/4) is found by
bisection on the sign change, with secant polish attempts once the
bracket is tight; the postcondition |F(c)| <= tol * epsilon is always
verified on the returned value.
"""

from __future__ import annotations

import warnings

import numpy as np

from .ambient import AmbientField
from .errors import BracketError, DomainError, GridMismatchError, SolverFailureError
from .grid import ScalarField, c1_norm, gradient

BRACKET = (-0.25, 0.25)
DEFAULT_TOL = 1e-10
_MAX_ITERATIONS = 200
_POLISH_CHECKPOINTS = (3, 10, 18, 26, 34)


class MonotonicityWarning(UserWarning):
    """Sampled flux values were not monotone in the shift."""


class AdmissibilityWarning(UserWarning):
    """The slope field exceeds the sqrt(epsilon) envelope; solving anyway."""


def normal_vector(z) -> np.ndarray:
    """Upward unit normal (-z, 1)/sqrt(1+|z|^2) of a graph with slope z."""
    z = np.atleast_1d(np.asarray(z, dtype=float))
    scale = 1.0 / np.sqrt(1.0 + np.sum(z * z))
    return np.concatenate([-z, [1.0]]) * scale


def normal_field(grad) -> np.ndarray:
    """Pointwise unit normal of a graph from its GradientField: (n+1, *shape)."""
    comps = grad.components
    scale = 1.0 / np.sqrt(1.0 + sum(c * c for c in comps))
    out = np.empty((len(comps) + 1,) + comps[0].shape)
    for i, c in enumerate(comps):
        out[i] = -c * scale
    out[len(comps)] = scale
    return out


class ShiftProblem:
    """Slope field, smoothed ambient field and epsilon for one root-find.

    Construction verifies that every admissible shift keeps the graph
    inside the field's vertical band; a slope field outside the
    sqrt(epsilon) envelope is only warned about, because transient
    iterates may overshoot.
    """

    def __init__(self, v: ScalarField, g_lambda: AmbientField, epsilon: float):
        if v.grid.dim != g_lambda.dim:
            raise GridMismatchError("slope field and ambient field dimensions differ")
        if not 0.0 < epsilon < 1.0:
            raise DomainError(f"epsilon must lie in (0, 1), got {epsilon}")
        lo, hi = g_lambda.band
        vmin, vmax = float(np.min(v.values)), float(np.max(v.values))
        if vmin + BRACKET[0] <= lo or vmax + BRACKET[1] >= hi:
            raise DomainError(
                f"graph range [{vmin:.3f}, {vmax:.3f}] shifted by the bracket leaves "
                f"the vertical band ({lo:.3f}, {hi:.3f})"
            )
        self.v = v
        self.g_lambda = g_lambda
        self.epsilon = float(epsilon)
        self.bracket = BRACKET
        self.admissible = c1_norm(v) <= np.sqrt(epsilon)
        if not self.admissible:
            warnings.warn(
                "slope field exceeds the sqrt(epsilon) envelope; attempting anyway",
                AdmissibilityWarning,
                stacklevel=2,
            )
        self._nu = normal_field(gradient(v))

    def flux_field(self, t: float) -> np.ndarray:
        """Pointwise nu(grad v) . g(x, v + t) on the grid."""
        vals = self.g_lambda.values_on_grid(self.v.grid, self.v.values + t)
        return np.sum(self._nu * vals, axis=0)


def eval_F(problem: ShiftProblem, t: float) -> float:
    """Quadrature of the normal flux at shift t (t within the closed bracket)."""
    lo, hi = problem.bracket
    if not lo <= t <= hi:
        raise DomainError(f"shift {t} outside the bracket [{lo}, {hi}]")
    return float(np.mean(problem.flux_field(t)))


def _check_monotone_samples(samples: list[tuple[float, float]]) -> None:
    samples = sorted(samples)
    scale = max(1e-30, max(abs(f) for _, f in samples))
    for (t0, f0), (t1, f1) in zip(samples, samples[1:]):
        if t1 > t0 and f1 < f0 - 1e-13 * scale:
            warnings.warn(
                f"flux samples not monotone: F({t0:.6g})={f0:.3e} > F({t1:.6g})={f1:.3e}",
                MonotonicityWarning,
                stacklevel=3,
            )
            return


def find_shift(problem: ShiftProblem, tol: float = DEFAULT_TOL, _bracket=None) -> float:
    """Root of F in the open bracket with |F(root)| <= tol * epsilon.

    Requires the sign condition F(lo) < 0 < F(hi); bisection does the
    guaranteed work and a secant step is attempted at a few checkpoints
    (it is exact when the field is affine in the vertical coordinate).
    All evaluations are checked for monotonicity and a warning is
    attached when they are not.
    """
    lo, hi = _bracket if _bracket is not None else problem.bracket
    target = tol * problem.epsilon
    f_lo = eval_F(problem, lo)
    f_hi = eval_F(problem, hi)
    samples = [(lo, f_lo), (hi, f_hi)]
    if not (f_lo < 0.0 < f_hi):
        raise BracketError(
            f"no sign change on [{lo}, {hi}]: F({lo})={f_lo:.6e}, F({hi})={f_hi:.6e}; "
            "the field is too weak at this resolution",
            f_lo=f_lo,
            f_hi=f_hi,
        )

    def finish(c, fc):
        _check_monotone_samples(samples)
        return float(c)

    for iteration in range(1, _MAX_ITERATIONS + 1):
        mid = 0.5 * (lo + hi)
        f_mid = eval_F(problem, mid)
        samples.append((mid, f_mid))
        if abs(f_mid) <= target:
            return finish(mid, f_mid)
        if f_mid > 0.0:
            hi, f_hi = mid, f_mid
        else:
            lo, f_lo = mid, f_mid
        if iteration in _POLISH_CHECKPOINTS and f_hi > f_lo:
            cand = lo - f_lo * (hi - lo) / (f_hi - f_lo)
            if lo < cand < hi:
                f_cand = eval_F(problem, cand)
                samples.append((cand, f_cand))
                if abs(f_cand) <= target:
                    return finish(cand, f_cand)
                if f_cand > 0.0:
                    hi, f_hi = cand, f_cand
                else:
                    lo, f_lo = cand, f_cand
    raise SolverFailureError(
        f"shift root-find did not reach |F| <= {target:.3e} in {_MAX_ITERATIONS} "
        f"iterations; bracket [{lo}, {hi}]"
    )
