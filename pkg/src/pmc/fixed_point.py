"""Picard iteration of the linearize-shift-solve operator, with continuation.

One step maps a zero-mean slope field v to (u, c): c is the vertical
shift that zeroes the averaged normal flux and u solves the weighted
Poisson problem with that flux as data.  At fixed smoothing scale the
step is iterated (with damping on residual growth) until the iterate is
a numerical fixed point; the smoothing scale is then driven down a
warm-started schedule until successive solutions agree, which stands in
for the vanishing-smoothing limit.  The final certificate is the
residual of the unsmoothed equation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .ambient import AmbientField, SampledBackend, check_hypotheses, exponent_q
from .elliptic import LinearSolveStats, WeightedPoissonProblem, coefficient_from, solve_weighted_poisson
from .errors import ConfigurationError, HypothesisError, ResolutionError, SolverFailureError
from .grid import ScalarField, TorusGrid, mean, sobolev_norm
from .mollifier import MAX_LAMBDA, mollify
from .shift import ShiftProblem, find_shift
from .verification import pmc_residual

DEFAULT_SCHEDULE = (1.0 / 16, 1.0 / 32, 1.0 / 64, 1.0 / 128)


@dataclass(frozen=True)
class SolverConfig:
    """Parameters of one solve: exponents, smoothing schedule and tolerances."""

    grid: TorusGrid
    epsilon: float
    p: float
    lambda_schedule: tuple = DEFAULT_SCHEDULE
    picard_tol: float = 1e-9
    picard_max_iters: int = 200
    linear_tol: float = 1e-10
    shift_tol: float = 1e-10
    damping_theta: float = 1.0
    max_damping_halvings: int = 4
    extend_schedule: bool = True
    lambda_floor: float = 1e-6
    max_stages: int = 64
    stencil_points_per_radius: int = 3
    hypothesis_vertical_nodes: int = 128
    zero_mean_tol: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.epsilon < 1.0:
            raise ConfigurationError(f"epsilon must lie in (0, 1), got {self.epsilon}")
        exponent_q(self.grid.dim, self.p)  # validates p
        sched = tuple(float(x) for x in self.lambda_schedule)
        if not sched:
            raise ConfigurationError("lambda schedule must be nonempty")
        if any(not 0.0 < lam < MAX_LAMBDA for lam in sched):
            raise ConfigurationError(f"schedule entries must lie in (0, {MAX_LAMBDA})")
        if any(b >= a for a, b in zip(sched, sched[1:])):
            raise ConfigurationError("lambda schedule must be strictly decreasing")
        object.__setattr__(self, "lambda_schedule", sched)

    @property
    def q(self) -> float:
        return exponent_q(self.grid.dim, self.p)


@dataclass
class ApplyResult:
    """One operator application: new zero-mean graph, shift, and step diagnostics."""

    u: ScalarField
    c: float
    shift_residual: float
    linear_stats: LinearSolveStats
    admissible: bool


def apply_T(v: ScalarField, g_lambda: AmbientField, config: SolverConfig) -> ApplyResult:
    """Shift v to zero flux, then solve the linearized problem with that flux.

    v must be zero-mean.  The flux field has mean F(c), which the shift
    solve has already driven below shift_tol * epsilon; projecting it out
    removes only that quadrature residue.
    """
    if abs(mean(v)) > 1e-10:
        raise ConfigurationError("apply_T requires a zero-mean slope field")
    problem = ShiftProblem(v, g_lambda, config.epsilon)
    c = find_shift(problem, tol=config.shift_tol)
    flux = problem.flux_field(c)
    flux_mean = float(np.mean(flux))
    rhs = ScalarField(v.grid, flux - flux_mean)
    linear = WeightedPoissonProblem(coefficient_from(v), rhs)
    u, stats = solve_weighted_poisson(linear, tol=config.linear_tol)
    return ApplyResult(
        u=u,
        c=float(c),
        shift_residual=abs(flux_mean),
        linear_stats=stats,
        admissible=problem.admissible,
    )


@dataclass
class StageReport:
    """Diagnostics of the Picard iteration at one smoothing scale."""

    lam: float
    converged: bool
    picard_iterations: int
    c_final: float
    c_history: list = field(default_factory=list)
    shift_residuals: list = field(default_factory=list)
    picard_diffs: list = field(default_factory=list)
    apriori_ratios: list = field(default_factory=list)
    linear_stats: list = field(default_factory=list)
    damping_halvings: int = 0
    escaped_admissible_set: bool = False
    fixed_point_gap: float = 0.0
    mollified_residual: float = 0.0
    stage_diff: float = float("nan")


@dataclass
class StageSolution:
    report: StageReport
    v: ScalarField  # converged zero-mean part
    u_full: ScalarField  # v + c


def solve_at_lambda(
    g: AmbientField, lam: float, config: SolverConfig, v0: ScalarField
) -> StageSolution:
    """Picard-iterate the operator at one smoothing scale from the seed v0.

    Stops when successive iterates differ by at most picard_tol in the
    discrete W^{2,q} norm; the step is damped (up to max_damping_halvings)
    whenever the difference grows.  On convergence one extra operator
    application produces the reported shift and the fixed-point gap.
    """
    g_lam = mollify(g, lam, config.stencil_points_per_radius)
    q = config.q
    g_norm = getattr(g, "_cached_w1p_norm", None)
    report = StageReport(lam=lam, converged=False, picard_iterations=0, c_final=0.0)
    theta = config.damping_theta
    v = v0
    prev_diff = np.inf
    for _ in range(config.picard_max_iters):
        step = apply_T(v, g_lam, config)
        report.c_history.append(step.c)
        report.shift_residuals.append(step.shift_residual)
        report.linear_stats.append(step.linear_stats)
        if g_norm:
            report.apriori_ratios.append(sobolev_norm(step.u, 2, q) / g_norm)
        if not step.admissible:
            report.escaped_admissible_set = True
        v_next = ScalarField(v.grid, (1.0 - theta) * v.values + theta * step.u.values)
        diff = sobolev_norm(v_next - v, 2, q)
        if diff > prev_diff and report.damping_halvings < config.max_damping_halvings:
            theta *= 0.5
            report.damping_halvings += 1
            v_next = ScalarField(v.grid, (1.0 - theta) * v.values + theta * step.u.values)
            diff = sobolev_norm(v_next - v, 2, q)
        v_next = ScalarField(v.grid, v_next.values - np.mean(v_next.values))
        report.picard_diffs.append(diff)
        report.picard_iterations += 1
        v = v_next
        prev_diff = diff
        if diff <= config.picard_tol:
            report.converged = True
            break

    if not report.converged:
        raise SolverFailureError(
            f"Picard iteration at lambda={lam} did not converge within "
            f"{config.picard_max_iters} steps (last diff {prev_diff:.3e})",
            stats=report,
        )

    # certify the fixed point at the converged iterate
    final = apply_T(v, g_lam, config)
    report.c_history.append(final.c)
    report.shift_residuals.append(final.shift_residual)
    report.linear_stats.append(final.linear_stats)
    if g_norm:
        report.apriori_ratios.append(sobolev_norm(final.u, 2, q) / g_norm)
    report.fixed_point_gap = sobolev_norm(final.u - v, 2, q)
    report.c_final = final.c
    u_full = ScalarField(v.grid, v.values + final.c)
    report.mollified_residual = pmc_residual(u_full, g_lam)
    return StageSolution(report=report, v=v, u_full=u_full)


@dataclass
class SolveReport:
    """Full outcome of a continuation solve."""

    u: ScalarField
    converged: bool
    continuation_converged: bool
    residual_nonlinear: float
    w2q_norm_of_centered_u: float
    epsilon_bound_satisfied: bool
    c_history: list
    shift_residuals: list
    stages: list
    hypothesis: object
    config: SolverConfig
    g_norm_w1p: float
    notes: list = field(default_factory=list)

    @property
    def final_c(self) -> float:
        return self.stages[-1].c_final if self.stages else 0.0

    def render_body(self) -> str:
        """Deterministic key:value text; the CLI prepends the format header."""
        cfg = self.config
        lines = [
            f"dim: {cfg.grid.dim}",
            f"N: {cfg.grid.points_per_axis}",
            f"epsilon: {cfg.epsilon!r}",
            f"p: {cfg.p!r}",
            f"q: {cfg.q!r}",
            f"seed: {cfg.seed}",
            f"converged: {str(self.converged).lower()}",
            f"continuation_converged: {str(self.continuation_converged).lower()}",
            f"residual_nonlinear: {self.residual_nonlinear!r}",
            f"w2q_norm_of_centered_u: {self.w2q_norm_of_centered_u!r}",
            f"sqrt_epsilon: {np.sqrt(cfg.epsilon)!r}",
            f"epsilon_bound_satisfied: {str(self.epsilon_bound_satisfied).lower()}",
            f"g_norm_w1p: {self.g_norm_w1p!r}",
            f"final_shift: {self.final_c!r}",
            f"mean_u: {mean(self.u)!r}",
            f"stages: {len(self.stages)}",
        ]
        if self.hypothesis is not None:
            h = self.hypothesis
            lines += [
                "hypothesis:",
                f"  w1p_norm: {h.sobolev_norm_w1p!r}",
                f"  smallness_pass: {str(h.smallness_pass).lower()}",
                f"  monotonicity_margin: {h.monotonicity_margin!r}",
                f"  zero_mean_residual: {h.zero_mean_residual!r}",
                f"  passed: {str(h.passed).lower()}",
            ]
        for note in self.notes:
            lines.append(f"note: {note}")
        for i, st in enumerate(self.stages, 1):
            lines += [
                f"stage {i}:",
                f"  lambda: {st.lam!r}",
                f"  picard_iterations: {st.picard_iterations}",
                f"  converged: {str(st.converged).lower()}",
                f"  shift: {st.c_final!r}",
                f"  fixed_point_gap: {st.fixed_point_gap!r}",
                f"  mollified_residual: {st.mollified_residual!r}",
                f"  stage_diff: {st.stage_diff!r}",
                f"  damping_halvings: {st.damping_halvings}",
                f"  escaped_admissible_set: {str(st.escaped_admissible_set).lower()}",
                f"  max_shift_residual: {max(st.shift_residuals)!r}",
                f"  linear_iterations: {sum(s.iterations for s in st.linear_stats)}",
            ]
        return "\n".join(lines) + "\n"


def _resolution_floor(g: AmbientField) -> float | None:
    """Smallest usable smoothing scale for lattice-bound fields, if any."""
    backend = g.backend
    if isinstance(backend, SampledBackend):
        h_s = backend.nodes[1] - backend.nodes[0]
        return 2.0 * max(backend.grid.spacing, h_s)
    return None


def solve(g: AmbientField, config: SolverConfig, force: bool = False) -> SolveReport:
    """Continuation over the smoothing schedule, then the unsmoothed certificate.

    The hypothesis check runs first and failure aborts unless force is
    set.  After the configured schedule the scale keeps halving (warm
    started) until successive solutions differ by less than picard_tol in
    W^{2,q}, a sampled field hits its lattice floor, or the scale/stage
    caps are reached.  The reported residual is that of the original,
    unsmoothed field.
    """
    hypothesis = check_hypotheses(
        g,
        config.epsilon,
        config.p,
        grid=config.grid,
        num_vertical=config.hypothesis_vertical_nodes,
        zero_mean_tol=config.zero_mean_tol,
    )
    if not hypothesis.passed and not force:
        raise HypothesisError(
            "ambient field fails the solvability hypotheses "
            f"(norm {hypothesis.sobolev_norm_w1p:.3e} vs eps^(2/3) "
            f"{config.epsilon ** (2/3):.3e}, margin {hypothesis.monotonicity_margin:.3e}, "
            f"zero-mean residual {hypothesis.zero_mean_residual:.3e})",
            report=hypothesis,
        )
    from .ambient import slab_w1p_norm

    g_norm = slab_w1p_norm(g, config.p, config.grid, config.hypothesis_vertical_nodes)
    g._cached_w1p_norm = g_norm

    notes = []
    floor = _resolution_floor(g)
    stages = []
    c_history = []
    shift_residuals = []
    v = ScalarField.constant(config.grid, 0.0)
    prev_full = None
    continuation_converged = False
    lam_sequence = list(config.lambda_schedule)
    # converge each stage a notch tighter than the continuation threshold,
    # so stage differences are not dominated by Picard stopping noise
    stage_config = replace(config, picard_tol=0.25 * config.picard_tol)
    idx = 0
    while idx < config.max_stages:
        if idx < len(lam_sequence):
            lam = lam_sequence[idx]
            extension = False
        elif config.extend_schedule:
            lam = lam_sequence[-1] / 2.0
            if lam < config.lambda_floor:
                notes.append(f"extension stopped at the scale floor {config.lambda_floor!r}")
                break
            lam_sequence.append(lam)
            extension = True
        else:
            break
        if floor is not None and lam < floor:
            msg = f"lambda={lam!r} unresolvable on the sampled lattice (floor {floor!r})"
            if extension:
                notes.append("extension stopped: " + msg)
                break
            raise ResolutionError(msg)
        stage = solve_at_lambda(g, lam, stage_config, v)
        if prev_full is not None:
            stage.report.stage_diff = sobolev_norm(stage.u_full - prev_full, 2, config.q)
        stages.append(stage.report)
        c_history.extend(stage.report.c_history)
        shift_residuals.extend(stage.report.shift_residuals)
        v = stage.v
        prev_full = stage.u_full
        idx += 1
        if not math.isnan(stages[-1].stage_diff) and stages[-1].stage_diff < config.picard_tol:
            continuation_converged = True
            break

    if not continuation_converged and not notes:
        notes.append("continuation stopped by the stage cap before stage differences settled")

    u = prev_full
    residual = pmc_residual(u, g)
    centered = ScalarField(config.grid, u.values - np.mean(u.values))
    w2q = sobolev_norm(centered, 2, config.q)
    bound_ok = w2q <= np.sqrt(config.epsilon)
    return SolveReport(
        u=u,
        converged=all(st.converged for st in stages),
        continuation_converged=continuation_converged,
        residual_nonlinear=residual,
        w2q_norm_of_centered_u=w2q,
        epsilon_bound_satisfied=bool(bound_ok),
        c_history=c_history,
        shift_residuals=shift_residuals,
        stages=stages,
        hypothesis=hypothesis,
        config=config,
        g_norm_w1p=g_norm,
        notes=notes,
    )
