"""Ambient vector fields on the torus-times-interval slab, and the solvability checks.

A field g = (g^1, ..., g^n, g^{n+1}) lives on T^n x (lo, hi) (the full
slab is (-1, 1); smoothing shrinks it).  Three backends are provided:

* analytic   -- vectorized component callables with exact vertical partials;
* grid-affine -- components A_c(x) + B_c(x) * s with A, B stored as grid
  fields (trigonometric interpolants in x);
* sampled    -- values on a product lattice (torus grid x uniform
  cell-centered vertical nodes), spectral in x and cubic in the vertical.

Evaluation on a torus grid shifted by a constant offset is the hot path
of the solver and every backend implements it without per-point loops.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import ConfigurationError, DomainError, GridMismatchError
from .grid import ScalarField, TorusGrid, interpolate_many

MIN_VERTICAL_NODES = 16
FULL_BAND = (-1.0, 1.0)


def vertical_nodes(m: int, band=FULL_BAND) -> np.ndarray:
    """Uniform cell-centered nodes: all strictly inside the open band."""
    lo, hi = band
    step = (hi - lo) / m
    return lo + (np.arange(m) + 0.5) * step


def exponent_q(n: int, p: float) -> float:
    """Trace exponent q = n p / (n + 1 - p) for (n+1)/2 < p < n+1."""
    if not (n + 1) / 2 < p < n + 1:
        raise DomainError(f"p must satisfy (n+1)/2 < p < n+1, got p={p} for n={n}")
    return n * p / (n + 1 - p)


def _shifted_coordinates(grid: TorusGrid, shift) -> tuple[np.ndarray, ...]:
    coords = grid.coordinates()
    if shift is None:
        return coords
    return tuple(c - d for c, d in zip(coords, shift))


def _phase_shift_values(values: np.ndarray, grid: TorusGrid, shift) -> np.ndarray:
    """Evaluate the trigonometric interpolant of `values` at every node minus `shift`."""
    out_hat = np.fft.fftn(values)
    n = grid.points_per_axis
    freqs = np.fft.fftfreq(n) * n
    for axis, d in enumerate(shift):
        if d:
            phase = np.exp(-2j * np.pi * freqs * d)
            shape = [1] * grid.dim
            shape[axis] = n
            out_hat = out_hat * phase.reshape(shape)
    return np.fft.ifftn(out_hat).real


class _Backend:
    """Interface shared by the three field representations."""

    def values_at(self, x_arrays, s):  # (n+1, *shape)
        raise NotImplementedError

    def vertical_partial_at(self, x_arrays, s):
        raise NotImplementedError

    def values_on_shifted_grid(self, grid, shift, s):
        return self.values_at(_shifted_coordinates(grid, shift), s)

    def vertical_partial_on_shifted_grid(self, grid, shift, s):
        return self.vertical_partial_at(_shifted_coordinates(grid, shift), s)

    def affine_on_shifted_grid(self, grid, shift):
        """(A, B) arrays with g = A + B*s on the shifted grid, or None."""
        return None


class AnalyticBackend(_Backend):
    """Closed-form components.

    components[c](x1, ..., xn, s) and vertical_partials[c](...) must be
    vectorized over same-shaped coordinate arrays.  affine holds
    ((A_c callables), (B_c callables)) when every component is affine in
    s; it unlocks the precomputed smoothing path.
    """

    def __init__(self, dim, components, vertical_partials, affine=None):
        if len(components) != dim + 1 or len(vertical_partials) != dim + 1:
            raise ConfigurationError(f"need {dim + 1} components and vertical partials")
        self.dim = dim
        self.components = tuple(components)
        self.vertical_partials = tuple(vertical_partials)
        self.affine = affine

    def _stack(self, fns, x_arrays, s):
        s = np.asarray(s, dtype=float)
        shape = np.broadcast_shapes(*(np.shape(a) for a in x_arrays), s.shape)
        out = np.empty((self.dim + 1,) + shape)
        for c, fn in enumerate(fns):
            out[c] = np.broadcast_to(np.asarray(fn(*x_arrays, s), dtype=float), shape)
        return out

    def values_at(self, x_arrays, s):
        return self._stack(self.components, x_arrays, s)

    def vertical_partial_at(self, x_arrays, s):
        return self._stack(self.vertical_partials, x_arrays, s)

    def affine_on_shifted_grid(self, grid, shift):
        if self.affine is None:
            return None
        coords = _shifted_coordinates(grid, shift)
        a_fns, b_fns = self.affine
        a = np.stack([np.broadcast_to(np.asarray(f(*coords), dtype=float), grid.shape) for f in a_fns])
        b = np.stack([np.broadcast_to(np.asarray(f(*coords), dtype=float), grid.shape) for f in b_fns])
        return a, b


class GridAffineBackend(_Backend):
    """Components A_c(x) + B_c(x) * s with A, B given as grid samples.

    A and B are arrays of shape (n+1, *grid.shape); off-grid values come
    from the trigonometric interpolant, so shifted-grid evaluation is a
    Fourier phase twist.
    """

    def __init__(self, grid: TorusGrid, a_values: np.ndarray, b_values: np.ndarray):
        a_values = np.asarray(a_values, dtype=float)
        b_values = np.asarray(b_values, dtype=float)
        expected = (grid.dim + 1,) + grid.shape
        if a_values.shape != expected or b_values.shape != expected:
            raise GridMismatchError(f"A, B must have shape {expected}")
        self.grid = grid
        self.dim = grid.dim
        self.a_values = a_values
        self.b_values = b_values

    def _parts_at(self, x_arrays):
        shape = np.broadcast_shapes(*(np.shape(a) for a in x_arrays))
        pts = np.stack([np.broadcast_to(a, shape).ravel() for a in x_arrays], axis=-1)
        a = np.empty((self.dim + 1,) + shape)
        b = np.empty((self.dim + 1,) + shape)
        for c in range(self.dim + 1):
            a[c] = interpolate_many(ScalarField(self.grid, self.a_values[c]), pts).reshape(shape)
            b[c] = interpolate_many(ScalarField(self.grid, self.b_values[c]), pts).reshape(shape)
        return a, b

    def values_at(self, x_arrays, s):
        a, b = self._parts_at(x_arrays)
        return a + b * np.asarray(s, dtype=float)

    def vertical_partial_at(self, x_arrays, s):
        _, b = self._parts_at(x_arrays)
        shape = np.broadcast_shapes(b.shape[1:], np.shape(s))
        return np.broadcast_to(b, (self.dim + 1,) + shape).copy()

    def affine_on_shifted_grid(self, grid, shift):
        if grid != self.grid:
            a, b = self._parts_at(_shifted_coordinates(grid, shift))
            return a, b
        if shift is None or not any(shift):
            return self.a_values.copy(), self.b_values.copy()
        a = np.stack([_phase_shift_values(v, grid, shift) for v in self.a_values])
        b = np.stack([_phase_shift_values(v, grid, shift) for v in self.b_values])
        return a, b

    def values_on_shifted_grid(self, grid, shift, s):
        a, b = self.affine_on_shifted_grid(grid, shift)
        return a + b * np.asarray(s, dtype=float)

    def vertical_partial_on_shifted_grid(self, grid, shift, s):
        _, b = self.affine_on_shifted_grid(grid, shift)
        shape = np.broadcast_shapes(b.shape[1:], np.shape(s))
        return np.broadcast_to(b, (self.dim + 1,) + shape).copy()


class SampledBackend(_Backend):
    """Product-lattice samples: shape (n+1, *grid.shape, M), vertical axis last.

    The vertical interpolant is a not-a-knot cubic spline, which keeps
    the vertical derivative continuous.  Nodes are cell-centered, so all
    of them lie strictly inside the band.
    """

    def __init__(self, grid: TorusGrid, data: np.ndarray, band=FULL_BAND, nodes=None):
        data = np.asarray(data, dtype=float)
        if data.ndim != grid.dim + 2 or data.shape[: grid.dim + 1] != (grid.dim + 1,) + grid.shape:
            raise GridMismatchError(
                f"data must have shape ({grid.dim + 1}, {'x'.join(map(str, grid.shape))}, M)"
            )
        m = data.shape[-1]
        if nodes is None:
            if m < MIN_VERTICAL_NODES:
                raise ConfigurationError(
                    f"need at least {MIN_VERTICAL_NODES} vertical nodes, got {m}"
                )
            nodes = vertical_nodes(m, band)
        else:
            nodes = np.asarray(nodes, dtype=float)
            if nodes.size != m or m < 4:
                raise ConfigurationError("nodes must match the data and number at least 4")
            steps = np.diff(nodes)
            if np.any(steps <= 0) or np.max(steps) - np.min(steps) > 1e-12 * np.max(steps):
                raise ConfigurationError("vertical nodes must be uniform and ascending")
        if not np.all(np.isfinite(data)):
            raise DomainError("sampled field values must be finite")
        self.grid = grid
        self.dim = grid.dim
        self.num_vertical = m
        self.data = data
        self.nodes = nodes
        flat = data.reshape(-1, m)
        self._spline = CubicSpline(self.nodes, flat, axis=-1)
        self._spline_d = self._spline.derivative()

    def _diag_values(self, ppoly, s: np.ndarray) -> np.ndarray:
        """All components at (grid node i, s_i); s has the grid's shape."""
        k = self.grid.num_points
        s_flat = np.asarray(s, dtype=float).ravel()
        out = np.empty((self.dim + 1, k))
        for c in range(self.dim + 1):
            cols = np.arange(c * k, (c + 1) * k)
            out[c] = self._eval_spline_cols(ppoly, cols, s_flat)
        return out.reshape((self.dim + 1,) + self.grid.shape)

    def _eval_spline_cols(self, ppoly, cols, s):
        breaks = ppoly.x
        idx = np.clip(np.searchsorted(breaks, s, side="right") - 1, 0, len(breaks) - 2)
        dt = s - breaks[idx]
        coeff = ppoly.c[:, idx, cols]
        out = coeff[0]
        for row in coeff[1:]:
            out = out * dt + row
        return out

    def _columns_spline(self, x_arrays):
        """Spline of the x-interpolated data at arbitrary points: (ppoly, m)."""
        shape = np.broadcast_shapes(*(np.shape(a) for a in x_arrays))
        pts = np.stack([np.broadcast_to(a, shape).ravel() for a in x_arrays], axis=-1)
        m = pts.shape[0]
        vals = np.empty((self.dim + 1, m, self.num_vertical))
        for c in range(self.dim + 1):
            for j in range(self.num_vertical):
                field = ScalarField(self.grid, self.data[c, ..., j])
                vals[c, :, j] = interpolate_many(field, pts)
        return CubicSpline(self.nodes, vals.reshape(-1, self.num_vertical), axis=-1), shape

    def _values_at(self, ppoly_selector, x_arrays, s):
        spline, shape = self._columns_spline(x_arrays)
        ppoly = spline if ppoly_selector == "value" else spline.derivative()
        m = int(np.prod(shape)) if shape else 1
        s_flat = np.broadcast_to(np.asarray(s, dtype=float), shape).ravel()
        out = np.empty((self.dim + 1, m))
        for c in range(self.dim + 1):
            cols = np.arange(c * m, (c + 1) * m)
            out[c] = self._eval_spline_cols(ppoly, cols, s_flat)
        return out.reshape((self.dim + 1,) + shape)

    def values_at(self, x_arrays, s):
        return self._values_at("value", x_arrays, s)

    def vertical_partial_at(self, x_arrays, s):
        return self._values_at("derivative", x_arrays, s)

    def values_on_shifted_grid(self, grid, shift, s):
        if grid != self.grid or (shift is not None and any(shift)):
            return super().values_on_shifted_grid(grid, shift, s)
        s_b = np.broadcast_to(np.asarray(s, dtype=float), grid.shape)
        return self._diag_values(self._spline, s_b)

    def vertical_partial_on_shifted_grid(self, grid, shift, s):
        if grid != self.grid or (shift is not None and any(shift)):
            return super().vertical_partial_on_shifted_grid(grid, shift, s)
        s_b = np.broadcast_to(np.asarray(s, dtype=float), grid.shape)
        return self._diag_values(self._spline_d, s_b)


class AmbientField:
    """Vector field on T^n x (lo, hi) with vertical-derivative access.

    Immutable after construction; all evaluations are pure reads and are
    safe to run concurrently.
    """

    def __init__(self, dim: int, backend: _Backend, band=FULL_BAND):
        lo, hi = float(band[0]), float(band[1])
        if not lo < hi:
            raise ConfigurationError(f"empty vertical band ({lo}, {hi})")
        self.dim = dim
        self.backend = backend
        self.band = (lo, hi)

    def _check_band(self, s):
        s = np.asarray(s, dtype=float)
        lo, hi = self.band
        if s.size and (np.min(s) <= lo or np.max(s) >= hi):
            raise DomainError(
                f"vertical coordinate outside the open band ({lo}, {hi}): "
                f"range [{np.min(s)}, {np.max(s)}]"
            )
        return s

    def eval(self, x, s: float) -> np.ndarray:
        """Componentwise value at a single point; returns shape (n+1,)."""
        s = self._check_band(s)
        x = np.asarray(x, dtype=float).reshape(self.dim)
        x_arrays = tuple(np.asarray(xi) for xi in x)
        return self.backend.values_at(x_arrays, s).reshape(self.dim + 1)

    def eval_vertical_partial(self, x, s: float) -> np.ndarray:
        s = self._check_band(s)
        x = np.asarray(x, dtype=float).reshape(self.dim)
        x_arrays = tuple(np.asarray(xi) for xi in x)
        return self.backend.vertical_partial_at(x_arrays, s).reshape(self.dim + 1)

    # vectorized paths used by the solver

    def values_at(self, x_arrays, s) -> np.ndarray:
        return self.backend.values_at(x_arrays, self._check_band(s))

    def vertical_partial_at(self, x_arrays, s) -> np.ndarray:
        return self.backend.vertical_partial_at(x_arrays, self._check_band(s))

    def values_on_grid(self, grid: TorusGrid, s, shift=None) -> np.ndarray:
        return self.backend.values_on_shifted_grid(grid, shift, self._check_band(s))

    def vertical_partial_on_grid(self, grid: TorusGrid, s, shift=None) -> np.ndarray:
        return self.backend.vertical_partial_on_shifted_grid(grid, shift, self._check_band(s))

    def affine_parts(self, grid: TorusGrid, shift=None):
        """(A, B) with g = A(x) + B(x) s when the field is affine in s, else None."""
        return self.backend.affine_on_shifted_grid(grid, shift)


def analytic_field(dim, components, vertical_partials, band=FULL_BAND, affine=None) -> AmbientField:
    return AmbientField(dim, AnalyticBackend(dim, components, vertical_partials, affine), band)


def vertical_field(dim, profile, profile_derivative, band=FULL_BAND) -> AmbientField:
    """Field (0, ..., 0, G(s)) depending only on the vertical coordinate."""

    def zero(*args):
        return np.zeros(np.broadcast_shapes(*(np.shape(a) for a in args)))

    comps = [zero] * dim + [lambda *args: profile(args[-1])]
    parts = [zero] * dim + [lambda *args: profile_derivative(args[-1])]
    return analytic_field(dim, comps, parts, band)


def grid_affine_field(grid: TorusGrid, a_values, b_values, band=FULL_BAND) -> AmbientField:
    return AmbientField(grid.dim, GridAffineBackend(grid, a_values, b_values), band)


def sample_field(g: AmbientField, grid: TorusGrid, num_vertical: int) -> AmbientField:
    """Sample any field onto the product lattice (a sampled copy)."""
    nodes = vertical_nodes(num_vertical, g.band)
    coords = grid.coordinates()
    data = np.empty((g.dim + 1,) + grid.shape + (num_vertical,))
    for j, s in enumerate(nodes):
        data[..., j] = g.values_on_grid(grid, np.full(grid.shape, s))
    return AmbientField(g.dim, SampledBackend(grid, data, g.band), g.band)


def sampled_field(grid: TorusGrid, data, band=FULL_BAND) -> AmbientField:
    return AmbientField(grid.dim, SampledBackend(grid, data, band), band)


def translate_vertically(g: AmbientField, d: float) -> AmbientField:
    """The field (x, s) -> g(x, s - d); its band shifts up by d."""
    d = float(d)
    band = (g.band[0] + d, g.band[1] + d)
    backend = g.backend
    if isinstance(backend, GridAffineBackend):
        return AmbientField(
            g.dim,
            GridAffineBackend(
                backend.grid, backend.a_values - d * backend.b_values, backend.b_values
            ),
            band,
        )
    if isinstance(backend, SampledBackend):
        moved = SampledBackend(backend.grid, backend.data, band, nodes=backend.nodes + d)
        return AmbientField(g.dim, moved, band)
    if isinstance(backend, AnalyticBackend):
        comps = [lambda *args, fn=fn: fn(*args[:-1], args[-1] - d) for fn in backend.components]
        parts = [
            lambda *args, fn=fn: fn(*args[:-1], args[-1] - d)
            for fn in backend.vertical_partials
        ]
        affine = None
        if backend.affine is not None:
            a_fns, b_fns = backend.affine
            affine = (
                [lambda *x, af=af, bf=bf: af(*x) - d * bf(*x) for af, bf in zip(a_fns, b_fns)],
                list(b_fns),
            )
        return AmbientField(g.dim, AnalyticBackend(g.dim, comps, parts, affine), band)
    raise ConfigurationError("vertical translation is not supported for this backend")


# ---------------------------------------------------------------------------
# hypothesis checking


@dataclass(frozen=True)
class HypothesisReport:
    """Outcome of the three solvability conditions at given epsilon, p.

    monotonicity_margin is the infimum over the sample lattice of
    d_s g^{n+1} - eps - sqrt(eps) |d_s g'|; the check is necessary, not a
    certificate, so the margin is reported for the caller to judge.
    """

    sobolev_norm_w1p: float
    smallness_pass: bool
    monotonicity_margin: float
    zero_mean_residual: float
    epsilon: float
    p: float
    dim: int
    zero_mean_tol: float = 1e-8

    @property
    def q(self) -> float:
        return exponent_q(self.dim, self.p)

    @property
    def monotonicity_pass(self) -> bool:
        return self.monotonicity_margin > 0

    @property
    def zero_mean_pass(self) -> bool:
        return self.zero_mean_residual < self.zero_mean_tol

    @property
    def passed(self) -> bool:
        return self.smallness_pass and self.monotonicity_pass and self.zero_mean_pass


def slab_w1p_norm(g: AmbientField, p: float, grid: TorusGrid, num_vertical: int = 128) -> float:
    """Additive discrete W^{1,p} norm of g over the slab.

    Component L^p norms plus all first partials; horizontal derivatives
    are spectral derivatives of the samples, the vertical one comes from
    the backend.  Quadrature is the uniform product rule (h^n in x,
    midpoint over cell-centered vertical nodes).
    """
    nodes = vertical_nodes(num_vertical, g.band)
    weight = (g.band[1] - g.band[0]) / num_vertical / grid.num_points
    n_comp = g.dim + 1
    values = np.empty((n_comp, num_vertical) + grid.shape)
    vpart = np.empty_like(values)
    for j, s in enumerate(nodes):
        s_arr = np.full(grid.shape, s)
        values[:, j] = g.values_on_grid(grid, s_arr)
        vpart[:, j] = g.vertical_partial_on_grid(grid, s_arr)

    def norm_p(block):
        return float((weight * np.sum(np.abs(block) ** p)) ** (1.0 / p))

    total = 0.0
    x_axes = tuple(range(1, 1 + grid.dim))  # values[c] is (vertical, *grid.shape)
    for c in range(n_comp):
        total += norm_p(values[c])
        hat = np.fft.fftn(values[c], axes=x_axes)
        n = grid.points_per_axis
        freqs = np.fft.fftfreq(n) * n
        sym = 2j * np.pi * freqs
        sym[n // 2] = 0.0
        for axis in range(grid.dim):
            shape = [1] * (1 + grid.dim)
            shape[1 + axis] = n
            part = np.fft.ifftn(hat * sym.reshape(shape), axes=x_axes).real
            total += norm_p(part)
        total += norm_p(vpart[c])
    return total


def check_hypotheses(
    g: AmbientField,
    epsilon: float,
    p: float,
    grid: TorusGrid | None = None,
    num_vertical: int | None = None,
    zero_mean_tol: float = 1e-8,
) -> HypothesisReport:
    """Evaluate the smallness, monotonicity and zero-mean conditions.

    The norm is compared against epsilon**(2/3); the monotonicity margin
    is the infimum over the product sample lattice; the zero-mean
    residual is the quadrature of g^{n+1}(., 0) over the torus.
    """
    exponent_q(g.dim, p)  # validates the admissible range for p
    if not 0 < epsilon < 1:
        raise DomainError(f"epsilon must lie in (0, 1), got {epsilon}")
    backend = g.backend
    if grid is None:
        grid = backend.grid if isinstance(backend, (SampledBackend, GridAffineBackend)) else TorusGrid(g.dim, 64)
    if num_vertical is None:
        num_vertical = backend.num_vertical if isinstance(backend, SampledBackend) else 128

    norm = slab_w1p_norm(g, p, grid, num_vertical)
    smallness = norm < epsilon ** (2.0 / 3.0)

    margin = np.inf
    root_eps = np.sqrt(epsilon)
    for s in vertical_nodes(num_vertical, g.band):
        dpart = g.vertical_partial_on_grid(grid, np.full(grid.shape, s))
        horizontal = np.sqrt(np.sum(dpart[: g.dim] ** 2, axis=0)) if g.dim else 0.0
        margin = min(margin, float(np.min(dpart[g.dim] - epsilon - root_eps * horizontal)))

    lo, hi = g.band
    if not lo < 0.0 < hi:
        raise DomainError("band does not contain the zero slice needed for the mean condition")
    slice_vals = g.values_on_grid(grid, np.zeros(grid.shape))[g.dim]
    zero_mean = abs(float(np.mean(slice_vals)))

    return HypothesisReport(
        sobolev_norm_w1p=norm,
        smallness_pass=bool(smallness),
        monotonicity_margin=float(margin),
        zero_mean_residual=zero_mean,
        epsilon=float(epsilon),
        p=float(p),
        dim=g.dim,
        zero_mean_tol=zero_mean_tol,
    )


# ---------------------------------------------------------------------------
# sampled-field files

AMBIENT_MAGIC = "pmc-ambient v1"


def write_ambient(g: AmbientField, path) -> None:
    """Write a sampled field: header, then values component-major, row-major, vertical."""
    backend = g.backend
    if not isinstance(backend, SampledBackend):
        raise ConfigurationError("only sampled fields can be written; use sample_field first")
    if g.band != FULL_BAND or not np.allclose(
        backend.nodes, vertical_nodes(backend.num_vertical), atol=1e-15
    ):
        raise ConfigurationError(
            "the ambient file format stores full-band fields with cell-centered nodes"
        )
    grid = backend.grid
    with open(path, "w") as fh:
        fh.write(
            f"{AMBIENT_MAGIC} dim={grid.dim} N={grid.points_per_axis} M={backend.num_vertical}\n"
        )
        for v in backend.data.ravel():
            fh.write(repr(float(v)) + "\n")


def read_ambient(path) -> AmbientField:
    with open(path) as fh:
        header = fh.readline().strip()
        parts = header.split()
        if parts[:2] != AMBIENT_MAGIC.split() or len(parts) != 5:
            raise ConfigurationError(f"bad ambient header: {header!r}")
        try:
            dim = int(parts[2].removeprefix("dim="))
            n = int(parts[3].removeprefix("N="))
            m = int(parts[4].removeprefix("M="))
        except ValueError as exc:
            raise ConfigurationError(f"bad ambient header: {header!r}") from exc
        grid = TorusGrid(dim, n)
        values = np.loadtxt(fh, dtype=float, ndmin=1)
    expected = (dim + 1) * grid.num_points * m
    if values.size != expected:
        raise ConfigurationError(f"ambient file has {values.size} values, expected {expected}")
    data = values.reshape((dim + 1,) + grid.shape + (m,))
    return sampled_field(grid, data)
