"""Uniform periodic grids on the flat torus and spectral calculus on them.

Fields live on the unit-period torus discretized by N points per axis
(N a power of two, N >= 16).  Derivatives, quadrature and interpolation
are Fourier-collocation based, so they are exact for resolved
trigonometric polynomials.  Arrays are stored in C (row-major) order
over the axes; the on-disk format flattens in that same order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DomainError, GridMismatchError

MIN_POINTS_PER_AXIS = 16


@dataclass(frozen=True)
class TorusGrid:
    """Uniform lattice with N**dim nodes on the torus, dim in {1, 2, 3}.

    Node coordinates are i/N per axis, i = 0..N-1, so spacing * N = 1
    exactly in the index map.
    """

    dim: int
    points_per_axis: int

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise ConfigurationError(f"dim must be 1, 2 or 3, got {self.dim}")
        n = self.points_per_axis
        if n < MIN_POINTS_PER_AXIS or (n & (n - 1)) != 0:
            raise ConfigurationError(
                f"points_per_axis must be a power of two >= {MIN_POINTS_PER_AXIS}, got {n}"
            )

    @property
    def spacing(self) -> float:
        return 1.0 / self.points_per_axis

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.points_per_axis,) * self.dim

    @property
    def num_points(self) -> int:
        return self.points_per_axis**self.dim

    def axis_coordinates(self) -> np.ndarray:
        return np.arange(self.points_per_axis) / self.points_per_axis

    def coordinates(self) -> tuple[np.ndarray, ...]:
        """Meshgrid of node coordinates, one array of shape `shape` per axis."""
        axes = [self.axis_coordinates() for _ in range(self.dim)]
        return tuple(np.meshgrid(*axes, indexing="ij"))


def _as_values(grid: TorusGrid, values) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.size != grid.num_points:
        raise GridMismatchError(
            f"expected {grid.num_points} values for grid {grid.shape}, got {arr.size}"
        )
    arr = arr.reshape(grid.shape).copy()
    if not np.all(np.isfinite(arr)):
        raise DomainError("field values must be finite")
    return arr


class ScalarField:
    """Real-valued grid function on the torus.

    `values` has shape grid.shape (row-major over axes); all entries are
    finite.  Instances are treated as immutable by every operation in
    this package, which makes them safe to share across threads.
    """

    __slots__ = ("grid", "values")

    def __init__(self, grid: TorusGrid, values):
        self.grid = grid
        self.values = _as_values(grid, values)

    @classmethod
    def constant(cls, grid: TorusGrid, value: float) -> "ScalarField":
        return cls(grid, np.full(grid.shape, float(value)))

    @classmethod
    def from_function(cls, grid: TorusGrid, fn) -> "ScalarField":
        """Sample fn(x1, ..., xn) (vectorized over coordinate arrays)."""
        return cls(grid, fn(*grid.coordinates()))

    def copy(self) -> "ScalarField":
        return ScalarField(self.grid, self.values)

    def _check_same_grid(self, other: "ScalarField"):
        if other.grid != self.grid:
            raise GridMismatchError("fields live on different grids")

    def __add__(self, other):
        if isinstance(other, ScalarField):
            self._check_same_grid(other)
            return ScalarField(self.grid, self.values + other.values)
        return ScalarField(self.grid, self.values + float(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, ScalarField):
            self._check_same_grid(other)
            return ScalarField(self.grid, self.values - other.values)
        return ScalarField(self.grid, self.values - float(other))

    def __mul__(self, scalar):
        return ScalarField(self.grid, self.values * float(scalar))

    __rmul__ = __mul__

    def __neg__(self):
        return ScalarField(self.grid, -self.values)


class GradientField:
    """Spectral gradient of a ScalarField; one component array per axis.

    Produced by `gradient`, so each component is the exact derivative of
    the trigonometric interpolant and has zero mean.
    """

    __slots__ = ("grid", "components")

    def __init__(self, grid: TorusGrid, components):
        comps = tuple(np.asarray(c, dtype=float) for c in components)
        if len(comps) != grid.dim:
            raise GridMismatchError(
                f"need {grid.dim} components, got {len(comps)}"
            )
        for c in comps:
            if c.shape != grid.shape:
                raise GridMismatchError("component shape does not match grid")
        self.grid = grid
        self.components = comps

    def magnitude(self) -> np.ndarray:
        """Pointwise Euclidean length |w(x)|."""
        sq = np.zeros(self.grid.shape)
        for c in self.components:
            sq += c * c
        return np.sqrt(sq)


# ---------------------------------------------------------------------------
# spectral machinery


def _int_freqs(n: int) -> np.ndarray:
    """Integer Fourier frequencies [0, 1, ..., N/2-1, -N/2, ..., -1]."""
    return np.fft.fftfreq(n) * n


def _axis_symbol(n: int, order: int) -> np.ndarray:
    """Fourier symbol of d^order/dx^order on the unit-period axis.

    The Nyquist mode is zeroed for odd orders: its first derivative is
    not representable on the real collocation grid.
    """
    sym = (2j * np.pi * _int_freqs(n)) ** order
    if order % 2 == 1:
        sym[n // 2] = 0.0
    return sym


def _reshape_for_axis(arr: np.ndarray, axis: int, ndim: int) -> np.ndarray:
    shape = [1] * ndim
    shape[axis] = arr.size
    return arr.reshape(shape)


def _spectral_partial(values_hat: np.ndarray, grid: TorusGrid, orders) -> np.ndarray:
    """Inverse transform of values_hat multiplied by per-axis derivative symbols.

    orders[k] is the derivative order along axis k.
    """
    out = values_hat
    for axis, order in enumerate(orders):
        if order:
            sym = _axis_symbol(grid.points_per_axis, order)
            out = out * _reshape_for_axis(sym, axis, grid.dim)
    return np.fft.ifftn(out).real


def gradient(u: ScalarField) -> GradientField:
    """Spectral gradient; exact for resolved trigonometric polynomials."""
    u_hat = np.fft.fftn(u.values)
    comps = []
    for axis in range(u.grid.dim):
        orders = [0] * u.grid.dim
        orders[axis] = 1
        comps.append(_spectral_partial(u_hat, u.grid, orders))
    return GradientField(u.grid, comps)


def divergence(w) -> ScalarField:
    """Spectral divergence of an n-component vector field.

    Accepts a GradientField or a sequence of ScalarFields / arrays on a
    common grid.  The result has zero mean up to round-off.
    """
    if isinstance(w, GradientField):
        grid, comps = w.grid, w.components
    else:
        comps = list(w)
        if not comps or not isinstance(comps[0], ScalarField):
            raise GridMismatchError("divergence needs a GradientField or ScalarFields")
        grid = comps[0].grid
        for c in comps[1:]:
            if c.grid != grid:
                raise GridMismatchError("divergence components on different grids")
        comps = [c.values for c in comps]
    if len(comps) != grid.dim:
        raise GridMismatchError(
            f"divergence needs {grid.dim} components, got {len(comps)}"
        )
    total = np.zeros(grid.shape)
    for axis, c in enumerate(comps):
        orders = [0] * grid.dim
        orders[axis] = 1
        total += _spectral_partial(np.fft.fftn(c), grid, orders)
    return ScalarField(grid, total)


def mean(u: ScalarField) -> float:
    """Uniform quadrature average h^n * sum(values) (the torus has unit volume)."""
    return float(np.mean(u.values))


def lp_norm(u: ScalarField, p: float) -> float:
    """Discrete Lebesgue norm (h^n sum |u_i|^p)^(1/p)."""
    if p < 1:
        raise DomainError(f"lp_norm requires p >= 1, got {p}")
    return float(np.mean(np.abs(u.values) ** p) ** (1.0 / p))


def _derivative_multi_indices(dim: int, order: int):
    """Unordered multi-indices of partials up to `order` (mixed ones once each)."""
    out = []
    if order >= 1:
        for i in range(dim):
            idx = [0] * dim
            idx[i] = 1
            out.append(tuple(idx))
    if order >= 2:
        for i in range(dim):
            for j in range(i, dim):
                idx = [0] * dim
                idx[i] += 1
                idx[j] += 1
                out.append(tuple(idx))
    return out


def sobolev_norm(u: ScalarField, order: int, p: float) -> float:
    """Additive discrete W^{order,p} norm: ||u||_p + sum of partial-derivative norms.

    Partials are spectral; each unordered mixed partial enters once.
    order must be 0, 1 or 2.
    """
    if order not in (0, 1, 2):
        raise DomainError(f"sobolev_norm supports order 0, 1, 2, got {order}")
    total = lp_norm(u, p)
    if order == 0:
        return total
    u_hat = np.fft.fftn(u.values)
    for orders in _derivative_multi_indices(u.grid.dim, order):
        part = _spectral_partial(u_hat, u.grid, orders)
        total += lp_norm(ScalarField(u.grid, part), p)
    return total


def c1_norm(u: ScalarField) -> float:
    """Discrete C^1 norm: max over nodes of max(|u|, |grad u|)."""
    g = gradient(u)
    return float(max(np.max(np.abs(u.values)), np.max(g.magnitude())))


def interpolate(u: ScalarField, x) -> float:
    """Trigonometric interpolation of u at a point of the torus.

    x is reduced mod 1 per axis.  At grid nodes the interpolant
    collocates the stored values exactly.
    """
    return float(interpolate_many(u, np.asarray(x, dtype=float).reshape(1, -1))[0])


def interpolate_many(u: ScalarField, points: np.ndarray) -> np.ndarray:
    """Vectorized trigonometric interpolation at points of shape (m, dim)."""
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[1] != u.grid.dim:
        raise DomainError(f"points must have shape (m, {u.grid.dim})")
    points = np.mod(points, 1.0)
    coeffs = np.fft.fftn(u.values) / u.grid.num_points
    freqs = _int_freqs(u.grid.points_per_axis)
    # contract one axis at a time: coeffs (N,..,N) -> (m, N,..) -> (m,)
    out = coeffs
    for axis in range(u.grid.dim):
        phase = np.exp(2j * np.pi * np.outer(points[:, axis], freqs))
        if axis == 0:
            out = np.tensordot(phase, out, axes=([1], [0]))
        else:
            out = np.einsum("mk,mk...->m...", phase, out)
    return out.real


# ---------------------------------------------------------------------------
# field files

FIELD_MAGIC = "pmc-field v1"


def write_field(u: ScalarField, path) -> None:
    """Write the text field format: header line, then one value per line.

    Values are written with repr(), which round-trips float64 exactly
    (17 significant digits suffice).
    """
    grid = u.grid
    with open(path, "w") as fh:
        fh.write(f"{FIELD_MAGIC} dim={grid.dim} N={grid.points_per_axis}\n")
        for v in u.values.ravel():
            fh.write(repr(float(v)) + "\n")


def read_field(path) -> ScalarField:
    """Read a field written by write_field."""
    with open(path) as fh:
        header = fh.readline().strip()
        parts = header.split()
        if parts[:2] != FIELD_MAGIC.split() or len(parts) != 4:
            raise ConfigurationError(f"bad field header: {header!r}")
        try:
            dim = int(parts[2].removeprefix("dim="))
            n = int(parts[3].removeprefix("N="))
        except ValueError as exc:
            raise ConfigurationError(f"bad field header: {header!r}") from exc
        grid = TorusGrid(dim, n)
        values = np.loadtxt(fh, dtype=float, ndmin=1)
    if values.size != grid.num_points:
        raise ConfigurationError(
            f"field file has {values.size} values, expected {grid.num_points}"
        )
    return ScalarField(grid, values)
