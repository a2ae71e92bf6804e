"""Compactly supported smoothing of ambient fields.

The kernel is the standard bump exp(1/(r^2 - 1)) on the unit ball of
R^{n+1}, scaled to radius lambda and sampled on a discrete stencil whose
weights are renormalized to sum one.  Smoothing a field on
T^n x (lo, hi) yields a field on the vertically shrunken band
(lo + lambda, hi - lambda).

Two evaluation strategies:

* sampled fields are convolved once on their own lattice (FFT over the
  periodic axes, direct restriction vertically), giving a new sampled
  field;
* analytic and grid-affine fields get a lazy wrapper that sums the
  stencil at evaluation time with a lambda-scaled isotropic stencil, so
  arbitrarily small lambda stays resolvable.

Keeping the operator an explicit convex combination of translates (as
opposed to multiplying by a smooth Fourier symbol) is what preserves
positivity, the L^p contraction and the strict vertical monotonicity of
admissible fields.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .ambient import AmbientField, SampledBackend, _Backend
from .errors import ConfigurationError, DomainError, ResolutionError
from .grid import TorusGrid

MAX_LAMBDA = 0.125


def bump(r):
    """Unnormalized radial profile: exp(1/(r^2 - 1)) inside the unit ball, 0 outside."""
    r = np.asarray(r, dtype=float)
    out = np.zeros(r.shape)
    inside = np.abs(r) < 1.0
    out[inside] = np.exp(1.0 / (r[inside] ** 2 - 1.0))
    return out if out.ndim else float(out)


def _stencil_radius(lam: float, spacing: float) -> int:
    """Largest integer m with m * spacing < lam (tolerant to exact ratios)."""
    return int(np.ceil(lam / spacing - 1e-9)) - 1


@dataclass(frozen=True)
class MollifierKernel:
    """Discrete stencil of radius lam in R^{n+1}: offsets and convex weights.

    Weights are bump(|offset| / lam) renormalized to unit sum, so they
    depend on |offset| only; offsets with zero weight are dropped.
    """

    lam: float
    dim_ambient: int
    offsets: np.ndarray = field(repr=False)  # (K, dim_ambient)
    weights: np.ndarray = field(repr=False)  # (K,)

    @classmethod
    def from_lattice(cls, lam: float, spacings) -> "MollifierKernel":
        """Sample the kernel on the lattice of per-axis spacings."""
        spacings = np.asarray(spacings, dtype=float)
        dim_ambient = spacings.size
        radii = [_stencil_radius(lam, h) for h in spacings]
        if any(r < 1 for r in radii):
            raise ResolutionError(
                f"lambda={lam} is smaller than 2 grid spacings {tuple(spacings)}; "
                "kernel unresolvable"
            )
        ranges = [range(-r, r + 1) for r in radii]
        offsets = np.array(list(itertools.product(*ranges)), dtype=float) * spacings
        w = bump(np.linalg.norm(offsets, axis=1) / lam)
        keep = w > 0.0
        offsets, w = offsets[keep], w[keep]
        w = w / w.sum()
        return cls(lam=lam, dim_ambient=dim_ambient, offsets=offsets, weights=w)

    @classmethod
    def isotropic(cls, lam: float, dim_ambient: int, points_per_radius: int = 3) -> "MollifierKernel":
        """Kernel on the lambda-scaled lattice (spacing lam / points_per_radius)."""
        return cls.from_lattice(lam, [lam / points_per_radius] * dim_ambient)


class MollifiedBackend(_Backend):
    """Lazy stencil sum over a wrapped backend.

    Every evaluation is sum_w weight_w * base(x - y_w, s - s_w); the
    vertical partial commutes with the sum.  When the base field is
    affine in s the collapsed affine parts are cached per grid, which
    turns repeated grid evaluations into O(N^n) lookups.
    """

    def __init__(self, base: _Backend, kernel: MollifierKernel):
        self.base = base
        self.dim = base.dim
        self.kernel = kernel
        self._affine_cache: dict = {}

    def _accumulate(self, call, *args):
        out = None
        for w, offset in zip(self.kernel.weights, self.kernel.offsets):
            term = call(offset[: self.dim], offset[self.dim], *args)
            out = w * term if out is None else out + w * term
        return out

    def values_at(self, x_arrays, s):
        s = np.asarray(s, dtype=float)
        return self._accumulate(
            lambda y, sw: self.base.values_at(tuple(x - yd for x, yd in zip(x_arrays, y)), s - sw)
        )

    def vertical_partial_at(self, x_arrays, s):
        s = np.asarray(s, dtype=float)
        return self._accumulate(
            lambda y, sw: self.base.vertical_partial_at(
                tuple(x - yd for x, yd in zip(x_arrays, y)), s - sw
            )
        )

    def _combined_shift(self, shift, y):
        if shift is None:
            return tuple(y)
        return tuple(d + yd for d, yd in zip(shift, y))

    def values_on_shifted_grid(self, grid, shift, s):
        affine = self.affine_on_shifted_grid(grid, shift)
        if affine is not None:
            a, b = affine
            return a + b * np.asarray(s, dtype=float)
        s = np.asarray(s, dtype=float)
        return self._accumulate(
            lambda y, sw: self.base.values_on_shifted_grid(grid, self._combined_shift(shift, y), s - sw)
        )

    def vertical_partial_on_shifted_grid(self, grid, shift, s):
        affine = self.affine_on_shifted_grid(grid, shift)
        if affine is not None:
            _, b = affine
            shape = np.broadcast_shapes(b.shape[1:], np.shape(s))
            return np.broadcast_to(b, (self.dim + 1,) + shape).copy()
        s = np.asarray(s, dtype=float)
        return self._accumulate(
            lambda y, sw: self.base.vertical_partial_on_shifted_grid(
                grid, self._combined_shift(shift, y), s - sw
            )
        )

    def affine_on_shifted_grid(self, grid, shift):
        key = (grid, shift)
        if key in self._affine_cache:
            cached = self._affine_cache[key]
            return None if cached is None else (cached[0].copy(), cached[1].copy())
        probe = self.base.affine_on_shifted_grid(grid, shift)
        if probe is None:
            self._affine_cache[key] = None
            return None
        a_out = np.zeros_like(probe[0])
        b_out = np.zeros_like(probe[1])
        for w, offset in zip(self.kernel.weights, self.kernel.offsets):
            a_w, b_w = self.base.affine_on_shifted_grid(grid, self._combined_shift(shift, offset[: self.dim]))
            # base(x - y, s - sw) = A(x-y) - sw B(x-y) + B(x-y) s
            a_out += w * (a_w - offset[self.dim] * b_w)
            b_out += w * b_w
        self._affine_cache[key] = (a_out, b_out)
        return a_out.copy(), b_out.copy()


def _mollify_sampled(backend: SampledBackend, band, lam: float):
    grid = backend.grid
    h = grid.spacing
    nodes = backend.nodes
    h_s = nodes[1] - nodes[0]
    kernel = MollifierKernel.from_lattice(lam, [h] * grid.dim + [h_s])

    r_s = _stencil_radius(lam, h_s)
    lo_idx, hi_idx = r_s, backend.num_vertical - 1 - r_s
    if hi_idx - lo_idx + 1 < 2:
        raise ResolutionError("vertical lattice too coarse for this lambda")

    # group stencil weights by their vertical offset index; each group is
    # an x-slice of the kernel placed on the periodic lattice
    n = grid.points_per_axis
    slices_hat = {}
    for w, offset in zip(kernel.weights, kernel.offsets):
        ws = int(round(offset[-1] / h_s))
        if ws not in slices_hat:
            slices_hat[ws] = np.zeros(grid.shape)
        idx = tuple(int(round(o / h)) % n for o in offset[: grid.dim])
        slices_hat[ws][idx] += w
    slices_hat = {ws: np.fft.fftn(sl) for ws, sl in slices_hat.items()}

    x_axes = tuple(range(1, 1 + grid.dim))
    data_hat = np.fft.fftn(backend.data, axes=x_axes)
    out = np.empty((grid.dim + 1,) + grid.shape + (hi_idx - lo_idx + 1,))
    for col, j in enumerate(range(lo_idx, hi_idx + 1)):
        acc = np.zeros((grid.dim + 1,) + grid.shape, dtype=complex)
        for ws, sl_hat in slices_hat.items():
            acc += data_hat[..., j - ws] * sl_hat
        out[..., col] = np.fft.ifftn(acc, axes=x_axes).real

    new_band = (band[0] + lam, band[1] - lam)
    new_backend = SampledBackend(grid, out, new_band, nodes=nodes[lo_idx : hi_idx + 1])
    return AmbientField(grid.dim, new_backend, new_band), kernel


def mollify(g: AmbientField, lam: float, points_per_radius: int = 3) -> AmbientField:
    """Smooth g at scale lam; the result lives on the lam-shrunken band.

    Sampled fields are convolved eagerly on their lattice (which bounds
    lam from below by twice the spacing); other backends are wrapped
    lazily with an isotropic stencil.
    """
    if not 0.0 < lam < MAX_LAMBDA:
        raise DomainError(f"lambda must lie in (0, {MAX_LAMBDA}), got {lam}")
    lo, hi = g.band
    if hi - lam <= lo + lam:
        raise DomainError(f"band {g.band} vanishes after shrinking by lambda={lam}")
    if isinstance(g.backend, SampledBackend):
        out, _ = _mollify_sampled(g.backend, g.band, lam)
        return out
    kernel = MollifierKernel.isotropic(lam, g.dim + 1, points_per_radius)
    return AmbientField(g.dim, MollifiedBackend(g.backend, kernel), (lo + lam, hi - lam))


def slab_lp_norm(g: AmbientField, p: float, band=None, grid: TorusGrid | None = None,
                 num_vertical: int = 64) -> float:
    """Discrete L^p norm of the pointwise Euclidean magnitude |g| over a band.

    Sampled fields are integrated on their own lattice nodes (restricted
    to the band) so that smoothing-contraction comparisons are exact;
    other fields are sampled on cell-centered nodes.
    """
    if p < 1:
        raise DomainError(f"slab_lp_norm requires p >= 1, got {p}")
    lo, hi = g.band
    if band is not None:
        lo, hi = max(lo, band[0]), min(hi, band[1])
        if not lo < hi:
            raise DomainError("requested band does not intersect the field band")
    backend = g.backend
    if isinstance(backend, SampledBackend):
        grid = backend.grid
        nodes = backend.nodes
        mask = (nodes > lo) & (nodes < hi)
        step = nodes[1] - nodes[0]
        mag = np.sqrt(np.sum(backend.data[..., mask] ** 2, axis=0))
        return float((step / grid.num_points * np.sum(mag**p)) ** (1.0 / p))
    if grid is None:
        grid = TorusGrid(g.dim, 64)
    from .ambient import vertical_nodes

    nodes = vertical_nodes(num_vertical, (lo, hi))
    step = (hi - lo) / num_vertical
    total = 0.0
    for s in nodes:
        vals = g.values_on_grid(grid, np.full(grid.shape, s))
        total += np.sum(np.sqrt(np.sum(vals**2, axis=0)) ** p)
    return float((step / grid.num_points * total) ** (1.0 / p))
