"""Smoothing kernel and mollification properties."""

import numpy as np
import pytest

from pmc.ambient import analytic_field, sample_field, sampled_field, vertical_field
from pmc.errors import DomainError, ResolutionError
from pmc.grid import TorusGrid
from pmc.mollifier import MollifierKernel, bump, mollify, slab_lp_norm

TWO_PI = 2.0 * np.pi


def smooth_random_sampled(dim, n, m, rng, amplitude=1.0):
    """Random band-limited-in-x, smooth-in-s sampled field."""
    grid = TorusGrid(dim, n)
    from pmc.ambient import vertical_nodes

    s = vertical_nodes(m)
    coords = grid.coordinates()
    data = np.zeros((dim + 1,) + grid.shape + (m,))
    for c in range(dim + 1):
        for _ in range(3):
            k = rng.integers(-3, 4, size=dim)
            phase = rng.uniform(0, TWO_PI)
            vert = rng.normal(size=3)
            arg = sum(TWO_PI * k[d] * coords[d] for d in range(dim))
            profile = vert[0] + vert[1] * s + vert[2] * np.sin(np.pi * s / 2)
            data[c] += amplitude * rng.normal() * np.cos(arg + phase)[..., None] * profile
    return sampled_field(grid, data)


class TestBump:
    def test_center_value(self):
        assert bump(0.0) == pytest.approx(np.exp(-1.0))

    def test_boundary_and_outside(self):
        assert bump(1.0) == 0.0
        assert bump(2.0) == 0.0

    def test_vectorized_and_symmetric(self):
        r = np.array([-0.5, 0.5, 0.99, 1.5])
        vals = bump(r)
        assert vals[0] == vals[1] > vals[2] > vals[3] == 0.0


class TestKernel:
    def test_weights_are_convex(self):
        k = MollifierKernel.isotropic(1 / 16, 3)
        assert np.all(k.weights > 0)
        assert abs(k.weights.sum() - 1.0) < 1e-14
        assert np.all(np.linalg.norm(k.offsets, axis=1) < k.lam)

    def test_radially_symmetric(self):
        k = MollifierKernel.isotropic(1 / 16, 2)
        r = np.linalg.norm(k.offsets, axis=1)
        w_by_r = {}
        for ri, wi in zip(np.round(r, 15), k.weights):
            w_by_r.setdefault(ri, set()).add(round(wi, 18))
        assert all(len(ws) == 1 for ws in w_by_r.values())

    def test_lattice_resolution_error(self):
        with pytest.raises(ResolutionError):
            MollifierKernel.from_lattice(1 / 64, [1 / 16, 1 / 16])


class TestMollify:
    def test_rejects_large_lambda(self):
        g = vertical_field(1, lambda s: s, lambda s: np.ones_like(s))
        with pytest.raises(DomainError):
            mollify(g, 0.125)

    def test_sampled_resolution_error(self):
        rng = np.random.default_rng(0)
        g = smooth_random_sampled(1, 16, 32, rng)
        with pytest.raises(ResolutionError):
            mollify(g, 1.0 / 32)  # vertical spacing is 1/16

    def test_constant_field_unchanged(self):
        def const(c):
            return lambda *args: np.full(np.broadcast_shapes(*(np.shape(a) for a in args)), c)

        g = analytic_field(1, [const(2.0), const(-3.0)], [const(0.0), const(0.0)])
        lam = 1 / 16
        gl = mollify(g, lam)
        assert gl.band == (-1 + lam, 1 - lam)
        assert np.allclose(gl.eval([0.3], 0.5), [2.0, -3.0], atol=1e-14)

        gs = sample_field(g, TorusGrid(1, 64), 64)
        gsl = mollify(gs, lam)
        assert np.allclose(gsl.eval([0.3], 0.5), [2.0, -3.0], atol=1e-12)

    def test_linear_vertical_profile_preserved(self):
        # odd moments of the symmetric stencil vanish, so s stays s
        g = vertical_field(2, lambda s: s, lambda s: np.ones_like(s))
        gl = mollify(g, 1 / 16)
        for s in (-0.5, 0.0, 0.7):
            assert gl.eval([0.2, 0.8], s)[2] == pytest.approx(s, abs=1e-14)

    def test_lp_contraction_on_sampled_fields(self):
        rng = np.random.default_rng(42)
        lam = 1 / 16
        for case in range(6):
            g = smooth_random_sampled(1, 32, 64, rng)
            gl = mollify(g, lam)
            for p in (1.0, 2.0, 3.0):
                lhs = slab_lp_norm(gl, p, band=(-7 / 8, 7 / 8))
                rhs = slab_lp_norm(g, p)
                assert lhs <= rhs + 1e-12, f"case {case}, p={p}"

    def test_lp_contraction_pure_noise(self):
        # the convex-combination argument needs no smoothness at all
        rng = np.random.default_rng(7)
        grid = TorusGrid(1, 32)
        data = rng.normal(size=(2,) + grid.shape + (64,))
        g = sampled_field(grid, data)
        gl = mollify(g, 1 / 8 - 1e-3)
        for p in (1.0, 2.0, 3.0):
            assert slab_lp_norm(gl, p, band=(-7 / 8, 7 / 8)) <= slab_lp_norm(g, p) + 1e-12

    def test_monotonicity_preserved(self):
        # strict vertical dominance survives smoothing at interior samples
        rng = np.random.default_rng(3)
        grid = TorusGrid(1, 32)
        m = 64
        from pmc.ambient import vertical_nodes

        s = vertical_nodes(m)
        x = grid.coordinates()[0]
        beta = 0.5
        horiz = 0.3 * np.sin(TWO_PI * x)[..., None] * np.sin(np.pi * s / 2)
        vert = (1.0 + 0.2 * np.cos(TWO_PI * x))[..., None] * s + 0.1 * np.sin(np.pi * s)
        g = sampled_field(grid, np.stack([horiz, vert]))

        def margin(field):
            backend = field.backend
            dv = np.stack(
                [
                    field.vertical_partial_on_grid(grid, np.full(grid.shape, sj))
                    for sj in backend.nodes[2:-2]
                ]
            )
            return np.min(dv[:, 1] - beta * np.abs(dv[:, 0]))

        assert margin(g) > 0.05
        assert margin(mollify(g, 1 / 10)) > 0.0

    def test_double_mollify_well_defined(self):
        g = vertical_field(1, lambda s: s**2, lambda s: 2 * s)
        lam = 1 / 32
        gll = mollify(mollify(g, lam), lam)
        assert gll.band == (-1 + 2 * lam, 1 - 2 * lam)
        val = gll.eval([0.1], 0.5)
        assert np.isfinite(val).all()
        # smoothing a convex profile only pushes it up, boundedly
        assert 0.25 <= val[1] <= 0.25 + 4 * lam**2

    def test_lazy_and_sampled_agree_on_smooth_field(self):
        g = analytic_field(
            1,
            [lambda x, s: 0.3 * np.cos(TWO_PI * x) * s, lambda x, s: np.sin(TWO_PI * x) + s],
            [lambda x, s: 0.3 * np.cos(TWO_PI * x), lambda x, s: np.ones_like(s)],
        )
        lam = 1 / 16
        lazy = mollify(g, lam)
        eager = mollify(sample_field(g, TorusGrid(1, 64), 256), lam)
        for x, s in [(0.2, 0.0), (0.7, -0.5)]:
            a = lazy.eval([x], s)
            b = eager.eval([x], s)
            # different stencil lattices: agreement is O(lambda^2) only
            assert np.allclose(a, b, atol=5e-4)


class TestSlabLpNorm:
    def test_constant_magnitude(self):
        grid = TorusGrid(1, 16)
        data = np.zeros((2,) + grid.shape + (32,))
        data[0] = 3.0
        data[1] = 4.0
        g = sampled_field(grid, data)
        for p in (1.0, 2.0):
            # |(3,4)| = 5 on a measure-2 slab
            assert slab_lp_norm(g, p) == pytest.approx(5.0 * 2 ** (1 / p), rel=1e-12)

    def test_rejects_bad_p(self):
        g = vertical_field(1, lambda s: s, lambda s: np.ones_like(s))
        with pytest.raises(DomainError):
            slab_lp_norm(g, 0.5)
