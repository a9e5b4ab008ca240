import numpy as np
import pytest

from helmcvx.basis import GeomTensors, build_basis
from helmcvx.functional import (CarlemanWeight, convexity_probe,
                                directional_derivative, eval_J, eval_J_grad,
                                grad_J, residual)
from helmcvx.grid import Grid3, RunConfig, SourceArray
from helmcvx.pipeline import BoundaryData
from helmcvx.stencils import DiffOps


def make_instance(z=7, order=2, seed=0, lam=1.1, **cfg_kwargs):
    cfg = RunConfig(Z_h=z, N=order, lam=lam, **cfg_kwargs)
    grid = Grid3(cfg.R, z)
    sources = SourceArray(cfg.a, cfg.d, cfg.n_src, cfg.Q)
    basis = build_basis(order, cfg.a, cfg.Q)
    geom = GeomTensors(grid, sources, basis, cfg.k)
    ops = DiffOps(grid)
    rng = np.random.default_rng(seed)
    shape = (order, z, z)
    bdata = BoundaryData(
        grid, order,
        rng.standard_normal(shape) + 1j * rng.standard_normal(shape),
        rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
    cwf = CarlemanWeight(lam, cfg.r, grid)
    return cfg, grid, basis, geom, ops, bdata, cwf, rng


def random_field(rng, order, z):
    shape = (order, z, z, z)
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


class TestCarlemanWeight:
    def test_monotone_decreasing_in_depth(self):
        grid = Grid3(3.0, 21)
        cwf = CarlemanWeight(1.1, 4.0, grid)
        assert np.all(np.diff(cwf.balanced) < 0)
        assert cwf.balanced[0] == pytest.approx(1.0)

    def test_max_min_ratio(self):
        grid = Grid3(3.0, 21)
        cwf = CarlemanWeight(1.1, 4.0, grid)
        expected = np.exp(8 * 1.1 * 3.0 * 4.0)
        assert cwf.max_min_ratio() == pytest.approx(expected, rel=1e-12)
        assert cwf.balanced[0] / cwf.balanced[-1] == pytest.approx(expected, rel=1e-10)

    def test_validation(self):
        grid = Grid3(3.0, 9)
        with pytest.raises(ValueError):
            CarlemanWeight(1.0, 2.0, grid)  # shift inside the cube
        with pytest.raises(ValueError):
            CarlemanWeight(-1.0, 4.0, grid)
        # zero exponent degenerates to unit weights, used by the ablation
        assert np.all(CarlemanWeight(0.0, 4.0, grid).balanced == 1.0)


class TestResidual:
    def test_zero_field_gives_zero_residual(self):
        _, _, basis, geom, ops, _, _, _ = make_instance()
        V = np.zeros((2, 7, 7, 7), dtype=complex)
        assert np.max(np.abs(residual(V, basis, geom, ops))) == 0.0

    def test_constant_field_gives_zero_residual(self):
        _, _, basis, geom, ops, _, _, _ = make_instance()
        V = np.ones((2, 7, 7, 7), dtype=complex) * (1.3 - 0.2j)
        assert np.max(np.abs(residual(V, basis, geom, ops))) < 1e-12

    def test_matches_straight_loop_oracle(self, rng):
        # scalar-loop re-derivation, written independently of the
        # vectorized implementation
        _, grid, basis, geom, ops, _, _, _ = make_instance()
        z = grid.Z_h
        V = random_field(rng, 2, z)
        got = residual(V, basis, geom, ops)

        grads = np.stack([ops.grad(V[n]) for n in range(2)])
        laps = np.stack([ops.lap(V[n]) for n in range(2)])
        want = np.zeros_like(V)
        for m in range(2):
            for p in range(1, z - 1):
                for q in range(1, z - 1):
                    for s in range(1, z - 1):
                        acc = 0.0 + 0.0j
                        for n in range(2):
                            acc += basis.S[m, n] * laps[n, p, q, s]
                            for l in range(2):
                                dot = sum(grads[n, a, p, q, s] * grads[l, a, p, q, s]
                                          for a in range(3))
                                acc += 2.0 * basis.T[m, n, l] * dot
                            bc = geom.B(m, n) + geom.C(m, n)
                            acc += 2.0 * sum(bc[a, p, q, s] * grads[n, a, p, q, s]
                                             for a in range(3))
                        want[m, p, q, s] = acc
        assert np.max(np.abs(got - want)) < 1e-12

    def test_grid_mismatch_rejected(self, rng):
        _, _, basis, geom, ops, _, _, _ = make_instance()
        other_ops = DiffOps(Grid3(3.0, 9))
        V = random_field(rng, 2, 9)
        with pytest.raises(ValueError):
            residual(V, basis, geom, other_ops)


class TestEvalJ:
    def test_zero_everything_gives_zero(self):
        cfg, grid, basis, geom, ops, _, cwf, _ = make_instance()
        zero_bd = BoundaryData(grid, 2, np.zeros((2, 7, 7), dtype=complex),
                               np.zeros((2, 7, 7), dtype=complex))
        V = np.zeros((2, 7, 7, 7), dtype=complex)
        parts = eval_J(V, zero_bd, cwf, cfg, basis, geom, ops)
        assert parts.total == 0.0

    def test_zero_field_sees_only_data_mismatch(self):
        cfg, grid, basis, geom, ops, bdata, cwf, _ = make_instance()
        V = np.zeros((2, 7, 7, 7), dtype=complex)
        parts = eval_J(V, bdata, cwf, cfg, basis, geom, ops)
        h = grid.h
        want0 = cfg.K0 * h**2 * np.sum(np.abs(bdata.psi0_gamma) ** 2)
        want1 = cfg.K1 * h**2 * np.sum(np.abs(bdata.psi1) ** 2)
        assert parts.bc_dirichlet == pytest.approx(want0, rel=1e-14)
        assert parts.bc_neumann == pytest.approx(want1, rel=1e-14)
        assert parts.residual == 0.0 and parts.faces == 0.0
        assert parts.regularization == 0.0

    def test_all_parts_nonnegative_and_sum(self, rng):
        cfg, grid, basis, geom, ops, bdata, cwf, _ = make_instance()
        V = random_field(rng, 2, 7)
        parts = eval_J(V, bdata, cwf, cfg, basis, geom, ops)
        values = [parts.residual, parts.bc_dirichlet, parts.bc_neumann,
                  parts.faces, parts.regularization]
        assert all(v >= 0 for v in values)
        assert parts.total == pytest.approx(sum(values), rel=1e-15)

    def test_regularization_scales_linearly(self, rng):
        cfg, grid, basis, geom, ops, bdata, cwf, _ = make_instance()
        V = random_field(rng, 2, 7)
        j1 = eval_J(V, bdata, cwf, cfg, basis, geom, ops)
        cfg2 = cfg.with_overrides(gamma=2 * cfg.gamma)
        j2 = eval_J(V, bdata, cwf, cfg2, basis, geom, ops)
        assert j2.regularization == pytest.approx(2 * j1.regularization, rel=1e-13)
        assert j2.total - j1.total == pytest.approx(j1.regularization, rel=1e-10)

    def test_nan_input_aborts(self, rng):
        cfg, grid, basis, geom, ops, bdata, cwf, _ = make_instance()
        V = random_field(rng, 2, 7)
        V[0, 3, 3, 3] = np.nan
        with pytest.raises(FloatingPointError):
            eval_J(V, bdata, cwf, cfg, basis, geom, ops)


class TestGradient:
    def test_zero_at_the_global_minimum(self):
        cfg, grid, basis, geom, ops, _, cwf, _ = make_instance()
        zero_bd = BoundaryData(grid, 2, np.zeros((2, 7, 7), dtype=complex),
                               np.zeros((2, 7, 7), dtype=complex))
        V = np.zeros((2, 7, 7, 7), dtype=complex)
        g = grad_J(V, zero_bd, cwf, cfg, basis, geom, ops)
        assert np.max(np.abs(g)) == 0.0

    def test_matches_central_finite_differences(self, rng):
        cfg, grid, basis, geom, ops, bdata, cwf, _ = make_instance()
        V = random_field(rng, 2, 7)
        _, grad = eval_J_grad(V, bdata, cwf, cfg, basis, geom, ops)
        t = 1e-5  # balances O(t^2) truncation against O(eps*J/t) roundoff
        for _ in range(20):
            d = random_field(rng, 2, 7)
            d /= np.sqrt(np.sum(np.abs(d) ** 2))
            jp = eval_J(V + t * d, bdata, cwf, cfg, basis, geom, ops).total
            jm = eval_J(V - t * d, bdata, cwf, cfg, basis, geom, ops).total
            fd = (jp - jm) / (2 * t)
            an = directional_derivative(grad, d)
            assert abs(fd - an) / abs(fd) < 1e-5

    def test_regularization_gradient_isolated_oracle(self, rng):
        # with all penalty weights zero and no weight on the residual
        # (zero field keeps the residual term inactive anyway), the
        # gradient must be the hand-derived discrete H1 gradient:
        # 2*gamma*h^3*(V + D^T D V) with D the stacked first-difference map
        cfg, grid, basis, geom, ops, _, cwf, _ = make_instance(lam=3.0)
        cwf = CarlemanWeight(3.0, cfg.r, grid)
        cfg = cfg.with_overrides(K0=1e-300, K1=1e-300, K2=1e-300)
        zero_bd = BoundaryData(grid, 2, np.zeros((2, 7, 7), dtype=complex),
                               np.zeros((2, 7, 7), dtype=complex))
        z = grid.Z_h
        V = np.zeros((2, z, z, z), dtype=complex)
        V[:, 2:5, 2:5, 2:5] = (rng.standard_normal((2, 3, 3, 3))
                               + 1j * rng.standard_normal((2, 3, 3, 3))) * 1e-8
        g = grad_J(V, zero_bd, cwf, cfg, basis, geom, ops)

        D = ops.D1.toarray()
        want = np.zeros_like(V)
        for n in range(2):
            v = V[n]
            acc = v.copy()
            acc += np.einsum("ji,jqs->iqs", D.conj(), np.einsum("ip,pqs->iqs", D, v))
            acc += np.einsum("ji,pjs->pis", D.conj(), np.einsum("iq,pqs->pis", D, v))
            acc += np.einsum("ji,pqj->pqi", D.conj(), np.einsum("is,pqs->pqi", D, v))
            want[n] = 2 * cfg.gamma * grid.h**3 * acc
        # residual-term leakage is suppressed by both the 1e-8 field
        # scale and the depth weight (< e^-70 below the first layer)
        assert np.max(np.abs(g - want)) < 1e-10 * np.max(np.abs(want))


class TestConvexityProbe:
    def test_identical_pair_has_zero_gap(self):
        cfg, grid, basis, geom, ops, bdata, cwf, rng = make_instance()
        V = random_field(rng, 2, 7)
        j, g = eval_J_grad(V, bdata, cwf, cfg, basis, geom, ops)
        gap = j.total - j.total - directional_derivative(g, V - V)
        assert gap == 0.0

    def test_gaps_nonnegative_at_strong_weight(self):
        cfg, grid, basis, geom, ops, _, _, _ = make_instance(z=9, lam=2.0)
        zero_bd = BoundaryData(grid, 2, np.zeros((2, 9, 9), dtype=complex),
                               np.zeros((2, 9, 9), dtype=complex))
        cwf = CarlemanWeight(2.0, cfg.r, grid)
        stats = convexity_probe(zero_bd, cwf, cfg, basis, geom, ops,
                                n_pairs=25, seed=1)
        assert stats["frac_nonnegative"] == 1.0
        assert stats["min_gap"] >= 0.0
