import numpy as np
import pytest

from helmcvx.basis import build_basis, fourier_project
from helmcvx.forward import incident_field, simulate
from helmcvx.grid import Grid3, SourceArray
from helmcvx.pipeline import (BoundaryData, boundary_coeffs, complete_data,
                              incident_plane, log_ratio,
                              reconstruct_from_coeffs, truncation_error,
                              unwrap_phase_2d, unwrap_phase_3d)
from helmcvx.targets import reference_ball

K = 6.6


class TestUnwrap:
    def test_already_continuous_phase_untouched(self):
        phase = np.full((5, 5), 0.3)
        assert np.array_equal(unwrap_phase_2d(phase), phase)

    def test_winding_phase_recovered(self):
        # principal-branch phase of exp(i*3*y) wraps; unwrapping removes
        # every jump larger than pi along the sweep
        y = np.linspace(-3, 3, 31)
        true_phase = 3.0 * y
        wrapped = np.angle(np.exp(1j * true_phase))
        plane = np.tile(wrapped, (31, 1))
        out = unwrap_phase_2d(plane)
        assert np.max(np.abs(np.diff(out, axis=1))) < np.pi
        # unwrapped phase differs from the true one by a global 2*pi multiple
        diff = out - np.tile(true_phase, (31, 1))
        assert np.max(np.abs(diff - diff[0, 0])) < 1e-10

    def test_volume_unwrap_continuous_along_depth(self):
        grid = Grid3(3.0, 21)
        _, _, Z = grid.meshgrid()
        true_phase = 2.5 * (Z - 3.0)  # zero at the top plane, winds downward
        wrapped = np.angle(np.exp(1j * true_phase))
        out = unwrap_phase_3d(wrapped)
        assert np.max(np.abs(np.diff(out, axis=2))) < np.pi


class TestLogRatio:
    def test_identity_ratio_gives_zero(self):
        u = np.full((4, 4), 1.0 + 1.0j)
        assert np.max(np.abs(log_ratio(u, u))) == 0.0

    def test_constant_ratio(self):
        u0 = np.full((4, 4), 0.7 - 0.2j)
        u = u0 * np.exp(0.1 + 0.2j)
        v = log_ratio(u, u0)
        assert np.allclose(v, 0.1 + 0.2j, atol=1e-13)

    def test_exponential_identity_on_scattered_field(self):
        grid = Grid3(3.0, 15)
        sources = SourceArray(1.0, 7.5, 4)
        data, fld = simulate(reference_ball().field(grid), sources, K,
                             full_field=True)
        pos = sources.positions()[1]
        u0 = incident_field(grid, pos, K)
        v = log_ratio(fld.values[1], u0, unwrap_mode="3d")
        back = np.exp(v) * u0
        assert np.max(np.abs(back - fld.values[1])) / np.max(np.abs(fld.values[1])) < 1e-10

    def test_vanishing_field_is_a_hard_error(self):
        u0 = np.ones((3, 3), dtype=complex)
        u = u0.copy()
        u[1, 2] = 1e-15
        with pytest.raises(ValueError, match="non-vanishing"):
            log_ratio(u, u0)

    def test_unknown_mode_rejected(self):
        u = np.ones((3, 3), dtype=complex)
        with pytest.raises(ValueError):
            log_ratio(u, u, unwrap_mode="4d")


class TestCompleteData:
    def test_free_space_data_complete_to_free_field(self):
        grid = Grid3(3.0, 11)
        sources = SourceArray(1.0, 7.5, 4)
        c1 = reference_ball().field(grid)
        c1.values[:] = 1.0
        data = simulate(c1, sources, K)
        completed = complete_data(data)
        for i, pos in enumerate(sources.positions()):
            u0 = incident_field(grid, pos, K)
            assert np.max(np.abs(completed[i, 0] - u0[:, :, 0])) < 1e-7
            assert np.array_equal(completed[i, 1], u0[:, :, -1])

    def test_log_field_vanishes_off_the_measurement_face(self):
        grid = Grid3(3.0, 11)
        sources = SourceArray(1.0, 7.5, 4)
        data = simulate(reference_ball().field(grid), sources, K)
        completed = complete_data(data)
        u0 = incident_field(grid, sources.positions()[0], K)
        v_top = log_ratio(completed[0, 1], u0[:, :, -1])
        assert np.max(np.abs(v_top)) < 1e-14


class TestBoundaryCoeffs:
    def test_zero_for_background_medium(self):
        grid = Grid3(3.0, 11)
        sources = SourceArray(1.0, 7.5, 11)
        c1 = reference_ball().field(grid)
        c1.values[:] = 1.0
        data = simulate(c1, sources, K)
        basis = build_basis(4, 1.0)
        bd = boundary_coeffs(data, basis)
        assert np.max(np.abs(bd.psi0_gamma)) < 1e-7
        assert np.max(np.abs(bd.psi1)) < 1e-6

    def test_scattering_is_visible_in_the_data(self):
        grid = Grid3(3.0, 21)
        sources = SourceArray(1.0, 7.5, 11)
        data = simulate(reference_ball().field(grid), sources, K)
        bd = boundary_coeffs(data, build_basis(4, 1.0))
        assert np.max(np.abs(bd.psi0_gamma)) > 1e-3

    def test_neumann_trace_matches_discrete_log_derivative(self):
        # psi1 must be the one-sided difference of the projected log-field
        grid = Grid3(3.0, 21)
        sources = SourceArray(1.0, 7.5, 11)
        data, fld = simulate(reference_ball().field(grid), sources, K,
                             full_field=True)
        basis = build_basis(4, 1.0)
        bd = boundary_coeffs(data, basis)
        v = np.stack([
            log_ratio(fld.values[i], incident_field(grid, pos, K), unwrap_mode="3d")
            for i, pos in enumerate(sources.positions())
        ])
        vn = fourier_project(v, basis, sources.alphas)
        dz = (vn[:, :, :, 1] - vn[:, :, :, 0]) / grid.h
        assert np.max(np.abs(bd.psi1 - dz)) < 1e-6


class TestBoundaryDataContainer:
    def test_dirichlet_zero_off_gamma(self, rng):
        grid = Grid3(3.0, 9)
        psi = rng.standard_normal((3, 9, 9)) + 1j * rng.standard_normal((3, 9, 9))
        bd = BoundaryData(grid, 3, psi, psi.copy())
        faces = bd.psi0_faces()
        assert faces.shape == (3, 6, 9, 9)
        assert np.all(faces[:, 1:] == 0)

    def test_file_round_trip(self, tmp_path, rng):
        grid = Grid3(3.0, 9)
        psi0 = rng.standard_normal((3, 9, 9)) + 1j * rng.standard_normal((3, 9, 9))
        psi1 = rng.standard_normal((3, 9, 9)) + 1j * rng.standard_normal((3, 9, 9))
        bd = BoundaryData(grid, 3, psi0, psi1)
        path = tmp_path / "bd.cvxf"
        bd.save(path)
        back = BoundaryData.load(path)
        assert np.array_equal(back.psi0_gamma, psi0)
        assert np.array_equal(back.psi1, psi1)
        assert back.grid == grid

    def test_shape_validation(self):
        grid = Grid3(3.0, 9)
        with pytest.raises(ValueError):
            BoundaryData(grid, 3, np.zeros((3, 9, 8), dtype=complex),
                         np.zeros((3, 9, 9), dtype=complex))


class TestIncidentPlane:
    def test_matches_volume_evaluation(self):
        grid = Grid3(3.0, 11)
        sources = SourceArray(1.0, 7.5, 4)
        for s in (0, 1):
            planes = incident_plane(grid, sources, K, s=s)
            for i, pos in enumerate(sources.positions()):
                u0 = incident_field(grid, pos, K)
                assert np.max(np.abs(planes[i] - u0[:, :, s])) < 1e-14


class TestTruncation:
    def test_exactly_representable_field_has_tiny_error(self):
        # residual error comes only from the spline interpolation of the
        # source samples, so it must be small and shrink with more sources
        basis = build_basis(3, 1.0)
        rng = np.random.default_rng(0)
        coeffs = rng.standard_normal((3, 4, 4, 4))
        errs = {}
        for n_src in (21, 41):
            alphas = np.linspace(-1, 1, n_src)
            psi, _ = basis.eval_all(alphas)
            v = np.tensordot(psi.T, coeffs, axes=(1, 0))
            errs[n_src] = truncation_error(
                v, lambda n: build_basis(n, 1.0), alphas, [3])[3]
        assert errs[21] < 1e-2
        assert errs[41] < errs[21]

    def test_reconstruction_inverts_projection_for_basis_members(self):
        basis = build_basis(4, 1.0)
        alphas = np.linspace(-1, 1, 21)
        samples, _ = basis.eval(1, alphas)
        coeffs = fourier_project(samples, basis, alphas)
        recon = reconstruct_from_coeffs(coeffs, basis, alphas)
        assert np.max(np.abs(recon - samples)) < 5e-3
