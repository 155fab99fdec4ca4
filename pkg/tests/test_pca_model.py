import numpy as np
import pytest

from ridgerect import (
    DistortionField,
    cumulative_variance,
    fit_pca,
    load_model,
    sample_coefficients,
    save_model,
    synthesize_field,
)
from ridgerect.errors import (
    FileFormatError,
    InsufficientSamples,
    LengthMismatch,
    ShapeMismatch,
    ZeroVariance,
)
from ridgerect.pca_model import PcaDistortionModel, _flatten

from conftest import make_smooth_field


def random_fields(n, h=8, w=8, bs=16, seed=0, scale=4.0):
    rng = np.random.default_rng(seed)
    return [
        DistortionField(rng.normal(scale=scale, size=(h, w)), rng.normal(scale=scale, size=(h, w)), bs)
        for _ in range(n)
    ]


class TestFitPca:
    def test_identical_samples(self):
        f = make_smooth_field(8, 8, 16, 4.0, seed=1)
        model = fit_pca([f.copy() for _ in range(5)], num_components=2)
        assert np.abs(model.mean_field.dx - f.dx).max() <= 1e-12
        assert np.abs(model.eigenvalues).max() <= 1e-12

    def test_rank_one_data(self):
        mean = make_smooth_field(8, 8, 16, 4.0, seed=2)
        pattern = make_smooth_field(8, 8, 16, 2.0, seed=3)
        plus = DistortionField(mean.dx + pattern.dx, mean.dy + pattern.dy, 16)
        minus = DistortionField(mean.dx - pattern.dx, mean.dy - pattern.dy, 16)
        model = fit_pca([plus, minus, plus.copy(), minus.copy()], num_components=2)
        assert model.eigenvalues[0] > 1e-6
        assert model.eigenvalues[1] <= 1e-9
        # Component is the normalized pattern up to sign.
        pat = _flatten(pattern)
        pat /= np.linalg.norm(pat)
        comp = _flatten(model.components[0])
        assert min(np.abs(comp - pat).max(), np.abs(comp + pat).max()) <= 1e-9

    def test_full_rank_reconstruction(self):
        samples = random_fields(50, seed=4)
        model = fit_pca(samples, num_components=49)
        for s in samples[::7]:
            coeffs = model.project(s)
            recon = synthesize_field(model, coeffs)
            assert np.abs(recon.dx - s.dx).max() <= 1e-6
            assert np.abs(recon.dy - s.dy).max() <= 1e-6

    def test_orthonormal_components(self):
        model = fit_pca(random_fields(30, seed=5), num_components=10)
        mat = model.component_matrix()
        gram = mat @ mat.T
        assert np.abs(np.diag(gram) - 1.0).max() <= 1e-9
        assert np.abs(gram - np.diag(np.diag(gram))).max() <= 1e-6

    def test_eigenvalues_descending(self):
        model = fit_pca(random_fields(30, seed=6), num_components=10)
        assert (np.diff(model.eigenvalues) <= 1e-12).all()

    def test_insufficient_samples(self):
        with pytest.raises(InsufficientSamples):
            fit_pca(random_fields(8, seed=7), num_components=8)

    def test_shape_mismatch(self):
        a = random_fields(3, h=8, w=8, seed=8)
        b = random_fields(1, h=8, w=9, seed=9)
        with pytest.raises(ShapeMismatch):
            fit_pca(a + b, num_components=2)


class TestSynthesize:
    def test_zero_coefficients_give_mean(self):
        model = fit_pca(random_fields(20, seed=10), num_components=8)
        f = synthesize_field(model, np.zeros(8))
        assert np.array_equal(f.dx, model.mean_field.dx)
        assert np.array_equal(f.dy, model.mean_field.dy)

    def test_single_component_definition(self):
        model = fit_pca(random_fields(20, seed=11), num_components=8)
        e1 = np.zeros(8)
        e1[0] = 1.0
        f = synthesize_field(model, e1)
        expected = np.sqrt(model.eigenvalues[0]) * model.components[0].dx
        assert np.abs((f.dx - model.mean_field.dx) - expected).max() <= 1e-9

    def test_linearity_in_coefficients(self):
        model = fit_pca(random_fields(20, seed=12), num_components=8)
        rng = np.random.default_rng(13)
        c1 = rng.uniform(-2, 2, 8)
        c2 = rng.uniform(-2, 2, 8)
        f1 = synthesize_field(model, c1)
        f2 = synthesize_field(model, c2)
        f12 = synthesize_field(model, c1 + c2)
        m = model.mean_field
        assert np.abs((f12.dx - m.dx) - ((f1.dx - m.dx) + (f2.dx - m.dx))).max() <= 1e-9
        assert np.abs((f12.dy - m.dy) - ((f1.dy - m.dy) + (f2.dy - m.dy))).max() <= 1e-9

    def test_paper_configuration_shape(self):
        model = fit_pca(random_fields(20, seed=14), num_components=8)
        coeffs = sample_coefficients(0, t=8, c_max=2.0)
        assert coeffs.shape == (8,)
        f = synthesize_field(model, coeffs)
        assert f.shape == model.grid_shape

    def test_length_mismatch(self):
        model = fit_pca(random_fields(20, seed=15), num_components=8)
        with pytest.raises(LengthMismatch):
            synthesize_field(model, np.zeros(5))


class TestSampleCoefficients:
    def test_deterministic_per_seed(self):
        a = sample_coefficients(42, t=8, c_max=2.0)
        b = sample_coefficients(42, t=8, c_max=2.0)
        assert np.array_equal(a, b)
        c = sample_coefficients(43, t=8, c_max=2.0)
        assert not np.array_equal(a, c)

    def test_distribution(self):
        draws = np.concatenate([sample_coefficients(s, t=10, c_max=2.0) for s in range(10_000)])
        assert draws.size == 100_000
        assert draws.min() >= -2.0 and draws.max() <= 2.0
        # Uniform(-2, 2): sigma of the mean = (4/sqrt(12)) / sqrt(n).
        sigma_mean = (4.0 / np.sqrt(12.0)) / np.sqrt(draws.size)
        assert abs(draws.mean()) <= 3 * sigma_mean

    def test_validation(self):
        with pytest.raises(LengthMismatch):
            sample_coefficients(0, t=0)
        with pytest.raises(ShapeMismatch):
            sample_coefficients(0, t=4, c_max=0.0)


class TestCumulativeVariance:
    def test_rank_one(self):
        mean = make_smooth_field(8, 8, 16, 4.0, seed=16)
        pattern = make_smooth_field(8, 8, 16, 2.0, seed=17)
        plus = DistortionField(mean.dx + pattern.dx, mean.dy + pattern.dy, 16)
        minus = DistortionField(mean.dx - pattern.dx, mean.dy - pattern.dy, 16)
        model = fit_pca([plus, minus, plus.copy(), minus.copy()], num_components=3)
        cv = cumulative_variance(model)
        assert np.abs(cv - 1.0).max() <= 1e-9

    def test_equal_eigenvalues(self):
        like = DistortionField.zeros(4, 4, 16)
        comps = []
        for i in range(4):
            vec = np.zeros(2 * 16)
            vec[i] = 1.0
            comps.append(DistortionField(vec[:16].reshape(4, 4), vec[16:].reshape(4, 4), 16))
        model = PcaDistortionModel(like, np.ones(4), comps)
        cv = cumulative_variance(model)
        assert np.allclose(cv, [0.25, 0.5, 0.75, 1.0], atol=1e-12)

    def test_known_generator_recovered(self):
        # Fields synthesized from a known 8-component generator plus small
        # noise: the first 8 fitted components must capture >= 95% variance.
        rng = np.random.default_rng(18)
        d = 2 * 16 * 16
        basis, _ = np.linalg.qr(rng.normal(size=(d, 8)))
        mean = rng.normal(scale=2.0, size=d)
        like = DistortionField.zeros(16, 16, 16)
        samples = []
        for _ in range(80):
            coeff = rng.uniform(-2, 2, size=8) * np.linspace(4.0, 1.0, 8)
            vec = mean + basis @ coeff + rng.normal(scale=0.05, size=d)
            samples.append(
                DistortionField(vec[: d // 2].reshape(16, 16), vec[d // 2 :].reshape(16, 16), 16)
            )
        model = fit_pca(samples, num_components=20)
        cv = cumulative_variance(model)
        assert cv[7] >= 0.95
        assert (np.diff(cv) >= -1e-12).all()

    def test_zero_variance(self):
        like = DistortionField.zeros(4, 4, 16)
        comp = DistortionField(np.full((4, 4), 1 / np.sqrt(32)), np.full((4, 4), 1 / np.sqrt(32)), 16)
        model = PcaDistortionModel(like, np.zeros(1), [comp])
        with pytest.raises(ZeroVariance):
            cumulative_variance(model)


class TestModelFile:
    def test_round_trip(self, tmp_path):
        model = fit_pca(random_fields(20, seed=20), num_components=6)
        path = tmp_path / "model.dpca"
        save_model(path, model)
        loaded = load_model(path)
        assert loaded.num_components == 6
        assert loaded.mean_field.block_size_px == 16
        save_model(tmp_path / "again.dpca", loaded)
        assert (tmp_path / "again.dpca").read_bytes() == path.read_bytes()
        # float32 storage round-trips within float32 precision
        assert np.abs(loaded.mean_field.dx - model.mean_field.dx).max() <= 1e-5

    def test_header(self, tmp_path):
        model = fit_pca(random_fields(10, h=3, w=5, seed=21), num_components=2)
        path = tmp_path / "model.dpca"
        save_model(path, model)
        blob = path.read_bytes()
        assert blob[:5] == b"DPCA1"
        assert int.from_bytes(blob[5:9], "little") == 5
        assert int.from_bytes(blob[9:13], "little") == 3
        assert int.from_bytes(blob[13:17], "little") == 16
        assert int.from_bytes(blob[17:21], "little") == 2
        assert len(blob) == 21 + 4 * (2 * 15 + 2 + 2 * 2 * 15)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.dpca"
        path.write_bytes(b"WRONG" + b"\x00" * 64)
        with pytest.raises(FileFormatError):
            load_model(path)
