import numpy as np
import pytest

from iddm import data


class TestGenerate:
    def test_point_mass(self):
        ds = data.generate(data.PointMass((1, 2), 3), 100)
        assert np.all(ds.samples == [1, 2])

    def test_iid_frequency(self):
        n = 100_000
        ds = data.generate(data.IID((0.5, 0.5), 1), n, seed=3)
        assert abs(np.mean(ds.samples == 0) - 0.5) < 3 * np.sqrt(0.25 / n)

    def test_markov_lag_one_agreement(self):
        spec = data.MarkovChain(((0.9, 0.1), (0.1, 0.9)), (0.5, 0.5), 20)
        ds = data.generate(spec, 5000, seed=1)
        same = ds.samples[:, 1:] == ds.samples[:, :-1]
        assert abs(same.mean() - 0.9) < 3 * np.sqrt(0.09 / same.size)

    def test_markov_table_matches_draws(self):
        spec = data.MarkovChain(((0.7, 0.2, 0.1), (0.1, 0.8, 0.1), (0.3, 0.3, 0.4)), (0.2, 0.5, 0.3), 3)
        table = spec.joint_table()
        assert abs(table.sum() - 1) < 1e-12
        # P(x = [1, 1, 2]) by hand
        assert table[1 * 9 + 1 * 3 + 2] == pytest.approx(0.5 * 0.8 * 0.1, abs=1e-15)
        emp = data.empirical_joint(data.generate(spec, 100_000, seed=2).samples, 3, 3)
        assert data.tv_distance(emp, table) < 0.02

    def test_seeded(self):
        spec = data.IID((0.2, 0.3, 0.5), 4)
        a, b = data.generate(spec, 50, seed=9), data.generate(spec, 50, seed=9)
        assert np.array_equal(a.samples, b.samples)
        assert not np.array_equal(a.samples, data.generate(spec, 50, seed=10).samples)

    def test_invalid_specs(self):
        with pytest.raises(data.DatasetError):
            data.generate(data.PointMass((3,), 2), 5)
        with pytest.raises(data.DatasetError):
            data.generate(data.IID((1.0,), 2), 0)
        with pytest.raises(data.DatasetError):
            data.generate(data.TinyGraph(1, 3), 5)

    def test_graph(self):
        spec = data.TinyGraph(4, 3, 0.5)
        ds = data.generate(spec, 10, seed=0)
        assert ds.L == 6 and ds.samples.max() < 3
        A = spec.adjacency(ds.samples[0])
        assert np.array_equal(A, A.T) and np.all(np.diag(A) == 0)
        np.testing.assert_allclose(spec.edge_probs(), [0.5, 0.25, 0.25])

    def test_dataset_validation(self):
        with pytest.raises(data.DatasetError):
            data.ToyDataset(K=2, L=2, samples=np.array([[0, 2]]))


class TestPrior:
    def test_all_zeros_keeps_support(self):
        ds = data.ToyDataset(2, 1, np.zeros((10_000, 1), int))
        p = data.estimate_prior(ds)
        assert p[1] > 0 and p[0] > 0.999

    def test_balanced(self):
        ds = data.ToyDataset(2, 2, np.array([[0, 1], [1, 0]] * 50))
        np.testing.assert_allclose(data.estimate_prior(ds), [0.5, 0.5])

    def test_hand_count(self):
        # tokens: 0 x4, 1 x5, 2 x1 over 5 samples of length 2; one pseudo-count each
        ds = data.ToyDataset(3, 2, np.array([[0, 1], [1, 1], [0, 0], [1, 2], [0, 1]]))
        np.testing.assert_allclose(data.estimate_prior(ds), np.array([5, 6, 2]) / 13, atol=1e-15)

    def test_make_prior(self):
        ds = data.ToyDataset(4, 1, np.zeros((3, 1), int))
        np.testing.assert_array_equal(data.make_prior("uniform", ds), [0.25] * 4)
        with pytest.raises(data.DatasetError):
            data.make_prior("bogus", ds)


class TestTV:
    def test_same(self):
        assert data.tv_distance([0.2, 0.8], [0.2, 0.8]) == 0.0

    def test_disjoint(self):
        assert data.tv_distance([1, 0], [0, 1]) == 1.0

    def test_value(self):
        assert data.tv_distance([0.75, 0.25], [0.5, 0.5]) == 0.25

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            data.tv_distance([1.0], [0.5, 0.5])


class TestEmpiricalJoint:
    def test_single_sample(self):
        t = data.empirical_joint(np.array([[1, 0]]), 2, 2)
        np.testing.assert_array_equal(t, [0, 0, 1, 0])

    def test_normalized(self, rng):
        t = data.empirical_joint(rng.integers(0, 3, (77, 3)), 3, 3)
        assert abs(t.sum() - 1) < 1e-12

    def test_uniform_concentration(self):
        ds = data.generate(data.IID((0.5, 0.5), 2), 100_000, seed=4)
        assert data.tv_distance(data.empirical_joint(ds, 2, 2), np.full(4, 0.25)) < 0.02

    def test_capacity(self):
        with pytest.raises(data.CapacityError):
            data.empirical_joint(np.zeros((1, 7), int), 4, 7)


class TestFixture:
    def test_round_trip(self, tmp_path, rng):
        s = rng.integers(0, 5, (30, 4))
        path = tmp_path / "f.txt"
        data.write_fixture(path, s, 5, 4)
        ds = data.read_fixture(path)
        assert (ds.K, ds.L) == (5, 4) and np.array_equal(ds.samples, s)
        assert path.read_text().splitlines()[0] == "5 4"

    def test_header_only(self, tmp_path):
        path = tmp_path / "e.txt"
        data.write_fixture(path, np.zeros((0, 3), int), 2, 3)
        assert path.read_text() == "2 3\n"
        assert len(data.read_fixture(path)) == 0

    @pytest.mark.parametrize("text", ["", "2\n", "2 2\n0 1 1\n", "2 2\n0 x\n"])
    def test_malformed(self, tmp_path, text):
        path = tmp_path / "bad.txt"
        path.write_text(text)
        with pytest.raises(data.DatasetError):
            data.read_fixture(path)
