import numpy as np
import pytest
from scipy.stats import spearmanr

from hcrnn.basis import make_basis
from hcrnn.density import JointDensityModel, estimate, uniform_model
from hcrnn.ibtrain import IbConfig, ib_train
from hcrnn.network import (
    HcrNetwork,
    Layer,
    Neuron,
    UndefinedHiddenValues,
    fit_direct,
    propagate_density,
    propagate_values,
)
from hcrnn.normalize import fit_normalizer, rank_normalize
from hcrnn.propagate import MomentVector, marginal_moments, predict_mean


def with_models(net, models):
    """Install ``models`` (one list per layer) without fitting normalizers."""
    for layer, ms in zip(net.layers, models):
        for nrn, m in zip(layer.neurons, ms):
            nrn.model = m
    return net


def symmetric_model(a11):
    basis = make_basis(2, 1)
    coeffs = np.zeros(len(basis))
    coeffs[0] = 1.0
    coeffs[basis.position((1, 1))] = a11
    return JointDensityModel(basis, coeffs)


@pytest.fixture(scope="module")
def copy_net():
    x = np.random.default_rng(7).normal(size=(1000, 2))
    u = rank_normalize(x)
    res = ib_train(u, u, 2, IbConfig(beta=10, epochs=50, init="feature-pca", seed=0))
    net = fit_direct(HcrNetwork.dense([2, 2, 2], degree=4, scheme="full"), x, x, hidden=[res.layer.values])
    return net, x


class TestWiring:
    def test_dense_shape(self):
        net = HcrNetwork.dense([3, 2, 1])
        assert net.depth == 2 and not net.fitted
        assert [len(layer.neurons) for layer in net.layers] == [2, 1]
        assert net.layers[0].neurons[1].inputs == (0, 1, 2)

    def test_one_neuron_per_output(self):
        with pytest.raises(ValueError):
            HcrNetwork([2, 2], [Layer([Neuron((0, 1), 0)])])

    def test_inputs_checked(self):
        with pytest.raises(ValueError):
            HcrNetwork([2, 1], [Layer([Neuron((0, 2), 0)])])
        with pytest.raises(ValueError):
            HcrNetwork([2, 1], [Layer([Neuron((1, 1), 0)])])

    def test_model_dimension(self):
        with pytest.raises(ValueError):
            HcrNetwork([2, 1], [Layer([Neuron((0, 1), 0, uniform_model(make_basis(2, 2)))])])

    def test_layer_count(self):
        with pytest.raises(ValueError):
            HcrNetwork([2, 1, 1], [Layer([Neuron((0, 1), 0)])])

    def test_carry_degree(self):
        assert Layer([], degree=4).carry_degree == 4
        assert Layer([], degree=4, moments=2).carry_degree == 2
        assert Layer([], degree=3, moments=6).carry_degree == 3


class TestFitDirect:
    def test_single_neuron_matches_estimate(self):
        data = np.random.default_rng(0).normal(size=(300, 3))
        net = fit_direct(HcrNetwork.dense([2, 1], degree=3, scheme="full"), data[:, :2], data[:, 2])
        u = fit_normalizer(data, "empirical").transform(data)
        want = estimate(make_basis(3, 3, "full"), u)
        np.testing.assert_array_equal(net.layers[0].neurons[0].model.coeffs, want.coeffs)

    def test_idempotent(self):
        data = np.random.default_rng(1).normal(size=(200, 3))
        net = HcrNetwork.dense([2, 1])
        a = fit_direct(net, data[:, :2], data[:, 2:])
        b = fit_direct(a, data[:, :2], data[:, 2:])
        assert a.checksum() == b.checksum()
        assert not net.fitted

    def test_missing_hidden(self):
        x = np.random.default_rng(2).uniform(size=(50, 2))
        with pytest.raises(UndefinedHiddenValues, match="ib_train"):
            fit_direct(HcrNetwork.dense([2, 2, 2]), x, x)

    def test_hidden_shape(self):
        x = np.random.default_rng(3).uniform(size=(50, 2))
        with pytest.raises(ValueError):
            fit_direct(HcrNetwork.dense([2, 3, 2]), x, x, hidden=[x])

    def test_copy_task(self, copy_net):
        net, _ = copy_net
        test = np.random.default_rng(8).normal(size=(1000, 2))
        pred = propagate_values(net, test)
        for k in range(2):
            assert spearmanr(pred[:, k], test[:, k]).statistic > 0.8


class TestPropagateValues:
    def test_independence_network(self):
        net = HcrNetwork.dense([2, 3, 1], degree=2)
        with_models(net, [[uniform_model(make_basis(3, 2, "pairwise"))] * 3,
                          [uniform_model(make_basis(4, 2, "pairwise"))]])
        u = np.random.default_rng(4).uniform(size=(10, 2))
        np.testing.assert_allclose(propagate_values(net, u, normalized=True), 0.5)
        np.testing.assert_allclose(propagate_values(net, np.full((3, 1), 0.2), "backward", normalized=True), 0.5)

    def test_single_neuron_reproduces_propagate(self):
        data = np.random.default_rng(5).normal(size=(400, 3))
        net = fit_direct(HcrNetwork.dense([2, 1], degree=4), data[:, :2], data[:, 2])
        model = net.layers[0].neurons[0].model
        u = np.random.default_rng(6).uniform(size=(20, 2))
        got = propagate_values(net, u, normalized=True)[:, 0]
        ev = np.column_stack([u, np.full(20, np.nan)])
        np.testing.assert_array_equal(got, predict_mean(model, ev, 2))

    def test_symmetric_case_reverses(self):
        net = with_models(HcrNetwork.dense([1, 1], degree=1), [[symmetric_model(0.4)]])
        before = net.checksum()
        for v in (0.1, 0.5, 0.85):
            fwd = propagate_values(net, [v], normalized=True)
            back = propagate_values(net, [v], "backward", normalized=True)
            assert fwd[0] == pytest.approx(back[0], abs=1e-15)
            assert fwd[0] == pytest.approx(0.5 + 0.4 * np.sqrt(3) * (2 * v - 1) / np.sqrt(12), abs=1e-15)
        assert net.checksum() == before

    def test_not_an_involution_in_general(self):
        basis = make_basis(2, 2)
        coeffs = np.zeros(len(basis))
        coeffs[0] = 1.0
        coeffs[basis.position((1, 1))] = 0.4
        coeffs[basis.position((2, 1))] = 0.2
        net = with_models(HcrNetwork.dense([1, 1], degree=2, scheme="full"), [[JointDensityModel(basis, coeffs)]])
        y = propagate_values(net, [0.2], normalized=True)
        x_back = propagate_values(net, y, "backward", normalized=True)
        assert abs(x_back[0] - 0.2) > 1e-3

    def test_raw_units_roundtrip(self, copy_net):
        net, x = copy_net
        before = net.checksum()
        fwd = propagate_values(net, x[:5])
        back = propagate_values(net, x[:5], "backward")
        assert fwd.shape == back.shape == (5, 2)
        assert net.checksum() == before
        single = propagate_values(net, x[0])
        np.testing.assert_array_equal(single, fwd[0])

    def test_inter_level_values_interior(self, copy_net):
        net, x = copy_net
        for nz in net.forward_renorm[1:-1] + net.backward_renorm[1:-1]:
            u = nz.transform(np.random.default_rng(9).uniform(size=(100, 2)))
            assert 0 < u.min() and u.max() < 1

    def test_unfitted_and_shape(self, copy_net):
        with pytest.raises(ValueError):
            propagate_values(HcrNetwork.dense([2, 1]), [[0.2, 0.3]])
        net, _ = copy_net
        with pytest.raises(ValueError):
            propagate_values(net, [[0.2, 0.3, 0.4]])
        with pytest.raises(ValueError):
            propagate_values(net, [[0.2, 0.3]], direction="sideways")


class TestPropagateDensity:
    def test_dirac_matches_values(self):
        data = np.random.default_rng(10).normal(size=(400, 3))
        net = fit_direct(HcrNetwork.dense([2, 1], degree=4), data[:, :2], data[:, 2])
        u = (0.3, 0.75)
        dens = propagate_density(net, [MomentVector.dirac(v, 4) for v in u])
        assert dens[0].mean() == pytest.approx(propagate_values(net, [u], normalized=True)[0, 0], abs=1e-12)

    def test_uniform_gives_marginals(self, copy_net):
        net, _ = copy_net
        first = with_models(HcrNetwork.dense([2, 2], degree=4, scheme="full"),
                            [[nrn.model for nrn in net.layers[0].neurons]])
        for k, mv in enumerate(propagate_density(first, [MomentVector.uniform(4)] * 2)):
            np.testing.assert_allclose(mv.coeffs, marginal_moments(first.layers[0].neurons[k].model, 2).coeffs,
                                       atol=1e-15)
        # deeper levels receive the (nearly uniform) hidden marginals as evidence
        for k, mv in enumerate(propagate_density(net, [MomentVector.uniform(4)] * 2)):
            want = marginal_moments(net.layers[1].neurons[k].model, 2)
            np.testing.assert_allclose(mv.coeffs, want.coeffs, atol=1e-4)

    def test_backward_uniform(self, copy_net):
        net, _ = copy_net
        out = propagate_density(net, [MomentVector.uniform(4)] * 2, "backward")
        assert len(out) == 2
        for k, mv in enumerate(out):
            want = np.mean([marginal_moments(nrn.model, k).padded(4) for nrn in net.layers[0].neurons], axis=0)
            np.testing.assert_allclose(mv.coeffs, want, atol=1e-4)

    def test_carry_degree(self):
        net = with_models(HcrNetwork.dense([1, 1], degree=4, scheme="full", moments=2),
                          [[uniform_model(make_basis(2, 4))]])
        assert propagate_density(net, [MomentVector.uniform(4)])[0].degree == 2

    def test_checks_counts(self, copy_net):
        net, _ = copy_net
        with pytest.raises(ValueError):
            propagate_density(net, [MomentVector.uniform(4)])

    def test_variance_shrinks_with_noise(self):
        rng = np.random.default_rng(11)
        x = rng.uniform(size=(3000, 1))
        variances = []
        for noise in (1.0, 0.4, 0.1):
            y = x + noise * rng.normal(size=x.shape)
            net = fit_direct(HcrNetwork.dense([1, 1, 1], degree=4, scheme="full"), x, y, hidden=[x])
            v = [propagate_density(net, [MomentVector.dirac(u, 4)])[0].variance() for u in (0.25, 0.5, 0.75)]
            assert min(v) > 0
            variances.append(np.mean(v))
        assert variances[0] > variances[1] > variances[2]


class TestSerialization:
    def test_roundtrip(self, copy_net):
        net, x = copy_net
        back = HcrNetwork.loads(net.dumps())
        assert back.checksum() == net.checksum()
        np.testing.assert_array_equal(propagate_values(back, x[:20]), propagate_values(net, x[:20]))
        np.testing.assert_array_equal(propagate_values(back, x[:20], "backward"),
                                      propagate_values(net, x[:20], "backward"))

    def test_layer_settings_kept(self):
        net = HcrNetwork.dense([2, 1], degree=3, scheme="total", moments=2, renormalize=False)
        doc = net.to_dict()
        back = HcrNetwork.from_dict(doc)
        layer = back.layers[0]
        assert (layer.degree, layer.scheme, layer.moments, layer.renormalize) == (3, "total", 2, False)
        assert not back.fitted
