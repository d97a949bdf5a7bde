import numpy as np
import pytest

import reference as ref
from vprtempo import snn
from vprtempo.errors import InvalidInputError, InvalidStateError
from vprtempo.snn import AnnealClock, Hyperparams, LayerPair, init_module

H64 = Hyperparams(dtype="float64")


def to_lists(net):
    return {
        "if_exc": net.layer_if.w_exc.tolist(), "if_inh": net.layer_if.w_inh.tolist(),
        "if_mexc": net.layer_if.mask_exc.tolist(), "if_minh": net.layer_if.mask_inh.tolist(),
        "f_theta": net.feature_state.theta.tolist(), "f_rate": net.feature_state.target_rate.tolist(),
        "fo_exc": net.layer_fo.w_exc.tolist(), "fo_inh": net.layer_fo.w_inh.tolist(),
        "o_theta": net.output_state.theta.tolist(), "o_rate": net.output_state.target_rate.tolist(),
    }


def hyper_dict(h):
    return {k: getattr(h, k) for k in
            ("eta_stdp_init", "eta_itp_init", "constant_input", "epsilon", "homeostasis", "x_force")}


def one_layer_net(w_exc, w_inh, theta=0.0, rate=0.5, total=10, hyper=H64):
    """Network whose I->F pair is built from explicit 1xN weights."""
    w_exc = np.atleast_2d(np.asarray(w_exc, float))
    w_inh = np.atleast_2d(np.asarray(w_inh, float))
    net = init_module(w_exc.shape[1], w_exc.shape[0], 1, hyper, seed=0, total_iterations=total)
    net.layer_if = LayerPair(w_exc, w_inh, w_exc != 0, w_inh != 0)
    net.feature_state.theta[:] = theta
    net.feature_state.target_rate[:] = rate
    return net


class TestInit:
    def test_seed_determinism(self):
        a = init_module(10, 8, 4, H64, seed=3)
        b = init_module(10, 8, 4, H64, seed=3)
        for x, y in [(a.layer_if.w_exc, b.layer_if.w_exc), (a.layer_fo.w_inh, b.layer_fo.w_inh),
                     (a.feature_state.theta, b.feature_state.theta)]:
            assert x.tobytes() == y.tobytes()

    def test_full_probability_makes_every_entry_live(self):
        net = init_module(5, 4, 2, Hyperparams(p_exc=1.0, p_inh=1.0), seed=0)
        assert net.layer_if.mask_exc.all() and net.layer_if.mask_inh.all()
        assert (net.layer_if.w_exc > 0).all() and (net.layer_if.w_inh > 0).all()

    def test_zero_exc_probability_stays_zero_after_training(self):
        net = init_module(5, 4, 2, Hyperparams(p_exc=0.0, dtype="float64"), seed=0, total_iterations=5)
        for _ in range(5):
            snn.train_presentation(net, np.linspace(0, 1, 5), 1)
        assert not net.layer_if.w_exc.any()

    def test_ranges(self):
        h = Hyperparams(weight_init="uniform")
        net = init_module(50, 40, 30, h, seed=1)
        live = net.layer_if.w_exc[net.layer_if.mask_exc]
        assert live.min() > 0 and live.max() <= 1
        assert (net.feature_state.theta >= 0).all() and (net.feature_state.theta <= h.theta_max).all()
        rate = net.output_state.target_rate
        assert (rate >= h.f_min).all() and (rate <= h.f_max).all()
        assert net.layer_fo.mask_exc.all()

    def test_l1_rows_sum_to_one(self):
        net = init_module(20, 10, 5, H64, seed=2)
        np.testing.assert_allclose(net.layer_fo.w_exc.sum(axis=1), 1.0)

    def test_zero_size_rejected(self):
        with pytest.raises(InvalidInputError):
            init_module(0, 4, 2, H64, seed=0)

    @pytest.mark.parametrize("kwargs", [{"f_min": 0.5, "f_max": 0.4}, {"p_exc": 1.5}, {"theta_max": 0},
                                        {"epsilon": 0}, {"homeostasis": "other"}, {"f_min": 0, "f_max": 0}])
    def test_hyperparam_validation(self, kwargs):
        with pytest.raises(InvalidInputError):
            Hyperparams(**kwargs)


class TestForward:
    def test_zero_weights_constant_input(self):
        net = one_layer_net([[0.0, 0.0]], [[0.0, 0.0]], theta=0.0)
        np.testing.assert_allclose(snn.forward(net, [0.3, 0.7], "IF"), [0.1])

    def test_zero_weights_clamped(self):
        net = one_layer_net([[0.0]], [[0.0]], theta=0.5)
        assert snn.forward(net, [1.0], "IF")[0] == 0.0

    def test_single_connection(self):
        net = one_layer_net([[0.7]], [[0.1]], theta=0.2)
        assert snn.forward(net, [1.0], "IF")[0] == pytest.approx(0.5)

    def test_length_mismatch(self):
        net = one_layer_net([[0.7]], [[0.1]])
        with pytest.raises(InvalidInputError):
            snn.forward(net, [1.0, 0.0], "IF")


class TestRules:
    def test_stdp_potentiation(self):
        net = one_layer_net([[0.4]], [[0.3]], rate=0.5, total=1)
        net.clock.total = 10**12  # eta effectively at its initial value
        snn.stdp_update(net, [1.0], [0.3], "IF")
        assert net.layer_if.w_exc[0, 0] == pytest.approx(0.402, abs=1e-9)
        assert net.layer_if.w_inh[0, 0] == pytest.approx(0.298, abs=1e-9)

    def test_stdp_depression(self):
        net = one_layer_net([[0.4]], [[0.3]], rate=0.5, total=10**12)
        snn.stdp_update(net, [1.0], [0.9], "IF")
        assert net.layer_if.w_exc[0, 0] == pytest.approx(0.396, abs=1e-9)
        assert net.layer_if.w_inh[0, 0] == pytest.approx(0.304, abs=1e-9)

    @pytest.mark.parametrize("pre,post", [(0.0, 0.3), (1.0, 0.0)])
    def test_stdp_gated(self, pre, post):
        net = one_layer_net([[0.4]], [[0.3]], total=10)
        snn.stdp_update(net, [pre], [post], "IF")
        assert net.layer_if.w_exc[0, 0] == 0.4 and net.layer_if.w_inh[0, 0] == 0.3

    def test_sign_crossing_resets_to_epsilon(self):
        net = one_layer_net([[1e-4]], [[1e-4]], rate=0.2, total=10**12)
        snn.stdp_update(net, [1.0], [1.0], "IF")  # delta = -0.0125 on exc
        assert net.layer_if.w_exc[0, 0] == H64.epsilon
        net = one_layer_net([[1e-4]], [[1e-4]], rate=0.2, total=10**12)
        snn.stdp_update(net, [1.0], [0.01], "IF")  # positive delta drives inh below zero
        assert net.layer_if.w_inh[0, 0] == H64.epsilon

    def test_masked_entry_untouched(self):
        net = one_layer_net([[0.0, 0.5]], [[0.2, 0.0]], total=10)
        snn.stdp_update(net, [1.0, 1.0], [0.1], "IF")
        assert net.layer_if.w_exc[0, 0] == 0.0 and net.layer_if.w_inh[0, 1] == 0.0

    def test_homeostasis_text_positive(self):
        net = one_layer_net([[0.5]], [[0.2]], total=10**12)
        snn.homeostasis_update(net, "IF", net_input=[0.3])
        assert net.layer_if.w_inh[0, 0] == pytest.approx(0.201, abs=1e-9)

    def test_homeostasis_text_negative_and_zero(self):
        net = one_layer_net([[0.5, 0.5]], [[0.2, 0.2]], total=10**12)
        snn.homeostasis_update(net, "IF", net_input=[-0.3])
        assert net.layer_if.w_inh[0, 0] == pytest.approx(0.199, abs=1e-9)
        before = net.layer_if.w_inh.copy()
        snn.homeostasis_update(net, "IF", net_input=[0.0])
        assert np.array_equal(net.layer_if.w_inh, before)

    def test_homeostasis_literal(self):
        net = one_layer_net([[0.5]], [[0.2]], total=10**12, hyper=Hyperparams(dtype="float64", homeostasis="literal"))
        snn.homeostasis_update(net, "IF", net_input=[0.3])
        assert net.layer_if.w_inh[0, 0] == pytest.approx(0.199, abs=1e-9)
        snn.homeostasis_update(net, "IF", net_input=[-0.3])
        assert net.layer_if.w_inh[0, 0] == pytest.approx(0.199, abs=1e-9)

    def test_homeostasis_uses_recorded_input(self):
        net = one_layer_net([[0.5]], [[0.2]], theta=0.0, total=10**12)
        snn.forward(net, [1.0], "IF")  # net input 0.4 > 0
        snn.homeostasis_update(net, "IF")
        assert net.layer_if.w_inh[0, 0] == pytest.approx(0.201, abs=1e-9)

    def test_itp_increment(self):
        net = one_layer_net([[0.5]], [[0.2]], theta=0.1, rate=0.2, total=10**12)
        snn.itp_update(net, [0.4], "IF")
        assert net.feature_state.theta[0] == pytest.approx(0.22, abs=1e-9)

    def test_itp_resets_negative(self):
        net = one_layer_net([[0.5]], [[0.2]], theta=0.05, rate=0.9, total=10**12)
        snn.itp_update(net, [0.0], "IF")
        assert net.feature_state.theta[0] == 0.0

    def test_itp_balanced(self):
        net = one_layer_net([[0.5]], [[0.2]], theta=0.1, rate=1.0, total=10**12)
        snn.itp_update(net, [0.5], "IF")
        assert net.feature_state.theta[0] == pytest.approx(0.1)

    def _fo_net(self, out):
        net = init_module(1, 1, 2, H64, seed=0, total_iterations=10**12)
        net.layer_fo = LayerPair(np.full((2, 1), 0.5), np.full((2, 1), 0.3), np.ones((2, 1), bool),
                                 np.ones((2, 1), bool), dense=True)
        net.output_state.target_rate[:] = 0.5
        net.output_state.last_amplitude = np.asarray(out, float)
        return net

    def test_spike_force_target_and_non_target(self):
        net = self._fo_net([0.2, 0.4])
        snn.spike_force_update(net, [1.0], 0)
        np.testing.assert_allclose(net.layer_fo.w_exc[:, 0], [0.503, 0.496], atol=1e-9)
        np.testing.assert_allclose(net.layer_fo.w_inh[:, 0], [0.297, 0.304], atol=1e-9)

    def test_spike_force_matched_amplitude(self):
        net = self._fo_net([0.5, 0.0])
        snn.spike_force_update(net, [1.0], 0)
        np.testing.assert_array_equal(net.layer_fo.w_exc[:, 0], [0.5, 0.5])

    def test_spike_force_bad_index(self):
        with pytest.raises(InvalidInputError):
            snn.spike_force_update(self._fo_net([0, 0]), [1.0], 2)


class TestClock:
    def test_anneal_values(self):
        clock = AnnealClock(0, 8)
        assert clock.rate(0.005) == 0.005
        clock.t = 4
        assert clock.rate(0.005) == 0.005 / 4
        clock.t = 8
        assert clock.rate(0.005) == 0.0

    def test_unset_clock(self):
        with pytest.raises(InvalidStateError):
            AnnealClock(0, 0).rate(1.0)

    def test_exhausted_clock_rejects_training(self, small_net):
        small_net.clock.t = small_net.clock.total
        with pytest.raises(InvalidStateError):
            snn.train_presentation(small_net, np.ones(6), 0)
        with pytest.raises(InvalidStateError):
            snn.stdp_update(small_net, np.ones(6), np.ones(4), "IF")

    def test_last_presentation_has_zero_homeostasis_and_stdp_on_next(self, small_net):
        # at t = T-1 eta is (1/T)^2 of its initial value, and after it training stops
        small_net.clock.t = small_net.clock.total - 1
        snn.train_presentation(small_net, np.ones(6), 0)
        assert small_net.clock.exhausted


class TestPresentation:
    @pytest.mark.parametrize("mode", ["text", "literal"])
    def test_oracle_3x2x2(self, mode):
        hyper = Hyperparams(dtype="float64", p_exc=0.7, p_inh=0.7, homeostasis=mode)
        net = init_module(3, 2, 2, hyper, seed=11, total_iterations=6)
        oracle = to_lists(net)
        rng = np.random.default_rng(5)
        for t in range(6):
            spikes = rng.random(3)
            place = t % 2
            snn.train_presentation(net, spikes, place)
            ref.train_presentation(oracle, spikes.tolist(), place, hyper_dict(hyper), t, 6)
            for key, arr in [("if_exc", net.layer_if.w_exc), ("if_inh", net.layer_if.w_inh),
                             ("fo_exc", net.layer_fo.w_exc), ("fo_inh", net.layer_fo.w_inh),
                             ("f_theta", net.feature_state.theta), ("o_theta", net.output_state.theta)]:
                np.testing.assert_allclose(arr, oracle[key], rtol=0, atol=1e-9, err_msg=key)

    def test_single_place_converges_to_force(self):
        hyper = Hyperparams(dtype="float64")
        rng = np.random.default_rng(0)
        x = rng.random(784)
        net = init_module(784, 1568, 1, hyper, seed=0, total_iterations=64)
        for _ in range(64):
            snn.train_presentation(net, x, 0)
        assert abs(snn.infer(net, x)[0] - hyper.x_force) <= 0.1

    def test_identical_seeds_identical_streams(self):
        nets = [init_module(8, 6, 3, H64, seed=4, total_iterations=9) for _ in range(2)]
        data = np.random.default_rng(1).random((9, 8))
        for net in nets:
            for t, x in enumerate(data):
                snn.train_presentation(net, x, t % 3)
        assert nets[0].layer_fo.w_exc.tobytes() == nets[1].layer_fo.w_exc.tobytes()

    def test_place_out_of_range(self, small_net):
        with pytest.raises(InvalidInputError):
            snn.train_presentation(small_net, np.ones(6), 3)


class TestInfer:
    def test_zero_input_untrained(self):
        net = init_module(5, 4, 3, H64, seed=0)
        net.layer_fo.w_exc[:] = 0.0
        net.layer_fo.w_inh[:] = 0.0
        net.layer_fo.refresh()
        out = snn.infer(net, np.zeros(5))
        np.testing.assert_allclose(out, np.maximum(0, 0.1 - net.output_state.theta))

    def test_pure(self, small_net):
        x = np.linspace(0, 1, 6)
        before = small_net.layer_fo.w_exc.copy()
        a, b = snn.infer(small_net, x), snn.infer(small_net, x)
        assert a.tobytes() == b.tobytes() and len(a) == 3
        assert np.array_equal(before, small_net.layer_fo.w_exc)

    def test_matches_reference(self, small_net):
        x = np.random.default_rng(2).random(6)
        np.testing.assert_allclose(snn.infer(small_net, x), ref.infer(to_lists(small_net), x.tolist(), 0.1),
                                   atol=1e-12)

    def test_clone_is_independent(self, small_net):
        copy = snn.clone(small_net)
        snn.train_presentation(copy, np.ones(6), 0)
        assert copy.clock.t == 1 and small_net.clock.t == 0
        assert not np.array_equal(copy.layer_fo.w_exc, small_net.layer_fo.w_exc)
