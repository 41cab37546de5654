import numpy as np
import pytest

from driftlab.autodiff import Tensor
from driftlab.nets import (
    ArchSpec,
    ArchError,
    build,
    expected_param_count,
    get_params,
    param_count,
    set_params,
)
from driftlab.optim import Adam

def _dn_spec(dim=3, **kw):
    return ArchSpec(kind="dn", dim=dim, **kw)


class TestBuild:
    def test_dn_starts_as_state_map_only(self):
        # g and m output weights start at zero, so D(tau, x, y) = f(y)
        net = build(_dn_spec(4), seed=1)
        rng = np.random.default_rng(0)
        y = Tensor(rng.standard_normal((6, 4)))
        base = net(Tensor(np.full((6, 1), 0.3)), Tensor(rng.standard_normal((6, 4))), y).data
        for tau in (0.0, 0.5, 1.0):
            for _ in range(3):
                x = Tensor(rng.standard_normal((6, 4)))
                out = net(Tensor(np.full((6, 1), tau)), x, y).data
                np.testing.assert_array_equal(out, base)
        f_out, g_out, m_out = net.heads(Tensor(np.full((6, 1), 0.5)),
                                        Tensor(rng.standard_normal((6, 4))), y)
        np.testing.assert_array_equal(g_out.data, np.zeros((6, 4)))
        np.testing.assert_array_equal(m_out.data, np.zeros((6, 4)))
        np.testing.assert_array_equal(base, f_out.data)

    def test_dn_and_dn_lin_differ_only_in_f(self):
        dn = build(_dn_spec(5), seed=2)
        dn_lin = build(ArchSpec(kind="dn_lin", dim=5), seed=2)
        dn_keys = {k for k in dn.params if not k.startswith("f.")}
        lin_keys = {k for k in dn_lin.params if not k.startswith("f.")}
        assert dn_keys == lin_keys
        for k in dn_keys:
            assert dn.params[k].data.shape == dn_lin.params[k].data.shape
        assert any(k.startswith("f.omega") for k in dn.params)
        assert set(k for k in dn_lin.params if k.startswith("f.")) == {"f.w", "f.b"}

    def test_deterministic_initialisation(self):
        a = build(_dn_spec(3), seed=7)
        b = build(_dn_spec(3), seed=7)
        for k in a.params:
            assert np.array_equal(a.params[k].data, b.params[k].data)
        c = build(_dn_spec(3), seed=8)
        assert any(not np.array_equal(a.params[k].data, c.params[k].data) for k in a.params)

    def test_all_architectures_finite_on_batches(self):
        rng = np.random.default_rng(3)
        for kind in ("dn", "dn_lin", "fc", "fc_plus", "fc_plus_conv", "fc_plus_conv_mlpsm"):
            spec = ArchSpec(kind=kind, dim=4, width_scale=0.5)
            net = build(spec, seed=0)
            tau = Tensor(rng.uniform(0.1, 1.0, (8, 1)))
            x = Tensor(rng.standard_normal((8, 4)))
            y = Tensor(rng.standard_normal((8, 4)))
            out = net(tau, x, y)
            assert out.data.shape == (8, 4)
            assert np.isfinite(out.data).all()

    def test_invalid_spec(self):
        with pytest.raises(ArchError):
            ArchSpec(kind="nope", dim=2)
        with pytest.raises(ArchError):
            ArchSpec(kind="dn", dim=0)

    def test_regression_nets_ignore_tau_and_x(self):
        net = build(ArchSpec(kind="fc", dim=2), seed=4)
        rng = np.random.default_rng(5)
        y = Tensor(rng.standard_normal((4, 2)))
        a = net(Tensor(np.zeros((4, 1))), Tensor(np.zeros((4, 2))), y).data
        b = net(Tensor(np.ones((4, 1))), Tensor(rng.standard_normal((4, 2))), y).data
        np.testing.assert_array_equal(a, b)


class TestMLPStateMapper:
    def test_gate_zero_kills_fourier_pathway(self):
        net = build(_dn_spec(2), seed=0)
        net.params["f.gate"].data = np.array(0.0)
        rng = np.random.default_rng(1)
        y = Tensor(rng.standard_normal((5, 2)))
        base = net.f(y).data.copy()
        net.params["f.omega"].data = net.params["f.omega"].data * 3.7 + 1.0
        np.testing.assert_array_equal(net.f(y).data, base)
        # zero gradient flows to the frequencies through the gate
        out = (net.f(Tensor(rng.standard_normal((5, 2)))) ** 2).sum()
        out.backward()
        grad = net.params["f.omega"].grad
        assert grad is None or np.all(grad == 0.0)

    def test_zero_state_feature_layout(self):
        # hand evaluation: poly features vanish, the linear block passes
        # ELU(b1), and the Fourier block is gate * (0,...,0, 1,...,1);
        # layout is poly(3D) | block(h) | gate*sin(DF) | gate*cos(DF)
        spec = _dn_spec(2)
        net = build(spec, seed=9)
        f = net.f
        out = f(Tensor(np.zeros((1, 2)))).data
        nf = spec.n_fourier
        elu_b = np.where(f.block.b.data > 0, f.block.b.data,
                         np.exp(np.minimum(f.block.b.data, 0.0)) - 1.0)
        gate = float(f.gate.data)
        feats = np.concatenate([np.zeros(3 * 2), elu_b,
                                np.zeros(2 * nf), gate * np.ones(2 * nf)])
        h1 = feats @ f.head1.w.data + f.head1.b.data
        h1 = np.where(h1 > 0, h1, np.exp(np.minimum(h1, 0.0)) - 1.0)
        expected = h1 @ f.head2.w.data + f.head2.b.data
        np.testing.assert_allclose(out[0], expected, rtol=1e-12, atol=1e-14)

    def test_gradient_through_full_mapper(self):
        from conftest import check_net_gradients

        spec = ArchSpec(kind="dn", dim=2, width_scale=0.25)
        net = build(spec, seed=3)
        rng = np.random.default_rng(4)
        mapper_params = [k for k in net.params if k.startswith("f.")]
        check_net_gradients(
            net,
            {"y": rng.standard_normal((3, 2))},
            lambda n, ts: (n.f(ts["y"]) ** 2).sum(),
            param_subset=mapper_params,
        )


class TestConstrainedFC:
    def test_clamp_after_every_step(self):
        spec = ArchSpec(kind="fc", dim=2, width_scale=0.25, clamp_bound=0.05)
        net = build(spec, seed=0)
        opt = Adam(net.params, lr=0.5)
        rng = np.random.default_rng(1)
        for _ in range(5):
            y = Tensor(rng.standard_normal((16, 2)))
            out = net(None, None, y)
            ((out**2).sum()).backward()
            opt.step()
            for k, p in net.params.items():
                p.grad = None
            net.post_step()
            for name in net._weight_names:
                w = net.params[name].data
                assert np.all(w >= -0.05) and np.all(w <= 0.05)

    def test_clamp_idempotent(self):
        spec = ArchSpec(kind="fc", dim=2, width_scale=0.25, clamp_bound=0.5)
        net = build(spec, seed=0)
        net.post_step()
        snap = {k: net.params[k].data.copy() for k in net.params}
        net.post_step()
        for k in net.params:
            assert np.array_equal(net.params[k].data, snap[k])

    def test_pruning_zeroes_smallest_weights(self):
        spec = ArchSpec(kind="fc", dim=2, width_scale=0.25, prune_every=1,
                        prune_fraction=0.2)
        net = build(spec, seed=0)
        total = sum(net.params[k].data.size for k in net._weight_names)
        net.on_epoch_end(0)
        net.post_step()
        zeros = sum(int((net.params[k].data == 0).sum()) for k in net._weight_names)
        assert zeros >= int(0.19 * total)
        # pruned entries stay pruned on subsequent epochs
        net.on_epoch_end(1)
        net.post_step()
        zeros2 = sum(int((net.params[k].data == 0).sum()) for k in net._weight_names)
        assert zeros2 > zeros


class TestParamCounts:
    def test_linear_layer_count(self):
        spec = ArchSpec(kind="dn_lin", dim=7)
        net = build(spec, seed=0)
        assert net.params["f.w"].data.size + net.params["f.b"].data.size == 7 * 7 + 7

    @pytest.mark.parametrize("kind", ["dn", "dn_lin", "fc", "fc_plus",
                                      "fc_plus_conv", "fc_plus_conv_mlpsm"])
    @pytest.mark.parametrize("dim", [1, 4, 12])
    def test_closed_form_matches_built(self, kind, dim):
        spec = ArchSpec(kind=kind, dim=dim)
        assert param_count(build(spec, seed=0)) == expected_param_count(spec)

    def test_quadratic_scaling_of_dn(self):
        # T(D) = 2 D^2 + O(D) + O(1): the difference T(2D) - 4 T(D)
        # stays a bounded fraction of T(D)
        for d in (8, 16, 32):
            t_d = expected_param_count(_dn_spec(d))
            t_2d = expected_param_count(_dn_spec(2 * d))
            assert abs(t_2d - 4 * t_d) / t_d < 4.0

    def test_first_conv_carries_two_d_squared(self):
        for d in (8, 16, 32):
            net = build(_dn_spec(d), seed=0)
            assert net.params["g.conv1.w"].data.size == 2 * d * d

    @pytest.mark.parametrize("dim", [1, 8, 12, 20, 40])
    def test_fc_plus_at_least_dn(self, dim):
        assert expected_param_count(ArchSpec(kind="fc_plus", dim=dim)) >= \
            expected_param_count(_dn_spec(dim))

    @pytest.mark.parametrize("dim", [8, 12, 20, 40])
    def test_fc_plus_conv_matches_dn_within_one_percent(self, dim):
        dn = expected_param_count(_dn_spec(dim))
        fpc = expected_param_count(ArchSpec(kind="fc_plus_conv", dim=dim))
        assert abs(fpc - dn) / dn < 0.01


class TestHeadSeparability:
    def test_zeroing_m_changes_output_by_its_contribution(self):
        net = build(_dn_spec(3), seed=5)
        # move the zero-initialised heads off zero first
        rng = np.random.default_rng(6)
        for k, p in net.params.items():
            p.data = p.data + 0.05 * rng.standard_normal(p.data.shape)
        tau = Tensor(np.full((4, 1), 0.4))
        x = Tensor(rng.standard_normal((4, 3)))
        y = Tensor(rng.standard_normal((4, 3)))
        full = net(tau, x, y).data.copy()
        _, _, m_out = net.heads(tau, x, y)
        for k in net.params:
            if k.startswith("m."):
                net.params[k].data = np.zeros_like(net.params[k].data)
        without_m = net(tau, x, y).data
        np.testing.assert_allclose(full - without_m, m_out.data, rtol=1e-12, atol=1e-14)


class TestCheckpointing:
    def test_round_trip_through_param_dict(self):
        net = build(_dn_spec(3), seed=1)
        rng = np.random.default_rng(2)
        tau = Tensor(rng.uniform(0.1, 1, (5, 1)))
        x = Tensor(rng.standard_normal((5, 3)))
        y = Tensor(rng.standard_normal((5, 3)))
        out = net(tau, x, y).data.copy()
        values = get_params(net)
        other = build(_dn_spec(3), seed=99)
        set_params(other, values)
        np.testing.assert_array_equal(other(tau, x, y).data, out)

    def test_mismatched_params_rejected(self):
        net = build(_dn_spec(3), seed=1)
        with pytest.raises(ArchError):
            set_params(net, {"nope": np.zeros(1)})


class TestGradientChecks:
    @pytest.mark.parametrize("kind", ["dn", "dn_lin", "fc", "fc_plus_conv_mlpsm"])
    def test_architecture_gradcheck(self, kind):
        from conftest import check_net_gradients

        spec = ArchSpec(kind=kind, dim=2, width_scale=0.25)
        net = build(spec, seed=11)
        # perturb zero-initialised heads so their gradients are generic
        prng = np.random.default_rng(12)
        for p in net.params.values():
            p.data = p.data + 0.1 * prng.standard_normal(p.data.shape)
        rng = np.random.default_rng(0)
        inputs = {
            "tau": rng.uniform(0.2, 1.0, (3, 1)),
            "x": rng.standard_normal((3, 2)),
            "y": rng.standard_normal((3, 2)),
        }
        check_net_gradients(
            net, inputs,
            lambda n, ts: (n(ts["tau"], ts["x"], ts["y"]) ** 2).sum(),
        )
