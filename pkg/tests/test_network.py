import numpy as np
import pytest
from scipy import signal

from kgpose import tensor as T
from kgpose.checkpoint import load_checkpoint, save_checkpoint
from kgpose.errors import CheckpointError, ConfigError, DimensionError
from kgpose.gradcheck import TOLERANCE, check_gradients, network_case
from kgpose.network import (FractalNet, NetworkConfig, ParamStore, hourglass_forward,
                            inception_resnet_forward)
from kgpose.tensor import Tensor


def _ref_conv(x, w, b=None):
    out = np.stack([sum(signal.correlate2d(x[i], w[o, i], mode="same") for i in range(x.shape[0]))
                    for o in range(w.shape[0])])
    return out if b is None else out + b[:, None, None]


def _ref_bn(x, gamma, beta):
    mu = x.mean(axis=(1, 2), keepdims=True)
    var = x.var(axis=(1, 2), keepdims=True)
    return (x - mu) / np.sqrt(var + 1e-5) * gamma[:, None, None] + beta[:, None, None]


def _ref_inception_resnet(x, p, name, project):
    """Straight-line reimplementation of the module wiring."""
    def cbr(inp, key, relu=True):
        y = _ref_bn(_ref_conv(inp, p[f"{name}.{key}.conv.w"].data),
                    p[f"{name}.{key}.bn.gamma"].data, p[f"{name}.{key}.bn.beta"].data)
        return np.maximum(y, 0) if relu else y

    a = cbr(x, "b1")
    b = cbr(cbr(x, "b2a"), "b2b")
    mixed = cbr(np.concatenate([a, b]), "mix", relu=False)
    short = _ref_conv(x, p[f"{name}.proj.w"].data, p[f"{name}.proj.b"].data) if project else x
    return np.maximum(mixed + short, 0)


@pytest.mark.parametrize("c_in,c_out", [(2, 4), (4, 4)])
def test_inception_resnet_matches_reference(rng, c_in, c_out):
    store = ParamStore(np.random.default_rng(5))
    x = rng.normal(size=(c_in, 8, 8))
    out = inception_resnet_forward(Tensor(x), store, "m", c_in, c_out)
    assert out.shape == (c_out, 8, 8)
    ref = _ref_inception_resnet(x, store.params, "m", c_in != c_out)
    np.testing.assert_allclose(out.data, ref, atol=1e-10)


@pytest.mark.parametrize("hw", [(4, 4), (6, 10), (1, 3)])
def test_inception_resnet_preserves_resolution(hw, rng):
    out = inception_resnet_forward(Tensor(rng.normal(size=(2, *hw))), ParamStore(), "m", 2, 6)
    assert out.shape == (6, *hw)


def test_hourglass_level_one_is_a_single_module(rng):
    x = Tensor(rng.normal(size=(4, 8, 8)))
    store = ParamStore(np.random.default_rng(0))
    a = hourglass_forward(x, 1, store, "hg", 4)
    b = inception_resnet_forward(x, store, "hg.l1", 4, 4)
    np.testing.assert_array_equal(a.data, b.data)


def test_hourglass_level_four_reaches_two_by_two(rng):
    sizes = []
    out = hourglass_forward(Tensor(rng.normal(size=(4, 16, 16))), 4, ParamStore(), "hg", 4,
                            on_module=lambda n, t: sizes.append(t.shape[-1]))
    assert out.shape == (4, 16, 16)
    assert min(sizes) == 2
    assert sizes == [16, 8, 4, 2]


def test_level_two_hourglass_gradients(rng):
    store = ParamStore(np.random.default_rng(3))
    x = Tensor(rng.normal(size=(2, 4, 4, 4)), requires_grad=True)
    hourglass_forward(x, 2, store, "hg", 4)
    names = ["hg.l2.up.b1.conv.w", "hg.l1.mix.bn.gamma", "hg.l1.b2b.conv.w"]
    target = rng.normal(size=(2, 4, 4, 4))

    def fn():
        return T.l2_loss(hourglass_forward(x, 2, store, "hg", 4), target)

    err = check_gradients(fn, [x] + [store.params[n] for n in names], rng=rng, max_probes=6,
                          avoid_kinks=True)
    assert err < TOLERANCE


def test_default_network_shapes():
    net = FractalNet(NetworkConfig(), seed=0)
    heatmaps, tap = net.forward(np.zeros((3, 64, 64), dtype=np.float32), training=False)
    assert [h.shape for h in heatmaps] == [(15, 16, 16), (15, 16, 16)]
    assert tap.shape == (64, 16, 16)
    assert len(net.module_names()) == NetworkConfig().num_modules == 11


def test_parameter_count_is_a_function_of_config():
    a = FractalNet(NetworkConfig(), seed=0).parameter_count()
    b = FractalNet(NetworkConfig(), seed=9).parameter_count()
    assert a == b == 215422


def test_zero_parameters_give_bias_maps(tiny_config):
    net = FractalNet(tiny_config, seed=0, dtype=np.float64)
    bias = np.linspace(-1, 1, tiny_config.num_heatmaps)
    for name, p in net.params.items():
        p.data[...] = 0.0
    net.params["stack1.heat.b"].data[...] = bias
    heatmaps, _ = net.forward(np.random.default_rng(0).normal(size=(3, 16, 16)))
    np.testing.assert_array_equal(heatmaps[-1].data, np.broadcast_to(bias[:, None, None], (15, 4, 4)))


def test_later_stage_parameters_do_not_affect_earlier_stage(tiny_config, rng):
    net = FractalNet(tiny_config, seed=0, dtype=np.float64)
    x = rng.normal(size=(3, 16, 16))
    before = net.forward(x, training=False)[0][0].data.copy()
    for name, p in net.params.items():
        if name.startswith("stack1."):
            p.data += 1.0
    after = net.forward(x, training=False)[0]
    np.testing.assert_array_equal(after[0].data, before)


def test_batched_forward_matches_single_in_eval_mode(tiny_config, rng):
    net = FractalNet(tiny_config, seed=0, dtype=np.float64)
    x = rng.normal(size=(3, 3, 16, 16))
    batched = net.forward(x, training=False)[0][-1].data
    single = np.stack([net.forward(xi, training=False)[0][-1].data for xi in x])
    np.testing.assert_allclose(batched, single, atol=1e-12)


def test_end_to_end_gradient_toy_network():
    assert network_case(0) < TOLERANCE


@pytest.mark.parametrize("kwargs", [
    dict(input_size=60, heatmap_size=16),
    dict(hourglass_levels=0),
    dict(hourglass_levels=6),
    dict(edge_branch_tap=99),
])
def test_invalid_configs_rejected(kwargs):
    with pytest.raises(ConfigError):
        NetworkConfig(**kwargs)


def test_wrong_input_size_rejected(tiny_config):
    net = FractalNet(tiny_config)
    with pytest.raises(DimensionError):
        net.forward(np.zeros((3, 32, 32), dtype=np.float32))


def test_injection_layers_exist():
    net = FractalNet(NetworkConfig())
    layers = net.injection_layers()
    assert layers == ["stack1.heat.w", "stem.ir3.mix.conv.w"]
    assert all(name in net.params for name in layers)


# ------------------------------------------------------------------ checkpoints


def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    net = FractalNet(NetworkConfig(), seed=4)
    path = tmp_path / "net.ckpt"
    save_checkpoint(path, net.store.state(), net.config.to_metadata())
    state, meta = load_checkpoint(path)
    for k, v in net.store.state().items():
        assert state[k].tobytes() == v.tobytes()
    assert NetworkConfig.from_metadata(meta) == net.config
    again = tmp_path / "again.ckpt"
    save_checkpoint(again, state, meta)
    assert again.read_bytes() == path.read_bytes()


def test_checkpoint_bad_magic(tmp_path):
    p = tmp_path / "bad.ckpt"
    p.write_bytes(b"NOPE" + bytes(20))
    with pytest.raises(CheckpointError):
        load_checkpoint(p)


def test_checkpoint_truncated(tmp_path):
    net = FractalNet(NetworkConfig(), seed=4)
    p = tmp_path / "net.ckpt"
    save_checkpoint(p, net.store.state(), {})
    p.write_bytes(p.read_bytes()[:1000])
    with pytest.raises(CheckpointError):
        load_checkpoint(p)


def test_strict_load_reports_missing_parameter(tiny_config):
    net = FractalNet(tiny_config)
    state = dict(net.store.state())
    state.pop("stem.conv.w")
    with pytest.raises(KeyError):
        FractalNet(tiny_config).store.load_state(state, strict=True)
