import csv

import numpy as np
import pytest

from kgpose.checkpoint import load_checkpoint
from kgpose.errors import ConfigError, NonFiniteError
from kgpose.network import FractalNet
from kgpose.projection import HeadConfig, ProjectionHead
from kgpose.tensor import Tensor
from kgpose.train import (LOG_COLUMNS, PlateauSchedule, RMSprop, TrainConfig, load_trunk,
                          save_trunk, train_loop)


def fresh(tiny_config, guided=True, dtype=np.float32):
    net = FractalNet(tiny_config, seed=0, dtype=dtype)
    head = ProjectionHead(HeadConfig.for_network(tiny_config), seed=1, dtype=dtype) if guided else None
    return net, head


# ------------------------------------------------------------------ optimizer and schedules


def test_rmsprop_matches_scalar_oracle():
    w = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    opt = RMSprop(lr=0.1, decay=0.9, eps=1e-8)
    grads = [np.array([0.5, -1.0]), np.array([0.25, 2.0]), np.array([0.0, 1.0])]
    ref_w, ref_v = np.array([1.0, -2.0]), np.zeros(2)
    for g in grads:
        w.grad = g.copy()
        opt.step({"w": w})
        ref_v = 0.9 * ref_v + 0.1 * g * g
        ref_w = ref_w - 0.1 * g / (np.sqrt(ref_v) + 1e-8)
    np.testing.assert_allclose(w.data, ref_w, rtol=1e-14)


def test_rmsprop_skips_params_without_gradient():
    w = Tensor(np.ones(3), requires_grad=True)
    RMSprop().step({"w": w})
    np.testing.assert_array_equal(w.data, 1.0)


def test_plateau_halves_once_after_patience():
    sched = PlateauSchedule(patience=5)
    lr = 2.5e-4
    lr = sched.update(1.0, lr)
    for _ in range(4):
        lr = sched.update(1.0, lr)
    assert lr == 2.5e-4
    lr = sched.update(1.0, lr)
    assert lr == 1.25e-4


def test_plateau_resets_on_improvement():
    sched = PlateauSchedule(patience=2)
    lr = sched.update(1.0, 1.0)
    lr = sched.update(1.0, lr)
    lr = sched.update(0.5, lr)
    lr = sched.update(0.5, lr)
    assert lr == 1.0


def test_plateau_respects_floor():
    sched = PlateauSchedule(patience=1, floor=1e-6)
    lr = 3e-6
    for _ in range(10):
        lr = sched.update(1.0, lr)
    assert lr == 1e-6


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(lambda0=0.1, lambda_min=0.5)
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=0)


def test_unguided_schedule_is_zero():
    sched = TrainConfig(guidance=False).schedule(16)
    assert all(sched(e) == 0.0 for e in range(5))


def test_guided_schedule_decays_over_half_the_epochs():
    cfg = TrainConfig(steps=40, batch_size=16)
    assert cfg.epochs(16) == 40
    sched = cfg.schedule(16)
    assert sched(0) == 0.5 and sched(20) == 0.01 and sched(10) == pytest.approx(0.255)


# ------------------------------------------------------------------ training loop


def test_single_sample_loss_decreases(tiny_config, tiny_samples):
    net, head = fresh(tiny_config, dtype=np.float64)
    cfg = TrainConfig(steps=20, batch_size=1, lr=1e-3)
    log = train_loop(tiny_samples[:1], net, cfg, head=head).log
    l_f = [row["l_f"] for row in log]
    assert len(l_f) == 20
    assert l_f[-1] < 0.5 * l_f[0]


def test_logs_are_deterministic(tiny_config, tiny_samples, tmp_path):
    paths = []
    for name in "ab":
        net, head = fresh(tiny_config)
        path = tmp_path / f"{name}.csv"
        train_loop(tiny_samples, net, TrainConfig(steps=6, batch_size=1, augment=True), head=head,
                   log_path=path)
        paths.append(path)
    assert paths[0].read_bytes() == paths[1].read_bytes()


def test_log_columns(tiny_config, tiny_samples, tmp_path):
    net, head = fresh(tiny_config)
    path = tmp_path / "log.csv"
    train_loop(tiny_samples, net, TrainConfig(steps=4, batch_size=1), head=head, log_path=path)
    rows = list(csv.DictReader(path.open()))
    assert tuple(rows[0]) == LOG_COLUMNS
    assert [int(r["step"]) for r in rows] == [1, 2, 3, 4]
    for r in rows:
        lam = float(r["lambda"])
        assert float(r["total"]) == pytest.approx(lam * float(r["l_kp"]) + (1 - lam) * float(r["l_f"]),
                                                  rel=1e-6)


def test_lambda_zero_matches_unguided_bit_for_bit(tiny_config, tiny_samples):
    net_a, head = fresh(tiny_config)
    net_b, _ = fresh(tiny_config, guided=False)
    cfg = TrainConfig(steps=10, batch_size=1, guidance=False)
    train_loop(tiny_samples, net_a, cfg, head=head)
    train_loop(tiny_samples, net_b, cfg, head=None)
    for name, p in net_a.params.items():
        assert p.data.tobytes() == net_b.params[name].data.tobytes(), name
    for name, buf in net_a.store.buffers.items():
        assert buf.tobytes() == net_b.store.buffers[name].tobytes(), name


def test_guidance_changes_the_trunk(tiny_config, tiny_samples):
    net_a, head = fresh(tiny_config)
    net_b, _ = fresh(tiny_config, guided=False)
    train_loop(tiny_samples, net_a, TrainConfig(steps=3, batch_size=1), head=head)
    train_loop(tiny_samples, net_b, TrainConfig(steps=3, batch_size=1, guidance=False))
    w = "stem.ir3.mix.conv.w"
    assert net_a.params[w].data.tobytes() != net_b.params[w].data.tobytes()


def test_callback_stops_early(tiny_config, tiny_samples):
    net, head = fresh(tiny_config)
    result = train_loop(tiny_samples, net, TrainConfig(steps=50, batch_size=1), head=head,
                        callback=lambda step, report: step == 3)
    assert result.stopped_early
    assert len(result.log) == 3


@pytest.mark.filterwarnings("ignore:invalid value:RuntimeWarning")
def test_non_finite_aborts_with_dump(tiny_config, tiny_samples, tmp_path):
    net, head = fresh(tiny_config)
    net.params["stem.conv.w"].data[0, 0, 1, 1] = np.inf
    dump = tmp_path / "dump.ckpt"
    with pytest.raises(NonFiniteError, match="step 0"):
        train_loop(tiny_samples, net, TrainConfig(steps=5, batch_size=1), head=head, dump_path=dump)
    state, meta = load_checkpoint(dump)
    assert meta["step"] == "0"
    assert np.isinf(state["stem.conv.w"][0, 0, 1, 1])
    assert "head.geo.fc.w" in state


def test_epoch_checkpoints(tiny_config, tiny_samples, tmp_path):
    net, head = fresh(tiny_config)
    train_loop(tiny_samples, net, TrainConfig(steps=4, batch_size=2), head=head,
               checkpoint_dir=tmp_path)
    names = sorted(p.name for p in tmp_path.iterdir())
    assert names == sorted(f"epoch{e:04d}{s}.ckpt" for e in range(4) for s in (".head", ""))
    reloaded = load_trunk(tmp_path / "epoch0003.ckpt")
    for name, p in net.params.items():
        assert reloaded.params[name].data.tobytes() == p.data.tobytes()


def test_save_trunk_extra_metadata(tiny_config, tmp_path):
    net, _ = fresh(tiny_config, guided=False)
    save_trunk(tmp_path / "t.ckpt", net, {"steps": "7"})
    _, meta = load_checkpoint(tmp_path / "t.ckpt")
    assert meta["steps"] == "7"
    assert meta["input_size"] == "16"


def test_empty_dataset_rejected(tiny_config):
    net, _ = fresh(tiny_config, guided=False)
    with pytest.raises(ConfigError):
        train_loop([], net, TrainConfig())
