import numpy as np
import pytest

from acoustic_grind.audio import AudioBlock, FACTORY_NOISE, AcousticModel, Synthesizer
from acoustic_grind.encoder import EncoderConfig, PsdWindow, StreamingEncoder
from acoustic_grind.model import (
    CheckpointError, FingerprintError, PSDRegNet, TrainingDataset, TrainSettings,
    apply_temporal_mask, chronological_split, estimate_force, load_checkpoint, save_checkpoint,
    train, write_history_csv,
)
from acoustic_grind.nn.layers import ShapeError

CFG = EncoderConfig()
TABLE = [(1, 35, 40), (16, 33, 38), (32, 31, 36), (32, 4, 4), (512,), (64,), (1,)]


def toy_dataset(n_rec=3, per=60, seed=0):
    """Windows whose peak row encodes the label, so a network can learn it quickly."""
    rng = np.random.default_rng(seed)
    X, y, t, r = [], [], [], []
    for rec in range(n_rec):
        for k in range(per):
            label = rng.uniform(1, 5)
            row = int(round((label - 1) / 4 * 34))
            win = 0.05 * rng.random((35, 40))
            win[row, :] = 1.0
            X.append(win)
            y.append(label)
            t.append(k * 0.05)
            r.append(rec)
    return TrainingDataset(np.array(X), np.array(y), np.array(t), np.array(r))


def test_table_shapes_and_parameter_count():
    net = PSDRegNet()
    shapes = [s for _, s in net.shapes((1, 35, 40))]
    kinds = [k for k, _ in net.shapes((1, 35, 40))]
    assert shapes[kinds.index("conv2d")] == TABLE[1]
    assert shapes[kinds.index("adaptive_avg_pool2d")] == TABLE[3]
    assert shapes[kinds.index("flatten")] == TABLE[4]
    linears = [s for k, s in zip(kinds, shapes) if k == "linear"]
    assert linears == [TABLE[5], TABLE[6]]
    convs = [s for k, s in zip(kinds, shapes) if k == "conv2d"]
    assert convs == [TABLE[1], TABLE[2]]
    assert net.parameter_count() == 416 + 32 + 12832 + 64 + 32832 + 65 + 40 == 46281


def test_forward_batch_shapes():
    net = PSDRegNet()
    assert net.forward(np.zeros((3, 35, 40))).shape == (3, 1)
    assert net.forward(np.zeros((35, 40))).shape == (1, 1)
    with pytest.raises(ShapeError):
        net.forward(np.zeros((2, 34, 40)))


def test_mask_initialisation_and_application():
    net = PSDRegNet()
    m = net.mask
    assert m[0] == 0.0 and m[-1] == 1.0 and len(m) == 40
    np.testing.assert_allclose(m, np.arange(40) / 39, atol=1e-15)
    X = np.random.default_rng(0).random((35, 40))
    np.testing.assert_array_equal(apply_temporal_mask(X, np.ones(40)), X)
    out = apply_temporal_mask(X, m)
    for j in range(40):
        np.testing.assert_array_equal(out[:, j], m[j] * X[:, j])
    with pytest.raises(ShapeError):
        apply_temporal_mask(X, np.ones(39))


def test_zero_input_gives_final_bias():
    net = PSDRegNet()
    for _, layer, name in net.named_parameters():
        if name == "bias":
            layer.params[name][...] = 0.0
    net.layers[-1].params["bias"][...] = 0.37
    out = net.forward(np.zeros((2, 35, 40)), training=False)
    np.testing.assert_allclose(out, 0.37, atol=1e-15)


def test_mask_gradient_favours_signal_columns():
    net = PSDRegNet(seed=1)
    X = np.zeros((8, 1, 35, 40))
    rng = np.random.default_rng(1)
    X[:, :, :, 30:] = rng.random((8, 1, 35, 10))
    pred = net.forward(X, training=True)
    dpred = 2 * (pred - rng.standard_normal((8, 1))) / 8
    net.backward(dpred)
    g = np.abs(net.layers[0].grads["mask"])
    assert np.min(g[30:]) > np.max(g[:30])


def test_label_normalisation_round_trip():
    net = PSDRegNet()
    net.label_mean, net.label_std = 3.2, 1.7
    y = np.random.default_rng(0).uniform(0, 7, 50)
    assert np.max(np.abs(net.denormalize(net.normalize(y)) - y)) < 1e-12
    assert net.denormalize(0.0) == 3.2


def test_chronological_split_has_guard():
    data = toy_dataset()
    tr, va = chronological_split(data, 0.2, guard=40)
    for rec in range(3):
        t_tr = data.times[tr][data.recording[tr] == rec]
        t_va = data.times[va][data.recording[va] == rec]
        assert t_tr.max() < t_va.min()
        assert len(t_va) == 12
    assert len(np.intersect1d(tr, va)) == 0


def test_dataset_requires_increasing_times():
    with pytest.raises(ValueError):
        TrainingDataset(np.zeros((2, 35, 40)), np.zeros(2), np.array([1.0, 0.5]), np.zeros(2))


def test_training_reduces_loss_and_is_deterministic(tmp_path):
    data = toy_dataset()
    settings = TrainSettings(epochs=2, batch_size=16, lr=1e-3, dtype="float64")
    m1, h1 = train(data, settings, seed=3, encoder_config=CFG)
    m2, _ = train(data, settings, seed=3, encoder_config=CFG)
    assert h1[-1].train_loss < h1[1].train_loss or h1[-1].val_loss < h1[0].val_loss
    for (_, a, pa), (_, b, pb) in zip(m1.named_parameters(), m2.named_parameters()):
        np.testing.assert_array_equal(a.params[pa], b.params[pb])
    tr_idx, _ = chronological_split(data, 0.2, guard=40)
    assert m1.label_mean == pytest.approx(np.mean(data.y[tr_idx]))
    write_history_csv(h1, tmp_path / "h.csv")
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "epoch,train_loss,val_loss,lr" and len(lines) == 4


def test_float32_training_returns_float64_model():
    m, _ = train(toy_dataset(), TrainSettings(epochs=1, batch_size=32, dtype="float32"), seed=0)
    assert all(layer.params[n].dtype == np.float64 for _, layer, n in m.named_parameters())


def test_empty_validation_split_rejected():
    data = toy_dataset(n_rec=1, per=3)
    with pytest.raises(ValueError):
        train(data, TrainSettings(epochs=1), seed=0)


def test_estimate_force_uses_label_stats():
    net = PSDRegNet()
    net.label_mean, net.label_std = 2.5, 0.8
    for _, layer, name in net.named_parameters():
        if layer.kind == "linear" and layer is net.layers[-1]:
            layer.params[name][...] = 0.0
    f = estimate_force(net, PsdWindow(np.random.default_rng(0).random((35, 40)), 0.0))
    assert f == 2.5
    assert len(net.latencies) == 1


def test_checkpoint_round_trip(tmp_path):
    net = PSDRegNet(seed=4, fingerprint=CFG.fingerprint())
    net.label_mean, net.label_std = 3.1, 0.9
    for layer in net.layers:
        if hasattr(layer, "running_mean"):
            layer.running_mean[...] = np.random.default_rng(1).random(layer.running_mean.shape)
    X = np.random.default_rng(2).random((100, 35, 40))
    save_checkpoint(net, tmp_path / "m.bin")
    back = load_checkpoint(tmp_path / "m.bin", CFG)
    np.testing.assert_array_equal(net.predict(X), back.predict(X))
    assert back.fingerprint["band_low"] == 230.0 and back.fingerprint["control_rate"] == 20.0


def test_checkpoint_truncated_and_mismatch(tmp_path):
    net = PSDRegNet(fingerprint=CFG.fingerprint())
    save_checkpoint(net, tmp_path / "m.bin")
    data = (tmp_path / "m.bin").read_bytes()
    (tmp_path / "t.bin").write_bytes(data[:len(data) // 2])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "t.bin")
    (tmp_path / "x.bin").write_bytes(b"garbage")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "x.bin")
    other = EncoderConfig(control_rate=25.0)
    with pytest.raises(FingerprintError) as exc:
        load_checkpoint(tmp_path / "m.bin", other)
    assert "control_rate" in str(exc.value)


def test_gain_invariance_end_to_end():
    net = PSDRegNet(seed=0, fingerprint=CFG.fingerprint())
    net.label_mean, net.label_std = 3.0, 1.0
    syn = Synthesizer(AcousticModel(), FACTORY_NOISE, seed=2)
    audio = np.concatenate([syn.synthesize_block(np.full(800, 2200.0), 0.5).samples for _ in range(50)])
    forces = []
    for c in (0.1, 1.0, 10.0):
        enc = StreamingEncoder(CFG)
        enc.push_audio(AudioBlock(c * audio, 0.0, 16000.0))
        forces.append(net(enc))
    assert max(forces) - min(forces) < 1e-6
