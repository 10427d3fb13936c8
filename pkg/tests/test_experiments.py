import gzip
import itertools

import numpy as np
import pytest

from sparsenet.experiments.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from sparsenet.experiments.configs import ConfigError, NetworkConfig, builtin_names, load_config, parse_percent
from sparsenet.experiments.mnist import (
    IdxFormatError,
    MnistDataset,
    load_mnist,
    read_idx_images,
    read_idx_labels,
    split_validation,
    write_idx_images,
    write_idx_labels,
)
from sparsenet.experiments.network import build_network
from sparsenet.experiments.noise import (
    NOISE_LEVELS,
    NoiseSpec,
    add_noise,
    add_noise_batch,
    blend_white_noise,
    noisy_pixel_count,
)
from sparsenet.experiments.opcount import analytic_op_estimate, count_nonzero_products
from sparsenet.experiments.training import (
    ResultsRecord,
    epoch_batch_size,
    evaluate,
    format_summary,
    noise_sweep,
    summarize,
    train,
)
from sparsenet.layers import KWinners, KWinners2d, SparseLinear
from sparsenet.rng import stream
from sparsenet.tensor import Conv2d, Linear, SgdConfig

# -- IDX files ----------------------------------------------------------------


def test_idx_round_trip(tmp_path):
    imgs = stream(0, "t").integers(0, 256, size=(5, 28, 28)).astype(np.uint8)
    write_idx_images(tmp_path / "i", imgs)
    write_idx_labels(tmp_path / "l", np.array([0, 1, 9, 3, 4]))
    assert np.array_equal(read_idx_images(tmp_path / "i"), imgs)
    assert read_idx_labels(tmp_path / "l").tolist() == [0, 1, 9, 3, 4]
    gz = tmp_path / "i.gz"
    gz.write_bytes(gzip.compress((tmp_path / "i").read_bytes()))
    assert np.array_equal(read_idx_images(gz), imgs)


def test_idx_errors(tmp_path):
    write_idx_images(tmp_path / "i", np.zeros((3, 4, 4)))
    raw = (tmp_path / "i").read_bytes()
    (tmp_path / "trunc").write_bytes(raw[:-1])
    with pytest.raises(IdxFormatError):
        read_idx_images(tmp_path / "trunc")
    (tmp_path / "short").write_bytes(raw[:7])
    with pytest.raises(IdxFormatError):
        read_idx_images(tmp_path / "short")
    with pytest.raises(IdxFormatError):
        read_idx_labels(tmp_path / "i")  # image magic in a label file
    write_idx_labels(tmp_path / "l", np.array([1, 10]))
    with pytest.raises(IdxFormatError):
        read_idx_labels(tmp_path / "l")


def test_load_mnist_count_mismatch(tmp_path):
    write_idx_images(tmp_path / "t10k-images-idx3-ubyte", np.zeros((3, 28, 28)))
    write_idx_labels(tmp_path / "t10k-labels-idx1-ubyte", np.zeros(2))
    with pytest.raises(IdxFormatError):
        load_mnist(tmp_path, "test")
    with pytest.raises(FileNotFoundError):
        load_mnist(tmp_path, "train")


def test_load_mnist_scaling(tmp_path):
    write_idx_images(tmp_path / "t10k-images-idx3-ubyte", np.full((2, 28, 28), 255))
    write_idx_labels(tmp_path / "t10k-labels-idx1-ubyte", np.array([3, 4]))
    ds = load_mnist(tmp_path, "test")
    assert ds.images.dtype == np.float32 and ds.images.max() == 1.0
    assert ds.as_input().shape == (2, 1, 28, 28)


@pytest.mark.mnist
def test_official_test_split(mnist_path):
    ds = load_mnist(mnist_path, "test")
    assert len(ds) == 10_000 and ds.images.shape == (10_000, 28, 28)
    assert np.bincount(ds.labels).tolist() == [980, 1135, 1032, 1010, 982, 892, 958, 1028, 974, 1009]


def test_split_validation_disjoint():
    ds = MnistDataset(np.zeros((50, 28, 28), np.float32), np.arange(50) % 10, "train")
    tr, val = split_validation(ds.subset(np.arange(50)), 10, stream(0, "data"))
    assert len(tr) == 40 and len(val) == 10


# -- noise --------------------------------------------------------------------


def test_noise_levels_and_counts():
    assert NOISE_LEVELS == (0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45, 0.5)
    assert [noisy_pixel_count(e, 784) for e in NOISE_LEVELS] == \
        [0, 39, 78, 117, 156, 196, 235, 274, 313, 352, 392]


def test_add_noise_examples():
    img = stream(1, "t").random((28, 28)) * 0.5
    assert np.array_equal(add_noise(img, 0.0, 0.9, stream(2, "t")), img)
    noisy = add_noise(img, 0.5, 0.9, stream(2, "t"))
    assert np.count_nonzero(noisy != img) == 392
    assert (noisy[noisy != img] == 0.9).all()
    twice = add_noise(noisy, 0.5, 0.9, stream(3, "t"))
    assert np.count_nonzero(twice != img) > 392
    assert np.array_equal(add_noise(img, 0.3, 0.9, stream(2, "t")), add_noise(img, 0.3, 0.9, stream(2, "t")))
    with pytest.raises(ValueError):
        add_noise(img, 1.5, 0.9, stream(2, "t"))


def test_add_noise_batch_independent_rows():
    imgs = np.zeros((20, 28, 28))
    out = add_noise_batch(imgs, 0.1, 1.0, stream(4, "t"))
    assert (out.reshape(20, -1).sum(axis=1) == 78).all()
    assert len({tuple(np.flatnonzero(r)) for r in out.reshape(20, -1)}) == 20


def test_noise_value_from_training():
    imgs = np.array([[0.0, 1.0], [0.0, 1.0]])
    assert NoiseSpec.from_training(imgs).noise_value == pytest.approx(0.5 + 2 * 0.5)


def test_blend_white_noise():
    sig = np.linspace(-0.5, 0.5, 100)
    assert np.array_equal(blend_white_noise(sig, 0.0, stream(5, "t")), sig)
    pure = blend_white_noise(sig, 1.0, stream(5, "t"))
    assert np.abs(pure).max() <= 1.0
    noise = stream(5, "t").uniform(-1, 1, size=100)
    np.testing.assert_allclose(blend_white_noise(sig, 0.25, stream(5, "t")), 0.75 * sig + 0.25 * noise)
    with pytest.raises(ValueError):
        blend_white_noise(sig, -0.1, stream(5, "t"))


# -- configs ------------------------------------------------------------------

TABLE = {
    # name: (L1 F, L1 sparsity, L2 F, L2 sparsity, L3 N, L3 sparsity, Wt sparsity)
    "dense-cnn-1": (30, 1.0, 0, None, 1000, 1.0, 1.0),
    "dense-cnn-2": (30, 1.0, 30, 1.0, 1000, 1.0, 1.0),
    "sparse-cnn-1": (30, 0.093, 0, None, 150, 0.333, 0.3),
    "sparse-cnn-2": (32, 0.087, 64, 0.293, 700, 0.143, 0.3),
    "dense-cnn-2-sp3": (30, 1.0, 30, 1.0, 700, 0.143, 0.3),
    "sparse-cnn-2-d3": (32, 0.087, 64, 0.293, 1000, 1.0, 1.0),
    "sparse-cnn-2-w1": (32, 0.087, 64, 0.293, 700, 0.143, 1.0),
    "sparse-cnn-2-dsw": (32, 0.087, 64, 0.293, 1000, 1.0, 0.3),
    "gsc-dense-cnn-2": (64, 1.0, 64, 1.0, 1000, 1.0, 1.0),
    "gsc-sparse-cnn-2": (64, 0.095, 64, 0.125, 1000, 0.1, 0.4),
    "gsc-super-sparse-cnn-2": (64, 0.095, 64, 0.125, 1500, 0.067, 0.1),
}


def test_builtin_configs_match_table():
    assert sorted(TABLE) == builtin_names()
    for name, row in TABLE.items():
        c = load_config(name)
        got = (c.l1_filters, c.l1_sparsity, c.l2_filters, c.l2_sparsity, c.l3_units, c.l3_sparsity, c.weight_density)
        assert got == pytest.approx(row), name


def test_config_k_values():
    s1 = load_config("sparse-cnn-1")
    assert (s1.conv_layers[0].units, s1.conv_layers[0].k, s1.l3_k) == (4320, 402, 50)
    s2 = load_config("Sparse CNN-2")
    assert [c.k for c in s2.conv_layers] == [401, 300]
    assert (s2.hidden_in, s2.l3_k) == (1024, 100)
    assert not load_config("dense-cnn-1").is_sparse


def test_config_errors(tmp_path):
    with pytest.raises(ConfigError, match="available: dense-cnn-1"):
        load_config("sparse-cnn-9")
    bad = tmp_path / "bad.toml"
    bad.write_text('"L1 F" = 30\n"L1 sparsity" = "9.3%"\n"L3 N" = 150\n"L3 sparsity" = "133%"\n"Wt sparsity" = "30%"\n')
    with pytest.raises(ConfigError):
        load_config(bad)
    bad.write_text('"L1 F" = 30\n')
    with pytest.raises(ConfigError, match="lacks columns"):
        load_config(bad)
    with pytest.raises(ConfigError):
        parse_percent("ten%")


def test_config_round_trip(tmp_path):
    c = load_config("sparse-cnn-2")
    assert NetworkConfig.from_dict(c.to_dict()) == c


# -- network construction -----------------------------------------------------


def test_build_sparse_cnn_2():
    model = build_network(load_config("sparse-cnn-2"), stream(0, "model"))
    convs = [l for l in model.layers if isinstance(l, Conv2d)]
    assert [c.weight.shape for c in convs] == [(32, 1, 5, 5), (64, 32, 5, 5)]
    kw2 = [l for l in model.layers if isinstance(l, KWinners2d)]
    assert [l.kw.k for l in kw2] == [401, 300]
    hidden = next(l for l in model.layers if isinstance(l, SparseLinear))
    assert hidden.weight.shape == (700, 1024)
    assert (np.count_nonzero(hidden.weight.value, axis=1) == 307).all()
    kw = [l for l in model.layers if type(l) is KWinners]
    assert kw[0].kw.k == 100
    out = model.forward(np.zeros((2, 1, 28, 28), np.float32), training=False)
    assert out.shape == (2, 10)


def test_build_dense_cnn_1():
    model = build_network(load_config("dense-cnn-1"), stream(0, "model"))
    assert not any(isinstance(l, (KWinners, SparseLinear)) for l in model.layers)
    lin = [l for l in model.layers if isinstance(l, Linear)]
    assert [l.weight.shape for l in lin] == [(1000, 30 * 12 * 12), (10, 1000)]


def test_sparse_cnn_2_w1_dense_weights():
    model = build_network(load_config("sparse-cnn-2-w1"), stream(0, "model"))
    assert not any(isinstance(l, SparseLinear) for l in model.layers)


# -- training and evaluation --------------------------------------------------


def toy_dataset(n=64, seed=0):
    rng = stream(seed, "t")
    labels = np.arange(n) % 10
    images = rng.random((n, 28, 28)).astype(np.float32) * 0.2
    for i, y in enumerate(labels):
        images[i, 2 * y:2 * y + 4, 4:24] = 1.0  # class-coded bar
    return MnistDataset(images, labels, "train")


def test_epoch_batch_size():
    cfg = SgdConfig(batch_size=64, first_epoch_batch_size=4)
    assert [epoch_batch_size(cfg, e, True) for e in range(3)] == [4, 64, 64]
    assert epoch_batch_size(cfg, 0, False) == 64


def test_training_is_deterministic():
    cfg = load_config("sparse-cnn-1")
    weights = []
    for _ in range(2):
        model = build_network(cfg, stream(3, "model"))
        train(model, SgdConfig(epochs=2, batch_size=16), toy_dataset(), seed=3, sparse=True)
        weights.append([p.value.copy() for p in model.parameters()] +
                       [l.kw.duty_cycles.copy() for l in model.layers if hasattr(l, "kw")])
    assert all(np.array_equal(a, b) for a, b in zip(*weights))


def test_training_learns_toy_task():
    cfg = load_config("sparse-cnn-1")
    model = build_network(cfg, stream(1, "model"))
    data = toy_dataset(200)
    result = train(model, SgdConfig(epochs=3, batch_size=10, learning_rate=0.05), data, seed=1,
                   sparse=True, validation=data)
    assert [h.lr for h in result.history] == pytest.approx([0.05, 0.04, 0.032])
    assert result.history[-1].val_acc > 0.9
    assert evaluate(model, data) == result.history[-1].val_acc


class PerfectStub:
    def __init__(self, labels):
        self.labels = labels

    def predict(self, x):
        return self.labels


def test_perfect_classifier_noise_score():
    data = MnistDataset(np.zeros((10_000, 28, 28), np.float32), np.arange(10_000) % 10, "test")
    rec = noise_sweep(PerfectStub(data.labels), data, NoiseSpec(0.7), eval_seed=1, network="stub")
    assert rec.noise_score == 110_000
    assert rec.test_acc == 1.0


def test_noise_sweep_reproducible():
    model = build_network(load_config("dense-cnn-1"), stream(0, "model"))
    data = toy_dataset(40, seed=2)
    spec = NoiseSpec(0.75)
    a = noise_sweep(model, data, spec, eval_seed=5)
    b = noise_sweep(model, data, spec, eval_seed=5)
    assert a.level_correct == b.level_correct


def test_summary_formatting():
    recs = [ResultsRecord("Net", s, acc, {}, {0.0: score}) for s, (acc, score) in
            enumerate([(0.99, 100), (0.98, 300)])]
    summary = summarize(recs)
    assert summary["test_mean"] == pytest.approx(98.5)
    assert summary["noise_std"] == pytest.approx(np.std([100, 300], ddof=1))
    assert format_summary(summary).split() == ["Net", "98.50", "±", "0.71", "200", "±", "141"]


# -- operation counting -------------------------------------------------------


def set_oracle_linear(x, w):
    """Count (sample, out, in) triples with both factors nonzero."""
    return sum(1 for i, o, m in itertools.product(range(x.shape[0]), range(w.shape[0]), range(w.shape[1]))
               if x[i, m] != 0 and w[o, m] != 0)


def set_oracle_conv(x, f):
    n, c, h, w = x.shape
    nf, _, k, _ = f.shape
    total = 0
    for i, o, r, q in itertools.product(range(n), range(nf), range(h - k + 1), range(w - k + 1)):
        for ch, u, v in itertools.product(range(c), range(k), range(k)):
            total += x[i, ch, r + u, q + v] != 0 and f[o, ch, u, v] != 0
    return total


def test_counter_simple_cases():
    rng = stream(0, "t")
    model = build_network(load_config("dense-cnn-1"), rng)
    zero = {c.layer: c.products for c in count_nonzero_products(model, np.zeros((2, 1, 28, 28), np.float32))}
    assert zero["conv1"] == 0 and zero["hidden"] == 0 and zero["output"] == 0
    ones = {c.layer: c.per_sample for c in count_nonzero_products(model, np.ones((1, 1, 28, 28), np.float32))}
    assert ones["conv1"] == 24 * 24 * 30 * 25


def test_counter_matches_set_oracle():
    rng = stream(1, "t")
    cfg = NetworkConfig("tiny", l1_filters=3, l1_sparsity=0.3, l2_filters=4, l2_sparsity=0.5,
                        l3_units=12, l3_sparsity=0.25, weight_density=0.4, kernel=3)
    model = build_network(cfg, rng)
    x = (rng.random((3, 1, 28, 28)) * (rng.random((3, 1, 28, 28)) < 0.5)).astype(np.float32)
    counts = {c.layer: c.products for c in count_nonzero_products(model, x)}
    # replay the forward pass and count each layer's inputs against its weights
    h = x
    for layer in model.layers:
        if isinstance(layer, Conv2d):
            name = "conv1" if layer.weight.shape[1] == 1 else "conv2"
            assert counts[name] == set_oracle_conv(h, layer.weight.value)
        elif isinstance(layer, Linear):
            name = "output" if layer.weight.shape[0] == 10 else "hidden"
            assert counts[name] == set_oracle_linear(h, layer.weight.value)
            if name == "hidden":
                bound = cfg.conv_layers[-1].k * np.count_nonzero(layer.weight.value[0]) * 12
                assert counts[name] <= bound * len(x)
        h = layer.forward(h, training=False, update_state=False)


def test_analytic_ratios():
    sparse = {e.layer: e for e in analytic_op_estimate(load_config("gsc-sparse-cnn-2"))}
    assert sparse["conv2"].ratio == pytest.approx(1 / 0.095, rel=0.01)
    assert sparse["hidden"].ratio == pytest.approx(20.0, rel=0.01)
    dense = analytic_op_estimate(load_config("gsc-dense-cnn-2"))
    assert all(e.ratio == 1 for e in dense)
    # hidden products: active inputs x density x units
    assert sparse["hidden"].sparse == pytest.approx(0.125 * 1600 * 0.4 * 1000)


# -- checkpoints --------------------------------------------------------------


def test_checkpoint_round_trip(tmp_path):
    cfg = load_config("sparse-cnn-1")
    model = build_network(cfg, stream(2, "model"))
    train(model, SgdConfig(epochs=1, batch_size=16), toy_dataset(), seed=2, sparse=True)
    save_checkpoint(tmp_path / "c.npz", model, cfg, seed=2, epochs_trained=1)
    loaded, cfg2, meta = load_checkpoint(tmp_path / "c.npz")
    assert cfg2 == cfg and meta["epochs_trained"] == 1
    for (n1, p1), (n2, p2) in zip(model.named_parameters(), loaded.named_parameters()):
        assert n1 == n2 and np.array_equal(p1.value, p2.value)
        assert (p1.mask is None) == (p2.mask is None)
        if p1.mask is not None:
            assert np.array_equal(p1.mask, p2.mask)
    for a, b in zip(model.layers, loaded.layers):
        if hasattr(a, "kw"):
            assert np.array_equal(a.kw.duty_cycles, b.kw.duty_cycles)
    x = toy_dataset(20, seed=9).as_input()
    assert np.array_equal(model.forward(x, training=False), loaded.forward(x, training=False))
    save_checkpoint(tmp_path / "d.npz", loaded, cfg2, seed=2, epochs_trained=1)
    assert (tmp_path / "c.npz").read_bytes() == (tmp_path / "d.npz").read_bytes()


def test_checkpoint_rejects_garbage(tmp_path):
    (tmp_path / "x.npz").write_bytes(b"not a zip")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "x.npz")
    np.savez(tmp_path / "y.npz", other=np.zeros(2))
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "y.npz")
