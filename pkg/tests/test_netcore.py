import numpy as np
import pytest

from sstlab import netcore as nc


def small_arch(n_out=4):
    return [nc.ConvSpec(3, 3), nc.ActivationSpec("tanh"),
            nc.SumPoolSpec(2), nc.FullSpec(n_out)]


def brute_force_forward(net, x):
    """Independent nested-loop reimplementation of conv / sum pool /
    full / tanh, used as the forward oracle."""
    act = np.asarray(x, dtype=float)[None, :, :]  # (C,H,W)
    for layer in net.layers:
        if isinstance(layer, nc._Conv):
            o, c, k, _ = layer.w.shape
            _, h, w = act.shape
            out = np.zeros((o, h - k + 1, w - k + 1))
            for m in range(o):
                for i in range(h - k + 1):
                    for j in range(w - k + 1):
                        acc = layer.b[m]
                        for ci in range(c):
                            for ki in range(k):
                                for kj in range(k):
                                    acc += layer.w[m, ci, ki, kj] * act[ci, i + ki, j + kj]
                        out[m, i, j] = acc
            act = out
        elif isinstance(layer, nc._SumPool):
            w = layer.window
            c, h, wd = act.shape
            out = np.zeros((c, h // w, wd // w))
            for ci in range(c):
                for i in range(h // w):
                    for j in range(wd // w):
                        out[ci, i, j] = act[ci, i * w:(i + 1) * w,
                                            j * w:(j + 1) * w].sum()
                        if layer.scale is not None:
                            out[ci, i, j] = (out[ci, i, j] * layer.scale[ci]
                                             + layer.bias[ci])
            act = out
        elif isinstance(layer, nc._Tanh):
            act = np.tanh(act)
        elif isinstance(layer, nc._Full):
            act = layer.w @ act.reshape(-1) + layer.b
        else:
            raise AssertionError(f"unexpected layer {layer}")
    return act


def test_init_deterministic():
    a = nc.init_network(small_arch(), seed=3, input_size=10)
    b = nc.init_network(small_arch(), seed=3, input_size=10)
    for pa, pb in zip(a.parameters(), b.parameters()):
        assert np.array_equal(pa, pb)


def test_init_output_shape():
    net = nc.init_network(nc.default_architecture(5), seed=0)
    out = nc.forward(net, np.zeros((32, 32)))
    assert out.shape == (5,)


def test_inconsistent_architecture_rejected():
    with pytest.raises(nc.InconsistentArchitecture):
        # 10 -> conv3 -> 8 -> pool 3 does not divide 8
        nc.init_network([nc.ConvSpec(2, 3), nc.SumPoolSpec(3),
                         nc.FullSpec(2)], seed=0, input_size=10)
    with pytest.raises(nc.InconsistentArchitecture):
        nc.init_network([nc.ConvSpec(2, 12), nc.FullSpec(2)], seed=0,
                        input_size=10)
    with pytest.raises(nc.InconsistentArchitecture):
        nc.init_network([nc.ConvSpec(2, 3)], seed=0, input_size=10)


def test_forward_zero_net_zero_input():
    net = nc.init_network([nc.FullSpec(3)], seed=0, input_size=4)
    for p in net.parameters():
        p[...] = 0.0
    assert nc.forward(net, np.zeros((4, 4))).tolist() == [0, 0, 0]


def test_forward_known_linear_product():
    net = nc.init_network([nc.FullSpec(2)], seed=0, input_size=2)
    w, b = net.parameters()
    w[...] = [[1.0, 2.0, 3.0, 4.0], [0.5, -1.0, 0.0, 2.0]]
    b[...] = [1.0, -1.0]
    x = np.array([[1.0, 0.0], [2.0, 1.0]])  # flattens to [1,0,2,1]
    out = nc.forward(net, x)
    assert np.allclose(out, [1 + 6 + 4 + 1, 0.5 + 0 + 2 - 1])


def test_forward_is_pure():
    net = nc.init_network(small_arch(), seed=5, input_size=10)
    x = np.random.default_rng(0).uniform(0, 1, (10, 10))
    a = nc.forward(net, x)
    b = nc.forward(net, x)
    assert np.array_equal(a, b)


def test_forward_shape_mismatch():
    net = nc.init_network(small_arch(), seed=0, input_size=10)
    with pytest.raises(nc.ShapeMismatch):
        nc.forward(net, np.zeros((8, 8)))
    with pytest.raises(nc.ShapeMismatch):
        nc.forward(net, np.full((10, 10), np.nan))


@pytest.mark.parametrize("seed", range(5))
def test_forward_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    net = nc.init_network(small_arch(), seed=seed, input_size=8)
    x = rng.uniform(0, 1, (8, 8))
    assert np.allclose(nc.forward(net, x), brute_force_forward(net, x),
                       atol=1e-12)


def test_sum_pool_equals_window_sums():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(3, 5, 4, 6))
    pool = nc._SumPool(2, None, None)
    y = pool.forward(x)
    for n in range(3):
        for c in range(5):
            for i in range(2):
                for j in range(3):
                    assert np.isclose(
                        y[n, c, i, j],
                        x[n, c, 2 * i:2 * i + 2, 2 * j:2 * j + 2].sum())


def test_sgd_step_zero_gradient_when_target_is_output():
    net = nc.init_network(small_arch(), seed=1, input_size=10)
    x = np.random.default_rng(1).uniform(0, 1, (10, 10))
    target = nc.forward(net, x)
    before = [p.copy() for p in net.parameters()]
    loss = nc.sgd_step(net, x[None], target[None], lr=0.5)
    assert loss == 0.0
    for p, q in zip(net.parameters(), before):
        assert np.array_equal(p, q)


def test_sgd_step_linear_closed_form():
    # y = Wx + b, loss = 0.5*||y - d||^2, dW = (y - d) x^T, db = y - d
    net = nc.init_network([nc.FullSpec(2)], seed=0, input_size=2)
    w, b = net.parameters()
    w[...] = [[0.1, 0.2, 0.3, 0.4], [0.0, -0.1, 0.2, 0.3]]
    b[...] = 0.0
    x = np.array([[1.0, 2.0], [0.5, -1.0]])
    d = np.array([1.0, 0.0])
    y = w @ x.reshape(-1)
    expect_w = w - 0.1 * np.outer(y - d, x.reshape(-1))
    expect_b = b - 0.1 * (y - d)
    loss = nc.sgd_step(net, x[None], d[None], lr=0.1)
    assert np.isclose(loss, 0.5 * np.sum((y - d) ** 2))
    assert np.allclose(w, expect_w)
    assert np.allclose(b, expect_b)


def test_sgd_training_reduces_loss():
    rng = np.random.default_rng(7)
    net = nc.init_network(small_arch(3), seed=7, input_size=10)
    xs = rng.uniform(0, 1, (12, 10, 10))
    ts = np.eye(3)[rng.integers(0, 3, 12)]
    first = nc.sgd_step(net, xs, ts, lr=0.05)
    for _ in range(99):
        last = nc.sgd_step(net, xs, ts, lr=0.05)
    assert last < first


def test_gradient_check_linear_layer_tight():
    net = nc.init_network([nc.FullSpec(3)], seed=1, input_size=4)
    rng = np.random.default_rng(0)
    err = nc.gradient_check(net, rng.uniform(0, 1, (4, 4)),
                            rng.uniform(0, 1, 3), eps=1e-4)
    assert err < 1e-7


def test_gradient_check_degenerate_zero_net():
    net = nc.init_network([nc.FullSpec(2)], seed=0, input_size=3)
    for p in net.parameters():
        p[...] = 0.0
    err = nc.gradient_check(net, np.zeros((3, 3)), np.zeros(2), eps=1e-4)
    assert err == 0.0


def test_gradient_check_eps_range():
    net = nc.init_network([nc.FullSpec(2)], seed=0, input_size=3)
    with pytest.raises(ValueError):
        nc.gradient_check(net, np.zeros((3, 3)), np.zeros(2), eps=1e-2)


def test_entropy_examples():
    assert nc.output_entropy([[0.0, 1.0, 0.0]]) < 1e-6
    assert abs(nc.output_entropy([[0.2] * 5]) - np.log2(5)) < 1e-12
    assert abs(nc.output_entropy([[0.5, 0.5, 0.0, 0.0, 0.0]]) - 1.0) < 1e-6


def test_entropy_bounds():
    rng = np.random.default_rng(3)
    outs = rng.uniform(0, 1, (50, 7))
    h = nc.output_entropy(outs)
    assert 0.0 <= h <= np.log2(7)


def test_dilobe_bank_shape_and_zero_mean():
    bank = nc.dilobe_filter_bank(50, 8, seed=4)
    assert len(bank) == 50
    for f in bank:
        assert f.shape == (8, 8)
        assert abs(f.sum()) < 1e-9


def test_dilobe_bank_deterministic():
    a = nc.dilobe_filter_bank(5, 8, seed=9)
    b = nc.dilobe_filter_bank(5, 8, seed=9)
    for fa, fb in zip(a, b):
        assert np.array_equal(fa, fb)


def test_filter_bank_frontend_has_no_trainable_params():
    arch = [nc.FilterBankSpec(4, 5, seed=1), nc.ActivationSpec("tanh"),
            nc.SumPoolSpec(2), nc.FullSpec(3)]
    net = nc.init_network(arch, seed=0, input_size=12)
    n_fixed = sum(1 for l in net.layers
                  if isinstance(l, nc._Conv) and not l.trainable)
    assert n_fixed == 1
    out = nc.forward(net, np.zeros((12, 12)))
    assert out.shape == (3,)
    # gradient check still passes with the frozen frontend in place
    rng = np.random.default_rng(1)
    err = nc.gradient_check(net, rng.uniform(0, 1, (12, 12)),
                            rng.uniform(0, 1, 3), eps=1e-4)
    assert err < 1e-4


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    net = nc.init_network(small_arch(), seed=11, input_size=10)
    nc.sgd_step(net, np.random.default_rng(0).uniform(0, 1, (2, 10, 10)),
                np.eye(4)[:2], lr=0.01)
    path = tmp_path / "net.ckpt"
    nc.save_checkpoint(net, path)
    loaded = nc.load_checkpoint(path)
    assert nc.checkpoint_bytes(loaded) == nc.checkpoint_bytes(net)
    for pa, pb in zip(net.parameters(), loaded.parameters()):
        assert pa.tobytes() == pb.tobytes()


def test_checkpoint_bad_magic(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"NOTANET!rest")
    with pytest.raises(nc.CheckpointError):
        nc.load_checkpoint(path)


def test_checkpoint_truncated(tmp_path):
    net = nc.init_network([nc.FullSpec(2)], seed=0, input_size=3)
    path = tmp_path / "net.ckpt"
    nc.save_checkpoint(net, path)
    data = path.read_bytes()
    path.write_bytes(data[:-5])
    with pytest.raises(nc.CheckpointError):
        nc.load_checkpoint(path)
