import numpy as np
import pytest

from tsgfn.nn_core import autodiff as ad
from tsgfn.nn_core import (AdamState, CheckpointError, MLPShape, NonFiniteError, ParamStore, RngStream,
                           adam_update, backward, init_params, load_checkpoint, masked_log_softmax, masked_softmax,
                           mlp_forward, save_checkpoint)
from tsgfn.nn_core.mlp import mlp_apply
from tsgfn.nn_core.optim import clip_grad_norm
from tsgfn.nn_core.rng import generator_state, restore_generator

# frozen from tests/oracles/derive_constants.py (list arithmetic over the stored weights)
MLP_REGRESSION = [-0.11313428244664393, 0.17409863325261335, -0.36668553440950796]
ADAM_W100 = 0.002936675681102549


# ----------------------------------------------------------------------- MLP


def test_zero_network_outputs_zero():
    shape = MLPShape(3, (4,), 2)
    store = init_params(shape, 0)
    for name, arr in store.items():
        store.assign(name, np.zeros_like(arr))
    assert mlp_forward(shape, store, np.ones(3)).data.tolist() == [0.0, 0.0]


def test_identity_layer():
    shape = MLPShape(3, (), 3, activation="linear")
    store = ParamStore()
    store.add("mlp.0.W", np.eye(3))
    store.add("mlp.0.b", np.zeros(3))
    x = np.array([1.5, -2.0, 0.25])
    assert mlp_forward(shape, store, x).data.tolist() == x.tolist()


def test_mlp_regression():
    shape = MLPShape(4, (5,), 3)
    store = init_params(shape, 1234, prefix="mlp")
    out = mlp_forward(shape, store, np.array([0.5, -1.0, 2.0, 0.25]), prefix="mlp").data
    np.testing.assert_allclose(out, MLP_REGRESSION, rtol=1e-13)


def test_taped_and_plain_forward_agree():
    shape = MLPShape(6, (8, 7), 4, activation="tanh")
    store = init_params(shape, 5)
    x = np.random.default_rng(1).normal(size=(10, 6))
    np.testing.assert_array_equal(mlp_forward(shape, store, x).data, mlp_apply(shape, store, x))


def test_mlp_rejects_wrong_input_length():
    shape = MLPShape(3, (4,), 2)
    with pytest.raises(ValueError):
        mlp_forward(shape, init_params(shape, 0), np.ones(4))


def test_shape_validation():
    with pytest.raises(ValueError):
        MLPShape(0, (4,), 2)
    with pytest.raises(ValueError):
        MLPShape(3, (4,), 2, activation="gelu")


# --------------------------------------------------------------------- init


def test_init_deterministic_and_seed_dependent():
    shape = MLPShape(5, (6,), 2)
    a, b, c = init_params(shape, 3), init_params(shape, 3), init_params(shape, 4)
    assert a.checksum() == b.checksum()
    assert a.checksum() != c.checksum()
    assert not np.array_equal(a["mlp.0.W"], c["mlp.0.W"])


def test_init_bounds():
    shape = MLPShape(9, (16,), 4)
    store = init_params(shape, 0)
    assert np.abs(store["mlp.0.W"]).max() <= np.sqrt(1 / 9)
    assert np.abs(store["mlp.1.W"]).max() <= np.sqrt(1 / 16)
    assert not store["mlp.0.b"].any()


def test_param_store_groups_and_assign():
    s = ParamStore()
    s.add("w", np.ones(3))
    s.add("z", np.zeros(1), group="logz")
    assert s.group("z") == "logz"
    with pytest.raises(KeyError):
        s.add("w", np.ones(3))
    with pytest.raises(ValueError):
        s.assign("w", np.ones(4))


# --------------------------------------------------------------- autodiff


def test_sum_of_squares_gradient():
    w = ad.Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
    backward(ad.total(ad.square(w)))
    assert w.grad.tolist() == [2.0, -4.0, 6.0]


def test_parameter_off_path_gets_no_gradient():
    shape = MLPShape(3, (4,), 2)
    store = init_params(shape, 0)
    leaves = store.leaves()
    extra = ad.Tensor(np.ones(5), requires_grad=True)
    out = mlp_forward(shape, leaves, np.ones((2, 3)))
    backward(ad.total(out))
    assert extra.grad is None
    assert all(t.grad is not None for t in leaves.values())


def test_backward_rejects_non_scalar_and_non_finite():
    w = ad.Tensor(np.ones(2), requires_grad=True)
    with pytest.raises(ValueError):
        backward(ad.square(w))
    with pytest.raises(NonFiniteError):
        backward(ad.total(ad.scale(w, np.inf)))


def _fd(f, x, h=1e-4):
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        orig = x[i]
        x[i] = orig + h
        a = f()
        x[i] = orig - h
        b = f()
        x[i] = orig
        g[i] = (a - b) / (2 * h)
    return g


@pytest.mark.parametrize("seed", range(5))
def test_op_gradients_against_finite_differences(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(4, 3))
    b = rng.normal(size=(3, 5))
    mask = rng.random((4, 5)) < 0.7
    mask[:, 0] = True
    idx = rng.integers(0, 5, size=4)
    idx = np.where(mask[np.arange(4), idx], idx, 0)
    seg = np.array([0, 0, 1, 2])

    def build(ta, tb):
        z = ad.tanh(ad.matmul(ta, tb))
        lp = ad.masked_log_softmax(ad.add(z, 0.3), mask)
        picked = ad.take_last(lp, idx)
        s = ad.segment_sum(ad.mul(picked, picked), seg, 3)
        return ad.total(ad.sub(ad.square(s), ad.rows(ad.reshape(s, (3, 1)), np.array([0, 2]))))

    ta, tb = ad.Tensor(a, requires_grad=True), ad.Tensor(b, requires_grad=True)
    backward(build(ta, tb))
    f = lambda: float(build(ad.Tensor(a), ad.Tensor(b)).data)
    np.testing.assert_allclose(ta.grad, _fd(f, a), rtol=1e-6, atol=1e-8)
    np.testing.assert_allclose(tb.grad, _fd(f, b), rtol=1e-6, atol=1e-8)


def test_masked_log_softmax_gradient_ignores_masked_entries():
    x = ad.Tensor(np.array([[0.0, 1.0, 2.0]]), requires_grad=True)
    mask = np.array([[True, False, True]])
    backward(ad.total(ad.take_last(ad.masked_log_softmax(x, mask), np.array([2]))))
    assert x.grad[0, 1] == 0.0
    assert x.grad.sum() == pytest.approx(0.0, abs=1e-15)


# --------------------------------------------------------------- softmax


def test_masked_softmax_examples():
    np.testing.assert_allclose(masked_softmax(np.full(4, 0.7), np.ones(4, bool)), [0.25] * 4, rtol=1e-15)
    p = masked_softmax(np.array([5.0, -3.0, 100.0]), np.array([False, True, False]))
    assert p.tolist() == [0.0, 1.0, 0.0]
    np.testing.assert_allclose(masked_softmax(np.array([0.0, np.log(3.0)]), np.ones(2, bool)), [0.25, 0.75],
                               rtol=1e-15)


def test_masked_softmax_all_false_rejected():
    with pytest.raises(ValueError):
        masked_softmax(np.zeros(3), np.zeros(3, bool))
    with pytest.raises(ValueError):
        masked_log_softmax(np.zeros(3), np.zeros(3, bool))


def test_masked_softmax_stable_for_large_logits():
    p = masked_softmax(np.array([1000.0, 999.0]), np.ones(2, bool))
    assert np.isfinite(p).all() and p.sum() == pytest.approx(1.0, abs=1e-15)


# ------------------------------------------------------------------ Adam


def _scalar_store(w):
    s = ParamStore()
    s.add("w", np.array([w]))
    return s


def test_adam_zero_gradient_is_noop():
    s = _scalar_store(0.3)
    st = AdamState.for_params(s)
    adam_update(s, {"w": np.zeros(1)}, st, {"model": 0.1})
    assert s["w"][0] == 0.3


def test_adam_first_step_moves_by_lr():
    s = _scalar_store(1.0)
    st = AdamState.for_params(s)
    adam_update(s, {"w": np.ones(1)}, st, {"model": 0.01})
    assert s["w"][0] == pytest.approx(0.99, abs=1e-8)


def _adam_reference(steps=100, w=1.0, lr=0.1, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    out = []
    for t in range(1, steps + 1):
        g = 2.0 * w
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        w -= lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
        out.append(w)
    return out


def test_adam_quadratic_against_scalar_reference():
    s = _scalar_store(1.0)
    st = AdamState.for_params(s)
    path = []
    for _ in range(100):
        adam_update(s, {"w": 2.0 * s["w"]}, st, {"model": 0.1})
        path.append(s["w"][0])
    np.testing.assert_allclose(path, _adam_reference(), rtol=1e-12, atol=1e-15)
    mags = np.abs(path)
    # monotone descent until |w| first drops below 0.2; afterwards Adam oscillates around 0
    first = int(np.argmax(mags < 0.2))
    assert first > 0 and (np.diff(np.r_[1.0, mags[:first + 1]]) < 0).all()
    assert mags[-1] < 0.2
    assert path[-1] == pytest.approx(ADAM_W100, rel=1e-12)


def test_adam_per_group_rates():
    s = ParamStore()
    s.add("a", np.zeros(1))
    s.add("z", np.zeros(1), group="logz")
    st = AdamState.for_params(s)
    adam_update(s, {"a": np.ones(1), "z": np.ones(1)}, st, {"model": 0.01, "logz": 0.5})
    assert s["a"][0] == pytest.approx(-0.01, abs=1e-8)
    assert s["z"][0] == pytest.approx(-0.5, abs=1e-6)


def test_adam_rejects_non_finite_gradient():
    s = _scalar_store(1.0)
    with pytest.raises(NonFiniteError):
        adam_update(s, {"w": np.array([np.nan])}, AdamState.for_params(s), {"model": 0.1})
    assert s["w"][0] == 1.0


def test_clip_grad_norm():
    g = {"a": np.array([3.0]), "b": np.array([4.0])}
    assert clip_grad_norm(g, 1.0) == pytest.approx(5.0)
    assert np.hypot(g["a"][0], g["b"][0]) == pytest.approx(1.0)


# ------------------------------------------------------------------ RNG


def test_streams_are_reproducible_and_independent():
    a = RngStream(7, 2).generator().random(5)
    assert np.array_equal(a, RngStream(7, 2).generator().random(5))
    assert not np.array_equal(a, RngStream(7, 3).generator().random(5))


def test_generator_state_roundtrip():
    g = RngStream(1, 0).generator()
    g.random(3)
    clone = restore_generator(generator_state(g))
    assert np.array_equal(g.random(4), clone.random(4))


# ------------------------------------------------------------ checkpoint


def test_checkpoint_roundtrip(tmp_path):
    arrays = {"w": np.random.default_rng(0).normal(size=(3, 4)), "ids": np.arange(5), "empty": np.zeros(0)}
    save_checkpoint(tmp_path / "a.ckpt", arrays, {"step": 3, "note": "x"})
    back, meta = load_checkpoint(tmp_path / "a.ckpt")
    assert meta == {"step": 3, "note": "x"}
    for k, v in arrays.items():
        assert np.array_equal(back[k], v) and back[k].shape == v.shape
    assert back["ids"].dtype == np.int64


def test_checkpoint_bad_magic(tmp_path):
    (tmp_path / "x.ckpt").write_bytes(b"not a checkpoint")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "x.ckpt")
