import numpy as np
import pytest

from vcecnn.autograd import backward, leaf, mul, sum_all
from vcecnn.data import Dataset
from vcecnn.errors import DataError, NumericError
from vcecnn.layers import one_hot, softmax_cross_entropy
from vcecnn.model import ModelSpec, build, padding_policy
from vcecnn.optim import AdamState, adam_step, evaluate, train_epoch
from vcecnn.rng import SplitMix64


def tiny_model(seed=0, dense_dropout=0.4, conv_dropout=0.25):
    spec = ModelSpec(
        input_size=(16, 16),
        block_filters=(4, 8),
        dense_units=16,
        padding=padding_policy("per-block", 2),
        conv_dropout=conv_dropout,
        dense_dropout=dense_dropout,
    )
    return build(spec, seed=seed)


def tiny_data(n=12, seed=0):
    rs = np.random.default_rng(seed)
    return Dataset(rs.uniform(0, 1, (n, 3, 16, 16)).astype(np.float32), rs.integers(0, 10, n))


def test_first_step_moves_by_lr():
    w = leaf([1.0, -2.0, 3.0])
    w.grad = None
    backward(sum_all(mul(w, leaf([0.5, -4.0, 1e-3], requires_grad=False))))
    state = AdamState(lr=1e-4)
    adam_step({"w": w}, state)
    # m_hat / sqrt(v_hat) = sign(g) on the first step.
    assert np.allclose(w.array, [1.0 - 1e-4, -2.0 + 1e-4, 3.0 - 1e-4], atol=1e-7)
    assert state.t == 1


def test_zero_gradient_is_fixed_point():
    w = leaf([0.3, -0.7])
    before = w.array.copy()
    state = AdamState(lr=1e-2)
    for _ in range(5):
        adam_step({"w": w}, state)
    assert np.array_equal(w.array, before)


def test_zero_lr_leaves_parameters_bitwise():
    model = tiny_model()
    before = {k: p.array.tobytes() for k, p in model.params.items()}
    state = AdamState(lr=0.0)
    data = tiny_data()
    for _ in range(3):
        train_epoch(model, data, state, SplitMix64(1), batch_size=5)
    assert all(model.params[k].array.tobytes() == v for k, v in before.items())
    assert state.t == 9


def test_non_finite_gradient_names_parameter():
    w = leaf([1.0])
    w.grad = leaf([np.nan]).value
    with pytest.raises(NumericError, match="w"):
        adam_step({"w": w}, AdamState())


def test_update_bounded_by_ten_lr():
    model = tiny_model()
    state = AdamState(lr=1e-3)
    data = tiny_data()
    for _ in range(5):
        train_epoch(model, data, state, SplitMix64(2), batch_size=4)
    assert 0 < state.max_abs_update <= 10 * state.lr


def test_single_sample_overfit():
    model = tiny_model(dense_dropout=0.0, conv_dropout=0.0)
    data = tiny_data(n=1, seed=3)
    state = AdamState(lr=1e-3)
    losses = [train_epoch(model, data, state, SplitMix64(3)).loss for _ in range(200)]
    assert all(b < a for a, b in zip(losses[:5], losses[1:6]))
    assert evaluate(model, data).loss < 1e-2


def test_training_is_deterministic():
    def run():
        model = tiny_model(seed=7)
        state = AdamState(lr=1e-3)
        hist = [train_epoch(model, tiny_data(), state, SplitMix64(9), batch_size=5) for _ in range(3)]
        return hist, {k: p.array.tobytes() for k, p in model.params.items()}

    assert run() == run()


def test_dropout_free_epoch_loss_depends_only_on_params():
    a = tiny_model(seed=4, dense_dropout=0.0, conv_dropout=0.0)
    b = tiny_model(seed=4, dense_dropout=0.0, conv_dropout=0.0)
    data = tiny_data()
    ra = train_epoch(a, data, AdamState(lr=1e-3), SplitMix64(5), batch_size=4)
    rb = train_epoch(b, data, AdamState(lr=1e-3), SplitMix64(5), batch_size=4)
    assert ra == rb


def test_evaluate_matches_fused_loss():
    model = tiny_model()
    data = tiny_data()
    result = evaluate(model, data, batch_size=5)
    logits = model.eval_logits(data.images)
    expected = softmax_cross_entropy(leaf(logits.astype(np.float64), np.float64), one_hot(data.labels, 10, np.float64)).array.item()
    assert result.loss == pytest.approx(expected, rel=1e-6)
    assert result.probabilities.shape == (12, 10)
    assert result.accuracy == np.mean(result.predictions == data.labels)


def test_empty_dataset():
    empty = Dataset(np.zeros((0, 3, 16, 16), np.float32), np.zeros(0, np.int64))
    with pytest.raises(DataError):
        train_epoch(tiny_model(), empty, AdamState(), SplitMix64(0))
    with pytest.raises(DataError):
        evaluate(tiny_model(), empty)
