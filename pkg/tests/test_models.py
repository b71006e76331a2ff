import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from mnrank import nn
from mnrank.errors import CheckpointError, ConfigurationError, InputError, TrainingError
from mnrank.models import Dataset, LearnedSum, LearnedSumConfig, SumMlp, SumMlpConfig, evaluate_mcc
from mnrank.models import hyperparameter_search, learned_sum_forward, load_model, normalize_traces, predict
from mnrank.models import predict_classes, save_model, sum_mlp_forward, train, weights_report

COLS = ("log10N", "s0@1000", "s0@100000")


def toy_sums(rng, n=400):
    X = rng.normal(size=(n, 3))
    y = (X[:, 1] + X[:, 2] > 0).astype(int) + (X[:, 2] > 1.2)
    return X, y


def jitter(model, rng, scale=0.05):
    for _, p in model.named_parameters():
        if p.requires_grad:
            p.value += rng.normal(scale=scale, size=p.shape)


def test_config_validation():
    with pytest.raises(ConfigurationError):
        SumMlpConfig(hidden_layers=2)
    with pytest.raises(ConfigurationError):
        SumMlpConfig(hidden_width=96)
    with pytest.raises(ConfigurationError):
        SumMlpConfig(columns=("s0@1000",))
    with pytest.raises(ConfigurationError):
        LearnedSumConfig(classes=(1,))
    assert SumMlpConfig(columns=["log10N"] + [f"s{k}@{b}" for k in (0, 5) for b in range(8)]).input_dim == 17


def test_mlp_shapes_and_init_determinism(rng):
    cfg = SumMlpConfig(columns=COLS, hidden_width=16, hidden_layers=3, classes=(0, 1, 2))
    a, b = SumMlp(cfg), SumMlp(cfg)
    for (_, p), (_, q) in zip(a.named_parameters(), b.named_parameters()):
        assert_array_equal(p.value, q.value)
    probs = sum_mlp_forward(a, rng.normal(size=(5, 3)))
    assert probs.shape == (5, 3)
    assert_allclose(probs.sum(1), 1.0, rtol=1e-6)
    with pytest.raises(InputError):
        a.logits(np.zeros((2, 4)))


def test_mlp_grad_check(rng):
    X, y = toy_sums(rng, 40)
    cfg = SumMlpConfig(columns=COLS, hidden_width=16, hidden_layers=4, classes=(0, 1, 2))
    m = SumMlp(cfg, dtype=np.float64)
    m.fit_standardization(X)
    jitter(m, rng)
    w = np.array([2.0, 0.5, 1.5])
    err = nn.grad_check(m, lambda b: m.loss_and_grad((X,), y, w, backward=b), max_per_param=40)
    assert err < 1e-4


@pytest.mark.parametrize("dependent", [False, True])
def test_learned_sum_grad_check(rng, dependent):
    cfg = LearnedSumConfig(conductor_dependent=dependent, prime_limit=200, channels=8, head_width=8,
                           classes=(0, 1, 2), chunk=3)
    m = LearnedSum(cfg, dtype=np.float64)
    jitter(m, rng)
    a = rng.normal(size=(7, m.length))
    n = rng.uniform(1, 6, 7)
    y = rng.integers(0, 3, 7)
    w = np.array([1.0, 2.0, 3.0])
    err = nn.grad_check(m, lambda b: m.loss_and_grad((a, n), y, w, backward=b), max_per_param=30)
    assert err < 1e-4


def test_learned_sum_invariants(rng):
    cfg = LearnedSumConfig(prime_limit=500, channels=8, head_width=8, classes=(0, 1))
    m = LearnedSum(cfg)
    a = rng.normal(size=(6, m.length)).astype(np.float32)
    n = rng.uniform(2, 6, 6).astype(np.float32)
    _, w1 = learned_sum_forward(m, a, n)
    _, w2 = learned_sum_forward(m, a[::-1] * 3, n + 1)
    assert w1.shape == (m.length,)
    assert_array_equal(w1, w2)
    S_a, _ = m.s_opt(a[:1], n[:1])
    S_b, _ = m.s_opt(a[1:2], n[:1])
    S_ab, _ = m.s_opt(2 * a[:1] - 0.5 * a[1:2], n[:1])
    assert_allclose(S_ab, 2 * S_a - 0.5 * S_b, rtol=1e-5, atol=1e-5)


def test_conductor_dependent_weights_vary(rng):
    cfg = LearnedSumConfig(conductor_dependent=True, prime_limit=300, channels=8, head_width=8, classes=(0, 1))
    m = LearnedSum(cfg)
    W = m.weights(np.array([1.5, 5.5], np.float32))
    assert W.shape == (2, m.length)
    assert not np.allclose(W[0], W[1])


def test_normalize_traces():
    out = normalize_traces(np.array([[2, -3]]), np.array([4, 9]))
    assert out.dtype == np.float32
    assert_allclose(out, [[1.0, -1.0]])


def test_training_learns_toy_problem(rng):
    X, y = toy_sums(rng, 600)
    cfg = SumMlpConfig(columns=COLS, hidden_width=32, hidden_layers=3, classes=(0, 1, 2), epochs=60,
                       batch_size=64, lr=3e-3)
    res = train(SumMlp(cfg), Dataset((X[:400],), y[:400]), Dataset((X[400:],), y[400:]))
    assert res.best_val_mcc > 0.8
    assert res.log[-1]["train_loss"] < res.log[0]["train_loss"]
    assert evaluate_mcc(res.model, Dataset((X[400:],), y[400:])) == pytest.approx(res.best_val_mcc)


def test_training_is_deterministic(rng, tmp_path):
    X, y = toy_sums(rng, 200)
    cfg = SumMlpConfig(columns=COLS, hidden_width=16, hidden_layers=3, classes=(0, 1, 2), epochs=3, batch_size=32)
    paths = []
    for k in range(2):
        res = train(SumMlp(cfg), Dataset((X,), y), Dataset((X,), y), log_path=tmp_path / f"log{k}")
        save_model(res.model, tmp_path / f"m{k}.ck")
        paths.append(tmp_path / f"m{k}.ck")
    assert paths[0].read_bytes() == paths[1].read_bytes()
    assert (tmp_path / "log0").read_bytes() == (tmp_path / "log1").read_bytes()


def test_learned_sum_trains(rng):
    cfg = LearnedSumConfig(prime_limit=300, channels=8, head_width=8, classes=(0, 1), epochs=2, batch_size=16,
                           lr=1e-3)
    m = LearnedSum(cfg)
    a = rng.normal(size=(64, m.length)).astype(np.float32)
    y = (a.sum(1) > 0).astype(int)
    n = rng.uniform(2, 6, 64).astype(np.float32)
    res = train(m, Dataset((a, n), y), Dataset((a, n), y))
    assert len(res.log) == 2 and res.log[-1]["steps"] == 8


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_is_reported(rng):
    X, y = toy_sums(rng, 64)
    X[3, 1] = np.inf
    cfg = SumMlpConfig(columns=COLS, hidden_width=8, hidden_layers=3, classes=(0, 1, 2), epochs=1)
    with pytest.raises(TrainingError) as ei:
        train(SumMlp(cfg), Dataset((X,), y))
    assert ei.value.step == 0


def test_missing_class_in_training_data(rng):
    X, _ = toy_sums(rng, 30)
    cfg = SumMlpConfig(columns=COLS, hidden_width=8, hidden_layers=3, classes=(0, 1, 2), epochs=1)
    with pytest.raises(ConfigurationError):
        train(SumMlp(cfg), Dataset((X,), np.zeros(30, int)))


def test_checkpoint_roundtrip(tmp_path, rng):
    X, _ = toy_sums(rng, 20)
    cfg = SumMlpConfig(columns=COLS, hidden_width=8, hidden_layers=3, classes=(0, 1, 2), seed=4)
    m = SumMlp(cfg)
    m.fit_standardization(X)
    save_model(m, tmp_path / "m.ck")
    back = load_model(tmp_path / "m.ck")
    assert_array_equal(predict(back, X), predict_classes(m, (X,)))
    assert_array_equal(predict(tmp_path / "m.ck", X), predict(m, X))
    with pytest.raises(CheckpointError):
        predict(back, X[:, :2])
    ls = LearnedSum(LearnedSumConfig(prime_limit=100, channels=4, head_width=4, classes=(0, 1)))
    save_model(ls, tmp_path / "l.ck")
    assert load_model(tmp_path / "l.ck").topology() == ls.topology()


def test_hyperparameter_search(rng):
    X, y = toy_sums(rng, 300)
    base = SumMlpConfig(columns=COLS, hidden_width=8, hidden_layers=3, classes=(0, 1, 2), epochs=4, batch_size=64)
    best, trials = hyperparameter_search({"hidden_width": [8, 32], "lr": [1e-3, 1e-2]}, Dataset((X[:200],), y[:200]),
                                         Dataset((X[200:],), y[200:]), base)
    assert len(trials) == 4
    assert max(t["val_mcc"] for t in trials) == pytest.approx(
        next(t["val_mcc"] for t in trials if t["hidden_width"] == best.hidden_width and t["lr"] == best.lr))
    with pytest.raises(ConfigurationError):
        hyperparameter_search({}, Dataset((X,), y), None, base)


def test_weights_report(tmp_path):
    m = LearnedSum(LearnedSumConfig(conductor_dependent=True, prime_limit=100, channels=4, head_width=4,
                                    classes=(0, 1)))
    W = weights_report(m, tmp_path / "w.csv", decades=range(1, 10))
    assert W.shape == (9, 25)
    lines = (tmp_path / "w.csv").read_text().splitlines()
    assert lines[0] == "decade,log10N,p,w_p"
    assert len(lines) == 1 + 9 * 25
    assert lines[1].startswith("1,1.5,2,")


class _FixedProbs:
    def __init__(self, probs, classes):
        self.probs = np.asarray(probs)
        self.config = SumMlpConfig(columns=COLS, hidden_width=8, hidden_layers=3, classes=classes)

    def eval_inputs(self, inputs):
        return [self.probs]


def test_argmax_and_tie_rule():
    m = _FixedProbs([[0.2, 0.5, 0.3], [0.5, 0.5, 0.0], [0.1, 0.1, 0.8]], (0, 1, 2))
    assert_array_equal(predict_classes(m, None), [1, 0, 2])
    m.probs = m.probs * np.array([[3.0], [0.5], [7.0]])
    assert_array_equal(predict_classes(m, None), [1, 0, 2])


def test_sum_mlp_forward_on_features():
    from mnrank.sums import SumFeatures
    cfg = SumMlpConfig(columns=COLS, hidden_width=8, hidden_layers=3, classes=(0, 1))
    f = SumFeatures(2.0, {1000: 0.1, 100000: -0.4}, {}, (1000, 100000))
    p = sum_mlp_forward(cfg, [f, f])
    assert_array_equal(p[0], p[1])
    g = SumFeatures(2.0, {1000: 0.1}, {}, (1000,))
    with pytest.raises(InputError):
        sum_mlp_forward(cfg, [g])


def test_learned_sum_examples(rng):
    m = LearnedSum(LearnedSumConfig(prime_limit=400, channels=8, head_width=8, classes=(0, 1)))
    z = np.zeros((2, m.length), np.float32)
    S, w = m.s_opt(z, np.array([3.0, 4.0], np.float32))
    assert_array_equal(S, 0)
    row = rng.normal(size=(1, m.length)).astype(np.float32)
    bumped = row.copy()
    bumped[0, 7] *= 2
    S1, _ = m.s_opt(row, np.array([3.0]))
    S2, _ = m.s_opt(bumped, np.array([3.0]))
    assert float((S2 - S1)[0]) == pytest.approx(float(w[7] * row[0, 7]), rel=1e-4, abs=1e-6)
    with pytest.raises(InputError):
        m.forward_full(row[:, :-1], np.array([3.0]))


def test_default_learned_sum_shapes():
    m = LearnedSum(LearnedSumConfig())
    assert m.length == 9592
    convs = [l for l in m.generator.layers if hasattr(l, "W")]
    assert [c.W.shape for c in convs] == [(128, 1), (128, 128), (128, 128), (128, 128), (1, 128)]
    dense = [l for l in m.head.layers if hasattr(l, "W")]
    assert [d.W.shape for d in dense] == [(128, 2), (128, 128), (128, 128), (6, 128)]


def test_zero_epochs_and_separable(rng):
    X = rng.normal(size=(200, 3))
    y = (X[:, 1] > 0).astype(int)
    cfg = SumMlpConfig(columns=COLS, hidden_width=16, hidden_layers=3, classes=(0, 1), epochs=0)
    fresh = SumMlp(cfg)
    res = train(SumMlp(cfg), Dataset((X,), y), Dataset((X,), y))
    assert res.log == []
    for (_, a), (_, b) in zip(fresh.net.named_parameters(), res.model.net.named_parameters()):
        assert_array_equal(a.value, b.value)
    X[:, 1] += np.where(y == 1, 0.5, -0.5)
    cfg = SumMlpConfig(columns=COLS, hidden_width=16, hidden_layers=3, classes=(0, 1), epochs=200,
                       batch_size=200, lr=1e-2)
    res = train(SumMlp(cfg), Dataset((X,), y), Dataset((X,), y))
    assert res.best_val_mcc == 1.0


def test_one_point_grid(rng):
    X, y = toy_sums(rng, 120)
    base = SumMlpConfig(columns=COLS, hidden_width=8, hidden_layers=3, classes=(0, 1, 2), epochs=2)
    best, trials = hyperparameter_search({"hidden_layers": [4]}, Dataset((X,), y), Dataset((X,), y), base)
    assert best.hidden_layers == 4 and len(trials) == 1
