import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from darn.data import DomainDataset, MultiDomainDataset, gen_rotated_gaussians, make_benchmark
from darn.discrepancy import domain_classifier_error
from darn.errors import DivergenceError, InvalidInputError
from darn.nn import init_model, make_optimizer
from darn.simplex import aggregate_objective, darn_project
from darn.trainer import (
    GVector,
    TrainConfig,
    aggregate,
    compute_g,
    evaluate,
    refit_discs,
    step_gradients,
    train,
    train_step,
)


def _toy_batches(rng, k=3, n=8, task="classification"):
    batches = []
    for _ in range(k):
        X = rng.normal(size=(n, 2))
        y = rng.integers(0, 2, n) if task == "classification" else rng.normal(size=n)
        batches.append((X, y))
    return batches, rng.normal(size=(n, 2)) + 0.5


def _toy_model(k, task="classification", seed=3):
    n_out = 2 if task == "classification" else 1
    return init_model(2, [6, 5], n_out, k if task == "classification" else 0, domain_hidden=[4], seed=seed)


class TestComputeG:
    def test_sum(self):
        gv = compute_g([0.3, 0.5], [1.0, 1.2])
        np.testing.assert_allclose(gv.g, [1.3, 1.7])
        np.testing.assert_array_equal(gv.task_losses, [0.3, 0.5])

    def test_zero_disc(self):
        np.testing.assert_array_equal(compute_g([0.1, 0.2], [0, 0]).g, [0.1, 0.2])

    def test_z_is_negated_scaled(self):
        np.testing.assert_allclose(compute_g([1.0, 3.0], [0.0, 0.0]).z(2.0), [-0.5, -1.5])

    def test_non_finite_names_domain(self):
        with pytest.raises(DivergenceError) as exc:
            compute_g([0.1, np.nan, 0.2], [0, 0, 0])
        assert exc.value.domain == 1
        assert "1" in str(exc.value)

    def test_length_mismatch(self):
        with pytest.raises(InvalidInputError):
            compute_g([0.1], [0.1, 0.2])


class TestAggregate:
    def _gv(self, g):
        return GVector(np.asarray(g, dtype=float), np.zeros(len(g)))

    def test_darn_high_temperature_near_uniform(self):
        a = aggregate(self._gv([0.1, 0.4, 0.9]), TrainConfig(tau=1e4))
        assert np.abs(a - 1 / 3).max() < 1e-3

    def test_darn_low_temperature_one_hot(self):
        a = aggregate(self._gv([0.1, 0.4, 0.9]), TrainConfig(tau=0.2))
        np.testing.assert_array_equal(a, [1.0, 0.0, 0.0])

    def test_onehot(self):
        np.testing.assert_array_equal(aggregate(self._gv([2, 1, 3]), TrainConfig(aggregator="onehot")), [0, 1, 0])

    def test_onehot_tie_lowest_index(self):
        np.testing.assert_array_equal(aggregate(self._gv([2, 1, 1]), TrainConfig(aggregator="onehot")), [0, 1, 0])

    def test_softmax_zero_gamma_uniform(self):
        a = aggregate(self._gv([0.3, 5.0, -2.0]), TrainConfig(aggregator="softmax_gamma", gamma=0.0))
        np.testing.assert_allclose(a, 1 / 3)

    def test_softmax_prefers_small_g(self):
        a = aggregate(self._gv([0.0, 1.0]), TrainConfig(aggregator="softmax_gamma", gamma=1.0))
        np.testing.assert_allclose(a, [1 / (1 + np.exp(-1)), np.exp(-1) / (1 + np.exp(-1))])

    def test_uniform(self):
        np.testing.assert_array_equal(aggregate(self._gv([5, 0, 1, 2]), TrainConfig(aggregator="uniform")), 0.25)

    @pytest.mark.parametrize("agg", ["darn", "uniform", "softmax_gamma", "onehot"])
    @given(g=st.lists(st.floats(0, 10), min_size=1, max_size=8))
    def test_sums_to_one(self, agg, g):
        a = aggregate(self._gv(g), TrainConfig(aggregator=agg))
        assert abs(a.sum() - 1.0) <= 1e-12
        assert np.all(a >= 0)

    @given(
        g=st.lists(st.floats(0, 5), min_size=2, max_size=8),
        i=st.integers(0, 7),
        bump=st.floats(0, 3),
        tau=st.floats(0.05, 10),
    )
    def test_raising_a_score_never_raises_its_weight(self, g, i, bump, tau):
        g = np.array(g)
        i = i % g.size
        g2 = g.copy()
        g2[i] += bump
        a = darn_project(-g / tau).alpha[i]
        b = darn_project(-g2 / tau).alpha[i]
        assert b <= a + 1e-12


class TestConfig:
    @pytest.mark.parametrize(
        "kw,field",
        [
            (dict(tau=0.0), "tau"),
            (dict(tau=-1.0), "tau"),
            (dict(aggregator="max"), "aggregator"),
            (dict(aggregator="softmax_gamma", gamma=0.0), "gamma"),
            (dict(gradient_path="both"), "gradient_path"),
            (dict(dropout=1.0), "dropout"),
            (dict(epochs=0), "epochs"),
        ],
    )
    def test_invalid(self, kw, field):
        with pytest.raises(InvalidInputError, match=f"^{field}:"):
            TrainConfig(**kw).validate()

    def test_defaults_valid(self):
        TrainConfig().validate()


class TestStep:
    @pytest.mark.parametrize("task", ["classification", "regression"])
    def test_jacobian_and_envelope_paths_agree(self, task):
        rng = np.random.default_rng(0)
        batches, Xt = _toy_batches(rng, task=task)
        updates = {}
        for path in ("jacobian", "envelope"):
            cfg = TrainConfig(tau=0.5, task=task, gradient_path=path)
            model = _toy_model(3, task)
            opt = make_optimizer("sgd_momentum", model.arrays(), lr=0.01, momentum=0.0)
            before = [a.copy() for a in model.arrays()]
            train_step(model, opt, batches, Xt, cfg, step_seed=[0, 0])
            updates[path] = [a - b for a, b in zip(model.arrays(), before)]
        for a, b in zip(updates["jacobian"], updates["envelope"]):
            np.testing.assert_allclose(a, b, rtol=0, atol=1e-8)

    def test_objective_consistency(self):
        rng = np.random.default_rng(1)
        batches, Xt = _toy_batches(rng)
        cfg = TrainConfig(tau=0.7)
        _, m = step_gradients(_toy_model(3), batches, Xt, cfg, 0)
        ref = float(m.g @ m.alpha + 0.7 * np.linalg.norm(m.alpha))
        assert abs(m.objective - ref) <= 1e-10
        assert m.objective == aggregate_objective(m.g, m.alpha, 0.7)

    def test_single_source(self):
        rng = np.random.default_rng(2)
        batches, Xt = _toy_batches(rng, k=1)
        model = _toy_model(1)
        opt = make_optimizer("sgd_momentum", model.arrays())
        _, m = train_step(model, opt, batches, Xt, TrainConfig(), 0)
        np.testing.assert_array_equal(m.alpha, [1.0])

    def test_single_source_matches_unweighted_adaptation(self):
        # alpha = [1] so both paths reduce to plain single-source training
        rng = np.random.default_rng(2)
        batches, Xt = _toy_batches(rng, k=1)
        g_darn, _ = step_gradients(_toy_model(1), batches, Xt, TrainConfig(), 0)
        g_unif, _ = step_gradients(_toy_model(1), batches, Xt, TrainConfig(aggregator="uniform"), 0)
        for a, b in zip(g_darn, g_unif):
            np.testing.assert_array_equal(a, b)

    def test_non_finite_input_names_domain(self):
        rng = np.random.default_rng(0)
        batches, Xt = _toy_batches(rng)
        X, y = batches[2]
        X = X.copy()
        X[0, 0] = np.nan
        batches[2] = (X, y)
        with pytest.raises(DivergenceError) as exc:
            step_gradients(_toy_model(3), batches, Xt, TrainConfig(), 0)
        assert exc.value.domain == 2

    def test_domain_heads_descend_on_their_loss(self):
        # one small step on a domain head must not increase its classifier loss
        rng = np.random.default_rng(5)
        batches, Xt = _toy_batches(rng)
        model = _toy_model(3)

        def head_loss(i):
            F_s, _ = model.feature_extractor.forward(batches[i][0])
            F_t, _ = model.feature_extractor.forward(Xt)
            logits, _ = model.domain_heads[i].forward(np.vstack([F_s, F_t]))
            return domain_classifier_error(logits, np.r_[np.zeros(len(F_s)), np.ones(len(F_t))])

        grads, _ = step_gradients(model, batches, Xt, TrainConfig(), 0)
        before = [head_loss(i) for i in range(3)]
        offs = model.offsets()
        for i in range(3):
            for j, a in enumerate(model.domain_heads[i].arrays()):
                a -= 1e-3 * grads[offs[2 + i] + j]
        model.bump()
        after = [head_loss(i) for i in range(3)]
        assert all(a <= b for a, b in zip(after, before))


class TestEvaluate:
    def _model_with_bias(self, b):
        model = init_model(2, [3], 2, 0)
        for a in model.arrays():
            a[...] = 0.0
        model.label_head.layers[-1].b[:] = b
        return model

    def test_constant_predictor_balanced(self):
        ds = DomainDataset(np.zeros((10, 2)), np.arange(10) % 2)
        assert evaluate(self._model_with_bias([1.0, 0.0]), ds) == 0.5

    def test_perfect_predictor(self):
        ds = DomainDataset(np.zeros((4, 2)), np.ones(4, dtype=int))
        assert evaluate(self._model_with_bias([0.0, 1.0]), ds) == 1.0

    def test_regression_zero(self):
        model = init_model(2, [3], 1, 0)
        for a in model.arrays():
            a[...] = 0.0
        assert evaluate(model, DomainDataset(np.ones((5, 2)), np.zeros(5)), "regression") == 0.0

    def test_unlabelled(self):
        with pytest.raises(InvalidInputError):
            evaluate(init_model(2, [3], 2, 0), DomainDataset(np.ones((2, 2)), None, labelled=False))


@pytest.fixture(scope="module")
def small_benchmark():
    return make_benchmark(0, m=100)


class TestTrain:
    def test_log_shape_and_simplex(self, small_benchmark):
        _, log = train(small_benchmark, TrainConfig(epochs=3))
        assert [r.epoch for r in log.records] == [1, 2, 3]
        for r in log.records:
            assert r.alpha.shape == (4,)
            assert abs(r.alpha.sum() - 1) < 1e-12
            assert abs(r.alpha_ema.sum() - 1) < 1e-12
            assert 0.0 <= r.eval_metric <= 1.0

    def test_bitwise_deterministic(self, small_benchmark, tmp_path):
        outs = []
        for j in range(2):
            _, log = train(small_benchmark, TrainConfig(epochs=2, seed=4, dropout=0.3))
            log.write_trainlog_csv(tmp_path / f"t{j}.csv")
            log.write_eval_csv(tmp_path / f"e{j}.csv")
            outs.append(((tmp_path / f"t{j}.csv").read_bytes(), (tmp_path / f"e{j}.csv").read_bytes()))
        assert outs[0] == outs[1]

    def test_uniform_alpha_constant(self, small_benchmark):
        _, log = train(small_benchmark, TrainConfig(epochs=2, aggregator="uniform"))
        for r in log.records:
            np.testing.assert_array_equal(r.alpha, 0.25)
            np.testing.assert_array_equal(r.alpha_ema, 0.25)

    def test_ema_starts_at_first_alpha(self, small_benchmark):
        # one step per epoch: the first EMA row is the first observed alpha
        _, log = train(small_benchmark, TrainConfig(epochs=1, batch_size=100))
        np.testing.assert_array_equal(log.records[0].alpha_ema, log.records[0].alpha)

    def test_regression_task(self):
        rng = np.random.default_rng(0)
        w = np.array([1.0, -2.0, 0.5])
        srcs = []
        for i in range(2):
            X = rng.normal(size=(60, 3)) + 0.2 * i
            srcs.append(DomainDataset(X, X @ w, f"s{i}"))
        Xt = rng.normal(size=(60, 3))
        ds = MultiDomainDataset(srcs, DomainDataset(Xt[:30], None, labelled=False), DomainDataset(Xt[30:], Xt[30:] @ w))
        _, log = train(ds, TrainConfig(task="regression", epochs=15, feature_sizes=[8], lr=0.01))
        assert log.records[-1].eval_metric < log.records[0].eval_metric
        assert all(np.all(r.disc >= 0) for r in log.records)

    def test_csv_format(self, small_benchmark, tmp_path):
        _, log = train(small_benchmark, TrainConfig(epochs=1))
        p = tmp_path / "t.csv"
        log.write_trainlog_csv(p)
        raw = p.read_bytes()
        assert b"\r" not in raw
        lines = raw.decode("utf-8").splitlines()
        assert lines[0] == "epoch,domain,alpha,alpha_ema,task_loss,disc"
        assert len(lines) == 1 + 4

    def test_invalid_config_rejected(self, small_benchmark):
        with pytest.raises(InvalidInputError):
            train(small_benchmark, TrainConfig(tau=0))


@pytest.mark.slow
class TestBehaviour:
    @pytest.mark.parametrize("seed", range(3))
    def test_adversary_ema_decreases_first_ten_epochs(self, seed):
        _, log = train(make_benchmark(seed), TrainConfig(seed=seed, epochs=10))
        ema = log.alpha_ema()[:, 3]
        assert np.all(np.diff(ema) <= 0)
        assert ema[-1] < ema[0]

    @pytest.mark.parametrize("seed", range(2))
    def test_degenerate_target_has_smallest_disc(self, seed):
        ds = gen_rotated_gaussians(3, 500, [0, 45, 90, 0], 0.5, seed)
        s0 = ds.sources[0]
        twin = MultiDomainDataset(
            ds.sources, DomainDataset(s0.features, None, "twin", labelled=False), DomainDataset(s0.features, s0.labels, "twin")
        )
        model, _ = train(twin, TrainConfig(seed=seed, epochs=10))
        discs = refit_discs(model, twin, steps=500)
        assert np.argmin(discs) == 0
        # identical rows on both sides: the best classifier outputs 1/2 everywhere
        assert discs[0] == pytest.approx(2 * (1 - np.log(2)), abs=1e-3)
