import itertools
import math

import numpy as np
import pytest
from scipy import stats

from core.errors import InvalidSpecError, ShapeError
from learnkit.datasets import (
    BatchSampler,
    Dataset,
    SyntheticSpec,
    generate_regression,
    generate_synthetic,
    train_test_split,
)
from learnkit.models import accuracy, build_model, gradient, loss, sgd_step
from learnkit.partition import partition_iid, partition_non_iid


def _numeric_gradient(model, params, batch, step=1e-6):
    grad = np.zeros(params.dimension)
    for i in range(params.dimension):
        shift = np.zeros(params.dimension)
        shift[i] = step
        up = loss(model, params.replace(params.vector + shift), batch)
        down = loss(model, params.replace(params.vector - shift), batch)
        grad[i] = (up - down) / (2 * step)
    return grad


def _learner(kind, seed, n_samples=20):
    if kind == 'linear':
        return build_model(kind, 3), generate_regression(3, n_samples, 0.1, seed=seed)
    batch = generate_synthetic(SyntheticSpec(n_classes=3, n_features=3,
                                             n_samples=n_samples, seed=seed))
    return build_model(kind, 3, 3, n_hidden=4), batch


def _random_params(model, rng, spread=0.5):
    params = model.init_params(rng)
    return params.replace(params.vector + spread * rng.standard_normal(params.dimension))


class TestDataset:

    def test_rejects_ragged_labels(self):
        with pytest.raises(ShapeError):
            Dataset(features=np.zeros((3, 2)), labels=np.zeros(2, dtype=int), n_classes=2)

    def test_rejects_labels_outside_class_range(self):
        with pytest.raises(InvalidSpecError):
            Dataset(features=np.zeros((2, 2)), labels=np.array([0, 2]), n_classes=2)

    def test_rejects_non_finite_features(self):
        with pytest.raises(InvalidSpecError):
            Dataset(features=np.array([[np.nan, 0.0]]), labels=np.array([0]), n_classes=2)

    def test_synthetic_data_is_reproducible_and_balanced(self):
        spec = SyntheticSpec(n_classes=3, n_features=5, n_samples=300, seed=4)
        a, b = generate_synthetic(spec), generate_synthetic(spec)
        np.testing.assert_array_equal(a.features, b.features)
        np.testing.assert_array_equal(a.labels, b.labels)
        np.testing.assert_array_equal(a.label_histogram(), [100, 100, 100])

    def test_synthetic_rejects_empty_spec(self):
        with pytest.raises(InvalidSpecError):
            generate_synthetic(SyntheticSpec(n_samples=0))

    def test_split_sizes_and_disjointness(self):
        ds = generate_synthetic(SyntheticSpec(n_samples=100, seed=1))
        train, test = train_test_split(ds, 0.2, seed=3)
        assert (train.n_samples, test.n_samples) == (80, 20)
        rows = {tuple(r) for r in train.features} & {tuple(r) for r in test.features}
        assert not rows


class TestLearners:

    @pytest.mark.parametrize('kind', ['linear', 'logistic', 'mlp'])
    def test_gradient_matches_finite_differences(self, kind):
        rng = np.random.default_rng(0)
        for seed in range(100):
            model, batch = _learner(kind, seed)
            params = _random_params(model, rng)
            np.testing.assert_allclose(gradient(model, params, batch),
                                       _numeric_gradient(model, params, batch, step=1e-5),
                                       rtol=1e-4, atol=1e-7)

    def test_zero_weights_give_ln_two(self):
        batch = generate_synthetic(SyntheticSpec(n_features=3, n_samples=50, seed=8))
        model = build_model('logistic', 3, 2)
        assert loss(model, model.init_params(), batch) == pytest.approx(math.log(2.0), rel=1e-12)

    def test_logistic_loss_is_midpoint_convex(self, rng):
        model, batch = _learner('logistic', 3)
        for _ in range(100):
            a, b = _random_params(model, rng, 2.0), _random_params(model, rng, 2.0)
            mid = a.replace((a.vector + b.vector) / 2)
            ends = (loss(model, a, batch) + loss(model, b, batch)) / 2
            assert loss(model, mid, batch) <= ends + 1e-12

    @pytest.mark.parametrize('kind', ['logistic', 'mlp'])
    def test_cross_entropy_is_non_negative(self, kind, rng):
        model, batch = _learner(kind, 4)
        assert all(loss(model, _random_params(model, rng, 3.0), batch) >= 0.0 for _ in range(100))

    def test_minibatch_gradient_is_drawn_with_the_given_generator(self):
        model, batch = _learner('logistic', 5)
        params = _random_params(model, np.random.default_rng(1))
        drawn = gradient(model, params, batch, np.random.default_rng(6), batch_size=4)
        rows = np.random.default_rng(6).choice(batch.n_samples, 4, replace=False)
        np.testing.assert_allclose(drawn, gradient(model, params, batch.subset(rows)))

    def test_minibatch_gradients_average_to_the_full_gradient(self):
        model, batch = _learner('logistic', 6, n_samples=6)
        params = _random_params(model, np.random.default_rng(2))
        pairs = [batch.subset(np.array(pair)) for pair in itertools.combinations(range(6), 2)]
        np.testing.assert_allclose(np.mean([gradient(model, params, p) for p in pairs], axis=0),
                                   gradient(model, params, batch), rtol=1e-12, atol=1e-15)

    def test_batch_size_covering_the_batch_is_the_full_gradient(self, rng):
        model, batch = _learner('linear', 7)
        params = _random_params(model, rng)
        np.testing.assert_array_equal(gradient(model, params, batch, rng, batch.n_samples),
                                      gradient(model, params, batch))

    def test_mlp_needs_a_generator(self):
        with pytest.raises(InvalidSpecError):
            build_model('mlp', 3, 2).init_params()

    def test_unknown_learner_kind(self):
        with pytest.raises(InvalidSpecError):
            build_model('forest', 3, 2)

    def test_sgd_step_rejects_non_positive_rate(self):
        model = build_model('logistic', 2, 2)
        params = model.init_params()
        with pytest.raises(InvalidSpecError):
            sgd_step(params, np.zeros(params.dimension), 0.0)

    def test_sgd_step_rejects_mismatched_gradient(self):
        params = build_model('logistic', 2, 2).init_params()
        with pytest.raises(ShapeError):
            sgd_step(params, np.zeros(params.dimension + 1), 0.1)

    def test_gradient_descent_separates_well_separated_classes(self):
        ds = generate_synthetic(SyntheticSpec(n_features=10, n_samples=1000,
                                              separation=6.0, seed=5))
        model = build_model('logistic', 10, 2)
        params = model.init_params()
        for _ in range(200):
            params = sgd_step(params, gradient(model, params, ds), 0.5)
        assert accuracy(model, params, ds) >= 0.98


class TestPartition:

    def test_non_iid_shards_are_equal_and_disjoint(self):
        ds = generate_synthetic(SyntheticSpec(n_samples=1000, seed=0))
        shards = partition_non_iid(ds, 10, 0.8, seed=1)
        assert all(len(s) == 100 for s in shards)
        joined = np.concatenate([s.indices for s in shards])
        assert len(np.unique(joined)) == len(joined)

    def test_dominant_label_fraction(self):
        ds = generate_synthetic(SyntheticSpec(n_samples=1000, seed=0))
        for shard in partition_non_iid(ds, 10, 0.8, seed=1):
            counts = np.bincount(ds.labels[shard.indices], minlength=2)
            assert counts[shard.client_id % 2] >= 80

    def test_iid_level_matches_the_global_histogram(self):
        ds = generate_synthetic(SyntheticSpec(n_samples=1000, seed=0))
        table = [ds.subset(s.indices).label_histogram()
                 for s in partition_non_iid(ds, 10, 0.0, seed=4)]
        assert stats.chi2_contingency(table).pvalue > 1e-3

    def test_thirty_percent_level_with_ten_clients(self):
        ds = generate_synthetic(SyntheticSpec(n_classes=10, n_samples=1000, seed=0))
        for shard in partition_non_iid(ds, 10, 0.3, seed=2):
            counts = ds.subset(shard.indices).label_histogram()
            assert counts.max() >= 0.3 * len(shard)

    def test_full_level_gives_single_label_shards(self):
        ds = generate_synthetic(SyntheticSpec(n_classes=10, n_samples=1000, seed=0))
        for shard in partition_non_iid(ds, 10, 1.0, seed=3):
            assert set(ds.labels[shard.indices]) == {shard.client_id}

    @pytest.mark.parametrize('n_clients', [1, 3, 7, 10])
    @pytest.mark.parametrize('level', [0.0, 0.3, 0.5])
    def test_shards_are_disjoint_and_cover_all_but_the_remainder(self, n_clients, level):
        ds = generate_synthetic(SyntheticSpec(n_samples=1000, seed=0))
        shards = partition_non_iid(ds, n_clients, level, seed=5)
        size = 1000 // n_clients
        assert [len(s) for s in shards] == [size] * n_clients
        joined = np.concatenate([s.indices for s in shards])
        assert len(np.unique(joined)) == n_clients * size
        assert joined.min() >= 0 and joined.max() < 1000

    def test_level_outside_unit_interval(self):
        ds = generate_synthetic(SyntheticSpec(n_samples=100, seed=0))
        with pytest.raises(InvalidSpecError):
            partition_non_iid(ds, 4, 1.5, seed=0)

    def test_too_few_samples(self):
        ds = generate_synthetic(SyntheticSpec(n_samples=4, seed=0))
        with pytest.raises(InvalidSpecError):
            partition_non_iid(ds, 10, 0.0, seed=0)

    def test_iid_partition_discards_remainder(self):
        shards = partition_iid(103, 10, seed=2)
        assert [len(s) for s in shards] == [10] * 10
        assert len(np.unique(np.concatenate([s.indices for s in shards]))) == 100


class TestBatchSampler:

    def test_batches_cover_a_pass_without_repeats(self):
        sampler = BatchSampler(np.arange(10, 20), batch_size=5)
        sampler.start_round(np.random.default_rng(0))
        seen = np.concatenate([sampler.next_batch(), sampler.next_batch()])
        np.testing.assert_array_equal(np.sort(seen), np.arange(10, 20))

    def test_batch_size_capped_by_shard(self):
        sampler = BatchSampler(np.arange(3), batch_size=32)
        sampler.start_round(np.random.default_rng(0))
        assert len(sampler.next_batch()) == 3

    def test_sampling_needs_a_round(self):
        with pytest.raises(RuntimeError):
            BatchSampler(np.arange(3), 2).next_batch()
