import math

import numpy as np
import pytest

from channel.channel import ChannelConfig, ChannelMode, max_probability
from core.errors import DivergedClientError, ShapeError
from core.rng import RngStreams
from energy.models import round_energy
from energy.profiles import PROFILES
from fl.accounting import RoundAccountant, comm_units
from fl.config import DataConfig, FlConfig, Scheme, StopRule
from fl.trainer import (
    ClientData,
    FederatedTrainer,
    RoundRecord,
    TrainingTrace,
    global_update,
    local_accumulate,
    run_training,
)
from learnkit.datasets import (
    BatchSampler,
    SyntheticSpec,
    generate_regression,
    generate_synthetic,
)
from learnkit.models import build_model, gradient, sgd_step
from learnkit.partition import ClientShard

DIVISIBLE_DATA = DataConfig(n_samples=1000, n_features=4, separation=4.0)


@pytest.fixture
def client():
    ds = generate_synthetic(SyntheticSpec(n_features=4, n_samples=200, seed=1))
    return ClientData(ClientShard(client_id=0, indices=np.arange(100), batch_size=16), ds)


@pytest.fixture
def model():
    return build_model('logistic', 4, 2)


@pytest.fixture
def params(model):
    start = model.init_params()
    return start.replace(np.random.default_rng(2).normal(size=start.dimension))


def _stream():
    return RngStreams(3).generator('client', 0, 0)


class TestLocalAccumulate:

    def test_single_step_is_the_scaled_batch_gradient(self, client, model, params):
        out = local_accumulate(model, client, params, 1, 0.1, _stream())
        sampler = BatchSampler(client.shard.indices, 16)
        sampler.start_round(_stream())
        batch = client.dataset.subset(sampler.next_batch())
        np.testing.assert_array_equal(out, 0.1 * gradient(model, params, batch))

    def test_two_steps_unrolled(self, client, model, params):
        out = local_accumulate(model, client, params, 2, 0.1, _stream())
        sampler = BatchSampler(client.shard.indices, 16)
        sampler.start_round(_stream())
        g1 = gradient(model, params, client.dataset.subset(sampler.next_batch()))
        g2 = gradient(model, sgd_step(params, g1, 0.1),
                      client.dataset.subset(sampler.next_batch()))
        np.testing.assert_array_equal(out, 0.1 * (np.zeros(params.dimension) + g1 + g2))

    def test_zero_learning_rate_gives_a_zero_update(self, client, model, params):
        out = local_accumulate(model, client, params, 3, 0.0, _stream())
        np.testing.assert_array_equal(out, np.zeros(params.dimension))

    def test_single_client_equals_plain_sgd(self, client, model, params):
        update = local_accumulate(model, client, params, 4, 0.1, _stream(), full_batch=True)
        merged = global_update(params, update, server_scale=1.0)
        reference = params
        shard = client.dataset.subset(client.shard.indices)
        for _ in range(4):
            reference = sgd_step(reference, gradient(model, reference, shard), 0.1)
        np.testing.assert_allclose(merged.vector, reference.vector, rtol=1e-12, atol=1e-14)

    def test_non_finite_gradient(self):
        ds = generate_regression(3, 50, 0.1, seed=0)
        linear = build_model('linear', 3)
        broken = linear.init_params().replace(np.full(4, np.nan))
        shard = ClientData(ClientShard(client_id=5, indices=np.arange(50), batch_size=8), ds)
        with pytest.raises(DivergedClientError) as info:
            local_accumulate(linear, shard, broken, 2, 0.1, _stream(), round_index=9)
        assert (info.value.client_id, info.value.round_index) == (5, 9)


class TestGlobalUpdate:

    def test_zero_aggregate_keeps_the_model(self, params):
        np.testing.assert_array_equal(
            global_update(params, np.zeros(params.dimension), 1.0).vector, params.vector)

    def test_server_scale(self, params):
        delta = np.ones(params.dimension)
        np.testing.assert_allclose(global_update(params, delta, 2.0).vector,
                                   params.vector - 2.0)

    def test_shape_mismatch(self, params):
        with pytest.raises(ShapeError):
            global_update(params, np.zeros(params.dimension + 1), 1.0)


class TestConfigAndAccounting:

    def test_probability_above_ceiling(self):
        with pytest.raises(ValueError):
            FlConfig(p_b=0.9)

    def test_ceiling_does_not_bind_baselines_or_ideal_channels(self):
        FlConfig(p_b=0.9, scheme=Scheme.FEDAVG)
        FlConfig(p_b=0.9, channel=ChannelConfig.from_operating_point(mode=ChannelMode.IDEAL))

    def test_unknown_learner(self):
        with pytest.raises(ValueError):
            DataConfig(learner='forest')

    def test_over_the_air_round_is_one_unit(self):
        assert comm_units(Scheme.ESOAFL, 10, 1000, 4) == 1.0

    def test_baseline_units(self):
        assert comm_units(Scheme.FEDAVG, 10, 1000, 4) == pytest.approx(
            10 * 1000 * 32 / 5.115 / 500)
        assert comm_units(Scheme.FEDPAQ, 10, 1000, 4) == pytest.approx(
            10 * 1000 * 4 / 5.115 / 500)

    def test_ideal_channel_energy_is_charged_at_the_ceiling(self):
        cfg = FlConfig(p_b=1.0, channel=ChannelConfig.from_operating_point(mode=ChannelMode.IDEAL))
        comm = cfg.comm_params(100)
        cp = PROFILES['small-learner']
        expected = round_energy(max_probability(cfg.channel), cfg.local_iterations, comm, cp)
        assert RoundAccountant(cfg, comm, cp).energy_j == pytest.approx(expected)

    def test_trace_rounds_must_increase(self):
        trace = TrainingTrace(scheme=Scheme.FEDAVG)
        trace.append(RoundRecord(round=1, loss=1.0, accuracy=0.5, comm_units=1, energy_j=1))
        with pytest.raises(ShapeError):
            trace.append(RoundRecord(round=1, loss=1.0, accuracy=0.5, comm_units=2, energy_j=2))


class TestTraining:

    def test_runs_are_reproducible(self, make_fl_config):
        cfg = make_fl_config()
        np.testing.assert_array_equal(run_training(cfg).losses, run_training(cfg).losses)

    def test_client_threads_do_not_change_results(self, make_fl_config):
        serial = run_training(make_fl_config(threads=1))
        threaded = run_training(make_fl_config(threads=4))
        np.testing.assert_array_equal(serial.losses, threaded.losses)

    def test_ideal_infinite_precision_reduces_to_fedavg(self, make_fl_config):
        air = make_fl_config(mode=ChannelMode.IDEAL, scheme=Scheme.ESOAFL,
                             infinite_precision=True, n_clients=10, max_rounds=50,
                             data=DIVISIBLE_DATA)
        exact = make_fl_config(mode=ChannelMode.IDEAL, scheme=Scheme.FEDAVG,
                               n_clients=10, max_rounds=50, data=DIVISIBLE_DATA)
        np.testing.assert_array_equal(run_training(air).losses, run_training(exact).losses)

    def test_full_batch_fedavg_descends_monotonically(self, make_fl_config):
        cfg = make_fl_config(scheme=Scheme.FEDAVG, n_clients=10, local_iterations=1,
                             learning_rate=0.1, full_batch=True, max_rounds=30,
                             data=DIVISIBLE_DATA)
        assert np.all(np.diff(run_training(cfg).losses) <= 1e-12)

    def test_over_the_air_counters(self, make_fl_config):
        cfg = make_fl_config(max_rounds=5)
        trainer = FederatedTrainer(cfg)
        trace = trainer.run()
        assert [r.comm_units for r in trace.records] == [1.0, 2.0, 3.0, 4.0, 5.0]
        per_round = round_energy(cfg.p_b, cfg.local_iterations,
                                 cfg.comm_params(trainer.model.dimension),
                                 PROFILES['small-learner'])
        assert trace.final.energy_j == pytest.approx(5 * per_round)

    def test_baseline_counters(self, make_fl_config):
        cfg = make_fl_config(scheme=Scheme.FEDAVG, max_rounds=3)
        trace = run_training(cfg)
        assert trace.records[0].comm_units == pytest.approx(
            comm_units(Scheme.FEDAVG, 4, 10, cfg.bits))

    def test_quantized_over_the_air_training_learns(self, make_fl_config):
        trace = run_training(make_fl_config(max_rounds=30))
        assert np.all(np.isfinite(trace.losses))
        assert trace.final.loss < math.log(2)

    def test_fedpaq_learns(self, make_fl_config):
        trace = run_training(make_fl_config(scheme=Scheme.FEDPAQ, max_rounds=30))
        assert trace.final.loss < math.log(2)

    def test_symbol_mode_dumps_the_constellation(self, make_fl_config):
        sink = []
        trace = run_training(make_fl_config(mode=ChannelMode.SYMBOL, max_rounds=3), sink)
        assert len(trace) == 3
        assert len(sink) == 3 * 5
        assert {row[0] for row in sink} == {1, 2, 3}

    def test_loss_target_stops_early(self, make_fl_config):
        trace = run_training(make_fl_config(scheme=Scheme.FEDAVG, target_loss=0.6,
                                            max_rounds=50))
        assert trace.converged
        assert trace.rounds_to_target == len(trace)
        assert trace.final.loss <= 0.6

    def test_gradient_norm_rule(self, make_fl_config):
        trace = run_training(make_fl_config(stop_rule=StopRule.GRAD_NORM, target_loss=10.0))
        assert trace.converged and trace.rounds_to_target == 1

    def test_unmet_target(self, make_fl_config):
        trace = run_training(make_fl_config(max_rounds=2))
        assert not trace.converged and trace.rounds_to_target is None

    def test_regression_has_no_accuracy(self, make_fl_config):
        data = DataConfig(learner='linear', n_features=4, n_samples=400)
        trace = run_training(make_fl_config(data=data, max_rounds=3))
        assert math.isnan(trace.final.accuracy)
        assert np.all(np.isfinite(trace.losses))


@pytest.mark.slow
def test_over_the_air_needs_at_most_twice_the_rounds_of_fedavg():
    data = DataConfig(separation=4.0)

    def rounds(scheme, seed):
        trace = run_training(FlConfig(scheme=scheme, seed=seed, target_loss=0.15,
                                      data=data))
        assert trace.converged
        return trace.rounds_to_target

    seeds = range(5)
    air = np.median([rounds(Scheme.ESOAFL, s) for s in seeds])
    exact = np.median([rounds(Scheme.FEDAVG, s) for s in seeds])
    assert air <= 2 * exact
