import json
from pathlib import Path

import pytest
from click.testing import CliRunner

from cli import tasks
from cli.commands import cli
from cli.config import load_config, parse_config
from cli.persistence import read_fit_samples, read_json, write_fit_samples, write_json
from cli.runner import TaskRunner
from convergence.bounds import RoundModelConstants, rounds_model
from convergence.fitting import FitSample
from core.errors import ConfigError
from energy.profiles import PROFILES

SMALL_TRAIN = """
[experiment]
seed = 3

[data]
n_samples = 400
n_features = 4

[fl]
n_clients = 4
max_rounds = 3
target_loss = 0.001
"""

JCP_TASK = """
[experiment]
task = "jcp"

[jcp]
a0 = 50.0
b0 = 10.0
c0 = 5.0
q = 0.05
"""


def _write(tmp_path, text, name='experiment.toml'):
    path = tmp_path / name
    path.write_text(text, encoding='utf-8')
    return str(path)


def _field(document):
    with pytest.raises(ConfigError) as info:
        parse_config(document)
    return info.value.field


class TestConfig:

    def test_defaults(self, tmp_path):
        for cfg in (load_config(None), load_config(_write(tmp_path, ''))):
            assert cfg.fl.n_clients == 10
            assert cfg.fl.learning_rate == 0.2
            assert cfg.channel.snr_db == 15.0
            assert cfg.fl_config().channel.tx_scale > 0

    def test_shipped_config_restates_the_defaults(self):
        shipped = load_config(Path(__file__).parents[1] / 'configs' / 'default.toml')
        defaults = load_config(None).with_overrides(task=tasks.TaskKind.PIPELINE)
        assert shipped.config_hash() == defaults.config_hash()

    def test_probability_above_ceiling(self):
        assert _field({'fl': {'p_b': 0.9}}) == 'fl.p_b'

    def test_ideal_channel_lifts_the_ceiling(self):
        parse_config({'fl': {'p_b': 0.9}, 'channel': {'mode': 'ideal'}})

    def test_unknown_key(self):
        assert _field({'fl': {'bogus': 1}}) == 'fl.bogus'

    def test_out_of_domain_value(self):
        assert _field({'fl': {'n_clients': 0}}) == 'fl.n_clients'

    def test_sweep_probabilities(self):
        assert _field({'sweep': {'p_values': [0.5, 0.9]}}) == 'sweep.p_values'

    def test_unknown_profile(self):
        assert _field({'energy': {'profile': 'abacus'}}) == 'energy.profile'

    def test_custom_profile(self):
        custom = PROFILES['large-learner'].model_dump()
        cfg = parse_config({'energy': {'profile': 'rig', 'profiles': {'rig': custom}}})
        assert cfg.energy_config().comp_params() == PROFILES['large-learner']

    def test_local_iteration_box(self):
        assert _field({'jcp': {'h_min': 5, 'h_max': 4}}) == 'jcp.h_max'

    def test_invalid_toml(self, tmp_path):
        with pytest.raises(ConfigError) as info:
            load_config(_write(tmp_path, '[fl\n'))
        assert info.value.field == '<file>'

    def test_hash_ignores_output_location_and_threads(self):
        cfg = load_config(None)
        assert cfg.config_hash() == cfg.with_overrides(out='elsewhere', threads=8).config_hash()
        assert cfg.config_hash() != cfg.with_overrides(seed=1).config_hash()


class TestPersistence:

    def test_fit_samples_survive_the_header_line(self, tmp_path):
        samples = [FitSample(local_iterations=2, p_b=0.5, rounds=17.0, seed=1, eps=0.3)]
        path = write_fit_samples(tmp_path / 'sweep.csv', samples, 'abc', 4)
        assert path.read_text().startswith('# config_hash=abc, seed=4\n')
        assert read_fit_samples(path) == samples


class TestCommand:

    def test_train_outputs_are_byte_identical(self, tmp_path):
        config = _write(tmp_path, SMALL_TRAIN)
        runner = CliRunner()
        first = runner.invoke(cli, ['--config', config, '--out', str(tmp_path / 'a')])
        second = runner.invoke(cli, ['--config', config, '--out', str(tmp_path / 'b'),
                                     '--threads', '3'])
        assert first.exit_code == second.exit_code == 1
        assert isinstance(first.exception, SystemExit)
        trace_a = (tmp_path / 'a' / tasks.TRACE_CSV).read_bytes()
        assert trace_a == (tmp_path / 'b' / tasks.TRACE_CSV).read_bytes()
        assert trace_a.startswith(b'# config_hash=')
        lines = trace_a.decode().splitlines()
        assert lines[1] == 'round,loss,accuracy,comm_units,energy_j'
        assert len(lines) == 2 + 3
        summary = read_json(tmp_path / 'a' / tasks.SUMMARY_JSON)
        assert summary['converged'] is False and summary['rounds'] == 3
        assert summary['seed'] == 3

    def test_constellation_dump(self, tmp_path):
        config = _write(tmp_path, SMALL_TRAIN + '\n[channel]\nmode = "symbol"\n')
        result = CliRunner().invoke(cli, ['--config', config, '--out', str(tmp_path),
                                          '--dump-constellation'])
        assert result.exit_code == 1
        rows = (tmp_path / tasks.CONSTELLATION_CSV).read_text().splitlines()
        assert rows[1] == 'round,coord,i,q'
        assert len(rows) == 2 + 3 * 5

    def test_invalid_configuration_is_a_usage_error(self, tmp_path):
        config = _write(tmp_path, '[fl]\np_b = 0.9\n')
        result = CliRunner().invoke(cli, ['--config', config, '--out', str(tmp_path)])
        assert result.exit_code == 2
        assert 'fl.p_b' in result.output

    def test_unknown_task(self, tmp_path):
        result = CliRunner().invoke(cli, ['--task', 'dance', '--out', str(tmp_path)])
        assert result.exit_code == 2

    def test_jcp_task(self, tmp_path):
        config = _write(tmp_path, JCP_TASK)
        result = CliRunner().invoke(cli, ['--config', config, '--out', str(tmp_path)])
        assert result.exit_code == 0
        document = read_json(tmp_path / tasks.JCP_JSON)
        assert document['config_hash'] == load_config(config).config_hash()
        solution = document['solution']
        assert 0 < solution['p_b'] <= 0.77 + 1e-12
        assert 1 <= solution['local_iterations'] <= 50
        assert document['gap_to_grid'] <= 0.01

    def test_jcp_without_constants(self, tmp_path):
        result = CliRunner().invoke(cli, ['--task', 'jcp', '--out', str(tmp_path)])
        assert result.exit_code == 2
        assert 'jcp.constants' in result.output

    def test_fit_task(self, tmp_path):
        truth = RoundModelConstants(a0=20.0, b0=30.0, c0=15.0, q=0.5)
        samples = [FitSample(local_iterations=h, p_b=p, rounds=rounds_model(h, p, truth))
                   for h in (1, 2, 4, 8) for p in (0.2, 0.5, 0.77)]
        write_fit_samples(tmp_path / tasks.SWEEP_CSV, samples, 'x', 0)
        config = _write(tmp_path, '[experiment]\ntask = "fit"\n[fit]\nq = 0.5\n')
        result = CliRunner().invoke(cli, ['--config', config, '--out', str(tmp_path)])
        assert result.exit_code == 0
        fitted = read_json(tmp_path / tasks.FIT_JSON)
        assert fitted['a0'] == pytest.approx(20.0, rel=1e-6)
        assert fitted['n_samples'] == 12

    def test_sweep_that_never_converges_flags_the_fit(self, tmp_path):
        config = _write(tmp_path, """
[experiment]
task = "pipeline"
seed = 3

[data]
n_samples = 200
n_features = 4

[fl]
n_clients = 2
max_rounds = 1
target_loss = 1e-6

[sweep]
h_values = [1, 2]
p_values = [0.5, 0.77]

[fit]
q = 0.1
""")
        result = CliRunner().invoke(cli, ['--config', config, '--out', str(tmp_path)])
        assert result.exit_code == 1
        assert read_fit_samples(tmp_path / tasks.SWEEP_CSV) == []
        fitted = read_json(tmp_path / tasks.FIT_JSON)
        assert fitted['fitted'] is False and fitted['n_samples'] == 0
        assert not (tmp_path / tasks.JCP_JSON).exists()

    def test_jcp_refuses_a_failed_fit(self, tmp_path):
        write_json(tmp_path / tasks.FIT_JSON, {'fitted': False, 'n_samples': 0}, 'x', 0)
        result = CliRunner().invoke(cli, ['--task', 'jcp', '--out', str(tmp_path)])
        assert result.exit_code == 2
        assert 'jcp.constants' in result.output

    def test_phy_check_task(self, tmp_path):
        config = _write(tmp_path, """
[experiment]
task = "phy-check"

[phy]
n_clients = 2
dimension = 2
p_values = [0.5]
modem_clients = 2
modem_bits = 2
""")
        result = CliRunner().invoke(cli, ['--config', config, '--out', str(tmp_path)])
        assert result.exit_code == 0
        document = json.loads((tmp_path / tasks.PHY_JSON).read_text())
        assert document['passed'] is True
        assert len(document['checks']) == 5


@pytest.mark.slow
def test_pipeline_writes_every_artifact(tmp_path):
    cfg = parse_config({
        'data': {'separation': 4.0},
        'channel': {'snr_db': 25.0},
        'sweep': {'h_values': [1, 2, 4, 8], 'p_values': [0.4, 0.55, 0.77]},
        'jcp': {'payload_dimension': 61_706},
    })
    assert TaskRunner(cfg, tmp_path).run(tasks.TaskKind.PIPELINE)
    for name in (tasks.SWEEP_CSV, tasks.FIT_JSON, tasks.JCP_JSON):
        assert (tmp_path / name).exists()
    assert len(read_fit_samples(tmp_path / tasks.SWEEP_CSV)) == 12
    document = read_json(tmp_path / tasks.JCP_JSON)
    assert document['optimized_to_max_energy_ratio'] < 1.0
    assert document['gap_to_grid'] <= 0.01
