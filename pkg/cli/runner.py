import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional

from channel.channel import max_probability
from cli import tasks
from cli.config import ExperimentConfig
from cli.persistence import (
    CONSTELLATION_COLUMNS,
    TRACE_COLUMNS,
    read_fit_samples,
    read_json,
    write_csv,
    write_fit_samples,
    write_json,
)
from cli.phy_check import run_phy_check
from cli.tasks import TaskKind
from convergence.bounds import RoundModelConstants, chi
from convergence.fitting import FitResult, FitSample, fit_constants
from core.errors import ConfigError, IllPosedFitError
from core.rng import RngStreams
from fl.trainer import run_training
from jcp.problem import JcpProblem, energy_at
from jcp.solver import grid_search, optimized_energy_ratio, solve_jcp
from learnkit.models import build_model
from quantizer.quantizer import ScaleRegime, estimate_q


class TaskRunner:
    """
    Executes the configured task and writes its artifacts to ``out_dir``.
    Every public task method returns whether everything it ran converged.
    """

    def __init__(self, cfg: ExperimentConfig, out_dir: Path,
                 dump_constellation: bool = False):
        self.cfg = cfg
        self.out_dir = Path(out_dir)
        self.dump_constellation = dump_constellation
        self.streams = RngStreams(cfg.seed)
        self.config_hash = cfg.config_hash()

    def _path(self, name: str) -> Path:
        return self.out_dir / name

    def _csv(self, name, columns, rows):
        return write_csv(self._path(name), columns, rows, self.config_hash, self.cfg.seed)

    def _json(self, name, payload):
        return write_json(self._path(name), payload, self.config_hash, self.cfg.seed)

    def run(self, task: Optional[TaskKind] = None) -> bool:
        task = TaskKind(task or self.cfg.task)
        logging.info(f'Running task {task.value} (seed {self.cfg.seed}, '
                     f'config {self.config_hash[:12]})')
        handlers = {
            TaskKind.TRAIN: self.train,
            TaskKind.SWEEP: lambda: self.sweep()[0],
            TaskKind.FIT: lambda: self.fit()[0],
            TaskKind.JCP: self.jcp,
            TaskKind.PHY_CHECK: self.phy_check,
            TaskKind.PIPELINE: self.pipeline,
        }
        return handlers[task]()

    def train(self) -> bool:
        fl_cfg = self.cfg.fl_config()
        sink = [] if self.dump_constellation else None
        trace = run_training(fl_cfg, sink)
        self._csv(tasks.TRACE_CSV, TRACE_COLUMNS, trace.rows())
        if sink is not None:
            self._csv(tasks.CONSTELLATION_CSV, CONSTELLATION_COLUMNS, sink)
        final = trace.final
        self._json(tasks.SUMMARY_JSON, {
            'scheme': fl_cfg.scheme.value,
            'rounds': final.round,
            'final_loss': final.loss,
            'final_accuracy': final.accuracy,
            'total_energy_j': final.energy_j,
            'total_comm_units': final.comm_units,
            'converged': trace.converged,
            'rounds_to_target': trace.rounds_to_target,
        })
        return trace.converged

    def _sweep_cell(self, cell) -> tuple[tuple, Optional[FitSample]]:
        h, p_b, seed = cell
        fl_cfg = self.cfg.fl_config(local_iterations=h, p_b=p_b, seed=seed, threads=1)
        trace = run_training(fl_cfg)
        if not trace.converged:
            return cell, None
        return cell, FitSample(local_iterations=h, p_b=p_b,
                               rounds=float(trace.rounds_to_target), seed=seed,
                               eps=fl_cfg.target_loss)

    def sweep(self) -> tuple[bool, list[FitSample]]:
        sw = self.cfg.sweep
        cells = sorted((h, p, s) for h in sw.h_values for p in sw.p_values for s in sw.seeds)
        threads = self.cfg.experiment.threads or 1
        logging.info(f'Sweeping {len(cells)} cells on {threads} threads')
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(self._sweep_cell, cells))
        samples = []
        for cell, sample in outcomes:
            if sample is None:
                logging.warning(f'Dropping cell H={cell[0]}, p_b={cell[1]}, '
                                f'seed={cell[2]}: target not reached')
                continue
            samples.append(sample)
        write_fit_samples(self._path(tasks.SWEEP_CSV), samples,
                          self.config_hash, self.cfg.seed)
        return len(samples) == len(cells), samples

    def quantizer_constant(self) -> float:
        if self.cfg.fit.q is not None:
            return self.cfg.fit.q
        estimate = estimate_q(self.cfg.fl.bits, ScaleRegime.COMMON, self.cfg.fit.q_trials,
                              self.streams.generator('q-estimate'),
                              n_clients=self.cfg.fl.n_clients)
        logging.info(f'Estimated q={estimate.q:.5f} (+/- {estimate.stderr:.2g})')
        return estimate.q

    def fit(self, samples: Optional[list[FitSample]] = None
            ) -> tuple[bool, Optional[FitResult]]:
        if samples is None:
            source = Path(self.cfg.fit.samples) if self.cfg.fit.samples \
                else self._path(tasks.SWEEP_CSV)
            if not source.exists():
                raise ConfigError('fit.samples', f'no sample file at {source}')
            samples = read_fit_samples(source)
        try:
            result = fit_constants(samples, self.quantizer_constant())
        except IllPosedFitError as exc:
            logging.warning(f'Fit skipped: {exc}')
            self._json(tasks.FIT_JSON, {'fitted': False, 'error': str(exc),
                                        'n_samples': len(samples)})
            return False, None
        c = result.constants
        self._json(tasks.FIT_JSON, {
            'fitted': True,
            'a0': c.a0, 'b0': c.b0, 'c0': c.c0, 'q': c.q,
            'residual_norm': result.residual_norm,
            'iterations': result.iterations,
            'residual_history': result.residual_history,
            'n_samples': len(samples),
        })
        return True, result

    def _constants(self) -> RoundModelConstants:
        jc = self.cfg.jcp
        if jc.has_constants:
            return RoundModelConstants(a0=jc.a0, b0=jc.b0, c0=jc.c0, q=jc.q)
        source = Path(jc.constants) if jc.constants else self._path(tasks.FIT_JSON)
        if not source.exists():
            raise ConfigError('jcp.constants', f'no fitted constants at {source}')
        fitted = read_json(source)
        if not fitted.get('fitted', True):
            raise ConfigError('jcp.constants', f'{source} holds a failed fit')
        return RoundModelConstants(a0=fitted['a0'], b0=fitted['b0'],
                                   c0=fitted['c0'], q=fitted['q'])

    def build_problem(self, constants: RoundModelConstants) -> JcpProblem:
        fl_cfg = self.cfg.fl_config()
        data = self.cfg.data
        dimension = self.cfg.jcp.payload_dimension or build_model(
            data.learner, data.n_features, data.n_classes, data.n_hidden).dimension
        channel = fl_cfg.channel
        return JcpProblem.from_models(constants, fl_cfg.comm_params(dimension),
                                      fl_cfg.energy.comp_params(),
                                      p_max=max_probability(channel),
                                      h_min=self.cfg.jcp.h_min, h_max=self.cfg.jcp.h_max)

    def jcp(self, constants: Optional[RoundModelConstants] = None) -> bool:
        jc = self.cfg.jcp
        prob = self.build_problem(constants or self._constants())
        solution = solve_jcp(prob, jc.gamma0, jc.xi, jc.iota)
        grid = grid_search(prob, jc.grid_resolution)
        ratio = optimized_energy_ratio(prob, solution)
        logging.info(f'Optimized energy is {ratio:.3f}x the energy at p_max')
        self._json(tasks.JCP_JSON, {
            'solution': solution.to_dict(),
            'grid': {'p_b': grid.p_b, 'local_iterations': grid.local_iterations,
                     'objective': grid.objective},
            'gap_to_grid': solution.objective / grid.objective - 1.0,
            'energy_j': energy_at(solution.phi, prob),
            'optimized_to_max_energy_ratio': ratio,
            'chi': chi(solution.p_b, prob.q),
            'problem': prob.model_dump(),
        })
        return solution.converged

    def phy_check(self) -> bool:
        phy = self.cfg.phy
        results = run_phy_check(self.cfg.channel_config(), self.streams,
                                phy.n_clients, phy.dimension, phy.trials,
                                phy.p_values, phy.modem_clients, phy.modem_bits,
                                phy.power_draws)
        passed = all(r.passed for r in results)
        self._json(tasks.PHY_JSON, {'passed': passed,
                                    'checks': [r.to_dict() for r in results]})
        return passed

    def pipeline(self) -> bool:
        swept, samples = self.sweep()
        fitted, result = self.fit(samples)
        if not fitted:
            logging.warning('No fitted constants; skipping the jcp step')
            return False
        solved = self.jcp(result.constants)
        return swept and solved


def run(cfg: ExperimentConfig, out_dir: Path, dump_constellation: bool = False) -> int:
    """Runs the configured task; returns the process exit status."""
    converged = TaskRunner(cfg, out_dir, dump_constellation).run()
    if not converged:
        logging.warning('Not every requested task converged')
    return 0 if converged else 1
