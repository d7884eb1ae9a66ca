"""
Result files. Every CSV starts with a ``# config_hash=..., seed=...``
comment line; every JSON document carries ``config_hash`` and ``seed``.
"""
import csv
import json
import logging
import math
from pathlib import Path
from typing import Iterable, Sequence

from convergence.fitting import FitSample

SWEEP_COLUMNS = ('H', 'p_b', 'R_observed', 'seed', 'eps')
TRACE_COLUMNS = ('round', 'loss', 'accuracy', 'comm_units', 'energy_j')
CONSTELLATION_COLUMNS = ('round', 'coord', 'i', 'q')


def _provenance_line(config_hash: str, seed: int) -> str:
    return f'# config_hash={config_hash}, seed={seed}\n'


def write_csv(path: Path, columns: Sequence[str], rows: Iterable[Sequence],
              config_hash: str, seed: int) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open('w', newline='', encoding='utf-8') as handle:
        handle.write(_provenance_line(config_hash, seed))
        writer = csv.writer(handle, lineterminator='\n')
        writer.writerow(columns)
        writer.writerows(rows)
    logging.info(f'Wrote {path}')
    return path


def _jsonable(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


def write_json(path: Path, payload: dict, config_hash: str, seed: int) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    document = dict(_jsonable(payload), config_hash=config_hash, seed=seed)
    path.write_text(json.dumps(document, indent=2, sort_keys=True) + '\n',
                    encoding='utf-8')
    logging.info(f'Wrote {path}')
    return path


def read_json(path: Path) -> dict:
    return json.loads(Path(path).read_text(encoding='utf-8'))


def _data_lines(handle):
    for line in handle:
        if not line.startswith('#'):
            yield line


def write_fit_samples(path: Path, samples: Sequence[FitSample],
                      config_hash: str, seed: int) -> Path:
    rows = [(s.local_iterations, s.p_b, s.rounds, s.seed, s.eps) for s in samples]
    return write_csv(path, SWEEP_COLUMNS, rows, config_hash, seed)


def read_fit_samples(path: Path) -> list[FitSample]:
    with Path(path).open(newline='', encoding='utf-8') as handle:
        reader = csv.DictReader(_data_lines(handle))
        return [FitSample(local_iterations=int(row['H']), p_b=float(row['p_b']),
                          rounds=float(row['R_observed']), seed=int(row['seed']),
                          eps=float(row['eps']))
                for row in reader]
