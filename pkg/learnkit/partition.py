from dataclasses import dataclass

import numpy as np

from core.errors import InvalidSpecError
from learnkit.datasets import Dataset


@dataclass(frozen=True)
class ClientShard:
    client_id: int
    indices: np.ndarray
    batch_size: int

    def __len__(self):
        return len(self.indices)


def partition_non_iid(ds: Dataset, n_clients: int, non_iid_level: float,
                      seed: int, batch_size: int = 32) -> list[ClientShard]:
    """
    Splits a classification dataset into equal, disjoint client shards.

    Client ``k`` takes a ``non_iid_level`` fraction of its shard from its
    dominant label ``k mod n_classes``; the rest of every shard is dealt
    uniformly at random from the samples left over. Samples that do not fit
    into ``n_clients`` equal shards are discarded.

    Parameters
    ----------
    ds : Dataset
        Classification dataset with at least ``n_clients`` samples.
    n_clients : int
        Number of shards K.
    non_iid_level : float
        Fraction in [0, 1] of each shard concentrated on one label.
    seed : int
        Seed for the shuffles.
    batch_size : int
        Mini-batch size recorded on every shard.

    Returns
    -------
    list[ClientShard]
        One shard per client, ordered by client id.

    Raises
    ------
    InvalidSpecError
        If the level is outside [0, 1], there are too few samples, or a
        dominant label cannot fill its quota.
    """
    if not 0.0 <= non_iid_level <= 1.0:
        raise InvalidSpecError(
            f'Non-IID level must lie in [0, 1], got {non_iid_level}.')
    if n_clients < 1:
        raise InvalidSpecError(f'Need at least one client, got {n_clients}.')
    if ds.n_samples < n_clients:
        raise InvalidSpecError(
            f'{ds.n_samples} samples cannot feed {n_clients} clients.')
    if not ds.is_classification:
        raise InvalidSpecError('Non-IID partitioning needs class labels.')

    rng = np.random.default_rng(seed)
    shard_size = ds.n_samples // n_clients
    dominant_count = int(round(non_iid_level * shard_size))

    pools = [rng.permutation(np.flatnonzero(ds.labels == label))
             for label in range(ds.n_classes)]
    cursors = [0] * ds.n_classes
    taken = np.zeros(ds.n_samples, dtype=bool)
    dominant_parts = []
    for client_id in range(n_clients):
        label = client_id % ds.n_classes
        start = cursors[label]
        part = pools[label][start:start + dominant_count]
        if len(part) < dominant_count:
            raise InvalidSpecError(
                f'Label {label} has too few samples for a dominant share of '
                f'{dominant_count} per client.')
        cursors[label] += dominant_count
        taken[part] = True
        dominant_parts.append(part)

    rest = rng.permutation(np.flatnonzero(~taken))
    fill = shard_size - dominant_count
    shards = []
    for client_id, part in enumerate(dominant_parts):
        extra = rest[client_id * fill:(client_id + 1) * fill]
        indices = np.sort(np.concatenate([part, extra]))
        shards.append(ClientShard(client_id=client_id, indices=indices,
                                  batch_size=batch_size))
    return shards


def partition_iid(n_samples: int, n_clients: int, seed: int,
                  batch_size: int = 32) -> list[ClientShard]:
    """Equal random shards, for regression data or a fully IID split."""
    if n_clients < 1 or n_samples < n_clients:
        raise InvalidSpecError(
            f'{n_samples} samples cannot feed {n_clients} clients.')
    order = np.random.default_rng(seed).permutation(n_samples)
    shard_size = n_samples // n_clients
    return [ClientShard(client_id=k,
                        indices=np.sort(order[k * shard_size:(k + 1) * shard_size]),
                        batch_size=batch_size)
            for k in range(n_clients)]
