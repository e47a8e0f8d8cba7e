"""Synthetic interaction data with planted preference blocks."""

from __future__ import annotations

import numpy as np

from .dataset import Dataset, from_arrays
from .seeding import make_rng


def block_dataset(
    n_users: int = 50,
    n_items: int = 100,
    n_blocks: int = 2,
    in_block: float = 1.0,
    out_block: float = 0.0,
    time_span: int = 30 * 86400,
    seed: int = 0,
) -> Dataset:
    """Users and items are dealt into ``n_blocks`` contiguous groups.

    A user interacts with each item of its own block with probability
    ``in_block`` and with any other item with probability ``out_block``;
    timestamps are uniform over ``[0, time_span)``. Every user keeps at least
    one interaction.
    """
    rng = make_rng(seed, "synthetic")
    user_block = np.arange(n_users) * n_blocks // n_users
    item_block = np.arange(n_items) * n_blocks // n_items
    same = user_block[:, None] == item_block[None, :]
    prob = np.where(same, in_block, out_block)
    hit = rng.random((n_users, n_items)) < prob
    for u in np.flatnonzero(~hit.any(axis=1)):
        hit[u, rng.choice(np.flatnonzero(same[u]))] = True
    users, items = np.nonzero(hit)
    stamps = rng.integers(0, time_span, size=len(users))
    return from_arrays(users, items, stamps, n_users=n_users, n_items=n_items)


def user_blocks(n_users: int, n_blocks: int) -> np.ndarray:
    return np.arange(n_users) * n_blocks // n_users
