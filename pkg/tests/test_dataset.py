import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fedgraphrec.dataset import (
    ConfigurationError,
    DatasetError,
    apply_public_ratio,
    concat,
    filter_min_interactions,
    from_arrays,
    load_interactions,
    partition_clients,
    read_dense_interactions,
    split,
    split_sizes,
    write_id_map,
    write_interactions,
)

from .conftest import rows_of


def write(tmp_path, text, name="log.tsv"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


# -- loading ---------------------------------------------------------------


def test_load_two_lines(tmp_path):
    ds = load_interactions(write(tmp_path, "a\tx\t1\t10\nb\tx\t1\t20\n"))
    assert (ds.n_users, ds.n_items, len(ds)) == (2, 1, 2)
    assert ds.user_ids == ("a", "b") and ds.item_ids == ("x",)


def test_load_first_appearance_order(tmp_path):
    ds = load_interactions(write(tmp_path, "z\tq\t1\t5\ny\tp\t1\t6\nz\tp\t2.5\t7\n"))
    assert ds.user_ids == ("z", "y")
    assert ds.item_ids == ("q", "p")
    assert rows_of(ds) == [(0, 0, 1.0, 5), (0, 1, 2.5, 7), (1, 1, 1.0, 6)]


def test_load_non_numeric_rating_names_line(tmp_path):
    with pytest.raises(DatasetError, match=r":1: "):
        load_interactions(write(tmp_path, "a\tx\tone\t10\n"))


def test_load_wrong_field_count_names_line(tmp_path):
    with pytest.raises(DatasetError, match=r":2: expected 4"):
        load_interactions(write(tmp_path, "a\tx\t1\t10\na\tx\t1\n"))


def test_load_empty_file(tmp_path):
    with pytest.raises(DatasetError, match="empty"):
        load_interactions(write(tmp_path, ""))


def test_load_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_interactions(tmp_path / "absent.tsv")


def test_loaded_rows_sorted_by_user_then_time(tmp_path):
    ds = load_interactions(write(tmp_path, "a\tx\t1\t30\nb\ty\t1\t5\na\ty\t1\t10\n"))
    keys = list(zip(ds.users.tolist(), ds.timestamps.tolist()))
    assert keys == sorted(keys)


def test_write_and_read_back(tmp_path, tiny):
    write_interactions(tiny, tmp_path / "d.tsv")
    back = read_dense_interactions(tmp_path / "d.tsv", tiny.n_users, tiny.n_items)
    assert back.same_interactions(tiny)


def test_id_map_format(tmp_path):
    write_id_map(("u7", "u3"), tmp_path / "ids.tsv")
    assert (tmp_path / "ids.tsv").read_text() == "u7\t0\nu3\t1\n"


def test_dataset_rejects_out_of_range():
    with pytest.raises(DatasetError):
        from_arrays([0, 3], [0, 0], [1, 2], n_users=2, n_items=1)
    with pytest.raises(DatasetError):
        from_arrays([0], [0], [-1], n_users=1, n_items=1)
    with pytest.raises(DatasetError):
        from_arrays([0], [0], [1], [math.inf], n_users=1, n_items=1)


# -- filtering -------------------------------------------------------------


def _counts_dataset(counts):
    users = np.repeat(np.arange(len(counts)), counts)
    items = np.concatenate([np.arange(c) for c in counts])
    return from_arrays(users, items, np.arange(len(users)))


def test_filter_threshold():
    out = filter_min_interactions(_counts_dataset([3, 7]), 5)
    assert out.n_users == 1 and len(out) == 7


def test_filter_min_one_is_identity(tiny):
    out = filter_min_interactions(tiny, 1)
    assert out.same_interactions(tiny)


def test_filter_chain_reaches_fixpoint():
    # A has 3 interactions; B has 5, one on item "x" shared only with A.
    # With items needing 2 raters, dropping A strands x, which drops B to 4.
    # C keeps 5 interactions on items all shared with D and survives with D.
    rows = [("A", "x"), ("A", "p"), ("A", "q"),
            ("B", "x"), ("B", "c1"), ("B", "c2"), ("B", "c3"), ("B", "c4"),
            ("C", "c1"), ("C", "c2"), ("C", "c3"), ("C", "c4"), ("C", "c5"),
            ("D", "c1"), ("D", "c2"), ("D", "c3"), ("D", "c4"), ("D", "c5")]
    users = {"A": 0, "B": 1, "C": 2, "D": 3}
    items = {k: j for j, k in enumerate(sorted({i for _, i in rows}))}
    ds = from_arrays([users[u] for u, _ in rows], [items[i] for _, i in rows], range(len(rows)))
    one_pass = np.bincount(ds.users)[ds.users] >= 5
    assert set(ds.users[one_pass].tolist()) == {1, 2, 3}  # a single user pass would keep B
    out = filter_min_interactions(ds, 5, item_min_count=2)
    assert out.n_users == 2 and len(out) == 10
    assert np.all(np.bincount(out.users) >= 5)


def test_filter_everything_removed():
    with pytest.raises(DatasetError):
        filter_min_interactions(_counts_dataset([1, 2]), 5)


@given(st.lists(st.integers(1, 12), min_size=1, max_size=8), st.integers(1, 6))
def test_filter_fixpoint_property(counts, m):
    ds = _counts_dataset(counts)
    if max(counts) < m:
        with pytest.raises(DatasetError):
            filter_min_interactions(ds, m)
        return
    out = filter_min_interactions(ds, m)
    assert np.all(np.bincount(out.users, minlength=out.n_users) >= m)
    assert out.n_users == sum(c >= m for c in counts)


# -- splitting -------------------------------------------------------------


@pytest.mark.parametrize("n,expected", [(10, (8, 1, 1)), (7, (5, 1, 1)), (5, (4, 1, 0)), (20, (16, 2, 2))])
def test_split_sizes(n, expected):
    assert split_sizes(n) == expected


@given(st.integers(0, 500))
def test_split_sizes_within_one_of_ratio(n):
    sizes = split_sizes(n)
    assert sum(sizes) == n
    for s, f in zip(sizes, (0.8, 0.1, 0.1)):
        assert abs(s - f * n) <= 1


def test_split_per_user_counts_and_determinism():
    ds = _counts_dataset([10, 7, 12])
    a, b = split(ds, 3), split(ds, 3)
    for name in ("train", "validation", "test", "tuning_subset"):
        assert rows_of(getattr(a, name)) == rows_of(getattr(b, name))
    per_user = [(np.sum(a.train.users == u), np.sum(a.validation.users == u), np.sum(a.test.users == u))
                for u in range(3)]
    assert per_user == [(8, 1, 1), (5, 1, 1), (9, 2, 1)]
    assert concat([a.train, a.validation, a.test]).same_interactions(ds)


def test_split_tuning_subset_from_train():
    ds = _counts_dataset([30, 40])
    b = split(ds, 0)
    train_rows = set(rows_of(b.train))
    assert set(rows_of(b.tuning_subset)) <= train_rows
    assert len(b.tuning_subset) == round(0.1 * len(b.train))


def test_split_other_seed_differs():
    ds = _counts_dataset([30, 40])
    assert rows_of(split(ds, 0).test) != rows_of(split(ds, 1).test)


def test_resplit_mode_ratio():
    ds = _counts_dataset([20])
    b = split(ds, 0, mode="resplit_80_20")
    assert (len(b.train), len(b.validation), len(b.test)) == (14, 2, 4)
    with pytest.raises(ConfigurationError):
        split(ds, 0, mode="global")


# -- clients ---------------------------------------------------------------


def test_partition_single_client_is_identity(tiny):
    (shard,) = partition_clients(tiny, 1, 0)
    assert shard.data.same_interactions(tiny)
    assert shard.sample_count == len(tiny)


def test_partition_round_robin_sizes():
    ds = _counts_dataset([1] * 10)
    shards = partition_clients(ds, 3, 5)
    assert sorted(len(s.users) for s in shards) == [3, 3, 4]


def test_partition_too_many_clients(tiny):
    with pytest.raises(ConfigurationError):
        partition_clients(tiny, 5, 0)


@given(st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_partition_properties(k, seed):
    ds = _counts_dataset([3, 1, 4, 1, 5, 9, 2, 6])
    shards = partition_clients(ds, k, seed)
    user_sets = [set(s.users.tolist()) for s in shards]
    for a in range(k):
        for b in range(a + 1, k):
            assert not user_sets[a] & user_sets[b]
    assert set().union(*user_sets) == set(range(8))
    assert concat([s.data for s in shards]).same_interactions(ds)
    assert all(s.data.n_items == ds.n_items for s in shards)
    again = partition_clients(ds, k, seed)
    assert [rows_of(s.data) for s in shards] == [rows_of(s.data) for s in again]


def test_public_ratio_examples():
    ds = _counts_dataset([10])
    (shard,) = partition_clients(ds, 1, 0)
    assert apply_public_ratio(shard, 1.0, 0).public_mask.all()
    assert not apply_public_ratio(shard, 0.0, 0).public_mask.any()
    assert apply_public_ratio(shard, 0.25, 0).public_mask.sum() == 3


@given(st.floats(0.0, 1.0), st.integers(0, 1000))
def test_public_mask_count_property(p, seed):
    counts = [5, 10, 13, 1]
    ds = _counts_dataset(counts)
    (shard,) = partition_clients(ds, 1, 0)
    mask = apply_public_ratio(shard, p, seed).public_mask
    for u, c in enumerate(counts):
        assert mask[ds.users == u].sum() == math.ceil(p * c - 1e-12)


def test_public_ratio_rejects_out_of_range(tiny):
    (shard,) = partition_clients(tiny, 1, 0)
    with pytest.raises(ConfigurationError):
        apply_public_ratio(shard, 1.5, 0)


def test_public_flags_independent_of_shard_assignment():
    ds = _counts_dataset([6, 8, 9, 4])
    whole = apply_public_ratio(partition_clients(ds, 1, 0)[0], 0.5, 11)
    for shard in partition_clients(ds, 2, 3):
        part = apply_public_ratio(shard, 0.5, 11)
        assert set(rows_of(part.public())) <= set(rows_of(whole.public()))
