import logging

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fedgraphrec.dataset import ClientShard, ConfigurationError, from_arrays, partition_clients
from fedgraphrec.graphs import GraphConfig, build_graph_context
from fedgraphrec.model import Batch, Context, ModelConfig, ModelParams, SubgraphSampler, forward_backward, init_params
from fedgraphrec.synthetic import block_dataset
from fedgraphrec.training import (
    ClientUpdate,
    TrainConfig,
    early_stop,
    local_train,
    make_optimizer,
    sample_negatives,
    sgd_step,
)

GC = GraphConfig(n_slices=2, fanout=3)
MC = ModelConfig(dim=4, heads=1, layers=1, hops=1, mlp_hidden=(8,))


@pytest.fixture(scope="module")
def world():
    ds = block_dataset(n_users=16, n_items=24, seed=5)
    shards = partition_clients(ds, 2, 0)
    ctx = Context(MC, build_graph_context(ds, GC))
    return ds, shards, ctx, init_params(ds.n_users, ds.n_items, MC, 0)


def _positives(shard, n=None):
    d = shard.data
    n = len(d) if n is None else n
    return Batch(d.users[:n].astype(np.int64), d.items[:n].astype(np.int64),
                 d.timestamps[:n].astype(np.int64), np.ones(n))


# -- negatives ---------------------------------------------------------------


def test_ratio_zero_is_identity(world):
    _, shards, _, _ = world
    pos = _positives(shards[0], 3)
    assert sample_negatives(shards[0], pos, 0, 1) is pos


def test_ratio_four_appends_eight(world):
    _, shards, _, _ = world
    pos = _positives(shards[0], 2)
    out = sample_negatives(shards[0], pos, 4, 1)
    assert len(out) == 10
    assert out.labels[:2].tolist() == [1, 1] and not out.labels[2:].any()
    assert out.users[2:].tolist() == np.repeat(pos.users, 4).tolist()
    assert out.times[2:].tolist() == np.repeat(pos.times, 4).tolist()


def test_negatives_never_collide():
    ds = block_dataset(n_users=8, n_items=12, in_block=0.9, seed=1)
    (shard,) = partition_clients(ds, 1, 0)
    seen = {(u, i) for u, i in zip(ds.users.tolist(), ds.items.tolist())}
    pos = _positives(shard)
    for seed in range(1000):
        out = sample_negatives(shard, pos, 2, seed)
        neg = zip(out.users[len(pos):].tolist(), out.items[len(pos):].tolist())
        assert not any(p in seen for p in neg)


def test_user_with_every_item_skipped(caplog):
    ds = from_arrays([0, 0, 1], [0, 1, 0], [1, 2, 3], n_users=2, n_items=2)
    (shard,) = partition_clients(ds, 1, 0)
    with caplog.at_level(logging.WARNING):
        out = sample_negatives(shard, _positives(shard), 3, 0)
    assert "every item" in caplog.text
    negs = out.take(slice(3, None))
    assert set(negs.users.tolist()) == {1} and set(negs.items.tolist()) == {1}


def test_negative_ratio_rejected(world):
    _, shards, _, _ = world
    with pytest.raises(ConfigurationError):
        sample_negatives(shards[0], _positives(shards[0], 1), -1, 0)


def test_negatives_cover_vocabulary():
    # a user that saw one item gets negatives from all the others, including
    # items nobody in the shard has touched
    ds = from_arrays([0], [0], [1], n_users=1, n_items=6)
    (shard,) = partition_clients(ds, 1, 0)
    drawn = set()
    for s in range(200):
        drawn |= set(sample_negatives(shard, _positives(shard), 2, s).items[1:].tolist())
    assert drawn == {1, 2, 3, 4, 5}


# -- the update rule ---------------------------------------------------------


def test_single_sgd_step_example():
    p = ModelParams({"w": np.array([1.0])})
    g = ModelParams({"w": np.array([0.5])})
    assert sgd_step(p, g, 0.1)["w"][0] == pytest.approx(0.95, abs=1e-15)
    opt = make_optimizer(TrainConfig(learning_rate=0.1))
    opt.step(p, g)
    assert p["w"][0] == pytest.approx(0.95, abs=1e-15)


def test_adam_first_step_moves_by_learning_rate():
    p = ModelParams({"w": np.array([1.0, -2.0])})
    g = ModelParams({"w": np.array([0.5, -3.0])})
    make_optimizer(TrainConfig(learning_rate=0.01, optimizer="adam")).step(p, g)
    assert p["w"] == pytest.approx([0.99, -1.99], abs=1e-9)


@pytest.mark.parametrize("optimizer", ["sgd", "adam"])
def test_zero_learning_rate_returns_global(world, optimizer):
    _, shards, ctx, params = world
    upd = local_train(shards[0], params, TrainConfig(learning_rate=0.0, batch_size=8, optimizer=optimizer), ctx)
    assert upd.params.array_equal(params)
    assert upd.sample_count == shards[0].sample_count


def test_global_params_not_mutated(world):
    _, shards, ctx, params = world
    before = params.copy()
    local_train(shards[0], params, TrainConfig(learning_rate=0.5, batch_size=8), ctx)
    assert params.array_equal(before)


def test_identical_inputs_identical_updates(world):
    _, shards, ctx, params = world
    cfg = TrainConfig(learning_rate=0.05, local_epochs=2, batch_size=16, seed=9)
    a = local_train(shards[1], params, cfg, ctx, round_index=3)
    b = local_train(shards[1], params, cfg, ctx, round_index=3)
    assert a.params.array_equal(b.params) and a.train_loss == b.train_loss
    c = local_train(shards[1], params, cfg, ctx, round_index=4)
    assert not a.params.array_equal(c.params)


def test_loss_trace_and_mean(world):
    _, shards, ctx, params = world
    trace = []
    upd = local_train(shards[0], params, TrainConfig(learning_rate=0.05, local_epochs=3, batch_size=16), ctx,
                      round_index=2, loss_trace=trace)
    assert [t[:3] for t in trace] == [(2, shards[0].client_id, e) for e in range(3)]
    assert upd.train_loss == pytest.approx(np.mean([t[3] for t in trace]), abs=1e-15)
    assert upd.epoch_losses == tuple(t[3] for t in trace)


def test_loss_decreases_on_frozen_batch(world):
    _, shards, ctx, params = world
    pos = _positives(shards[0], 24)
    batch = sample_negatives(shards[0], pos, 1, 0)
    sampler = SubgraphSampler(ctx, 0, train=False)
    p = params.copy()
    losses = []
    for _ in range(50):
        loss, g = forward_backward(batch, ctx, p, sampler)
        losses.append(loss)
        p = sgd_step(p, g, 1e-3)
    assert all(b - a <= 1e-9 for a, b in zip(losses, losses[1:]))
    assert losses[-1] < losses[0]


def test_update_locality_on_client_view(world):
    ds, shards, _, params = world
    shard = shards[0]
    # graphs built only from the client's own rows, as a fully local view
    ctx = Context(MC, build_graph_context(shard.data, GC))
    upd = local_train(shard, params, TrainConfig(learning_rate=0.1, batch_size=8), ctx)
    mine = np.zeros(ds.n_users, bool)
    mine[shard.users] = True
    assert np.array_equal(upd.params["user_table"][~mine], params["user_table"][~mine])
    assert not np.array_equal(upd.params["user_table"][mine], params["user_table"][mine])


def test_empty_shard_rejected(world):
    ds, _, ctx, params = world
    (shard,) = partition_clients(from_arrays([0], [0], [1], n_users=ds.n_users, n_items=ds.n_items), 1, 0)
    empty = ClientShard(shard.client_id, shard.data.select(np.zeros(0, int)))
    with pytest.raises(ConfigurationError):
        local_train(empty, params, TrainConfig(), ctx)


def test_client_update_validation(world):
    *_, params = world
    with pytest.raises(ValueError):
        ClientUpdate(params, 0, 1.0, 0)
    with pytest.raises(ValueError):
        ClientUpdate(params, 3, float("nan"), 0)


@pytest.mark.parametrize("kwargs", [dict(learning_rate=-1.0), dict(batch_size=0), dict(local_epochs=0),
                                    dict(early_stop_patience=0), dict(optimizer="rmsprop"),
                                    dict(negatives_per_positive=-2)])
def test_train_config_validation(kwargs):
    with pytest.raises(ConfigurationError):
        TrainConfig(**kwargs)


# -- early stopping ----------------------------------------------------------


def test_early_stop_hand_trace():
    h = [0.5, 0.6, 0.59, 0.58, 0.57]
    assert [early_stop(h[:n], 3) for n in range(1, 6)] == [False, False, False, False, True]


def test_flat_history_stops():
    assert early_stop([0.3] * 4, 3)
    assert not early_stop([0.3] * 3, 3)


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=30, unique=True), st.integers(1, 5))
def test_strictly_improving_never_stops(values, patience):
    h = sorted(values)
    assert not any(early_stop(h[:n], patience) for n in range(len(h) + 1))


def test_early_stop_patience_validated():
    with pytest.raises(ConfigurationError):
        early_stop([1.0], 0)
