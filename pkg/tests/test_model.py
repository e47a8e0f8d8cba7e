import json
import math
import time

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from fedgraphrec import tape as T
from fedgraphrec.dataset import from_arrays
from fedgraphrec.graphs import GraphConfig, build_behavior_sequence, build_graph_context, time_bucket
from fedgraphrec.model import (
    Batch,
    Context,
    ModelConfig,
    ModelParams,
    SubgraphSampler,
    attention_aggregate,
    combine_layers,
    embed_sequence,
    forward_backward,
    init_params,
    khop_forward,
    load_checkpoint,
    predict,
    predict_batch,
    save_checkpoint,
)
from fedgraphrec.synthetic import block_dataset

from .oracles import central_differences, three_node_problem, worst_relative_error

# -- tape primitives ---------------------------------------------------------


def _fd_check(build, *arrays):
    """Compare tape gradients of sum(build(*vars)**2 / 2) with central differences."""
    leaves = [T.Var(a.copy()) for a in arrays]
    out = T.scale(T.total(T.square(build(*leaves))), 0.5)
    out.backward()

    def f(params):
        vs = [T.Var(params[str(j)]) for j in range(len(arrays))]
        return float(0.5 * np.sum(build(*vs).value ** 2))

    params = ModelParams({str(j): a.copy() for j, a in enumerate(arrays)})
    numeric = central_differences(f, params)
    analytic = {str(j): v.grad for j, v in enumerate(leaves)}
    assert worst_relative_error(analytic, numeric) < 1e-6


rng = np.random.default_rng(0)
seg = np.array([0, 2, 0, 1, 2, 2])


@pytest.mark.parametrize("build,shapes", [
    (lambda a, b: T.matmul(a, b), [(3, 4), (4, 2)]),
    (lambda a, b: T.matmul(a, b), [(4,), (4, 2)]),
    (lambda a, b: T.mul(T.add(a, b), a), [(3, 2), (2,)]),
    (lambda a: T.sigmoid(a), [(5,)]),
    (lambda a: T.leaky_relu(a, 0.3), [(6,)]),
    (lambda a, b: T.concat([a, b], axis=1), [(2, 3), (2, 1)]),
    (lambda a: T.take_rows(a, np.array([2, 0, 2, 1])), [(3, 2)]),
    (lambda a: T.segment_sum(a, seg, 4), [(6, 2)]),
    (lambda a: T.mul(T.segment_softmax(a, seg, 3), T.const(np.arange(6.0))), [(6,)]),
    (lambda a: T.spmm(sp.random(3, 4, density=0.5, random_state=1), a), [(4, 2)]),
    (lambda a, b: T.add_n([a, b, a]), [(2, 2), (2, 2)]),
])
def test_tape_gradients(build, shapes):
    _fd_check(build, *[rng.normal(size=s) for s in shapes])


def test_scatter_plan_matches_bincount():
    idx = np.array([3, 0, 3, 1, 1, 1])
    vals = np.arange(12.0).reshape(6, 2)
    plan = T.scatter_matrix(idx, 5)
    assert np.array_equal(T.scatter_add(idx, vals, 5), T.scatter_add(idx, vals, 5, plan))
    assert T.scatter_add(idx, vals, 5)[1].tolist() == [6 + 8 + 10, 7 + 9 + 11]


def test_segment_softmax_sums_to_one():
    s = T.segment_softmax(T.Var([1000.0, 1001.0, -5.0, 3.0]), np.array([0, 0, 1, 1]), 3)
    sums = np.bincount([0, 0, 1, 1], weights=s.value, minlength=3)
    assert sums[:2] == pytest.approx([1.0, 1.0], abs=1e-12)
    assert np.all(np.isfinite(s.value))


def test_backward_needs_scalar():
    with pytest.raises(ValueError):
        T.Var(np.ones(2)).backward()


# -- gradients of the full model -------------------------------------------


def test_three_node_gradient_exact():
    ctx, params, batch = three_node_problem()
    sub = SubgraphSampler(ctx, 0, train=False).get(ctx.n_users + 0, 0)
    assert len(sub) == 3
    start = time.perf_counter()
    _, grads = forward_backward(batch, ctx, params)

    def loss_of(p):
        return forward_backward(batch, ctx, p)[0]

    numeric = central_differences(loss_of, params.copy())
    assert worst_relative_error(grads.tensors, numeric) <= 1e-4
    assert time.perf_counter() - start < 10


def test_untouched_tensors_get_zero_gradient():
    ctx, params, batch = three_node_problem()
    _, grads = forward_backward(batch, ctx, params)
    assert grads.congruent(params)
    # time bucket 15 needs gaps of 2**15, none exist here
    assert np.all(grads["time_bucket_table"][15] == 0)


def test_empty_batch_rejected():
    ctx, params, _ = three_node_problem()
    with pytest.raises(ValueError):
        forward_backward(Batch.from_rows([]), ctx, params)


def test_out_of_range_index():
    ctx, params, _ = three_node_problem()
    with pytest.raises(IndexError):
        predict(5, 0, 3, ctx, params)


# -- prediction examples -----------------------------------------------------


def _zero_mlp(params):
    p = params.copy()
    for name in p.names:
        if name.startswith("mlp_"):
            p[name] = np.zeros_like(p[name])
    return p


def test_zero_mlp_predicts_half():
    ctx, params, batch = three_node_problem()
    assert predict_batch(batch, ctx, _zero_mlp(params)) == pytest.approx([0.5, 0.5], abs=1e-15)


def test_half_predictions_give_loss_one_eighth():
    ctx, params, batch = three_node_problem()
    loss, _ = forward_backward(batch, ctx, _zero_mlp(params))
    assert loss == pytest.approx(0.125, abs=1e-15)


def test_predictions_in_unit_interval_and_deterministic():
    ds = block_dataset(n_users=12, n_items=20, seed=2)
    ctx = Context(ModelConfig(dim=4), build_graph_context(ds, GraphConfig(n_slices=2)))
    params = init_params(ds.n_users, ds.n_items, ctx.model, 0)
    rows = [(u, i, 10_000, 0.0) for u in range(12) for i in range(0, 20, 3)]
    a = predict_batch(Batch.from_rows(rows), ctx, params)
    b = predict_batch(Batch.from_rows(rows), ctx, params)
    assert np.array_equal(a, b) and np.all((a > 0) & (a < 1))
    single = predict(3, 6, 10_000, ctx, params)
    assert single == pytest.approx(a[3 * 7 + 2], abs=1e-12)


def test_ablation_switches_change_parameter_use():
    ds = block_dataset(n_users=10, n_items=12, seed=1)
    graph = build_graph_context(ds, GraphConfig(n_slices=1))
    batch = Batch.from_rows([(0, 1, 10_000, 1.0), (2, 3, 10_000, 0.0)])
    flat = ModelConfig(dim=4, item_graph=False)
    params = init_params(10, 12, flat, 0)
    _, g = forward_backward(batch, Context(flat, graph), params)
    assert not g["att_W_0"].any() and not g["hop_W_1"].any()
    uniform = ModelConfig(dim=4, attention=False)
    _, g = forward_backward(batch, Context(uniform, graph), init_params(10, 12, uniform, 0))
    assert not g["att_a_0"].any() and g["att_W_0"].any()


# -- attention and message passing ------------------------------------------


def _attention_params(a, slope_cfg=ModelConfig(dim=2, heads=1, layers=1, hops=1)):
    p = init_params(1, 1, slope_cfg, 0)
    p["att_W_0"] = np.eye(2)
    p["att_a_0"] = np.asarray(a, float)
    p["combine_proj"] = np.eye(2)
    return p, slope_cfg


def test_attention_equal_scores():
    p, cfg = _attention_params([1, 0, 0, 1])
    out = attention_aggregate([1.0, 0.0], [[0.0, 1.0], [1.0, 1.0]], p, cfg)
    assert out == pytest.approx([0.5, 1.0], abs=1e-15)


def test_attention_hand_evaluated():
    p, cfg = _attention_params([0, 0, 1, -1])
    # scores: leaky(-1) = -0.2 for [0, 1], leaky(0) = 0 for [1, 1]
    w1 = math.exp(-0.2) / (math.exp(-0.2) + 1.0)
    w2 = 1.0 - w1
    expect = [w2 * 1.0, w1 * 1.0 + w2 * 1.0]
    out = attention_aggregate([1.0, 0.0], [[0.0, 1.0], [1.0, 1.0]], p, cfg)
    assert out == pytest.approx(expect, abs=1e-12)


def test_attention_without_neighbours_is_zero():
    p, cfg = _attention_params([1, 1, 1, 1])
    assert not attention_aggregate([1.0, 2.0], [], p, cfg).any()


@given(st.permutations(range(5)), st.integers(0, 1000))
def test_attention_permutation_invariant(perm, seed):
    cfg = ModelConfig(dim=3, heads=2)
    p = init_params(1, 1, cfg, seed)
    r = np.random.default_rng(seed)
    h, nbrs = r.normal(size=3), r.normal(size=(5, 3))
    a = attention_aggregate(h, nbrs, p, cfg)
    b = attention_aggregate(h, nbrs[list(perm)], p, cfg)
    assert np.allclose(a, b, rtol=0, atol=1e-12)


def _khop_ctx(layers=2):
    ds = block_dataset(n_users=10, n_items=14, seed=4)
    cfg = ModelConfig(dim=4, heads=2, layers=layers, hops=2)
    ctx = Context(cfg, build_graph_context(ds, GraphConfig(n_slices=1, hops=2, fanout=3)))
    return ctx, init_params(ds.n_users, ds.n_items, cfg, 1)


def test_attention_weights_sum_to_one_per_target():
    ctx, params = _khop_ctx()
    sub = ctx.graph.subgraph(0, 0, 7, train=False)
    state = khop_forward(sub, params, ctx)
    assert state.alphas
    for tgt, alpha in state.alphas:
        sums = np.bincount(tgt, weights=alpha)
        assert sums[np.unique(tgt)] == pytest.approx(np.ones(len(np.unique(tgt))), abs=1e-12)


def test_root_state_is_layer_average():
    ctx, params = _khop_ctx(layers=3)
    sub = ctx.graph.subgraph(ctx.n_users + 2, 0, 5, train=False)
    state = khop_forward(sub, params, ctx)
    assert len(state.h) == 4
    assert state.combined == pytest.approx(combine_layers([h[0] for h in state.h[1:]]), abs=1e-14)
    for layer, per_hop in enumerate(state.hop_states, start=1):
        assert state.h[layer] == pytest.approx(np.mean(per_hop, axis=0), abs=1e-14)
        assert all(np.all(s >= 0) for s in per_hop)


def test_combine_layers():
    assert combine_layers([np.array([1.0, 2.0]), np.array([3.0, 6.0])]).tolist() == [2.0, 4.0]
    assert combine_layers([np.array([5.0])]).tolist() == [5.0]
    with pytest.raises(ValueError):
        combine_layers([])


def test_embed_sequence_rows():
    ds = from_arrays([0, 0], [1, 0], [10, 100], n_users=1, n_items=2)
    ctx = Context(ModelConfig(dim=3), build_graph_context(ds, GraphConfig(n_slices=1)))
    params = init_params(1, 2, ctx.model, 0)
    seq = build_behavior_sequence(ctx.graph.graph, 0, 1000, 5)
    emb = embed_sequence(seq, params, 1000, ctx)
    tb = params["time_bucket_table"]
    assert emb[0] == pytest.approx(params["item_table"][1] + tb[time_bucket(990)])
    assert emb[1] == pytest.approx(params["item_table"][0] + tb[time_bucket(900)])


# -- parameters and checkpoints ---------------------------------------------


def test_params_flatten_round_trip_and_setitem():
    _, params, _ = three_node_problem()
    flat = params.flatten()
    assert flat.size == params.size
    assert params.unflatten(flat).array_equal(params)
    with pytest.raises(KeyError):
        params["user_table"] = np.zeros((5, 5))
    with pytest.raises(KeyError):
        params["nope"] = np.zeros(1)


def test_init_is_seeded_and_bounded():
    cfg = ModelConfig(dim=9)
    a, b = init_params(3, 4, cfg, 7), init_params(3, 4, cfg, 7)
    assert a.array_equal(b) and not a.array_equal(init_params(3, 4, cfg, 8))
    assert max(np.abs(v).max() for _, v in a.items()) <= 1 / 3
    assert not a["mlp_b_0"].any()


def test_checkpoint_round_trip(tmp_path):
    _, params, _ = three_node_problem()
    save_checkpoint(params, tmp_path / "f64", dtype="float64")
    assert load_checkpoint(tmp_path / "f64").array_equal(params)
    save_checkpoint(params, tmp_path / "f32")
    back = load_checkpoint(tmp_path / "f32")
    assert back.congruent(params)
    for name, v in params.items():
        assert np.array_equal(back[name], v.astype(np.float32).astype(np.float64))
    manifest = json.loads((tmp_path / "f32" / "manifest.json").read_text())
    assert manifest["byte_order"] == "little"
    assert (tmp_path / "f32" / "user_table.bin").stat().st_size == 4 * params["user_table"].size


def test_checkpoint_rejects_bad_files(tmp_path):
    _, params, _ = three_node_problem()
    save_checkpoint(params, tmp_path)
    (tmp_path / "user_table.bin").write_bytes(b"\0" * 4)
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path)
    m = json.loads((tmp_path / "manifest.json").read_text())
    m["format"] = "other"
    (tmp_path / "manifest.json").write_text(json.dumps(m))
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path)
