import numpy as np
import pytest

from torsonet import ops
from torsonet.errors import ArgumentError, BuildError, NumericError, ShapeError, StateError
from torsonet.graph import (LayerNode, ModelGraph, backward, build_model, format_summary, forward,
                            predict, summary)
from torsonet.reference import LAYER_TABLE, TOTAL_PARAMS


def conv_params(kh, kw, cin, cout):
    return kh * kw * cin * cout + cout


def test_block_param_arithmetic(model4):
    counts = {n.id: model4.node_param_count(n) for n in model4.nodes}
    fire = counts["fire.squeeze"] + counts["fire.expand1"] + counts["fire.expand2"]
    assert fire == conv_params(1, 1, 1, 4) + conv_params(1, 1, 4, 8) + conv_params(3, 3, 4, 8) == 344
    b313 = sum(counts[k] for k in ("b313.c1", "b313.c2", "b313.c11", "b313.c21"))
    assert b313 == 2 * (conv_params(1, 3, 16, 32) + conv_params(3, 1, 32, 32)) == 9344
    assert counts["conv"] == conv_params(3, 3, 64, 32) == 18464
    red = sum(v for k, v in counts.items() if k.startswith("reduction."))
    assert red == (conv_params(1, 1, 32, 8) + conv_params(1, 1, 8, 32) + conv_params(3, 3, 8, 32)
                   + 2 * conv_params(3, 3, 32, 32)) == 21384
    assert counts["b31c.c1"] + counts["b31c.c2"] == 2 * conv_params(1, 3, 96, 32) == 18496
    head = counts["dense1"] + counts["dense2"] + counts["dense3"]
    assert head == (1024 * 64 + 64) + (64 * 64 + 64) + (64 * 4 + 4) == 70020
    assert model4.param_count() == 344 + 9344 + 18464 + 21384 + 18496 + 70020 == 138_052


def test_param_count_by_classes():
    assert build_model(2).param_count() == TOTAL_PARAMS - 2 * 65
    assert build_model(4, "swish").param_count() == TOTAL_PARAMS


@pytest.mark.parametrize("k", [0, 1, 2.5])
def test_bad_class_count(k):
    with pytest.raises(ArgumentError):
        build_model(k)


def test_bad_activation_and_dropout():
    with pytest.raises(ArgumentError):
        build_model(4, "tanh")
    with pytest.raises(ArgumentError):
        build_model(4, dropout_rate=1.0)


def test_static_shapes_match_table(model4):
    assert [n.id for n in model4.nodes] == [row[0] for row in LAYER_TABLE]
    for node_id, shape, params, _ in LAYER_TABLE:
        node = model4.node(node_id)
        assert node.output_shape == shape, node_id
        assert model4.node_param_count(node) == params, node_id


def test_forward_trace_at_224(model4, rng):
    x = rng.random((224, 224, 1)).astype(np.float32)
    probs, cache = forward(model4, x, keep_cache=True)
    for node_id, shape, _, _ in LAYER_TABLE:
        assert cache[node_id]["out"].shape[1:] == shape, node_id
    assert probs.shape == (4,)
    assert probs.dtype == np.float32
    assert probs.sum() == pytest.approx(1.0, abs=1e-5)


def test_duplicate_and_dangling_nodes():
    g = ModelGraph((8, 8, 1))
    g.add(LayerNode("input", "input"))
    with pytest.raises(BuildError):
        g.add(LayerNode("input", "input"))
    with pytest.raises(BuildError):
        g.add(LayerNode("x", "conv", ["missing"], kernel=(1, 1), units=2))


def test_concat_shape_mismatch():
    g = ModelGraph((8, 8, 1))
    g.add(LayerNode("input", "input"))
    g.add_pool("p", "input", ops.PoolSpec(2, 2), "P")
    with pytest.raises(ShapeError):
        g.add_concat("c", ["input", "p"], "C")


def test_wrong_input_shape(model4):
    with pytest.raises(ShapeError):
        forward(model4, np.zeros((128, 128, 1), np.float32))


def test_deterministic_init():
    a, b = build_model(seed=7), build_model(seed=7)
    c = build_model(seed=8)
    for (_, pa), (_, pb), (_, pc) in zip(a.param_items(), b.param_items(), c.param_items()):
        np.testing.assert_array_equal(pa[0], pb[0])
        assert not pa[1].any()
    assert not np.array_equal(a.params["conv"].weights, c.params["conv"].weights)


def test_inference_is_deterministic(model4, rng):
    x = rng.random((2, 224, 224, 1)).astype(np.float32)
    p1, cache = forward(model4, x)
    p2, _ = forward(model4, x)
    assert cache is None
    np.testing.assert_array_equal(p1, p2)


def test_batch_matches_single(model4, rng):
    x = rng.random((3, 224, 224, 1)).astype(np.float32)
    batched = predict(model4, x, batch_size=2)
    for i in range(3):
        np.testing.assert_allclose(batched[i], forward(model4, x[i])[0], atol=1e-6)


def test_identical_313_towers_give_identical_halves(rng):
    model = build_model(4, "relu", seed=1)
    for a, b in (("b313.c1", "b313.c2"), ("b313.c11", "b313.c21")):
        model.params[b].weights[...] = model.params[a].weights
        model.params[b].bias[...] = model.params[a].bias
    _, cache = forward(model, rng.random((224, 224, 1)), keep_cache=True)
    out = cache["concat2"]["out"]
    np.testing.assert_array_equal(out[..., :32], out[..., 32:])


def test_reduction_concat_carries_c2_twice(model4, rng):
    _, cache = forward(model4, rng.random((224, 224, 1)), keep_cache=True)
    out = cache["concat3"]["out"]
    np.testing.assert_array_equal(out[..., :32], out[..., 32:64])
    np.testing.assert_array_equal(out[..., :32], cache["reduction.c2"]["out"])


def _small_model(act="relu", seed=0):
    model = build_model(4, act, seed=seed, input_shape=(32, 32, 1), dtype=np.float64)
    r = np.random.default_rng(seed + 100)
    for _, (_, bias) in model.param_items():
        bias[...] = 0.1 * r.standard_normal(bias.shape)
    return model


def test_zero_upstream_gives_zero_grads(rng):
    model = _small_model()
    _, cache = forward(model, rng.random((32, 32, 1)), training=True, rng=rng)
    grads = backward(model, cache, np.zeros(4))
    for nid, _ in model.param_items():
        assert not grads[nid][0].any() and not grads[nid][1].any()
    assert not grads["input"].any()


def test_backward_needs_cache(model4):
    with pytest.raises(StateError):
        backward(model4, None, np.zeros(4))


@pytest.mark.parametrize("act", ["relu", "swish"])
def test_squeeze_gradient_sums_both_expand_paths(act, rng, monkeypatch):
    model = _small_model(act)
    x = rng.random((32, 32, 1))
    _, cache = forward(model, x, training=True, rng=rng)

    seen = []
    real_split = ops.split_channels
    monkeypatch.setattr(ops, "split_channels", lambda g, sizes: seen.append(g) or real_split(g, sizes))
    grads = backward(model, cache, rng.standard_normal(4))
    g_concat1 = seen[-1]  # concat1 is the first concat, so it is split last

    sq_out = cache["fire.squeeze"]["out"]
    g_sq = 0
    for nid, part in zip(("fire.expand1", "fire.expand2"), np.split(g_concat1, 2, axis=-1)):
        gpre = part * ops.activation_grad(cache[nid]["pre"], act)
        g_sq = g_sq + ops.conv2d_backward(sq_out, model.params[nid], gpre)[0]
    gpre_sq = g_sq * ops.activation_grad(cache["fire.squeeze"]["pre"], act)
    _, gw, gb = ops.conv2d_backward(cache["input"]["out"], model.params["fire.squeeze"], gpre_sq)
    np.testing.assert_allclose(grads["fire.squeeze"][0], gw, rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(grads["fire.squeeze"][1], gb, rtol=1e-12, atol=1e-14)


def test_backward_is_linear_in_upstream(rng):
    model = _small_model("swish")
    _, cache = forward(model, rng.random((32, 32, 1)), keep_cache=True)
    g1, g2 = rng.standard_normal(4), rng.standard_normal(4)
    a, b, both = backward(model, cache, g1), backward(model, cache, g2), backward(model, cache, g1 + g2)
    for nid, _ in model.param_items():
        np.testing.assert_allclose(a[nid][0] + b[nid][0], both[nid][0], atol=1e-10)
    np.testing.assert_allclose(a["input"] + b["input"], both["input"], atol=1e-10)


def test_dropout_only_in_training(rng):
    model = _small_model()
    x = rng.random((32, 32, 1))
    p_eval_1, _ = forward(model, x)
    p_eval_2, _ = forward(model, x, training=False, rng=np.random.default_rng(5))
    np.testing.assert_array_equal(p_eval_1, p_eval_2)
    p_train, _ = forward(model, x, training=True, rng=np.random.default_rng(5))
    assert not np.array_equal(p_train, p_eval_1)


def test_non_finite_is_reported_with_node(rng):
    model = _small_model()
    model.params["conv"].weights[0, 0, 0, 0] = np.nan
    with pytest.raises(NumericError) as info:
        forward(model, rng.random((32, 32, 1)))
    assert info.value.node == "conv"


def test_summary_rows_and_totals(model4):
    rows, totals = summary(model4)
    assert len(rows) == len(LAYER_TABLE)
    assert totals == {"total": 138_052, "trainable": 138_052, "non_trainable": 0}
    text = format_summary(model4)
    assert "Trainable params: 138,052" in text
    assert "Non-trainable params: 0" in text
    by_id = {r.node_id: r for r in rows}
    assert by_id["fire.expand2"].kernel == "3*3"
    assert by_id["avgpool"].kernel == "Pool size=(2,2), stride=4"
    assert by_id["concat3"].connected_to == "Max pooling 2 & C2 & C12"
    assert by_id["dense3"].activation == "SoftMax"
    assert by_id["flatten"].output_shape == "1024"


def test_astype_and_copy_are_independent(model4):
    m64 = model4.astype(np.float64)
    assert m64.params["conv"].weights.dtype == np.float64
    m64.params["conv"].weights[...] = 0
    assert model4.params["conv"].weights.any()
    c = model4.copy()
    c.params["dense1"].bias += 1
    assert not model4.params["dense1"].bias.any()
