"""Acceptance criteria 1-9, one test each.

Every test appends a ``[n] PASS|FAIL`` line that is printed in the pytest
terminal summary, then asserts. Criteria 5 and 8 train at full image size and
take a few minutes; deselect them with ``-m "not slow"``.
"""
import re
import sys
import time

import numpy as np
import pytest

from oracles import naive_conv2d
from torsonet import ops
from torsonet.cli import main
from torsonet.graph import build_model, forward
from torsonet.metrics import ConfusionMatrix, metrics_from_confusion
from torsonet.ops import ConvParams
from torsonet.reference import (ALEXNET_PARAMS, LAYER_TABLE, NON_TRAINABLE_PARAMS,
                                SQUEEZENET_PARAMS, TOTAL_PARAMS)
from torsonet.serialize import from_bytes, header_size, load_weights, save_weights, to_bytes
from torsonet.toy import make_toy_arrays
from torsonet.train import ArrayDataset, TrainConfig, train


@pytest.fixture
def verdict(acceptance_log):
    def record(n, title, ok, detail):
        acceptance_log.append(f"[{n}] {'PASS' if ok else 'FAIL'}  {title}: {detail}")
        assert ok, detail
    return record


def _table_text(shape):
    return "(" + ", ".join(str(v) for v in shape) + ")"


def test_c1_layer_table(capsys, verdict):
    start = time.perf_counter()
    code = main(["summary"])
    out = capsys.readouterr().out
    seconds = time.perf_counter() - start
    lines = out.splitlines()[2:2 + len(LAYER_TABLE)]
    mismatches = []
    for line, (node_id, shape, params, _) in zip(lines, LAYER_TABLE):
        shape_text = f"(None, {shape[0]})" if node_id.startswith("dense") else \
            str(shape[0]) if len(shape) == 1 else _table_text(shape)
        cells = re.split(r"\s{2,}", line.strip())
        if shape_text not in cells or str(params) not in cells:
            mismatches.append(node_id)
    totals = ("Trainable params: 138,052" in out and "Non-trainable params: 0" in out
              and "Total params: 138,052" in out)
    ok = code == 0 and len(lines) == len(LAYER_TABLE) and not mismatches and totals and seconds < 1
    verdict(1, "layer table conformance", ok,
            f"{len(LAYER_TABLE) - len(mismatches)}/{len(LAYER_TABLE)} rows exact, "
            f"totals {'exact' if totals else 'WRONG'}, {seconds:.2f}s (< 1s)")


def test_c2_shape_trace(verdict):
    start = time.perf_counter()
    model = build_model(4, "relu", seed=0)
    x = np.random.default_rng(0).random((224, 224, 1)).astype(np.float32)
    _, cache = forward(model, x, keep_cache=True)
    wrong = [nid for nid, shape, _, _ in LAYER_TABLE if cache[nid]["out"].shape[1:] != shape]
    seconds = time.perf_counter() - start
    verdict(2, "forward shape trace at 224x224", not wrong and seconds < 10,
            f"{len(LAYER_TABLE) - len(wrong)}/{len(LAYER_TABLE)} rows match, {seconds:.2f}s (< 10s)")


def test_c3_gradient_verification(capsys, verdict):
    start = time.perf_counter()
    code = main(["verify"])
    out = capsys.readouterr().out
    seconds = time.perf_counter() - start
    grad_lines = [line for line in out.splitlines() if "max rel err" in line]
    worst_op = max(float(line.split("max rel err ")[1].split()[0]) for line in grad_lines
                   if "model[" not in line)
    worst_model = max(float(line.split("max rel err ")[1].split()[0]) for line in grad_lines
                      if "model[" in line)
    verdict(3, "gradient verification (float64)", code == 0 and seconds < 300,
            f"ops max rel err {worst_op:.2e} (< 1e-4), reduced model {worst_model:.2e} (< 1e-3), "
            f"{seconds:.1f}s (< 300s)")


def test_c4_conv_oracle(verdict):
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    kernels = [(1, 1), (1, 3), (3, 1), (3, 3)]
    worst = 0.0
    for i in range(200):
        kernel = kernels[i % 4]
        h, w = rng.integers(1, 9, size=2)
        cin, cout = rng.integers(1, 9, size=2)
        x = rng.standard_normal((h, w, cin)).astype(np.float32)
        p = ConvParams(rng.standard_normal((*kernel, cin, cout)).astype(np.float32),
                       rng.standard_normal(cout).astype(np.float32))
        got = ops.conv2d_forward(x, p)
        assert got.dtype == np.float32
        worst = max(worst, float(np.abs(got - naive_conv2d(x, p.weights, p.bias)).max()))
    seconds = time.perf_counter() - start
    verdict(4, "conv vs nested-loop oracle (float32)", worst < 1e-5 and seconds < 60,
            f"200 configs, max abs err {worst:.2e} (< 1e-5), {seconds:.1f}s (< 60s)")


# ---------------------------------------------------------------------------
# toy training (criteria 5 and 8)

TOY_SEED = 0
TARGET = 0.9
MAX_EPOCHS = 30


@pytest.fixture(scope="module")
def toy_split():
    images, labels, names = make_toy_arrays(60, seed=TOY_SEED)
    ds = ArrayDataset(images, labels, names)
    # classes are interleaved, so both slices hold every class equally often
    return ds.subset(np.arange(200)), ds.subset(np.arange(200, 240))


def toy_run(toy_split, activation):
    train_set, val_set = toy_split
    model = build_model(4, activation, seed=TOY_SEED, class_names=train_set.class_names)
    cfg = TrainConfig(learning_rate=1e-3, epochs=MAX_EPOCHS, batch_size=8, seed=TOY_SEED)
    history = train(model, train_set, val_set, cfg, callback=lambda r: r.val_acc >= TARGET)
    return history, to_bytes(model)


@pytest.fixture(scope="module")
def toy_runs(toy_split):
    return {}


@pytest.mark.slow
@pytest.mark.parametrize("activation", ["relu", "swish"])
def test_c5_toy_convergence(toy_split, toy_runs, activation, verdict):
    history, blob = toy_run(toy_split, activation)
    toy_runs[activation] = blob
    best = max(r.val_acc for r in history)
    verdict(5, f"toy convergence ({activation})", best >= TARGET and len(history) <= MAX_EPOCHS,
            f"val acc {best:.3f} (>= {TARGET}) after {len(history)} epoch(s) (<= {MAX_EPOCHS}), "
            f"200 train / 40 val")


def test_c6_metrics_vs_printed_f1(verdict):
    # per-class precision (0.85, 0.94, 0.50, 0.92) and recall (0.77, 0.96, 0.55, 0.90), exactly
    counts = [[1309, 19, 354, 18], [0, 3384, 141, 0], [208, 197, 495, 0], [23, 0, 0, 207]]
    m = metrics_from_confusion(ConfusionMatrix(counts))
    np.testing.assert_allclose(m.precision, [0.85, 0.94, 0.50, 0.92], atol=1e-12)
    np.testing.assert_allclose(m.recall, [0.77, 0.96, 0.55, 0.90], atol=1e-12)
    printed = np.array([0.81, 0.95, 0.52, 0.91])
    gap = float(np.abs(m.f1 - printed).max())
    verdict(6, "F1 from confusion vs printed F1", gap <= 0.005,
            f"F1 {np.round(m.f1, 4).tolist()}, max |diff| {gap:.4f} (<= 0.005)")


def test_c7_serialization_round_trip(tmp_path, verdict):
    start = time.perf_counter()
    model = build_model(4, "relu", seed=5)
    r = np.random.default_rng(7)
    for _, (_, bias) in model.param_items():
        bias[...] = 0.05 * r.standard_normal(bias.shape)
    path = tmp_path / "w.bin"
    save_weights(model, path)
    loaded = load_weights(path)
    x = r.random((10, 224, 224, 1)).astype(np.float32)
    same = all(np.array_equal(forward(model, x[i])[0], forward(loaded, x[i])[0]) for i in range(10))
    seconds = time.perf_counter() - start
    verdict(7, "save -> load -> forward", same and seconds < 10,
            f"10 inputs {'bit-identical' if same else 'DIFFER'}, {seconds:.1f}s (< 10s)")


@pytest.mark.slow
def test_c8_determinism(toy_split, toy_runs, verdict):
    first = toy_runs.get("relu") or toy_run(toy_split, "relu")[1]
    second = toy_run(toy_split, "relu")[1]
    verdict(8, "determinism of toy training", first == second,
            f"two seed-{TOY_SEED} runs, archives of {len(first)} bytes "
            f"{'byte-identical' if first == second else 'DIFFER'}")


def test_c9_lightweight(tmp_path, verdict):
    model = build_model(4)
    path = tmp_path / "w.bin"
    size = save_weights(model, path)
    blob = path.read_bytes()
    expected = TOTAL_PARAMS * 4 + header_size(blob)
    assert from_bytes(blob).param_count() == TOTAL_PARAMS
    ok = (size == expected and model.param_count() == TOTAL_PARAMS
          and NON_TRAINABLE_PARAMS == 0 and round(TOTAL_PARAMS / 1e6, 1) == 0.1
          and TOTAL_PARAMS < SQUEEZENET_PARAMS)
    ratio = ALEXNET_PARAMS / TOTAL_PARAMS
    verdict(9, "lightweight archive", ok,
            f"{size} bytes = 138052*4 + {header_size(blob)} header; "
            f"{TOTAL_PARAMS:,} params ~ 0.1M < {SQUEEZENET_PARAMS:,}; AlexNet ratio {ratio:.1f}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
