"""Finite-difference verification of every backward pass, in float64.

Each op check contracts the op's output with a fixed random tensor to get a
scalar, then compares every analytic partial derivative with a central
difference (step 1e-5). The whole-model check (step 1e-6) compares directional
derivatives along random directions, one per parameter array; directions
whose finite-difference step crosses a max-pool or ReLU kink are redrawn.

Relative error is ``|a - n| / max(|a|, |n|, 1e-8)``; entries where both are
exactly zero (cells no output depends on) count as exact.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ops
from .graph import backward, build_model, forward
from .ops import ConvParams, DenseParams, PoolSpec

STEP = 1e-5
# the whole model has ~10^5 ReLU units and pool windows; a smaller step keeps
# most directions clear of their kinks
MODEL_STEP = 1e-6
OP_TOL = 1e-4
MODEL_TOL = 1e-3
KINK_MARGIN = 1e-3
# smallest square input for which every pool in the fixed topology still fits
REDUCED_INPUT = (32, 32, 1)


def rel_error(analytic, numeric, floor=1e-8):
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    den = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return np.abs(a - n) / den


def numeric_grad(f, x, step=STEP):
    """Central differences of scalar ``f`` w.r.t. every entry of ``x`` (modified in place, restored)."""
    grad = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = f()
        flat[i] = orig - step
        down = f()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * step)
    return grad


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    tolerance: float
    trials: int
    note: str = ""

    @property
    def passed(self):
        return bool(self.max_rel_error < self.tolerance)


@dataclass
class GradCheckReport:
    results: list = field(default_factory=list)

    @property
    def passed(self):
        return all(r.passed for r in self.results)

    def lines(self):
        for r in self.results:
            status = "PASS" if r.passed else "FAIL"
            note = f"  ({r.note})" if r.note else ""
            yield (f"{status}  {r.name:<34} max rel err {r.max_rel_error:.3e} "
                   f"< {r.tolerance:.0e}  [{r.trials} trials]{note}")


def _contract(y, r):
    return float(np.sum(y * r))


# ---------------------------------------------------------------------------
# per-op checks; each returns the max relative error of one random trial

def _away_from_zero(rng, shape, margin=KINK_MARGIN):
    x = rng.standard_normal(shape)
    small = np.abs(x) <= margin
    while small.any():
        x[small] = rng.standard_normal(int(small.sum()))
        small = np.abs(x) <= margin
    return x


def check_conv_trial(rng, kernel=(3, 3), shape=(5, 5, 2), cout=3, padding="same", stride=1):
    x = rng.standard_normal(shape)
    p = ConvParams(rng.standard_normal((*kernel, shape[2], cout)), rng.standard_normal(cout))
    y = ops.conv2d_forward(x, p, padding, stride)
    r = rng.standard_normal(y.shape)
    gx, gw, gb = ops.conv2d_backward(x, p, r, padding, stride)
    f = lambda: _contract(ops.conv2d_forward(x, p, padding, stride), r)
    return max(rel_error(gx, numeric_grad(f, x)).max(),
               rel_error(gw, numeric_grad(f, p.weights)).max(),
               rel_error(gb, numeric_grad(f, p.bias)).max())


def check_pool_trial(rng, spec, shape):
    x = rng.standard_normal(shape)
    y, state = ops.pool_forward(x, spec)
    r = rng.standard_normal(y.shape)
    gx = ops.pool_backward(spec, state, r)
    f = lambda: _contract(ops.pool_forward(x, spec)[0], r)
    return rel_error(gx, numeric_grad(f, x)).max()


def check_concat_trial(rng):
    parts = [rng.standard_normal((4, 4, c)) for c in (1, 2, 3)]
    r = rng.standard_normal((4, 4, 6))
    grads = ops.split_channels(r, [1, 2, 3])
    errs = []
    for part, g in zip(parts, grads):
        f = lambda: _contract(ops.concat_channels(parts), r)
        errs.append(rel_error(g, numeric_grad(f, part)).max())
    return max(errs)


def check_activation_trial(rng, kind):
    x = _away_from_zero(rng, (6, 6, 2)) if kind == "relu" else 3 * rng.standard_normal((6, 6, 2))
    r = rng.standard_normal(x.shape)
    g = r * ops.activation_grad(x, kind)
    f = lambda: _contract(ops.activation(x, kind), r)
    return rel_error(g, numeric_grad(f, x)).max()


def check_dense_trial(rng, fin=8, fout=3):
    x = rng.standard_normal(fin)
    p = DenseParams(rng.standard_normal((fin, fout)), rng.standard_normal(fout))
    r = rng.standard_normal(fout)
    gx, gw, gb = ops.dense_backward(x, p, r)
    f = lambda: _contract(ops.dense_forward(x, p), r)
    return max(rel_error(gx, numeric_grad(f, x)).max(),
               rel_error(gw, numeric_grad(f, p.weights)).max(),
               rel_error(gb, numeric_grad(f, p.bias)).max())


def check_softmax_ce_trial(rng, k=4):
    logits = 2 * rng.standard_normal(k)
    label = int(rng.integers(k))
    _, g = ops.cross_entropy_loss(ops.softmax(logits), label)
    f = lambda: ops.cross_entropy_loss(ops.softmax(logits), label)[0]
    return rel_error(g, numeric_grad(f, logits)).max()


def check_dropout_trial(rng, rate=0.2):
    x = rng.standard_normal((6, 6, 2))
    seed = int(rng.integers(2**31))
    y, mask = ops.dropout(x, rate, np.random.default_rng(seed), training=True)
    r = rng.standard_normal(y.shape)
    g = ops.dropout_backward(r, mask)
    f = lambda: _contract(ops.dropout(x, rate, np.random.default_rng(seed), training=True)[0], r)
    return rel_error(g, numeric_grad(f, x)).max()


def _run(name, trial, trials, rng, tol=OP_TOL, note=""):
    worst = max(float(trial(rng)) for _ in range(trials))
    return CheckResult(name, worst, tol, trials, note)


# ---------------------------------------------------------------------------
# whole model

def model_loss(model, image, label, dropout_seed):
    probs, cache = forward(model, image, training=True, rng=np.random.default_rng(dropout_seed))
    loss, grad = ops.cross_entropy_loss(probs, label)
    return loss, grad, cache


def kink_pattern(model, cache):
    """Max-pool winners and ReLU on/off masks: the branch taken at every kink."""
    parts = []
    for node in model.nodes:
        entry = cache[node.id]
        if node.kind == "maxpool":
            parts.append(entry["state"].argmax)
        elif node.activation == "relu":
            parts.append(entry["pre"] > 0)
    return parts


def _same_pattern(a, b):
    return all(np.array_equal(x, y) for x, y in zip(a, b))


def _directional(model, arr, image, label, seed, base, d, step):
    """Central difference along ``d``; None if either side leaves the base kink pattern."""
    orig = arr.copy()
    values = []
    for sign in (1, -1):
        arr[...] = orig + sign * step * d
        loss, _, cache = model_loss(model, image, label, seed)
        clean = _same_pattern(base, kink_pattern(model, cache))
        del cache
        if not clean:
            arr[...] = orig
            return None
        values.append(loss)
    arr[...] = orig
    return (values[0] - values[1]) / (2 * step)


def check_model_trial(rng, model, step=MODEL_STEP, redraws_per_step=8):
    """Directional-derivative error for each parameter array and for the input.

    A direction whose +/- step changes a max-pool winner or a ReLU mask
    straddles a non-differentiable point; it is redrawn, and after
    ``redraws_per_step`` misses the step shrinks tenfold (twice at most).
    A parameter with no clean direction scores as an infinite error.
    Returns ``(worst error, where, redraws)``.
    """
    image = rng.random(model.input_shape)
    label = int(rng.integers(model.num_classes))
    seed = int(rng.integers(2**31))
    _, grad_logits, cache = model_loss(model, image, label, seed)
    grads = backward(model, cache, grad_logits)
    base = kink_pattern(model, cache)
    del cache

    targets = [(f"{nid}[{i}]", arr, grads[nid][i])
               for nid, arrays in model.param_items() for i, arr in enumerate(arrays)]
    targets.append(("input", image, grads["input"]))
    worst, where, redraws = 0.0, None, 0
    for name, arr, g in targets:
        err = float("inf")
        for h in (step, step / 10, step / 100):
            for _ in range(redraws_per_step):
                d = rng.standard_normal(arr.shape)
                numeric = _directional(model, arr, image, label, seed, base, d, h)
                if numeric is not None:
                    err = float(rel_error(float(np.sum(g * d)), numeric))
                    break
                redraws += 1
            if err != float("inf"):
                break
        if err >= worst:
            worst, where = err, name
    return worst, where, redraws


def check_reduced_model(seed, conv_activation, trials=3):
    rng = np.random.default_rng([seed, 99])
    model = build_model(4, conv_activation, seed=seed, input_shape=REDUCED_INPUT, dtype=np.float64)
    # zero biases put every pre-activation over an all-zero patch exactly on the ReLU kink
    for _, (_, bias) in model.param_items():
        bias[...] = 0.1 * rng.standard_normal(bias.shape)
    worst, where, redraws = 0.0, None, 0
    for _ in range(trials):
        err, name, n = check_model_trial(rng, model)
        redraws += n
        if err >= worst:
            worst, where = err, name
    return CheckResult(f"model[{conv_activation}] {REDUCED_INPUT[0]}x{REDUCED_INPUT[1]}",
                       worst, MODEL_TOL, trials, f"worst at {where}; {redraws} kink redraws")


def gradient_check_suite(seed=0, trials=20, model_trials=3) -> GradCheckReport:
    """Run every op check (``trials`` each) and the reduced whole-model checks."""
    rng = np.random.default_rng(seed)
    report = GradCheckReport()
    add = report.results.append
    for kernel in ((1, 1), (1, 3), (3, 1), (3, 3)):
        add(_run(f"conv2d {kernel[0]}x{kernel[1]} same", lambda g, k=kernel: check_conv_trial(g, k),
                 trials, rng))
    add(_run("conv2d 3x3 valid stride 2",
             lambda g: check_conv_trial(g, (3, 3), (7, 7, 2), 3, "valid", 2), trials, rng))
    add(_run("maxpool 4x4 stride 4", lambda g: check_pool_trial(g, PoolSpec(4, 4), (8, 8, 2)),
             trials, rng))
    add(_run("maxpool 3x3 stride 2", lambda g: check_pool_trial(g, PoolSpec(3, 3, 2, 2), (7, 7, 2)),
             trials, rng))
    add(_run("maxpool 1x1", lambda g: check_pool_trial(g, PoolSpec(1, 1), (4, 4, 2)), trials, rng))
    add(_run("avgpool 2x2 stride 4",
             lambda g: check_pool_trial(g, PoolSpec(2, 2, 4, 4, "average"), (14, 14, 2)), trials, rng))
    add(_run("concat_channels", check_concat_trial, trials, rng))
    add(_run("relu", lambda g: check_activation_trial(g, "relu"), trials, rng,
             note=f"inputs resampled to |x| > {KINK_MARGIN:g}"))
    add(_run("swish", lambda g: check_activation_trial(g, "swish"), trials, rng))
    add(_run("dense 8->3", check_dense_trial, trials, rng))
    add(_run("softmax + cross-entropy", check_softmax_ce_trial, trials, rng))
    add(_run("dropout 0.2", check_dropout_trial, trials, rng))
    for act in ("swish", "relu"):
        add(check_reduced_model(seed, act, model_trials))
    return report
