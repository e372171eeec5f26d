"""
Checking every backward pass with finite differences
====================================================

"""

import numpy as np
from torsonet import ops
from torsonet.gradcheck import check_conv_trial, gradient_check_suite, numeric_grad, rel_error

# one op by hand: contract a 3x3 convolution with a random tensor and
# compare the analytic weight gradient with central differences
rng = np.random.default_rng(0)
x = rng.standard_normal((6, 6, 2))
p = ops.ConvParams(rng.standard_normal((3, 3, 2, 4)), rng.standard_normal(4))
r = rng.standard_normal((6, 6, 4))
_, gw, _ = ops.conv2d_backward(x, p, r)
numeric = numeric_grad(lambda: float(np.sum(ops.conv2d_forward(x, p) * r)), p.weights)
print("3x3 conv weight gradient, max rel err:", rel_error(gw, numeric).max())

# the same thing packaged as a trial, repeated on fresh random data
print("conv 1x3 trial:", max(check_conv_trial(rng, (1, 3)) for _ in range(5)))
print()

# the full suite also runs the whole network on a 32x32 input in float64
report = gradient_check_suite(seed=0, trials=5, model_trials=1)
for line in report.lines():
    print(line)
print("all passed:", report.passed)
