"""
Building the network and reading its layer table
================================================

"""

# build_model wires the fire, 313, reduction and 31C blocks into one graph
import numpy as np
from torsonet import build_model, format_summary, forward

model = build_model(num_classes=4, conv_activation="relu", seed=0)
print(model)
print()

# the printed table lists every node with its kernel, output shape and weight count
print(format_summary(model))
print()

# each node id keys both the parameters and the forward cache
_, cache = forward(model, np.zeros((224, 224, 1), np.float32), keep_cache=True)
for node_id in ("concat1", "concat2", "maxpool1", "concat3", "concat4", "avgpool", "flatten"):
    print(f"{node_id:<10} {cache[node_id]['out'].shape[1:]}")

# the swish variant has the same graph, only the pointwise nonlinearity changes
swish = build_model(4, "swish")
print()
print("swish params:", swish.param_count(), " relu params:", model.param_count())
