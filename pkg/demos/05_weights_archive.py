"""
Saving and restoring weights
============================

"""

import os
import tempfile

import numpy as np
from torsonet import build_model, forward, load_weights, save_weights
from torsonet.serialize import header_size

model = build_model(4, "swish", seed=1)
path = os.path.join(tempfile.mkdtemp(), "weights.bin")
size = save_weights(model, path)

# the archive is a small JSON header plus one float32 per parameter and a CRC-32
blob = open(path, "rb").read()
print(f"{size} bytes = {model.param_count()} * 4 + {header_size(blob)}")

# the activation is stored in the archive, so loading needs no extra arguments
restored = load_weights(path)
x = np.random.default_rng(0).random((224, 224, 1)).astype(np.float32)
print("activation:", restored.conv_activation)
print("identical output:", np.array_equal(forward(model, x)[0], forward(restored, x)[0]))

# a damaged file is refused rather than silently loaded
damaged = bytearray(blob)
damaged[-100] ^= 0xFF
open(path, "wb").write(bytes(damaged))
try:
    load_weights(path)
except Exception as exc:
    print(type(exc).__name__ + ":", exc)
