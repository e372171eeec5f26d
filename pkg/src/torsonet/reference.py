"""Published layer table for the four-class network, used as a conformance target.

One tuple per row: (node id, output shape, parameter count, connected-to).
Flatten reports a bare length and dense layers a ``(None, units)`` shape.
"""

LAYER_TABLE = [
    ("input", (224, 224, 1), 0, ()),
    ("fire.squeeze", (224, 224, 4), 8, ("Input",)),
    ("fire.expand1", (224, 224, 8), 40, ("Squeeze",)),
    ("fire.expand2", (224, 224, 8), 296, ("Squeeze",)),
    ("concat1", (224, 224, 16), 0, ("Expand1", "Expand2")),
    ("b313.c1", (224, 224, 32), 1568, ("Concatenate 1",)),
    ("b313.c2", (224, 224, 32), 1568, ("Concatenate 1",)),
    ("b313.c11", (224, 224, 32), 3104, ("C1",)),
    ("b313.c21", (224, 224, 32), 3104, ("C2",)),
    ("concat2", (224, 224, 64), 0, ("C11", "C21")),
    ("maxpool1", (56, 56, 64), 0, ("Concatenate 2",)),
    ("conv", (56, 56, 32), 18464, ("Max pooling 1",)),
    ("reduction.c", (56, 56, 8), 264, ("Convolution",)),
    ("reduction.c1", (56, 56, 32), 288, ("C",)),
    ("reduction.c2", (56, 56, 32), 2336, ("C",)),
    ("reduction.c11", (56, 56, 32), 9248, ("C1",)),
    ("reduction.c12", (56, 56, 32), 9248, ("C11",)),
    ("reduction.maxpool2", (56, 56, 32), 0, ("C2",)),
    ("concat3", (56, 56, 96), 0, ("Max pooling 2", "C2", "C12")),
    ("b31c.maxpool3", (14, 14, 96), 0, ("Concatenate 3",)),
    ("b31c.c1", (14, 14, 32), 9248, ("Max pooling 3",)),
    ("b31c.c2", (14, 14, 32), 9248, ("Max pooling 3",)),
    ("concat4", (14, 14, 64), 0, ("C1", "C2")),
    ("avgpool", (4, 4, 64), 0, ("Concatenate 4",)),
    ("flatten", (1024,), 0, ("Average pooling",)),
    ("dropout", (1024,), 0, ("Flatten",)),
    ("dense1", (64,), 65600, ("Dropout",)),
    ("dense2", (64,), 4160, ("Dense 1",)),
    ("dense3", (4,), 260, ("Dense 2",)),
]

TOTAL_PARAMS = 138_052
NON_TRAINABLE_PARAMS = 0
SQUEEZENET_PARAMS = 730_000  # comparison figure quoted for SqueezeNet (0.73M)
ALEXNET_PARAMS = 19_530_000  # comparison figure quoted for AlexNet (19.53M)
