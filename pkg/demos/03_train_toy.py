"""
Training on the synthetic ellipse images
========================================

Usage: python3 03_train_toy.py [images_per_class] [epochs]

The defaults (15 per class, 3 epochs) finish in about a minute on one core.
"""

import sys

import numpy as np
from torsonet import ArrayDataset, TrainConfig, build_model, evaluate, train
from torsonet.toy import make_toy_arrays

n_per_class = int(sys.argv[1]) if len(sys.argv) > 1 else 15
epochs = int(sys.argv[2]) if len(sys.argv) > 2 else 3

# every image has one bright ellipse; its orientation and half of the frame set the class
images, labels, names = make_toy_arrays(n_per_class, seed=0)
print(images.shape, "classes:", names)

# hold out the last fifth of each class (classes are interleaved)
n_val = 4 * max(1, n_per_class // 5)
data = ArrayDataset(images, labels, names)
train_set = data.subset(np.arange(len(data) - n_val))
val_set = data.subset(np.arange(len(data) - n_val, len(data)))

model = build_model(4, "relu", seed=0, class_names=names)
cfg = TrainConfig(learning_rate=1e-3, epochs=epochs, batch_size=8, seed=0)


def show(record):
    print(f"epoch {record.epoch}: loss {record.train_loss:.3f} "
          f"train acc {record.train_acc:.2f} val acc {record.val_acc:.2f} ({record.seconds:.0f}s)")


history = train(model, train_set, val_set, cfg, callback=show)

cm, report = evaluate(model, val_set)
print()
print(cm.counts)
print(report.format_table())
