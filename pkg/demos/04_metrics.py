"""
Per-class precision, recall and F1 from a confusion matrix
==========================================================

"""

import numpy as np
from torsonet import ConfusionMatrix, metrics_from_confusion

names = ["dv_upper", "dv_lower", "lat_upper", "lat_lower"]

# rows are true classes, columns predictions
counts = np.array([[1309, 19, 354, 18],
                   [0, 3384, 141, 0],
                   [208, 197, 495, 0],
                   [23, 0, 0, 207]])
report = metrics_from_confusion(ConfusionMatrix(counts, names))
print(report.format_table())
print()

# the same numbers as JSON lines, one record per class plus an overall record
print(report.to_jsonl())

# building a matrix from label vectors
truth = [0, 0, 1, 1, 2, 3, 3]
guess = [0, 1, 1, 1, 2, 3, 0]
cm = ConfusionMatrix.from_predictions(truth, guess, 4, names)
print(cm.counts)
print("macro F1:", round(metrics_from_confusion(cm).macro_f1, 3))
