"""Release checks: layer-table conformance plus the gradient suite."""
from __future__ import annotations

from dataclasses import dataclass

from .gradcheck import gradient_check_suite
from .graph import build_model, summary
from .reference import LAYER_TABLE, NON_TRAINABLE_PARAMS, TOTAL_PARAMS


@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ""

    def line(self):
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}" + (f"  ({self.detail})" if self.detail else "")


def table_conformance(model=None):
    """Compare shapes, parameter counts and wiring with the published layer table."""
    model = model or build_model(4, "relu")
    rows, totals = summary(model)
    by_id = {r.node_id: r for r in rows}
    checks = []
    if [r.node_id for r in rows] != [row[0] for row in LAYER_TABLE]:
        checks.append(Check("layer order", False, "node ids differ from the table"))
    for node_id, shape, params, connected in LAYER_TABLE:
        row = by_id.get(node_id)
        if row is None:
            checks.append(Check(f"{node_id}", False, "missing"))
            continue
        node = model.node(node_id)
        got_inputs = tuple(model.node(s).label.lower() for s in node.inputs)
        problems = []
        if node.output_shape != shape:
            problems.append(f"shape {node.output_shape} != {shape}")
        if row.params != params:
            problems.append(f"params {row.params} != {params}")
        if got_inputs != tuple(c.lower() for c in connected):
            problems.append(f"inputs {got_inputs} != {connected}")
        checks.append(Check(f"{node_id:<20} {row.output_shape:<15} {row.params:>6}",
                            not problems, "; ".join(problems)))
    checks.append(Check(f"trainable params {totals['trainable']:,}",
                        totals["trainable"] == TOTAL_PARAMS, f"expected {TOTAL_PARAMS:,}"))
    checks.append(Check(f"non-trainable params {totals['non_trainable']}",
                        totals["non_trainable"] == NON_TRAINABLE_PARAMS))
    return checks


def variant_isomorphism():
    """ReLU and Swish builds differ only in their pointwise nonlinearity."""
    a, b = build_model(4, "relu"), build_model(4, "swish")
    same = all((x.id, x.kind, x.inputs, x.output_shape, a.node_param_count(x))
               == (y.id, y.kind, y.inputs, y.output_shape, b.node_param_count(y))
               for x, y in zip(a.nodes, b.nodes)) and len(a.nodes) == len(b.nodes)
    return Check("relu/swish graphs identical apart from activation", same)


def run_verification(seed=0, trials=20, model_trials=3):
    """Return ``(passed, lines)`` for every release check."""
    checks = table_conformance() + [variant_isomorphism()]
    lines = [c.line() for c in checks]
    report = gradient_check_suite(seed, trials, model_trials)
    lines += list(report.lines())
    return all(c.passed for c in checks) and report.passed, lines
