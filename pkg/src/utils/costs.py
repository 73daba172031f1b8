"""Exact parameter and multiplication counts for conv layers.

Counts are kernel-only (no bias terms) and use the conv layer's input size:
params = C_out * C_in * k * k, mults = params * H * W.
"""
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from fractions import Fraction

import pandas as pd

from src.errors import DomainError

DISCREPANCY_FLAG = "reference-discrepancy"

# Per-layer kernel sizes of the NIN-style baseline and the overall row as
# published for it; used to flag where computed totals disagree.
NIN_BASELINE_PARAMS = {
    "conv1": 14400,
    "cccp1": 30720,
    "cccp2": 15360,
    "conv2": 460800,
    "cccp3": 36864,
    "cccp4": 36864,
    "conv3": 331776,
    "cccp5": 36864,
    "cccp6": 19200,
}
NIN_REFERENCE_OVERALL = {
    "params": {"baseline": "9.83e+05", "pruned": "4.25e+05", "reduction": "56.77"},
    "mults": {"baseline": "3.23e+08", "pruned": "8.45e+07", "reduction": "73.84"},
}


@dataclass(frozen=True)
class LayerCost:
    layer: str
    input_size: tuple
    params: int
    mults: int

    @property
    def input_label(self):
        return f"{self.input_size[0]}x{self.input_size[1]}"


@dataclass
class CostReport:
    rows: list
    reductions: list = field(default_factory=list)
    discrepancies: list = field(default_factory=list)

    @property
    def totals(self):
        return (sum(r.params for r in self.rows), sum(r.mults for r in self.rows))

    def row(self, name):
        for r in self.rows:
            if r.layer == name:
                return r
        raise DomainError(f"no cost row for layer '{name}'")


def sig3(value):
    """Three significant figures, e.g. 14745600 -> '1.47e+07'"""
    return f"{value:.2e}"


def percent(numerator, denominator):
    """Exact 100 * numerator / denominator rendered to 2 decimals, half-up"""
    if denominator == 0:
        return "0.00"
    exact = Fraction(100 * numerator, denominator)
    value = Decimal(exact.numerator) / Decimal(exact.denominator)
    return str(value.quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


def reduction(baseline, pruned):
    return percent(baseline - pruned, baseline)


def cost_model(graph):
    """One LayerCost per conv layer"""
    graph.validate()
    shapes = graph.shapes()
    rows = []
    for i, layer in enumerate(graph.layers):
        if not layer.is_conv:
            continue
        _, height, width = graph.input_dims if i == 0 else shapes[i - 1]
        params = layer.out_channels * layer.in_channels * layer.kernel_size * layer.kernel_size
        rows.append(LayerCost(layer.name, (height, width), params, params * height * width))
    return CostReport(rows)


def is_nin_baseline(report):
    return {r.layer: r.params for r in report.rows} == NIN_BASELINE_PARAMS


def reference_discrepancies(comparison):
    """Where rendered overall values differ from the published NIN row"""
    found = []
    overall = comparison.reductions[-1]
    for quantity, reference in NIN_REFERENCE_OVERALL.items():
        computed = {
            "baseline": sig3(overall[f"{quantity}_baseline"]),
            "pruned": sig3(overall[f"{quantity}_pruned"]),
            "reduction": overall[f"{quantity}_reduction"],
        }
        for column, expected in reference.items():
            if computed[column] != expected:
                found.append(
                    {
                        "flag": DISCREPANCY_FLAG,
                        "quantity": quantity,
                        "column": column,
                        "computed": computed[column],
                        "reference": expected,
                    }
                )
    return found


def compare_costs(baseline, pruned, reference=None):
    """Attach per-layer and overall reductions of ``pruned`` vs ``baseline``.

    ``reference`` = None checks against the published NIN overall row only
    when the baseline has the NIN-style geometry.
    """
    base_names = [r.layer for r in baseline.rows]
    pruned_names = [r.layer for r in pruned.rows]
    if base_names != pruned_names:
        raise DomainError(f"layer names differ: {base_names} vs {pruned_names}")

    reductions = []
    for b, p in zip(baseline.rows, pruned.rows):
        reductions.append(
            {
                "layer": b.layer,
                "input_size": b.input_label,
                "params_baseline": b.params,
                "params_pruned": p.params,
                "params_reduction": reduction(b.params, p.params),
                "mults_baseline": b.mults,
                "mults_pruned": p.mults,
                "mults_reduction": reduction(b.mults, p.mults),
            }
        )
    (bp, bm), (pp, pm) = baseline.totals, pruned.totals
    reductions.append(
        {
            "layer": "Overall",
            "input_size": "-",
            "params_baseline": bp,
            "params_pruned": pp,
            "params_reduction": reduction(bp, pp),
            "mults_baseline": bm,
            "mults_pruned": pm,
            "mults_reduction": reduction(bm, pm),
        }
    )

    comparison = CostReport(list(pruned.rows), reductions)
    if reference is None:
        reference = is_nin_baseline(baseline)
    if reference:
        comparison.discrepancies = reference_discrepancies(comparison)
    return comparison


def report_rows(report):
    """Comparison rows, or plain counts for a single model"""
    if report.reductions:
        return list(report.reductions)
    rows = [
        {"layer": r.layer, "input_size": r.input_label, "params": r.params, "mults": r.mults}
        for r in report.rows
    ]
    params, mults = report.totals
    rows.append({"layer": "Overall", "input_size": "-", "params": params, "mults": mults})
    return rows


def report_frame(report):
    """Rows as a table; published values that differ sit on the Overall row"""
    frame = pd.DataFrame(report_rows(report))
    if report.discrepancies:
        overall = frame.index[-1]
        frame["flag"] = None
        frame.loc[overall, "flag"] = DISCREPANCY_FLAG
        for found in report.discrepancies:
            column = f"{found['quantity']}_{found['column']}_published"
            frame[column] = None
            frame.loc[overall, column] = found["reference"]
    return frame


def report_dict(report):
    return {"rows": report_rows(report), "discrepancies": list(report.discrepancies)}
