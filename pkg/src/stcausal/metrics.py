"""Aggregation of Monte Carlo replications into the benchmark metric table.

Conventions: bias is mean(tau_hat) - tau; variance is the population
variance (divide by R) so that mse = bias^2 + variance holds exactly;
coverage is the percentage of replications whose 95% interval contains
the true effect; pe is the mean of the per-replication prediction RMSEs.
Prediction-only methods have no estimation columns (stored as None, shown
as empty CSV cells).
"""

import csv
from dataclasses import dataclass

import numpy as np

CSV_COLUMNS = ["method", "bias", "variance", "mse", "coverage_pct", "pe", "replications"]


@dataclass(frozen=True)
class MetricRow:
    method: str
    bias: float | None
    variance: float | None
    mse: float | None
    coverage_pct: float | None
    pe: float | None
    replications: int

    def __post_init__(self):
        if self.mse is not None and self.mse < -0.0:
            raise ValueError("mse cannot be negative")
        if self.coverage_pct is not None and not 0.0 <= self.coverage_pct <= 100.0:
            raise ValueError("coverage_pct must lie in [0, 100]")


@dataclass(frozen=True)
class MetricTable:
    rows: list


def aggregate(tau_true: float, estimates, pe_values, method: str = "") -> MetricRow:
    """Collapse one method's replications into a metric row.

    ``estimates`` is a nonempty list of :class:`~stcausal.dr.DrEstimate`;
    ``pe_values`` is a nonempty list of prediction RMSEs, or None when the
    method reports no predictions.
    """
    if not estimates:
        raise ValueError("estimates must be nonempty")
    if pe_values is not None and len(pe_values) == 0:
        raise ValueError("pe_values must be nonempty (or None)")
    taus = np.array([est.tau_hat for est in estimates], dtype=np.float64)
    covered = np.array(
        [est.ci_low <= tau_true <= est.ci_high for est in estimates], dtype=np.float64
    )
    bias = float(taus.mean() - tau_true)
    variance = float(taus.var())  # population convention, exact decomposition
    mse = float(np.mean((taus - tau_true) ** 2))
    return MetricRow(
        method=method,
        bias=bias,
        variance=variance,
        mse=mse,
        coverage_pct=float(100.0 * covered.mean()),
        pe=None if pe_values is None else float(np.mean(pe_values)),
        replications=len(estimates),
    )


def prediction_only_row(pe_values, method: str, replications: int) -> MetricRow:
    """Row for a method that only predicts (no treatment effect estimate)."""
    if not len(pe_values):
        raise ValueError("pe_values must be nonempty")
    return MetricRow(
        method=method,
        bias=None,
        variance=None,
        mse=None,
        coverage_pct=None,
        pe=float(np.mean(pe_values)),
        replications=replications,
    )


def _cell(value, fmt="{:.6g}"):
    return "" if value is None else fmt.format(value)


def format_table(table: MetricTable) -> str:
    """Aligned plain-text table (variance uses the population convention)."""
    header = ["method", "bias", "variance", "mse", "coverage%", "pe", "reps"]
    body = [
        [
            row.method,
            _cell(row.bias, "{:+.4f}"),
            _cell(row.variance, "{:.4f}"),
            _cell(row.mse, "{:.4f}"),
            _cell(row.coverage_pct, "{:.1f}"),
            _cell(row.pe, "{:.4f}"),
            str(row.replications),
        ]
        for row in table.rows
    ]
    widths = [max(len(h), *(len(r[i]) for r in body)) if body else len(h)
              for i, h in enumerate(header)]
    lines = [
        "  ".join(h.ljust(w) for h, w in zip(header, widths)),
        "  ".join("-" * w for w in widths),
    ]
    for r in body:
        lines.append("  ".join(c.ljust(w) for c, w in zip(r, widths)))
    return "\n".join(lines)


def write_table_csv(table: MetricTable, path: str) -> None:
    """Machine-readable table with fixed columns; floats via repr."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for row in table.rows:
            writer.writerow(
                [
                    row.method,
                    *("" if v is None else repr(float(v))
                      for v in (row.bias, row.variance, row.mse, row.coverage_pct, row.pe)),
                    row.replications,
                ]
            )
