import json
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
from pydantic import BaseModel

# ============================================================
# 📦 EXPORTERS: regret traces to CSV, reports to JSON & Markdown
# ============================================================

FLOAT_FORMAT = "%.17g"


def trace_frame(trace) -> pd.DataFrame:
    """
    Per-round table with header t,x_1..x_N,u_1..u_N,payoff,regret.
    """
    n = trace.n_alternatives
    columns = {"t": np.arange(1, trace.T + 1)}
    for j in range(n):
        columns[f"x_{j + 1}"] = trace.x[:, j]
    for j in range(n):
        columns[f"u_{j + 1}"] = trace.u[:, j]
    columns["payoff"] = trace.payoff
    columns["regret"] = trace.regret
    return pd.DataFrame(columns)


def trace_to_csv(trace, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    trace_frame(trace).to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return path


def read_trace_csv(path: str | Path) -> pd.DataFrame:
    return pd.read_csv(path, float_precision="round_trip")


# ============================================================
# 🧾 JSON reports
# ============================================================

def report_to_dict(report: Any) -> Any:
    if isinstance(report, BaseModel):
        return report.model_dump(mode="json")
    if hasattr(report, "to_dict"):
        return report.to_dict()
    return report


def report_to_json(report: Any) -> str:
    """
    Deterministic JSON text; floats use the shortest repr that round-trips.
    """
    return json.dumps(report_to_dict(report), indent=2, allow_nan=False) + "\n"


def write_report(report: Any, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(report_to_json(report), encoding="utf-8")
    return path


# ============================================================
# 📝 Markdown
# ============================================================

def _fmt(value: float) -> str:
    return f"{value:.6g}"


def bounds_to_markdown(table: pd.DataFrame, n: int, T: int, u_max: float) -> str:
    """
    Render the bound table (one row per model kind) as Markdown.
    """
    lines = []
    lines.append(f"# 📐 Optimized regret bounds (N={n}, T={T}, u_max={_fmt(u_max)})")
    lines.append("")
    lines.append("| model | min λ | 2/λ−1 | η (log N) | bound (log N) | η (log G(1)) | bound (log G(1)) | × MNL |")
    lines.append("|---|---|---|---|---|---|---|---|")
    for row in table.itertuples(index=False):
        lines.append(
            f"| {row.model} | {_fmt(row.min_lambda)} | {_fmt(row.lipschitz)} "
            f"| {_fmt(row.eta_table)} | {_fmt(row.bound_table)} "
            f"| {_fmt(row.eta_thm2)} | {_fmt(row.bound_thm2)} | {_fmt(row.factor_vs_mnl)} |"
        )
    lines.append("")
    return "\n".join(lines)


def verify_report_to_markdown(report) -> str:
    """
    Convert a verify report into a Markdown checklist grouped by suite.
    """
    lines = []
    status = "passed" if report.passed else "FAILED"
    lines.append(f"# 🔬 Verification ({status}, seed {report.seed})")
    lines.append("")

    for suite in report.suites:
        lines.append(f"## {suite}")
        lines.append("")
        for check in report.checks:
            if check.suite != suite:
                continue
            mark = "ℹ️" if check.informational else ("✅" if check.passed else "❌")
            lines.append(f"- {mark} **{check.name}** residual {_fmt(check.residual)} "
                         f"(tolerance {_fmt(check.tolerance)})")
        lines.append("")

    return "\n".join(lines)
