"""Run reports: CSV metric rows, a deterministic JSON document and curve files."""
from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

PROVENANCE = ("paper", "trivial", "derived")
CSV_HEADER = ("metric", "value", "target", "tolerance", "pass", "provenance")


def fmt(x) -> str:
    """Stable text form for numbers; 10 significant digits keeps reports diffable."""
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".10g")
    return str(x)


@dataclass
class Row:
    metric: str
    value: float
    target: Optional[float]
    tolerance: str
    passed: bool
    provenance: str

    def __post_init__(self):
        if self.provenance not in PROVENANCE:
            raise ValueError(f"provenance must be one of {PROVENANCE}")
        self.passed = bool(self.passed)

    def cells(self) -> list[str]:
        return [self.metric, fmt(self.value), fmt(self.target), self.tolerance, fmt(self.passed), self.provenance]


def rel_row(metric, value, target, tol, provenance) -> Row:
    gap = abs(value - target) / abs(target)
    return Row(metric, value, target, f"rel<={fmt(tol)}", gap <= tol, provenance)


def abs_row(metric, value, target, tol, provenance) -> Row:
    return Row(metric, value, target, f"abs<={fmt(tol)}", abs(value - target) <= tol, provenance)


def max_row(metric, value, bound, provenance) -> Row:
    return Row(metric, value, bound, "<=target", value <= bound, provenance)


def min_row(metric, value, bound, provenance) -> Row:
    return Row(metric, value, bound, ">target", value > bound, provenance)


@dataclass
class RunReport:
    experiment: str
    run_id: str
    config: dict
    rows: list[Row] = field(default_factory=list)
    series: dict = field(default_factory=dict)
    wall_clock: float = 0.0
    artifacts: dict = field(default_factory=dict)  # in-memory only (trained nets, estimators)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    def failures(self) -> list[Row]:
        return [r for r in self.rows if not r.passed]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in self.rows:
            w.writerow(r.cells())
        return buf.getvalue()

    def to_json(self) -> str:
        # wall-clock lives in a separate file so this document is reproducible byte for byte
        doc = {
            "experiment": self.experiment,
            "run_id": self.run_id,
            "config": self.config,
            "passed": self.passed,
            "rows": [dict(zip(CSV_HEADER, r.cells())) for r in self.rows],
            "series": {k: [fmt(v) for v in vals] for k, vals in sorted(self.series.items())},
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    def write(self, out_dir: str, stem: Optional[str] = None) -> dict:
        os.makedirs(out_dir, exist_ok=True)
        stem = stem or self.experiment
        paths = {"csv": os.path.join(out_dir, f"{stem}.csv"),
                 "json": os.path.join(out_dir, f"{stem}.json"),
                 "timing": os.path.join(out_dir, f"{stem}.timing.json")}
        with open(paths["csv"], "w", newline="") as fh:
            fh.write(self.to_csv())
        with open(paths["json"], "w") as fh:
            fh.write(self.to_json())
        with open(paths["timing"], "w") as fh:
            json.dump({"run_id": self.run_id, "wall_clock_s": round(self.wall_clock, 3)}, fh)
            fh.write("\n")
        if self.series:
            paths.update(render_curves(self, out_dir, stem))
        return paths


def render_curves(report: RunReport, out_dir: str, stem: Optional[str] = None, plot: bool = True) -> dict:
    """Write the per-epoch series as CSV and, when matplotlib is importable, as PNG figures.

    Series sharing a length are written to one CSV with an ``epoch`` column.
    """
    stem = stem or report.experiment
    os.makedirs(out_dir, exist_ok=True)
    out = {}
    groups: dict[int, list[str]] = {}
    for name, vals in sorted(report.series.items()):
        groups.setdefault(len(vals), []).append(name)
    for k, (length, names) in enumerate(sorted(groups.items())):
        path = os.path.join(out_dir, f"{stem}_curves{'' if k == 0 else k}.csv")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch"] + names)
            for i in range(length):
                w.writerow([i] + [fmt(report.series[nm][i]) for nm in names])
        out[f"curves{k}"] = path
    if plot:
        try:
            out.update(_plot(report, out_dir, stem))
        except ImportError:
            pass
    return out


def _plot(report: RunReport, out_dir: str, stem: str) -> dict:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    paths = {}
    refs = report.config.get("reference_lines", {}) if isinstance(report.config, dict) else {}
    for name, vals in sorted(report.series.items()):
        fig, ax = plt.subplots(figsize=(5, 3.2))
        ax.plot(np.arange(len(vals)), np.asarray(vals, dtype=float), lw=1.5)
        if name in refs:
            ax.axhline(refs[name], color="k", ls="--", lw=1, label=f"target {refs[name]:.4g}")
            ax.legend(frameon=False)
        ax.set_xlabel("epoch")
        ax.set_ylabel(name)
        ax.set_title(f"{report.experiment}: {name}")
        fig.tight_layout()
        path = os.path.join(out_dir, f"{stem}_{name}.png")
        # a fixed metadata block keeps the PNG bytes independent of the matplotlib build date
        fig.savefig(path, dpi=100, metadata={"Software": None})
        plt.close(fig)
        paths[f"png_{name}"] = path
    return paths
