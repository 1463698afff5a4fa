"""
@file reports.py
@brief Render ablation, fusion-comparison and sweep results as tables
@details Numbers are percentages with two decimals; deltas are signed
differences from the full model (negative = worse).
"""

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

ABLATION_ROWS = ("w/o JFM", "w/o v_j", "w/o ICL")
FUSION_ROWS = ("Concatenate",)
MODALITY_ROWS = ("T", "A")
FULL_ROW = "JFM (full)"


@dataclass
class VariantResult:
    """Held-out scores of one configuration across seeds."""
    name: str
    overrides: Dict[str, object]
    seeds: List[int] = field(default_factory=list)
    accuracies: List[float] = field(default_factory=list)
    weighted_f1s: List[float] = field(default_factory=list)

    @property
    def accuracy(self) -> float:
        return float(np.median(self.accuracies)) if self.accuracies else math.nan

    @property
    def weighted_f1(self) -> float:
        return float(np.median(self.weighted_f1s)) if self.weighted_f1s else math.nan

    def to_dict(self, full: Optional["VariantResult"] = None) -> Dict:
        row = {"name": self.name, "overrides": self.overrides, "seeds": self.seeds, "accuracies": self.accuracies,
               "weighted_f1s": self.weighted_f1s, "median_accuracy": self.accuracy,
               "median_weighted_f1": self.weighted_f1}
        if full is not None:
            row["delta_accuracy"] = self.accuracy - full.accuracy
            row["delta_weighted_f1"] = self.weighted_f1 - full.weighted_f1
        return row


def _pct(value: float) -> str:
    return "nan" if math.isnan(value) else f"{100.0 * value:.2f}"


def _signed_pct(value: float) -> str:
    return "nan" if math.isnan(value) else f"{100.0 * value:+.2f}"


class ResultsReportGenerator:
    """
    @brief Markdown tables for experiment results
    @details Layout follows the usual results sections: an ablation table of
    "w/o" rows, a fusion-method table and a modality table, each listing
    Acc and W-F1 with deltas against the full model.
    """

    def __init__(self, results: Sequence[VariantResult]):
        self.by_name = {result.name: result for result in results}
        self.full = self.by_name.get(FULL_ROW)

    def _row(self, result: VariantResult, with_delta: bool) -> str:
        cells = [result.name, _pct(result.accuracy), _pct(result.weighted_f1)]
        if with_delta and self.full is not None:
            cells.append(_signed_pct(result.accuracy - self.full.accuracy))
            cells.append(_signed_pct(result.weighted_f1 - self.full.weighted_f1))
        else:
            cells += ["", ""]
        return "| " + " | ".join(cells) + " |"

    def _table(self, title: str, names: Sequence[str], full_last: bool) -> str:
        present = [self.by_name[name] for name in names if name in self.by_name]
        if not present:
            return ""
        lines = [f"**{title}**", "", "| Method | Acc | W-F1 | ΔAcc | ΔW-F1 |", "|---|---|---|---|---|"]
        if not full_last and self.full is not None:
            lines.append(self._row(self.full, with_delta=False))
        lines.extend(self._row(result, with_delta=True) for result in present)
        if full_last and self.full is not None:
            lines.append(self._row(self.full, with_delta=False))
        return "\n".join(lines)

    def generate_ablation_table(self) -> str:
        return self._table("Ablation (median over seeds)", ABLATION_ROWS, full_last=False)

    def generate_fusion_table(self) -> str:
        return self._table("Fusion methods", FUSION_ROWS, full_last=True)

    def generate_modality_table(self) -> str:
        return self._table("Modalities", MODALITY_ROWS, full_last=True)

    def generate_report(self, notes: Sequence[str] = ()) -> str:
        sections = [self.generate_ablation_table(), self.generate_fusion_table(), self.generate_modality_table()]
        body = "\n\n".join(section for section in sections if section)
        if notes:
            body += "\n\n" + "\n".join(f"• {note}" for note in notes)
        return body + "\n"


def write_ablation_csv(path: Union[str, Path], results: Sequence[VariantResult]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    full = next((r for r in results if r.name == FULL_ROW), None)
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["variant", "accuracy", "weighted_f1", "delta_accuracy", "delta_weighted_f1"])
        for result in results:
            delta_acc = result.accuracy - full.accuracy if full else math.nan
            delta_f1 = result.weighted_f1 - full.weighted_f1 if full else math.nan
            writer.writerow([result.name, f"{result.accuracy:.6f}", f"{result.weighted_f1:.6f}",
                             f"{delta_acc:+.6f}", f"{delta_f1:+.6f}"])
    return path


@dataclass
class SweepPoint:
    param: str
    value: object
    accuracy: float = math.nan
    weighted_f1: float = math.nan
    error: str = ""


def write_sweep_csv(path: Union[str, Path], points: Sequence[SweepPoint]) -> Path:
    """One row per grid point; failed points carry NaN scores and the error."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["param", "value", "accuracy", "weighted_f1", "error"])
        for point in points:
            writer.writerow([point.param, point.value, f"{point.accuracy:.6f}", f"{point.weighted_f1:.6f}",
                             point.error])
    return path


def generate_sweep_summary(points: Sequence[SweepPoint]) -> str:
    if not points:
        return ""
    lines = [f"**Sweep over {points[0].param}**", "", "| value | Acc | W-F1 |", "|---|---|---|"]
    lines.extend(f"| {p.value} | {_pct(p.accuracy)} | {_pct(p.weighted_f1)} |" for p in points)
    finished = [p for p in points if not math.isnan(p.weighted_f1)]
    if finished:
        best = max(finished, key=lambda p: p.weighted_f1)
        lines += ["", f"• **Best W-F1:** {_pct(best.weighted_f1)} at {best.param}={best.value}"]
    return "\n".join(lines) + "\n"
