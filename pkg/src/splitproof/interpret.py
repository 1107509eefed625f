"""Score heat maps against ground-truth nodule masks.

Two families of scores per image: region statistics (max and mean heat
inside the mask) and whole-image correlations between the heat map and the
mask cast to {0, 1} reals (Pearson on values, Spearman on average ranks).
Correlations run over every pixel, not a bounding box, so a sharp focus on
a small nodule still yields small absolute values; what matters is the
comparison between models.
"""

import csv
import json
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.stats import rankdata

from .cam import HeatMap
from .errors import DimMismatch, SplitproofError
from .imaging import BinaryMask


class EmptyMask(SplitproofError):
    pass


class ZeroVariance(SplitproofError):
    pass


@dataclass(frozen=True)
class InterpretabilityScores:
    nodule_max: float
    nodule_mean: float
    pearson: float
    spearman: float


@dataclass(frozen=True)
class ReportRow:
    record_id: str
    model_tag: str
    scores: Optional[InterpretabilityScores]
    error: Optional[str] = None


@dataclass(frozen=True)
class InterpretabilityReport:
    rows: tuple
    aggregates: dict  # model_tag -> {score name -> mean over scored rows}


def _check_dims(heatmap: HeatMap, mask: BinaryMask) -> None:
    if heatmap.data.shape != mask.data.shape:
        raise DimMismatch(
            f"heatmap {heatmap.data.shape} vs mask {mask.data.shape}"
        )


def nodule_max(heatmap: HeatMap, mask: BinaryMask) -> float:
    """Highest heat value inside the mask."""
    _check_dims(heatmap, mask)
    if not mask.data.any():
        raise EmptyMask("mask has no set pixels")
    return float(heatmap.data[mask.data].max())


def nodule_mean(heatmap: HeatMap, mask: BinaryMask) -> float:
    """Mean heat value inside the mask."""
    _check_dims(heatmap, mask)
    if not mask.data.any():
        raise EmptyMask("mask has no set pixels")
    return float(heatmap.data[mask.data].mean())


def _pearson_flat(x: np.ndarray, y: np.ndarray) -> float:
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(np.dot(dx, dx))
    syy = float(np.dot(dy, dy))
    if sxx == 0.0 or syy == 0.0:
        raise ZeroVariance("one of the inputs is constant")
    return float(np.dot(dx, dy) / np.sqrt(sxx * syy))


def pearson(heatmap: HeatMap, mask: BinaryMask) -> float:
    """Product-moment correlation over all pixels (mask cast to {0, 1})."""
    _check_dims(heatmap, mask)
    return _pearson_flat(heatmap.data.ravel(), mask.data.astype(np.float64).ravel())


def spearman(heatmap: HeatMap, mask: BinaryMask) -> float:
    """Pearson correlation of average ranks (ties get their mean rank)."""
    _check_dims(heatmap, mask)
    rx = rankdata(heatmap.data.ravel(), method="average")
    ry = rankdata(mask.data.astype(np.float64).ravel(), method="average")
    return _pearson_flat(rx, ry)


def score_pair(heatmap: HeatMap, mask: BinaryMask) -> InterpretabilityScores:
    return InterpretabilityScores(
        nodule_max=nodule_max(heatmap, mask),
        nodule_mean=nodule_mean(heatmap, mask),
        pearson=pearson(heatmap, mask),
        spearman=spearman(heatmap, mask),
    )


def score_batch(items) -> InterpretabilityReport:
    """Score (record_id, model_tag, heatmap, mask) items, capturing failures.

    Items that violate a precondition become errored rows (with the reason)
    and are excluded from the per-model aggregate means. Rows are ordered by
    record_id so the report does not depend on input order.
    """
    rows = []
    for record_id, model_tag, heatmap, mask in items:
        try:
            scores = score_pair(heatmap, mask)
            rows.append(ReportRow(record_id, model_tag, scores))
        except SplitproofError as e:
            rows.append(ReportRow(record_id, model_tag, None, error=f"{type(e).__name__}: {e}"))
    rows.sort(key=lambda r: (r.record_id, r.model_tag))

    by_model = {}
    for row in rows:
        if row.scores is not None:
            by_model.setdefault(row.model_tag, []).append(row.scores)
    aggregates = {}
    for tag in sorted(by_model):
        scored = by_model[tag]
        aggregates[tag] = {
            "nodule_max": sum(s.nodule_max for s in scored) / len(scored),
            "nodule_mean": sum(s.nodule_mean for s in scored) / len(scored),
            "pearson": sum(s.pearson for s in scored) / len(scored),
            "spearman": sum(s.spearman for s in scored) / len(scored),
        }
    return InterpretabilityReport(rows=tuple(rows), aggregates=aggregates)


def report_sidecar_path(csv_path) -> str:
    return str(csv_path) + ".json"


def write_report(report: InterpretabilityReport, csv_path, metadata: Optional[dict] = None) -> None:
    """CSV of per-image scores plus a JSON sidecar with per-model means."""
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["record_id", "model_tag", "nodule_max", "nodule_mean", "pearson", "spearman", "error"]
        )
        for row in report.rows:
            if row.scores is None:
                writer.writerow([row.record_id, row.model_tag, "", "", "", "", row.error])
            else:
                s = row.scores
                writer.writerow(
                    [
                        row.record_id,
                        row.model_tag,
                        repr(s.nodule_max),
                        repr(s.nodule_mean),
                        repr(s.pearson),
                        repr(s.spearman),
                        "",
                    ]
                )
    sidecar = {"aggregates": report.aggregates}
    if metadata:
        sidecar.update(metadata)
    with open(report_sidecar_path(csv_path), "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2)
        fh.write("\n")
